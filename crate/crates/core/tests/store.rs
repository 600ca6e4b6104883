use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chatbridge_core::domain::{
    parse_session_parameters, ChatMessage, ConversationKey, NewProject, Role, SessionParameters,
};
use chatbridge_core::store::{ConversationFilter, FileStore, MemoryStore, Store, StoreError};
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use sha2::{Digest, Sha256};

fn params(pid: &str, experiment: &str, participant: &str, model: &str, session: Option<&str>) -> SessionParameters {
    let mut pairs = vec![
        ("pid", pid),
        ("experiment_id", experiment),
        ("participant_id", participant),
        ("model", model),
    ];
    if let Some(session) = session {
        pairs.push(("session_id", session));
    }
    parse_session_parameters(pairs).unwrap()
}

fn stores() -> Vec<(&'static str, Arc<dyn Store>, Option<tempfile::TempDir>)> {
    let dir = tempfile::tempdir().unwrap();
    let file: Arc<dyn Store> = Arc::new(FileStore::open(dir.path()).unwrap());
    vec![
        ("memory", Arc::new(MemoryStore::new()), None),
        ("file", file, Some(dir)),
    ]
}

#[test]
fn unknown_key_loads_empty_and_order_is_append_order() {
    for (name, store, _dir) in stores() {
        let p = params("p", "e", "a", "m", None);
        let key = p.conversation_key();
        assert!(store.load_conversation(&key).unwrap().is_empty(), "{name}");

        // system + three rounds
        store.append_message(&key, ChatMessage::new(Role::System, "be kind", &p)).unwrap();
        for round in 0..3 {
            store.append_message(&key, ChatMessage::new(Role::User, format!("u{round}"), &p)).unwrap();
            store.append_message(&key, ChatMessage::new(Role::Assistant, format!("a{round}"), &p)).unwrap();
        }
        let loaded = store.load_conversation(&key).unwrap();
        assert_eq!(loaded.len(), 7, "{name}");
        let contents: Vec<_> = loaded.iter().map(|m| m.content.as_str()).collect();
        assert_eq!(contents, ["be kind", "u0", "a0", "u1", "a1", "u2", "a2"], "{name}");
        assert_eq!(loaded, store.load_conversation(&key).unwrap(), "{name}");
    }
}

#[test]
fn interleaved_concurrent_appends_stay_in_their_conversation() {
    for (name, store, _dir) in stores() {
        let keys: Vec<SessionParameters> = (0..10)
            .map(|i| params("p", "e", &format!("participant{i}"), "m", None))
            .collect();
        let handles: Vec<_> = (0..10)
            .map(|worker| {
                let store = Arc::clone(&store);
                let keys = keys.clone();
                std::thread::spawn(move || {
                    // each worker writes 10 messages, round-robin over all keys
                    for step in 0..10 {
                        let p = &keys[(worker + step) % keys.len()];
                        let body = format!("{}:{worker}:{step}", p.participant_id);
                        store
                            .append_message(&p.conversation_key(), ChatMessage::new(Role::User, body, p))
                            .unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }

        let mut total = 0;
        for p in &keys {
            let messages = store.load_conversation(&p.conversation_key()).unwrap();
            total += messages.len();
            // oracle: each worker's own steps must appear in increasing order
            let mut last_step: BTreeMap<usize, usize> = BTreeMap::new();
            for m in &messages {
                let parts: Vec<&str> = m.content.split(':').collect();
                assert_eq!(parts[0], p.participant_id, "{name}: leaked message");
                assert!(p.conversation_key().matches(&m.params));
                let (worker, step): (usize, usize) = (parts[1].parse().unwrap(), parts[2].parse().unwrap());
                if let Some(prev) = last_step.insert(worker, step) {
                    assert!(prev < step, "{name}: per-writer order broken");
                }
            }
            for pair in messages.windows(2) {
                assert!(pair[0].timestamp <= pair[1].timestamp);
            }
        }
        assert_eq!(total, 100, "{name}");
    }
}

/// Independent reference: scan every stored message and collect keys of
/// conversations with at least one message satisfying all present fields.
fn oracle(all: &[(ConversationKey, ChatMessage)], filter: &ConversationFilter) -> BTreeSet<ConversationKey> {
    all.iter()
        .filter(|(key, m)| {
            filter.project_id.as_ref().is_none_or(|v| v.as_str() == m.params.pid.as_str())
                && filter.model.as_ref().is_none_or(|v| *v == m.model)
                && filter.participant_id.as_ref().is_none_or(|v| *v == m.params.participant_id)
                && filter.experiment_id.as_ref().is_none_or(|v| *v == m.params.experiment_id)
                && filter.conversation_key.as_ref().is_none_or(|v| v == key)
                && filter.text_query.as_ref().is_none_or(|q| {
                    m.content.to_lowercase().contains(&q.to_lowercase())
                })
        })
        .map(|(key, _)| key.clone())
        .collect()
}

const WORDS: [&str; 8] = ["Moon", "landing", "vaccine", "Ukraine", "support", "hello", "FLAT", "earth"];

pub fn seed(store: &dyn Store, rng: &mut StdRng, conversations: usize, projects: usize, models: usize) -> Vec<(ConversationKey, ChatMessage)> {
    let mut all = Vec::new();
    for _ in 0..conversations {
        let p = params(
            &format!("project_{}", rng.random_range(0..projects)),
            &format!("exp{}", rng.random_range(0..3)),
            &format!("R{}", rng.random_range(0..8)),
            &format!("model-{}", rng.random_range(0..models)),
            Some(&format!("s{}", rng.random_range(0..4))),
        );
        let key = p.conversation_key();
        for _ in 0..rng.random_range(1..5) {
            let text = (0..rng.random_range(1..4))
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ");
            let role = if rng.random_bool(0.5) { Role::User } else { Role::Assistant };
            let stored = store.append_message(&key, ChatMessage::new(role, text, &p)).unwrap();
            all.push((key.clone(), stored));
        }
    }
    all
}

pub fn random_filter(rng: &mut StdRng, all: &[(ConversationKey, ChatMessage)], projects: usize, models: usize) -> ConversationFilter {
    let mut filter = ConversationFilter::default();
    if rng.random_bool(0.4) {
        filter.project_id = Some(format!("project_{}", rng.random_range(0..projects + 1)).parse().unwrap());
    }
    if rng.random_bool(0.4) {
        filter.model = Some(format!("model-{}", rng.random_range(0..models + 1)));
    }
    if rng.random_bool(0.3) {
        filter.participant_id = Some(format!("R{}", rng.random_range(0..9)));
    }
    if rng.random_bool(0.3) {
        filter.experiment_id = Some(format!("exp{}", rng.random_range(0..4)));
    }
    if rng.random_bool(0.1) && !all.is_empty() {
        filter.conversation_key = Some(all[rng.random_range(0..all.len())].0.clone());
    }
    if rng.random_bool(0.3) {
        let word = WORDS[rng.random_range(0..WORDS.len())];
        filter.text_query = Some(if rng.random_bool(0.5) { word.to_uppercase() } else { word[1..].to_owned() });
    }
    filter
}

#[test]
fn query_matches_linear_scan() {
    for (name, store, _dir) in stores() {
        let mut rng = StdRng::seed_from_u64(7);
        let all = seed(store.as_ref(), &mut rng, 20, 3, 3);

        let everything: BTreeSet<_> = all.iter().map(|(k, _)| k.clone()).collect();
        let rows = store.query_conversations(&ConversationFilter::default()).unwrap();
        assert_eq!(rows.iter().map(|r| r.key.clone()).collect::<BTreeSet<_>>(), everything);

        for _ in 0..300 {
            let filter = random_filter(&mut rng, &all, 3, 3);
            let got: BTreeSet<_> = store
                .query_conversations(&filter)
                .unwrap()
                .into_iter()
                .map(|r| r.key)
                .collect();
            assert_eq!(got, oracle(&all, &filter), "{name}: {filter:?}");
        }

        let by_model = ConversationFilter { model: Some("model-1".into()), ..Default::default() };
        for row in store.query_conversations(&by_model).unwrap() {
            let messages = store.load_conversation(&row.key).unwrap();
            assert!(messages.iter().any(|m| m.model == "model-1"));
            assert_eq!(row.message_count, messages.len());
            assert_eq!(row.last_timestamp, messages.last().unwrap().timestamp);
        }
    }
}

#[test]
fn query_scales_to_ten_thousand_messages() {
    let store = MemoryStore::new();
    let mut rng = StdRng::seed_from_u64(11);
    let mut all = Vec::new();
    while all.len() < 10_000 {
        all.extend(seed(&store, &mut rng, 50, 5, 4));
    }
    for _ in 0..20 {
        let filter = random_filter(&mut rng, &all, 5, 4);
        let got: BTreeSet<_> = store.query_conversations(&filter).unwrap().into_iter().map(|r| r.key).collect();
        assert_eq!(got, oracle(&all, &filter));
    }
}

#[test]
fn file_store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let p = params("p", "e", "a", "m", Some("s1"));
    let key = p.conversation_key();
    let (project, record, before, blob) = {
        let store = FileStore::open(dir.path()).unwrap();
        let project = store
            .create_project(NewProject {
                id: "p".parse().unwrap(),
                requested_by: "a@b.org".into(),
                system_message: "hello {{name}}".into(),
                provider_backend: "mock".into(),
                assistant_first: false,
                max_turns: Some(3),
            })
            .unwrap();
        let project = store
            .update_project(&project.id, &chatbridge_core::store::ProjectUpdate { active: Some(false), ..Default::default() })
            .unwrap();
        let record = store
            .put_system_message(chatbridge_core::domain::NewSystemMessage {
                project_id: project.id.clone(),
                content: "custom".into(),
                requested_by: "qualtrics".into(),
            })
            .unwrap();
        for text in ["one", "two", "three"] {
            store.append_message(&key, ChatMessage::new(Role::User, text, &p)).unwrap();
        }
        let blob = store.put_blob(b"\x89PNG", "image/png").unwrap();
        (project, record, store.load_conversation(&key).unwrap(), blob)
    };

    let reopened = FileStore::open(dir.path()).unwrap();
    assert_eq!(reopened.get_project(&project.id).unwrap(), Some(project.clone()));
    assert_eq!(reopened.list_projects().unwrap(), vec![project]);
    assert_eq!(reopened.get_system_message(&record.id).unwrap(), Some(record));
    assert_eq!(reopened.load_conversation(&key).unwrap(), before);
    assert_eq!(reopened.get_blob(&blob.id).unwrap().1, b"\x89PNG");
    assert_eq!(reopened.query_conversations(&ConversationFilter::default()).unwrap().len(), 1);
    assert!(reopened.health_check().is_ok());
}

#[test]
fn one_mebibyte_blob_round_trips() {
    for (name, store, _dir) in stores() {
        let mut payload = vec![0u8; 1 << 20];
        StdRng::seed_from_u64(3).fill_bytes(&mut payload);
        let expected = Sha256::digest(&payload);
        let blob = store.put_blob(&payload, "image/jpeg").unwrap();
        assert_eq!(blob.byte_length, 1 << 20);
        let (meta, back) = store.get_blob(&blob.id).unwrap();
        assert_eq!(meta, blob);
        assert_eq!(Sha256::digest(&back), expected, "{name}");

        let too_big = vec![0u8; 10 * 1024 * 1024 + 1];
        assert!(matches!(store.put_blob(&too_big, "image/png"), Err(StoreError::BlobTooLarge { .. })));
        let exactly = vec![0u8; 10 * 1024 * 1024];
        assert!(store.put_blob(&exactly, "image/webp").is_ok());
    }
}
