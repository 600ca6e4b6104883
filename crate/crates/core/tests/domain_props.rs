use std::collections::HashSet;

use chatbridge_core::domain::{
    conversation_key, parse_session_parameters, validate_project_id, ConversationKey, PROJECT_ID_MAX_LEN,
};
use proptest::prelude::*;

/// Reference recognizer for `[a-z][a-z0-9_]*` up to 64 characters, written
/// against the raw bytes without sharing code with the validator.
fn in_language(s: &str) -> bool {
    let b = s.as_bytes();
    !b.is_empty()
        && s.chars().count() <= PROJECT_ID_MAX_LEN
        && b[0].is_ascii_lowercase()
        && b.iter()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == b'_')
}

fn identifier() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_ ./:-]{1,24}"
}

proptest! {
    #[test]
    fn project_id_accepts_exactly_the_language(s in "[a-z0-9_A-Z -]{0,70}") {
        prop_assert_eq!(validate_project_id(&s).is_ok(), in_language(&s));
    }

    #[test]
    fn project_id_accepts_every_member(s in "[a-z][a-z0-9_]{0,63}") {
        let id = validate_project_id(&s).unwrap();
        prop_assert_eq!(id.as_str(), s.as_str());
    }

    #[test]
    fn session_parameters_round_trip(
        pid in "[a-z][a-z0-9_]{0,20}",
        experiment in identifier(),
        participant in identifier(),
        model in "[a-z0-9-]{1,12}",
        session in proptest::option::of(identifier()),
        upload in any::<bool>(),
        first in any::<bool>(),
        extras in proptest::collection::vec(("x_[a-z]{1,8}", "[ -~]{0,12}"), 0..5),
    ) {
        let mut pairs = vec![
            ("pid".to_string(), pid),
            ("experiment_id".to_string(), experiment),
            ("participant_id".to_string(), participant),
            ("model".to_string(), model),
            ("upload_image".to_string(), upload.to_string()),
            ("assistant_first".to_string(), first.to_string()),
        ];
        if let Some(session) = session {
            pairs.push(("session_id".to_string(), session));
        }
        let mut seen = HashSet::new();
        for (k, v) in extras {
            if seen.insert(k.clone()) {
                pairs.push((k, v));
            }
        }

        let params = parse_session_parameters(pairs.clone()).unwrap();
        let emitted = params.to_query_pairs();
        let input: HashSet<_> = pairs.into_iter().collect();
        let output: HashSet<_> = emitted.iter().cloned().collect();
        prop_assert_eq!(&input, &output);

        // and through an actual URL-encoded query string
        let encoded = params.to_query_string();
        let decoded: Vec<(String, String)> =
            url::form_urlencoded::parse(encoded.as_bytes()).into_owned().collect();
        prop_assert_eq!(parse_session_parameters(decoded).unwrap(), params);
    }

    #[test]
    fn conversation_key_is_injective(
        a in (identifier(), identifier(), identifier(), identifier()),
        b in (identifier(), identifier(), identifier(), identifier()),
    ) {
        let key = |(e, p, s, _): &(String, String, String, String)| {
            let params = parse_session_parameters([
                ("pid", "proj"),
                ("experiment_id", e.as_str()),
                ("participant_id", p.as_str()),
                ("model", "m"),
                ("session_id", s.as_str()),
            ]).unwrap();
            conversation_key(&params)
        };
        let (ka, kb) = (key(&a), key(&b));
        let same_tuple = (&a.0, &a.1, &a.2) == (&b.0, &b.1, &b.2);
        prop_assert_eq!(ka == kb, same_tuple);
        prop_assert_eq!(ka.conversation_id() == kb.conversation_id(), same_tuple);
        prop_assert_eq!(ConversationKey::from_conversation_id(&ka.conversation_id()).unwrap(), ka);
    }
}
