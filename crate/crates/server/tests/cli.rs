use std::path::PathBuf;
use std::process::Command;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config").join(name)
}

fn chatbridge(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_chatbridge"))
        .args(args)
        .env_remove("CHATBRIDGE_PROFILE")
        .env_remove("CHATBRIDGE_ADMIN_EMAIL")
        .env_remove("CHATBRIDGE_ADMIN_PASSWORD")
        .output()
        .unwrap()
}

#[test]
fn shipped_configs_validate() {
    let dev = config("chatbridge.dev.json");
    let out = chatbridge(&["check-config", "--config", dev.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("ok: 3 provider(s), 7 model(s)"), "{stdout}");
    assert!(stdout.contains("gpt4o"));

    // prod refuses to start without admin credentials in the environment
    let prod = config("chatbridge.prod.json");
    let out = chatbridge(&["check-config", "--config", prod.to_str().unwrap(), "--profile", "prod"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("admin credentials"));
}

#[test]
fn broken_registry_names_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("registry.json"),
        r#"{"providers": [{"name": "mock", "wire_protocol": "mock"}],
            "models": [{"alias": "bad", "provider_backend": "nowhere", "remote_model_name": "x"}]}"#,
    )
    .unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"registry": "registry.json"}"#).unwrap();
    let out = chatbridge(&["check-config", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad"));
}
