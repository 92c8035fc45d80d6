use std::path::Path;
use std::process::{Command, Output};

fn portrait(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_portrait"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .env_remove("PORTRAIT_BACKEND_MANIFEST")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_generate_styles_round() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let fx = dir.path().join("fx");
    let fx_s = fx.to_str().unwrap();
    assert!(portrait(&ws, &["fixtures", fx_s]).status.success());

    let empty = dir.path().join("nothing");
    std::fs::create_dir(&empty).unwrap();
    let failed = portrait(&ws, &["train", "--id", "bob", empty.to_str().unwrap()]);
    assert!(!failed.status.success());
    assert!(String::from_utf8_lossy(&failed.stderr).contains("empty-training-set"));

    let trained = portrait(&ws, &["train", "--id", "alice", &format!("{fx_s}/uploads")]);
    assert!(trained.status.success(), "{}", String::from_utf8_lossy(&trained.stderr));

    let args = ["--seed", "7", "generate", "--identity", "alice", "--style", "oil-painting", "--count", "4"];
    let a = portrait(&ws, &args);
    let b = portrait(&ws, &args);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count(), 4);

    let listed = portrait(&ws, &["styles", "list", "--dir", &format!("{fx_s}/styles")]);
    assert!(listed.status.success());
    assert_eq!(stdout(&listed).lines().count(), 3);

    let added = portrait(&ws, &["styles", "add", &format!("{fx_s}/styles/pastel.json")]);
    assert!(added.status.success(), "{}", String::from_utf8_lossy(&added.stderr));
    assert_eq!(stdout(&portrait(&ws, &["styles", "list"])).lines().count(), 4);
    assert!(!portrait(&ws, &["styles", "add", &format!("{fx_s}/styles/pastel.json")]).status.success());

    let unknown = portrait(&ws, &["generate", "--identity", "zed", "--style", "oil-painting"]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("not-found"));

    let talk = portrait(&ws, &["talk", "--portrait", &format!("{fx_s}/templates/single.png"), "--text", "hello"]);
    assert!(talk.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&talk.stdout).unwrap();
    assert_eq!(manifest["audio_duration_secs"], 0.4);
}
