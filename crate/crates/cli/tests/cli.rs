use std::path::Path;
use std::process::{Command, Output};

fn fbmarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbmarl")).args(args).output().unwrap()
}

fn write_tiny(dir: &Path, layout: &str) -> String {
    let p = dir.join(format!("tiny-{layout}.toml"));
    std::fs::write(
        &p,
        format!(
            r#"layout = "{layout}"
seeds = [1, 2]
generations = 2
output_dir = "out-{layout}"
[training]
iterations = 2
episodes = 2
max_steps = 40
[feedback]
mode = "scripted"
[feedback.script]
0 = "all: achieve lettuce chopped"
"#
        ),
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "seeds = []\n").unwrap();
    let out = fbmarl(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let missing = fbmarl(&["run", dir.path().join("none.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn run_compare_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "A");
    let out = fbmarl(&["run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
    let run = dir.path().join("out-A");

    let other = dir.path().join("other");
    let out = fbmarl(&["run", &cfg, "--seeds", "1,2", "--output", other.to_str().unwrap()]);
    assert!(out.status.success());

    let out = fbmarl(&["compare", run.to_str().unwrap(), other.to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["rows"].as_array().unwrap().iter().all(|r| r["diff"] == 0.0));

    let b = write_tiny(dir.path(), "B");
    assert!(fbmarl(&["run", &b, "--seeds", "1"]).status.success());
    let out = fbmarl(&["compare", run.to_str().unwrap(), dir.path().join("out-B").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = fbmarl(&["replay-dump", run.to_str().unwrap(), "0", "--seed", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("generation 0  layout A"));
    assert!(text.contains("rollout 0"));
    let out = fbmarl(&["replay-dump", run.to_str().unwrap(), "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = fbmarl(&["replay-dump", run.join("seed-1").to_str().unwrap(), "1", "--format", "jsonl"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with('{'));
}
