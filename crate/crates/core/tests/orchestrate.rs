use std::path::Path;

use fbmarl::config::{ConfigFileError, RunConfig};
use fbmarl::env::LayoutId;
use fbmarl::orchestrate::{compare_runs, load_reports, replay_path, run_config, seed_dir, CompareError, Direction};
use fbmarl::rollout::load_replay;

const TINY: &str = r#"
seeds = [7, 8]
generations = 3
[training]
iterations = 2
episodes = 3
max_steps = 50
[feedback]
mode = "scripted"
[feedback.script]
1 = "agent 2: get closer to lettuce"
"#;

fn tiny(dir: &Path, extra: &str) -> RunConfig {
    let mut cfg = RunConfig::from_toml(&format!("{extra}\n{TINY}"), dir, false).unwrap();
    cfg.output_dir = dir.join("out");
    cfg
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "");
    let reports = run_config(&cfg, Some(TINY)).unwrap();
    assert_eq!(reports.iter().map(|r| r.seed).collect::<Vec<_>>(), [7, 8]);
    for r in &reports {
        let sd = seed_dir(&cfg.output_dir, r.seed);
        let csv = std::fs::read_to_string(sd.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
        let jsonl = std::fs::read_to_string(sd.join("metrics.jsonl")).unwrap();
        assert_eq!(jsonl.lines().count(), 3 * 2);
        for f in ["run-report.json", "pools.json", "pools/agent-1.txt", "pools/agent-3.txt"] {
            assert!(sd.join(f).is_file(), "{f}");
        }
        for k in 0..3 {
            let text = std::fs::read_to_string(replay_path(&sd, k)).unwrap();
            assert_eq!(load_replay(&text).unwrap().meta.generation, k);
        }
        assert_eq!(r.phases.len(), 3);
        assert_eq!(r.phases[1].insertions.len(), 1);
        assert_eq!(r.pools[1].len(), 2);
        assert_eq!(r.pools[0].len(), 1);
        assert_eq!(r.config["source"], TINY);
    }

    let reloaded = load_reports(&cfg.output_dir).unwrap();
    assert_eq!(reloaded.len(), 2);
    assert_eq!(reloaded[0].generations.len(), reports[0].generations.len());
    let one = load_reports(&seed_dir(&cfg.output_dir, 8).join("run-report.json")).unwrap();
    assert_eq!(one[0].seed, 8);

    let c = compare_runs(&reports, &reloaded).unwrap();
    assert_eq!(c.rows.len(), 3);
    assert!(c.rows.iter().all(|r| r.diff == 0.0 && r.direction == Direction::Tie));
    assert_eq!(c.render().lines().filter(|l| l.ends_with("tie")).count(), 3);
}

#[test]
fn compare_rejects_mismatched_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_config(&tiny(&dir.path().join("a"), "layout = \"A\""), None).unwrap();
    let b = run_config(&tiny(&dir.path().join("b"), "layout = \"B\""), None).unwrap();
    assert_eq!(b[0].layout, LayoutId::B);
    assert!(matches!(compare_runs(&a, &b), Err(CompareError::Layout(..))));
    assert!(matches!(compare_runs(&a, &[]), Err(CompareError::Empty(_))));
}

#[test]
fn config_errors_are_typed() {
    let dir = tempfile::tempdir().unwrap();
    let missing = RunConfig::load(&dir.path().join("nope.toml"), false);
    assert!(matches!(missing, Err(ConfigFileError::Io { .. })));
    let bad = RunConfig::from_toml("generations = [", dir.path(), false);
    assert!(matches!(bad, Err(ConfigFileError::Syntax { .. })));
    let unknown = RunConfig::from_toml("colour = 1", dir.path(), false);
    assert!(unknown.is_err());
    let script = RunConfig::from_toml("seeds = [1]\n[feedback]\nmode = \"scripted\"\nscript_file = \"s.toml\"", dir.path(), false);
    assert!(matches!(script, Err(ConfigFileError::MissingFile(_))), "{script:?}");
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let full = RunConfig::load(&p, false).unwrap();
            let desk = RunConfig::load(&p, true).unwrap();
            assert_eq!(desk.settings.training.iterations * 5, full.settings.training.iterations, "{}", p.display());
            n += 1;
        }
    }
    assert_eq!(n, 6);
}
