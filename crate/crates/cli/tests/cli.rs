use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cfsets(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfsets"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn setup(body: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = cfsets(
        &["synth", "--out", "data", "--samples", "300", "--calibration", "40", "--seed", "4"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = format!(
        r#"
base_seed = 1
horizon = 50
realizations = 2
algorithms = ["ucb1", "cf-ucb1"]
output = "bundle"
{body}
[data]
scores = "data/scores.csv"
calibration = "data/calibration.txt"
"#
    );
    fs::write(dir.path().join("exp.toml"), cfg).unwrap();
    dir
}

const MONOTONE: &str = "[expert]\nkind = \"monotone\"";

#[test]
fn run_then_report() {
    let dir = setup(MONOTONE);
    let o = cfsets(&["run", "exp.toml", "--jobs", "2", "--seed", "9"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(dir.path().join("bundle/manifest.json")).unwrap();
    assert!(manifest.contains("\"base_seed\": 9"));
    assert!(dir.path().join("bundle/runs/cf-ucb1/r001/trajectory.csv").exists());

    let o = cfsets(&["report", "bundle"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ordering:"));
    assert!(dir.path().join("bundle/reports/regret_ucb1.csv").exists());
}

#[test]
fn out_flag_and_faithful_replay() {
    let dir = setup(MONOTONE);
    let o = cfsets(&["run", "exp.toml", "--out", "other", "--faithful-replay"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(dir.path().join("other/manifest.json")).unwrap();
    assert!(manifest.contains("\"stream_mode\": \"faithful\""), "{manifest}");
}

#[test]
fn coverage_audit_prints_every_arm() {
    let dir = setup(MONOTONE);
    let o = cfsets(&["coverage", "exp.toml", "--delta", "0.1"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("/40 arms within epsilon"), "{text}");
}

#[test]
fn validation_failures_exit_one() {
    let dir = setup(MONOTONE);
    // verify needs a replay expert
    assert_eq!(code(&cfsets(&["verify", "exp.toml"], dir.path())), 1);
    assert_eq!(code(&cfsets(&["run", "missing.toml"], dir.path())), 1);
    assert_eq!(code(&cfsets(&["run", "exp.toml", "--bogus"], dir.path())), 1);
    assert_eq!(code(&cfsets(&["report", "nowhere"], dir.path())), 1);

    let replay = setup("[expert]\nkind = \"replay\"\nlog = \"log.csv\"");
    fs::write(
        replay.path().join("log.csv"),
        "sample_id,set_signature,predicted_label,mode\n",
    )
    .unwrap();
    let o = cfsets(&["verify", "exp.toml"], replay.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("missing:"));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = setup(MONOTONE);
    fs::write(dir.path().join("blocker"), "a file, not a directory").unwrap();
    let o = cfsets(&["run", "exp.toml", "--out", "blocker"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}
