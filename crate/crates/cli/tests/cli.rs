use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 12] = [
    "--seeds",
    "3",
    "--epochs",
    "1",
    "--modalities",
    "gps,radar",
    "--set",
    "duration_steps=20",
    "--set",
    "bench_reps=3",
    "--set",
    "bench_warmup=1",
];

fn blockcast(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blockcast"));
    cmd.env_remove("BLOCKCAST_DATA").env_remove("RUST_LOG").args(args);
    cmd
}

fn run_in(root: &Path, args: &[&str]) -> Output {
    blockcast(&["--data", root.to_str().unwrap()]).args(TINY).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        assert_eq!(blockcast(&[flag]).output().unwrap().status.code(), Some(0), "{flag}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(blockcast(&[]).output().unwrap().status.code(), Some(1));
    assert_eq!(blockcast(&["frobnicate"]).output().unwrap().status.code(), Some(1));
    let out = blockcast(&["simulate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("BLOCKCAST_DATA"));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["--set", "no_such_key=3", "simulate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_in(dir.path(), &["--set", "seeds", "simulate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("KEY=VALUE"));
}

#[test]
fn missing_stage_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("blockcast preprocess"), "{}", stderr(&out));
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_in(dir.path(), &["--dump-config", "simulate"]);
    assert_eq!(first.status.code(), Some(0));
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.contains("seeds"));
    let path = dir.path().join("run.conf");
    std::fs::write(&path, &text).unwrap();
    let second = blockcast(&["--config", path.to_str().unwrap(), "--dump-config", "simulate"]).output().unwrap();
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));
    assert_eq!(String::from_utf8(second.stdout).unwrap(), text);
}

#[test]
fn env_root_and_full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["simulate", "preprocess", "train", "fuse", "evaluate", "bench"] {
        let out = blockcast(&TINY).arg(stage).env("BLOCKCAST_DATA", dir.path()).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{stage}: {}", stderr(&out));
    }
    assert!(dir.path().join("results/metrics.csv").is_file());

    let md = run_in(dir.path(), &["report"]);
    assert_eq!(md.status.code(), Some(0));
    let md = String::from_utf8(md.stdout).unwrap();
    assert!(md.contains("| gps_radar |"));
    assert!(md.contains("Timings"));

    let csv = run_in(dir.path(), &["report", "--format", "csv"]);
    assert_eq!(csv.status.code(), Some(0));
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
}
