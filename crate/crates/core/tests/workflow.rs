//! Staged workflow on a tiny dataset.

use std::collections::BTreeMap;
use std::path::Path;

use blockcast::config::RunConfig;
use blockcast::data::Modality;
use blockcast::workflow::{self, ReportFormat};
use blockcast::Error;

fn tiny(root: &Path, modalities: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("seeds", "3"),
        ("duration_steps", "20"),
        ("epochs", "1"),
        ("bench_reps", "3"),
        ("bench_warmup", "1"),
        ("modalities", modalities),
        ("image_size", "32"),
        ("bev_dims", "32x32"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.data_root = Some(root.to_path_buf());
    cfg
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn two_modalities_give_three_combinations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "camera,gps");
    assert!(matches!(workflow::train(&cfg), Err(Error::MissingArtifact { stage: "preprocess", .. })));
    assert!(matches!(workflow::preprocess(&cfg), Err(Error::MissingArtifact { stage: "simulate", .. })));

    workflow::simulate(&cfg).unwrap();
    let after_sim = snapshot(dir.path());
    let pre = workflow::preprocess(&cfg).unwrap();
    assert_eq!(pre.windows, 3 * (20 - 9));
    workflow::train(&cfg).unwrap();
    let eval = workflow::evaluate(&cfg).unwrap();
    let names: Vec<&str> = eval.combinations.iter().map(|c| c.combination.as_str()).collect();
    assert_eq!(names, ["camera_only", "gps_only", "camera_gps"]);
    assert_eq!(eval.test_windows, 11);
    let bench = workflow::bench(&cfg).unwrap();
    assert_eq!(bench.rows.len(), 3);
    assert!(bench.warnings.iter().any(|w| w.contains("below 100")));
    let md = workflow::report(&cfg, ReportFormat::Markdown).unwrap();
    assert!(md.contains("| camera_gps |"));
    let csv = workflow::report(&cfg, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let after = snapshot(dir.path());
    for (path, bytes) in &after_sim {
        assert_eq!(after.get(path), Some(bytes), "{path} changed after later stages");
    }

    let mut lidar = cfg.clone();
    lidar.modalities = Some(vec![Modality::Lidar]);
    assert!(matches!(workflow::evaluate(&lidar), Err(Error::MissingArtifact { stage: "train", .. })));
}

#[test]
fn rerun_gives_identical_metrics() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), "gps,lidar");
        workflow::simulate(&cfg).unwrap();
        workflow::preprocess(&cfg).unwrap();
        workflow::train(&cfg).unwrap();
        workflow::evaluate(&cfg).unwrap();
        std::fs::read(dir.path().join("results/metrics.csv")).unwrap()
    };
    assert_eq!(run(), run());
}
