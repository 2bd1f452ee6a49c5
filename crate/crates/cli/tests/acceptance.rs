//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs the full desk-scale workflow through the `blockcast` binary, so it takes
//! several minutes.

#[path = "../../core/tests/common/mod.rs"]
mod core_common;
#[path = "../../nn/tests/common/mod.rs"]
mod nn_common;

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use blockcast::data::{seeded_rng, Modality};
use blockcast::fusion::{fuse, softmax_weights};
use blockcast::lidar::{bev_project, dbscan, ransac_ground, remove_outliers, voxel_downsample, BevGridSpec, PointCloud};
use blockcast::metrics::{auc_roc, Confusion, THRESHOLD};
use blockcast::models::{ModelSpec, ScalePreset};
use blockcast::radar::{channel_entropy, doppler_fft, resize_doppler, resize_offset, RadarCube, DOPPLER_BINS};
use blockcast::report::{self, CombinationMetrics, HorizonSummary};
use num_complex::Complex32;
use rand::Rng;

const ORACLE_INSTANCES: usize = 1000;
const ORACLE_LIMIT: Duration = Duration::from_secs(60);
const PRIMITIVE_TOL: f64 = 1e-4;
const STACK_TOL: f64 = 1e-3;
const GRADIENT_LIMIT: Duration = Duration::from_secs(300);
const RANSAC_MAX_DEG: f64 = 1.0;
const RANSAC_MIN_HITS: usize = 99;
const PARSEVAL_TOL: f64 = 1e-9;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const EXAMPLE_TOL: f64 = 1e-4;
const FUSION_MARGIN: f64 = 0.02;
const E2E_LIMIT: Duration = Duration::from_secs(30 * 60);
const LATENCY_BUDGET_MS: f64 = 300.0;
const E2E_REPEATS: &str = "5";
const E2E_EPOCHS: &str = "15";

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(101, 0);
    let mut dbscan_ok = 0;
    for _ in 0..ORACLE_INSTANCES {
        let pts = core_common::random_cloud(&mut rng, 120);
        let eps = rng.random_range(0.2..1.2);
        let min_samples = rng.random_range(1..8);
        let got = dbscan(&PointCloud::new(pts.clone()), eps, min_samples).unwrap();
        dbscan_ok += (got == core_common::dbscan_reference(&pts, eps, min_samples)) as usize;
    }
    let (mut f1_ok, mut auc_ok) = (0, 0);
    for _ in 0..ORACLE_INSTANCES {
        let (labels, scores) = core_common::random_scores(&mut rng, 50);
        let (counts, p, r, f1) = core_common::f1_reference(&labels, &scores, THRESHOLD);
        let c = Confusion::from_scores(&labels, &scores, THRESHOLD).unwrap();
        f1_ok += ([c.tp, c.fp, c.tn, c.fn_] == counts
            && (c.precision(), c.recall(), c.f1()) == (p.value(), r.value(), f1.value())) as usize;
        auc_ok += match (core_common::auc_reference(&labels, &scores), auc_roc(&labels, &scores)) {
            (Some(want), Ok(got)) => got == want,
            (None, Err(_)) => true,
            _ => false,
        } as usize;
    }
    let elapsed = start.elapsed();
    let n = ORACLE_INSTANCES;
    outcome(
        "oracle_equivalence",
        dbscan_ok == n && f1_ok == n && auc_ok == n && elapsed < ORACLE_LIMIT,
        format!(
            "exact matches dbscan {dbscan_ok}/{n}, f1 {f1_ok}/{n}, auc {auc_ok}/{n} in {:.1} s (limit {} s)",
            elapsed.as_secs_f64(),
            ORACLE_LIMIT.as_secs()
        ),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut primitive_worst: f64 = 0.0;
    for (_, generator) in nn_common::PRIMITIVES {
        primitive_worst = primitive_worst.max(nn_common::worst_over_seeds(generator).0);
    }
    let mut stack_worst = Vec::new();
    for m in Modality::ALL {
        let spec = ModelSpec::new(m, ScalePreset::Desk, 5);
        let worst = (0..20).map(|seed| core_common::model_gradcheck(&spec, seed, 2, 5, 1e-6)).fold(0.0, f64::max);
        stack_worst.push((m, worst));
    }
    let elapsed = start.elapsed();
    let stacks_ok = stack_worst.iter().all(|(_, e)| *e < STACK_TOL);
    let stacks: Vec<String> = stack_worst.iter().map(|(m, e)| format!("{m} {e:.1e}")).collect();
    outcome(
        "gradient_suite",
        primitive_worst < PRIMITIVE_TOL && stacks_ok && elapsed < GRADIENT_LIMIT,
        format!(
            "{} primitives x 20 seeds worst {primitive_worst:.1e} (< {PRIMITIVE_TOL:e}); desk stacks x 20 seeds worst [{}] (< {STACK_TOL:e}); {:.1} s",
            nn_common::PRIMITIVES.len(),
            stacks.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn geometry_suite() -> Outcome {
    let mut rng = seeded_rng(102, 0);
    let mut hits = 0;
    for trial in 0..100 {
        let normal = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0];
        let offset = rng.random_range(-2.0..2.0);
        let pts = core_common::planted_plane(&mut rng, normal, offset, 800, 0.4, 0.02);
        let (plane, _) = ransac_ground(&PointCloud::new(pts), 0.1, 500, trial).unwrap();
        hits += (plane.angle_to(&normal).to_degrees() <= RANSAC_MAX_DEG) as usize;
    }
    let spec = BevGridSpec {
        x_range: [-6.0, 6.0],
        y_range: [-6.0, 6.0],
        z_range: [-1.0, 1.0],
        cell_size: 0.5,
        dims: None,
    };
    let mut invariant_ok = 0;
    for _ in 0..100 {
        let cloud = PointCloud::new(core_common::random_cloud(&mut rng, 400));
        let down = voxel_downsample(&cloud, 0.3).unwrap();
        let occupied: std::collections::BTreeSet<[i64; 3]> =
            cloud.points().iter().map(|p| p.map(|v| (v / 0.3).floor() as i64)).collect();
        let voxel_ok = down.len() == occupied.len() && voxel_downsample(&down, 0.3).unwrap().len() == down.len();
        let kept = remove_outliers(&cloud, 8, 2.0).unwrap();
        let outlier_ok = kept.len() <= cloud.len() && kept.points().iter().all(|p| cloud.points().contains(p));
        let bev = bev_project(&cloud, &spec).unwrap();
        let (h, w) = spec.shape();
        let cells = h * w;
        let hit: std::collections::HashSet<usize> = cloud.points().iter().filter_map(|p| spec.cell(p)).map(|(r, c)| r * w + c).collect();
        let bev_ok = bev.shape() == vec![3, h, w]
            && bev.data().iter().all(|v| (0.0..=1.0).contains(v))
            && (0..cells).all(|i| (bev.data()[cells + i] > 0.0) == hit.contains(&i));
        invariant_ok += (voxel_ok && outlier_ok && bev_ok) as usize;
    }
    outcome(
        "geometry_suite",
        hits >= RANSAC_MIN_HITS && invariant_ok == 100,
        format!(
            "RANSAC within {RANSAC_MAX_DEG} deg in {hits}/100 trials (need {RANSAC_MIN_HITS}; sigma 0.02 m, 40% outliers, 500 iterations); voxel/outlier/BEV invariants on {invariant_ok}/100 clouds"
        ),
    )
}

fn radar_suite() -> Outcome {
    let mut rng = seeded_rng(103, 0);
    let data = (0..RadarCube::LEN)
        .map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let cube = RadarCube::new(data).unwrap();
    let power = doppler_fft(&cube);
    let mut parseval_worst: f64 = 0.0;
    for (row_in, row_out) in cube.data().chunks_exact(DOPPLER_BINS).zip(power.chunks_exact(DOPPLER_BINS)) {
        let time: f64 = row_in.iter().map(|c| (c.re as f64).powi(2) + (c.im as f64).powi(2)).sum();
        let freq = row_out.iter().sum::<f64>() / DOPPLER_BINS as f64;
        parseval_worst = parseval_worst.max((time - freq).abs() / time);
    }
    let mut entropy_ok = channel_entropy(&[1.0, 0.0, 0.0, 0.0]) == 0.0 && channel_entropy(&[0.7; 4]) == 1.0;
    for _ in 0..10_000 {
        let m: [f64; 4] = std::array::from_fn(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..5.0) });
        entropy_ok &= (0.0..=1.0).contains(&channel_entropy(&m));
    }
    let row: Vec<f64> = (0..250).map(f64::from).collect();
    let cropped = resize_doppler(&row, 250).unwrap();
    let crop_ok = resize_offset(250) == 93 && cropped == row[93..=156];
    outcome(
        "radar_suite",
        parseval_worst <= PARSEVAL_TOL && entropy_ok && crop_ok,
        format!(
            "Parseval worst relative error {parseval_worst:.1e} over {} rows (tol {PARSEVAL_TOL:e}); entropy bounds and exact 0/1 cases {}; crop 250->64 keeps {}..{}",
            RadarCube::LEN / DOPPLER_BINS,
            if entropy_ok { "hold" } else { "violated" },
            cropped[0],
            cropped[63]
        ),
    )
}

fn fusion_suite() -> Outcome {
    let mut rng = seeded_rng(104, 0);
    let (mut sum_worst, mut shift_worst, mut hull_ok): (f64, f64, bool) = (0.0, 0.0, true);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=4);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let w = softmax_weights(&scores).unwrap();
        sum_worst = sum_worst.max((w.iter().sum::<f64>() - 1.0).abs());
        let c = rng.random_range(-5.0..5.0);
        let shifted = softmax_weights(&scores.iter().map(|s| s + c).collect::<Vec<_>>()).unwrap();
        shift_worst = shift_worst.max(w.iter().zip(&shifted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let members: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(0.0..=1.0)).collect()).collect();
        let fused = fuse(&members, &w).unwrap();
        for h in 0..5 {
            let lo = members.iter().map(|m| m[h]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|m| m[h]).fold(f64::NEG_INFINITY, f64::max);
            hull_ok &= fused[h] >= lo - 1e-12 && fused[h] <= hi + 1e-12;
        }
    }
    let ex = softmax_weights(&[0.971, 0.935]).unwrap();
    let example_ok = (ex[0] - 0.5090).abs() < EXAMPLE_TOL && (ex[1] - 0.4910).abs() < EXAMPLE_TOL;
    outcome(
        "fusion_suite",
        sum_worst <= WEIGHT_SUM_TOL && shift_worst <= WEIGHT_SUM_TOL && hull_ok && example_ok,
        format!(
            "weight sum error {sum_worst:.1e}, shift error {shift_worst:.1e} (tol {WEIGHT_SUM_TOL:e}); convex hull {}; (0.971, 0.935) -> ({:.4}, {:.4})",
            if hull_ok { "holds" } else { "violated" },
            ex[0],
            ex[1]
        ),
    )
}

fn blockcast(root: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_blockcast"))
        .arg("--data")
        .arg(root)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("blockcast {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn workflow(root: &Path, extra: &[&str], bench: bool) -> Result<(), String> {
    let mut stages = vec!["simulate", "preprocess", "train", "evaluate"];
    if bench {
        stages.push("bench");
        stages.push("report");
    }
    for stage in stages {
        let mut args: Vec<&str> = extra.to_vec();
        args.push(stage);
        blockcast(root, &args)?;
    }
    Ok(())
}

struct Table {
    rows: Vec<HashMap<String, String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table, String> {
        let mut rd = csv::Reader::from_reader(File::open(path).map_err(|e| format!("{}: {e}", path.display()))?);
        let headers = rd.headers().map_err(|e| e.to_string())?.clone();
        let rows = rd
            .records()
            .map(|r| {
                let r = r.map_err(|e| e.to_string())?;
                Ok(headers.iter().zip(r.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
            })
            .collect::<Result<_, String>>()?;
        Ok(Table { rows })
    }

    fn num(&self, filter: &[(&str, &str)], col: &str) -> Result<Vec<f64>, String> {
        Ok(self
            .rows
            .iter()
            .filter(|r| filter.iter().all(|(k, v)| r.get(*k).map(String::as_str) == Some(*v)))
            .map(|r| r[col].parse::<f64>().unwrap_or(f64::NAN))
            .collect())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn end_to_end(root: &Path) -> (Outcome, Option<Outcome>) {
    let start = Instant::now();
    let run = workflow(root, &["--seeds", "20", "--train-repeats", E2E_REPEATS, "--epochs", E2E_EPOCHS], true);
    let elapsed = start.elapsed();
    if let Err(e) = run {
        return (outcome("end_to_end", false, e), None);
    }
    let judged = (|| -> Result<(bool, String), String> {
        let windows = Table::read(&root.join("features/windows.csv"))?;
        let count = |split: &str| windows.rows.iter().filter(|r| r["split"] == split).count();
        let (tr, va, te) = (count("train"), count("val"), count("test"));
        let by_repeat = Table::read(&root.join("results/metrics_by_repeat.csv"))?;
        let baselines = Table::read(&root.join("results/baselines.csv"))?;
        let majority = baselines.num(&[("horizon", "1")], "majority_f1")?[0];
        let mut details = Vec::new();
        let mut beats = true;
        let mut best_single: f64 = 0.0;
        let mut decline = Vec::new();
        for m in Modality::ALL {
            let name = format!("{m}_only");
            let f1 = mean(&by_repeat.num(&[("combination", &name), ("horizon", "1")], "f1")?);
            let f5 = mean(&by_repeat.num(&[("combination", &name), ("horizon", "5")], "f1")?);
            beats &= f1 > majority;
            best_single = best_single.max(f1);
            decline.push(format!("{m} {f1:.3}->{f5:.3}"));
            details.push(format!("{name} {f1:.3}"));
        }
        let fused = mean(&by_repeat.num(&[("combination", "camera_radar"), ("horizon", "1")], "f1")?);
        let fusion_ok = fused >= best_single - FUSION_MARGIN;
        let pass = beats && fusion_ok && elapsed < E2E_LIMIT;
        Ok((
            pass,
            format!(
                "{} windows ({tr}/{va}/{te} train/val/test); mean t+1 F1 over {E2E_REPEATS} repeats: {} vs majority baseline {majority:.3}; camera_radar {fused:.3} vs best single {best_single:.3} - {FUSION_MARGIN}; t+1->t+5 [{}]; {:.1} min (limit {} min, {E2E_EPOCHS} epochs)",
                tr + va + te,
                details.join(", "),
                decline.join(", "),
                elapsed.as_secs_f64() / 60.0,
                E2E_LIMIT.as_secs() / 60
            ),
        ))
    })();
    let e2e = match judged {
        Ok((pass, detail)) => outcome("end_to_end", pass, detail),
        Err(e) => outcome("end_to_end", false, e),
    };

    let latency = (|| -> Result<(bool, String), String> {
        let t = Table::read(&root.join("results/timings.csv"))?;
        let total = |c: &str| t.num(&[("combination", c)], "total_ms_mean").map(|v| v[0]);
        let pre = |c: &str| t.num(&[("combination", c)], "preprocess_ms_mean").map(|v| v[0]);
        let (cam, cr) = (total("camera_only")?, total("camera_radar")?);
        let (gps_pre, all_pre) = (pre("gps_only")?, pre("camera_gps_lidar_radar")?);
        Ok((
            cam < LATENCY_BUDGET_MS && cr < LATENCY_BUDGET_MS && gps_pre < all_pre,
            format!(
                "mean total per window camera_only {cam:.1} ms, camera_radar {cr:.1} ms (budget {LATENCY_BUDGET_MS} ms); preprocessing gps_only {gps_pre:.3} ms < camera_gps_lidar_radar {all_pre:.1} ms"
            ),
        ))
    })();
    let latency = match latency {
        Ok((pass, detail)) => outcome("latency", pass, detail),
        Err(e) => outcome("latency", false, e),
    };
    (e2e, Some(latency))
}

fn report_fidelity() -> Outcome {
    let published = [(0.984, 0.988), (0.980, 0.985), (0.979, 0.982), (0.975, 0.971), (0.972, 0.968)];
    let row = CombinationMetrics {
        combination: "camera_radar".into(),
        horizons: published
            .iter()
            .map(|&(f1, auc)| HorizonSummary {
                f1,
                auc: Some(auc),
                counts: Confusion::default(),
            })
            .collect(),
    };
    let md = report::emit_report(&[row], &[]).unwrap();
    let want = "| camera_radar | 98.4% | 0.988 | 98.0% | 0.985 | 97.9% | 0.982 | 97.5% | 0.971 | 97.2% | 0.968 |";
    let got = md.lines().find(|l| l.starts_with("| camera_radar")).unwrap_or("");
    outcome("report_fidelity", got == want, format!("rendered `{got}`"))
}

fn determinism(scratch: &Path) -> Outcome {
    let args = ["--seeds", "4", "--epochs", "2", "--set", "duration_steps=30", "--modalities", "all"];
    let (a, b) = (scratch.join("a"), scratch.join("b"));
    let run = workflow(&a, &args, false).and_then(|_| workflow(&b, &args, false));
    match run {
        Err(e) => outcome("determinism", false, e),
        Ok(()) => {
            let read = |p: &Path| std::fs::read(p.join("results/metrics.csv")).unwrap_or_default();
            let (x, y) = (read(&a), read(&b));
            outcome(
                "determinism",
                !x.is_empty() && x == y,
                format!(
                    "two full runs (4 seeds, all modalities) metrics.csv {} ({} bytes, {} rows)",
                    if x == y { "byte-identical" } else { "differ" },
                    x.len(),
                    x.iter().filter(|&&c| c == b'\n').count().saturating_sub(1)
                ),
            )
        }
    }
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut results = vec![oracle_equivalence(), gradient_suite(), geometry_suite(), radar_suite(), fusion_suite()];
    let (e2e, latency) = end_to_end(&scratch.path().join("e2e"));
    results.push(e2e);
    results.extend(latency);
    // The large dataset is no longer needed.
    let _ = std::fs::remove_dir_all(scratch.path().join("e2e"));
    results.push(report_fidelity());
    results.push(determinism(scratch.path()));

    let failed: Vec<&Outcome> = results.iter().filter(|o| !o.pass).collect();
    println!("\n{} of {} acceptance criteria passed", results.len() - failed.len(), results.len());
    for f in &failed {
        println!("failed: {} ({})", f.name, f.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
