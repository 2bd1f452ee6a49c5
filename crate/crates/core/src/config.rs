//! Run configuration: every tunable of the workflow as `key = value` text.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are ignored. Unknown
//! or repeated keys are errors. [`RunConfig::dump`] writes every key, so a dumped file
//! reproduces the run.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use blockcast_nn::{OptimizerKind, TrainConfig};

use crate::camera::CameraAugmentParams;
use crate::data::{Modality, DEFAULT_HORIZONS, DEFAULT_STEP_MS};
use crate::error::{Error, Result};
use crate::lidar::{BevGridSpec, LidarAugmentParams, LidarPipelineConfig};
use crate::models::{ModelSpec, ScalePreset};
use crate::sim::ScenarioConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Dataset root; falls back to `BLOCKCAST_DATA` when unset.
    pub data_root: Option<PathBuf>,
    pub preset: ScalePreset,
    pub horizons: usize,
    /// `None` selects whatever the upstream stage produced.
    pub modalities: Option<Vec<Modality>>,
    pub seed: u64,
    /// Number of simulated scenarios (one sequence each).
    pub seeds: usize,
    /// Independent training runs per modality.
    pub train_repeats: usize,
    pub jobs: usize,

    pub blockers: usize,
    pub duration_steps: usize,
    pub step_ms: i64,
    pub image_size: usize,

    /// Camera model input side; `None` means the preset's default.
    pub camera_size: Option<usize>,
    pub voxel_size: f64,
    pub outlier_k: usize,
    pub outlier_std: f64,
    pub ransac_thresh: f64,
    pub ransac_iterations: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_samples: usize,
    pub bev_cell: f64,
    /// BEV raster override; `None` means the preset's default.
    pub bev_dims: Option<(usize, usize)>,

    pub alpha: f64,
    /// Augmented replicas of each training sequence.
    pub augment_copies: usize,
    pub camera_aug: CameraAugmentParams,
    pub lidar_flip_prob: f64,
    pub lidar_max_rotation_deg: f64,
    pub lidar_scale_range: [f64; 2],
    pub radar_noise_sigma: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub patience: usize,
    pub grad_clip: Option<f64>,

    pub bench_reps: usize,
    pub bench_warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let lidar = LidarPipelineConfig::default();
        RunConfig {
            data_root: None,
            preset: ScalePreset::Desk,
            horizons: DEFAULT_HORIZONS,
            modalities: None,
            seed: 0,
            seeds: 20,
            train_repeats: 1,
            jobs: 1,
            blockers: 3,
            duration_steps: ScenarioConfig::default().duration_steps,
            step_ms: DEFAULT_STEP_MS,
            image_size: 64,
            camera_size: None,
            voxel_size: lidar.voxel_size,
            outlier_k: lidar.outlier_k,
            outlier_std: lidar.outlier_std_factor,
            ransac_thresh: lidar.ransac_thresh,
            ransac_iterations: lidar.ransac_iterations,
            dbscan_eps: lidar.dbscan_eps,
            dbscan_min_samples: lidar.dbscan_min_samples,
            bev_cell: lidar.bev.cell_size,
            bev_dims: None,
            alpha: 1.1,
            augment_copies: 0,
            camera_aug: CameraAugmentParams::default(),
            lidar_flip_prob: 0.5,
            lidar_max_rotation_deg: 10.0,
            lidar_scale_range: LidarAugmentParams::default().scale_range,
            radar_noise_sigma: 0.05,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            optimizer: train.optimizer,
            patience: train.patience,
            grad_clip: train.grad_clip,
            bench_reps: 100,
            bench_warmup: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_dims(key: &str, value: &str) -> Result<Option<(usize, usize)>> {
    if value == "auto" {
        return Ok(None);
    }
    value
        .split_once('x')
        .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
        .map(Some)
        .ok_or_else(|| Error::Config(format!("invalid value `{value}` for `{key}` (expected HxW or auto)")))
}

fn show_auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl RunConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data_root" => self.data_root = (!v.is_empty()).then(|| PathBuf::from(v)),
            "preset" => self.preset = v.parse()?,
            "horizons" => self.horizons = parse(key, v)?,
            "modalities" => {
                self.modalities = if v == "auto" {
                    None
                } else {
                    Some(Modality::parse_list(v)?)
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "seeds" => self.seeds = parse(key, v)?,
            "train_repeats" => self.train_repeats = parse(key, v)?,
            "jobs" => self.jobs = parse(key, v)?,
            "blockers" => self.blockers = parse(key, v)?,
            "duration_steps" => self.duration_steps = parse(key, v)?,
            "step_ms" => self.step_ms = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "camera_size" => self.camera_size = parse_auto(key, v)?,
            "voxel_size" => self.voxel_size = parse(key, v)?,
            "outlier_k" => self.outlier_k = parse(key, v)?,
            "outlier_std" => self.outlier_std = parse(key, v)?,
            "ransac_thresh" => self.ransac_thresh = parse(key, v)?,
            "ransac_iterations" => self.ransac_iterations = parse(key, v)?,
            "dbscan_eps" => self.dbscan_eps = parse(key, v)?,
            "dbscan_min_samples" => self.dbscan_min_samples = parse(key, v)?,
            "bev_cell" => self.bev_cell = parse(key, v)?,
            "bev_dims" => self.bev_dims = parse_dims(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "augment_copies" => self.augment_copies = parse(key, v)?,
            "camera_flip_prob" => self.camera_aug.flip_prob = parse(key, v)?,
            "camera_max_rotation_deg" => self.camera_aug.max_rotation_deg = parse(key, v)?,
            "camera_blur_prob" => self.camera_aug.blur_prob = parse(key, v)?,
            "camera_blur_sigma" => self.camera_aug.blur_sigma = parse(key, v)?,
            "lidar_flip_prob" => self.lidar_flip_prob = parse(key, v)?,
            "lidar_max_rotation_deg" => self.lidar_max_rotation_deg = parse(key, v)?,
            "lidar_scale_min" => self.lidar_scale_range[0] = parse(key, v)?,
            "lidar_scale_max" => self.lidar_scale_range[1] = parse(key, v)?,
            "radar_noise_sigma" => self.radar_noise_sigma = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::adam(),
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::Config(format!("unknown optimizer `{v}` (expected adam or sgd)"))),
                }
            }
            "patience" => self.patience = parse(key, v)?,
            "grad_clip" => {
                self.grad_clip = if v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "bench_reps" => self.bench_reps = parse(key, v)?,
            "bench_warmup" => self.bench_warmup = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let modalities = match &self.modalities {
            None => "auto".to_string(),
            Some(ms) => ms.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
        };
        let optimizer = match self.optimizer {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        };
        vec![
            ("data_root", self.data_root.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("preset", self.preset.to_string()),
            ("horizons", self.horizons.to_string()),
            ("modalities", modalities),
            ("seed", self.seed.to_string()),
            ("seeds", self.seeds.to_string()),
            ("train_repeats", self.train_repeats.to_string()),
            ("jobs", self.jobs.to_string()),
            ("blockers", self.blockers.to_string()),
            ("duration_steps", self.duration_steps.to_string()),
            ("step_ms", self.step_ms.to_string()),
            ("image_size", self.image_size.to_string()),
            ("camera_size", show_auto(&self.camera_size)),
            ("voxel_size", self.voxel_size.to_string()),
            ("outlier_k", self.outlier_k.to_string()),
            ("outlier_std", self.outlier_std.to_string()),
            ("ransac_thresh", self.ransac_thresh.to_string()),
            ("ransac_iterations", self.ransac_iterations.to_string()),
            ("dbscan_eps", self.dbscan_eps.to_string()),
            ("dbscan_min_samples", self.dbscan_min_samples.to_string()),
            ("bev_cell", self.bev_cell.to_string()),
            ("bev_dims", self.bev_dims.map_or_else(|| "auto".into(), |(h, w)| format!("{h}x{w}"))),
            ("alpha", self.alpha.to_string()),
            ("augment_copies", self.augment_copies.to_string()),
            ("camera_flip_prob", self.camera_aug.flip_prob.to_string()),
            ("camera_max_rotation_deg", self.camera_aug.max_rotation_deg.to_string()),
            ("camera_blur_prob", self.camera_aug.blur_prob.to_string()),
            ("camera_blur_sigma", self.camera_aug.blur_sigma.to_string()),
            ("lidar_flip_prob", self.lidar_flip_prob.to_string()),
            ("lidar_max_rotation_deg", self.lidar_max_rotation_deg.to_string()),
            ("lidar_scale_min", self.lidar_scale_range[0].to_string()),
            ("lidar_scale_max", self.lidar_scale_range[1].to_string()),
            ("radar_noise_sigma", self.radar_noise_sigma.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("optimizer", optimizer.to_string()),
            ("patience", self.patience.to_string()),
            ("grad_clip", self.grad_clip.map_or_else(|| "none".into(), |c| c.to_string())),
            ("bench_reps", self.bench_reps.to_string()),
            ("bench_warmup", self.bench_warmup.to_string()),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, found `{line}`", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: `{k}` set twice", n + 1)));
            }
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let unit = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` = {p} must be within [0, 1]")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` = {v} must be positive")))
            }
        };
        if !(1..=20).contains(&self.horizons) {
            return fail(format!("`horizons` = {} must be within 1..=20", self.horizons));
        }
        for (name, v) in [
            ("seeds", self.seeds),
            ("train_repeats", self.train_repeats),
            ("jobs", self.jobs),
            ("duration_steps", self.duration_steps),
            ("outlier_k", self.outlier_k),
            ("ransac_iterations", self.ransac_iterations),
            ("dbscan_min_samples", self.dbscan_min_samples),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("bench_reps", self.bench_reps),
        ] {
            if v == 0 {
                return fail(format!("`{name}` must be at least 1"));
            }
        }
        if self.image_size < 8 || self.image_size > 4096 {
            return fail(format!("`image_size` = {} must be within 8..=4096", self.image_size));
        }
        if self.step_ms <= 0 {
            return fail("`step_ms` must be positive".into());
        }
        if matches!(self.camera_size, Some(s) if !(8..=1024).contains(&s)) {
            return fail("`camera_size` must be within 8..=1024".into());
        }
        if matches!(self.bev_dims, Some((h, w)) if !(8..=4096).contains(&h) || !(8..=4096).contains(&w)) {
            return fail("`bev_dims` sides must be within 8..=4096".into());
        }
        for (name, v) in [
            ("voxel_size", self.voxel_size),
            ("outlier_std", self.outlier_std),
            ("ransac_thresh", self.ransac_thresh),
            ("dbscan_eps", self.dbscan_eps),
            ("bev_cell", self.bev_cell),
            ("alpha", self.alpha),
            ("learning_rate", self.learning_rate),
        ] {
            positive(name, v)?;
        }
        unit("camera_flip_prob", self.camera_aug.flip_prob)?;
        unit("camera_blur_prob", self.camera_aug.blur_prob)?;
        unit("lidar_flip_prob", self.lidar_flip_prob)?;
        if !(0.0..=15.0).contains(&self.camera_aug.max_rotation_deg) {
            return fail("`camera_max_rotation_deg` must be within [0, 15]".into());
        }
        if !(self.camera_aug.blur_sigma >= 0.0 && self.camera_aug.blur_sigma <= 10.0) {
            return fail("`camera_blur_sigma` must be within [0, 10]".into());
        }
        if !(0.0..=180.0).contains(&self.lidar_max_rotation_deg) {
            return fail("`lidar_max_rotation_deg` must be within [0, 180]".into());
        }
        let [lo, hi] = self.lidar_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return fail("lidar scale range must satisfy 0 < min <= max".into());
        }
        if !(self.radar_noise_sigma >= 0.0 && self.radar_noise_sigma.is_finite()) {
            return fail("`radar_noise_sigma` must be non-negative".into());
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0 && c.is_finite())) {
            return fail("`grad_clip` must be positive or none".into());
        }
        self.lidar_pipeline().bev.validate()?;
        Ok(())
    }

    /// Dataset root from the config or `BLOCKCAST_DATA`.
    pub fn root(&self) -> Result<PathBuf> {
        match &self.data_root {
            Some(p) => Ok(p.clone()),
            None => std::env::var_os("BLOCKCAST_DATA")
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .ok_or_else(|| Error::Config("no dataset root: pass --data or set BLOCKCAST_DATA".into())),
        }
    }

    pub fn scenario(&self, index: usize) -> ScenarioConfig {
        ScenarioConfig {
            rng_seed: self.seed.wrapping_add(index as u64),
            duration_steps: self.duration_steps,
            step_ms: self.step_ms,
            blocker_count: self.blockers,
            image_width: self.image_size,
            image_height: self.image_size,
            ..ScenarioConfig::default()
        }
    }

    pub fn lidar_pipeline(&self) -> LidarPipelineConfig {
        let spec = ModelSpec::new(Modality::Lidar, self.preset, self.horizons);
        LidarPipelineConfig {
            voxel_size: self.voxel_size,
            outlier_k: self.outlier_k,
            outlier_std_factor: self.outlier_std,
            ransac_thresh: self.ransac_thresh,
            ransac_iterations: self.ransac_iterations,
            dbscan_eps: self.dbscan_eps,
            dbscan_min_samples: self.dbscan_min_samples,
            bev: BevGridSpec {
                cell_size: self.bev_cell,
                dims: Some(self.bev_dims.unwrap_or(spec.bev_dims)),
                ..BevGridSpec::default()
            },
        }
    }

    pub fn lidar_augment(&self) -> LidarAugmentParams {
        LidarAugmentParams {
            flip_prob: self.lidar_flip_prob,
            max_rotation: self.lidar_max_rotation_deg.to_radians(),
            scale_range: self.lidar_scale_range,
        }
    }

    pub fn camera_size(&self) -> usize {
        self.camera_size
            .unwrap_or_else(|| ModelSpec::new(Modality::Camera, self.preset, self.horizons).camera_size)
    }

    pub fn model_spec(&self, modality: Modality) -> ModelSpec {
        ModelSpec {
            camera_size: self.camera_size(),
            bev_dims: self.lidar_pipeline().bev.shape(),
            ..ModelSpec::new(modality, self.preset, self.horizons)
        }
    }

    /// Training hyperparameters for one run; `pos_weight` is filled in by training.
    pub fn train_config(&self, rng_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            pos_weight: 1.0,
            rng_seed,
            patience: self.patience,
            grad_clip: self.grad_clip,
        }
    }
}
