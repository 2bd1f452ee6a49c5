//! The on-disk workflow: each stage reads the previous stage's artifacts under the
//! dataset root and writes its own.
//!
//! ```text
//! index.csv, frames/<seq>/<sensor>/NNNNNN.*      simulate
//! features/{manifest.txt,windows.csv,...}       preprocess
//! models/<modality>/repN.{nnp,meta}             train
//! fusion/<combination>/repN.tsv                 fuse
//! results/{metrics.csv,baselines.csv,...}       evaluate
//! results/{timings.csv,timing_stages.csv}       bench
//! results/report.md                             report
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::camera::{self, ImageFrame};
use crate::config::RunConfig;
use crate::data::{assemble_windows, fit_scaler, group_sequences, read_index, write_index, FrameRecord, MinMaxScaler, Modality, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::fusion::{combination_name, enumerate_combinations, FusionEnsemble, FusionMember};
use crate::gps::{self, GpsReading};
use crate::lidar::{self, LidarFrameStats, PointCloud};
use crate::metrics::{evaluate_horizons, majority_baseline_f1, Confusion, THRESHOLD};
use crate::models::{build_model, prepare_frame, ModalityModel, ModelSpec};
use crate::radar::{self, RadarCube};
use crate::report::{self, CombinationMetrics, HorizonSummary, TimingRow};
use crate::sim;
use crate::train::{predict_dataset, train_model, ModalityDataset, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split `{s}`"))),
        }
    }
}

/// 70/15/15 by sorted sequence id: the first sequences train, the last ones test.
pub fn assign_splits(n: usize) -> Result<Vec<Split>> {
    if n < 3 {
        return Err(Error::Data(format!("need at least 3 sequences for train/val/test, found {n}")));
    }
    let held = |f: f64| ((n as f64 * f).round() as usize).max(1);
    let (n_val, n_test) = (held(0.15), held(0.15));
    let n_train = n - n_val - n_test;
    Ok((0..n)
        .map(|i| match i {
            i if i < n_train => Split::Train,
            i if i < n_train + n_val => Split::Val,
            _ => Split::Test,
        })
        .collect())
}

pub fn sequence_id(index: usize) -> String {
    format!("s{index:04}")
}

const AUG_MARK: &str = "~aug";

fn augmented_id(seq: &str, copy: usize) -> String {
    format!("{seq}{AUG_MARK}{copy}")
}

fn source_sequence(seq: &str) -> &str {
    seq.split(AUG_MARK).next().unwrap_or(seq)
}

/// FNV-1a over the parts, for per-frame seeds independent of processing order.
pub fn stable_seed(base: u64, parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for part in parts {
        for &b in part.iter().chain(&[0xff]) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Artifact paths under a dataset root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.csv")
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn manifest(&self) -> PathBuf {
        self.features().join("manifest.txt")
    }

    pub fn windows(&self) -> PathBuf {
        self.features().join("windows.csv")
    }

    pub fn frame_feature(&self, m: Modality, seq: &str, idx: u32) -> PathBuf {
        let ext = match m {
            Modality::Camera => "cft",
            Modality::Radar => "rft",
            Modality::Lidar => "bev",
            Modality::Gps => "csv",
        };
        self.features().join(m.as_str()).join(seq).join(format!("{idx:06}.{ext}"))
    }

    pub fn gps_windows(&self) -> PathBuf {
        self.features().join("gps").join("windows.csv")
    }

    pub fn gps_scaler(&self) -> PathBuf {
        self.features().join("gps").join("scaler.csv")
    }

    pub fn lidar_stats(&self) -> PathBuf {
        self.features().join("lidar").join("stats.csv")
    }

    pub fn model(&self, m: Modality, repeat: usize) -> PathBuf {
        self.root.join("models").join(m.as_str()).join(format!("rep{repeat}.nnp"))
    }

    pub fn curve(&self, m: Modality, repeat: usize) -> PathBuf {
        self.root.join("models").join(m.as_str()).join(format!("rep{repeat}_curve.csv"))
    }

    pub fn fusion_manifest(&self, combination: &str, repeat: usize) -> PathBuf {
        self.root.join("fusion").join(combination).join(format!("rep{repeat}.tsv"))
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn metrics(&self) -> PathBuf {
        self.results().join("metrics.csv")
    }

    pub fn metrics_by_repeat(&self) -> PathBuf {
        self.results().join("metrics_by_repeat.csv")
    }

    pub fn baselines(&self) -> PathBuf {
        self.results().join("baselines.csv")
    }

    pub fn timings(&self) -> PathBuf {
        self.results().join("timings.csv")
    }

    pub fn timing_stages(&self) -> PathBuf {
        self.results().join("timing_stages.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.results().join("report.md")
    }
}

fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage,
        })
    }
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(File::create(path)?)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Restricts `available` to the configured modalities. An explicit request for a
/// modality the upstream stage did not produce is an error.
fn select(cfg: &RunConfig, available: &[Modality], stage: &'static str, missing: impl Fn(Modality) -> PathBuf) -> Result<Vec<Modality>> {
    match &cfg.modalities {
        None if available.is_empty() => Err(Error::MissingArtifact {
            path: missing(Modality::Camera),
            stage,
        }),
        None => Ok(available.to_vec()),
        Some(wanted) => {
            if let Some(&m) = wanted.iter().find(|m| !available.contains(m)) {
                return Err(Error::MissingArtifact { path: missing(m), stage });
            }
            Ok(wanted.clone())
        }
    }
}

// ---------------------------------------------------------------------------------
// simulate

#[derive(Clone, Debug, PartialEq)]
pub struct SimSummary {
    pub sequences: usize,
    pub frames: usize,
    pub positive_fraction: f64,
}

pub fn simulate(cfg: &RunConfig) -> Result<SimSummary> {
    cfg.validate()?;
    let layout = Layout::new(cfg.root()?);
    let per_seq: Vec<Vec<FrameRecord>> = pool(cfg.jobs)?.install(|| {
        (0..cfg.seeds)
            .into_par_iter()
            .map(|i| {
                let scenario = sim::simulate(&cfg.scenario(i))?;
                scenario.write(&layout.root, &sequence_id(i))
            })
            .collect::<Result<_>>()
    })?;
    let rows: Vec<FrameRecord> = per_seq.into_iter().flatten().collect();
    write_index(&rows, create(&layout.index())?)?;
    let positives = rows.iter().filter(|r| r.label == 1).count();
    log::info!("simulated {} sequences, {} frames", cfg.seeds, rows.len());
    Ok(SimSummary {
        sequences: cfg.seeds,
        frames: rows.len(),
        positive_fraction: positives as f64 / rows.len().max(1) as f64,
    })
}

// ---------------------------------------------------------------------------------
// preprocess

/// Key facts about the feature set that later stages must agree with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureManifest {
    pub modalities: Vec<Modality>,
    pub horizons: usize,
    pub camera_size: usize,
    pub bev_dims: (usize, usize),
    pub windows: usize,
}

impl FeatureManifest {
    fn write(&self, path: &Path) -> Result<()> {
        let mut f = create(path)?;
        let ms: Vec<&str> = self.modalities.iter().map(|m| m.as_str()).collect();
        writeln!(f, "modalities={}", ms.join(","))?;
        writeln!(f, "horizons={}", self.horizons)?;
        writeln!(f, "camera_size={}", self.camera_size)?;
        writeln!(f, "bev_dims={}x{}", self.bev_dims.0, self.bev_dims.1)?;
        writeln!(f, "windows={}", self.windows)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        require(path, "preprocess")?;
        let mut kv = BTreeMap::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let bad = |k: &str| Error::Format {
            path: path.to_path_buf(),
            msg: format!("bad or missing `{k}`"),
        };
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(k));
        let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad(k));
        let (h, w) = get("bev_dims")?
            .split_once('x')
            .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
            .ok_or_else(|| bad("bev_dims"))?;
        Ok(FeatureManifest {
            modalities: Modality::parse_list(get("modalities")?)?,
            horizons: num("horizons")?,
            camera_size: num("camera_size")?,
            bev_dims: (h, w),
            windows: num("windows")?,
        })
    }

    fn spec(&self, cfg: &RunConfig, m: Modality) -> Result<ModelSpec> {
        if self.horizons != cfg.horizons {
            return Err(Error::Config(format!(
                "features were built for {} horizons but the config asks for {}; rerun `blockcast preprocess`",
                self.horizons, cfg.horizons
            )));
        }
        Ok(ModelSpec {
            camera_size: self.camera_size,
            bev_dims: self.bev_dims,
            ..ModelSpec::new(m, cfg.preset, cfg.horizons)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowRow {
    pub seq_id: String,
    pub anchor: u32,
    pub split: Split,
    pub labels: Vec<u8>,
}

fn write_windows(rows: &[WindowRow], k: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["seq_id".to_string(), "anchor".into(), "split".into()];
    header.extend((1..=k).map(|h| format!("y{h}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.seq_id.clone(), r.anchor.to_string(), r.split.as_str().to_string()];
        rec.extend(r.labels.iter().map(|l| l.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_windows(path: &Path) -> Result<Vec<WindowRow>> {
    require(path, "preprocess")?;
    let mut rd = csv::Reader::from_path(path)?;
    rd.records()
        .map(|rec| {
            let rec = rec?;
            let bad = || Error::Format {
                path: path.to_path_buf(),
                msg: format!("bad window row {:?}", rec.iter().collect::<Vec<_>>()),
            };
            if rec.len() < 4 {
                return Err(bad());
            }
            Ok(WindowRow {
                seq_id: rec[0].to_string(),
                anchor: rec[1].parse().map_err(|_| bad())?,
                split: Split::parse(&rec[2]).map_err(|_| bad())?,
                labels: rec.iter().skip(3).map(|v| v.parse().map_err(|_| bad())).collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessSummary {
    pub modalities: Vec<Modality>,
    pub windows: usize,
    pub frames_processed: usize,
}

struct FrameTask<'a> {
    record: &'a FrameRecord,
    modality: Modality,
    copy: Option<usize>,
}

fn payload<'a>(rec: &'a FrameRecord, m: Modality) -> Result<&'a Path> {
    rec.payload(m)
        .ok_or_else(|| Error::Data(format!("{} frame {} has no {m} payload", rec.seq_id, rec.frame_idx)))
}

fn process_task(layout: &Layout, cfg: &RunConfig, task: &FrameTask) -> Result<Option<LidarFrameStats>> {
    let rec = task.record;
    let src = layout.root.join(payload(rec, task.modality)?);
    let seq = match task.copy {
        Some(c) => augmented_id(&rec.seq_id, c),
        None => rec.seq_id.clone(),
    };
    let seq_seed = stable_seed(cfg.seed, &[seq.as_bytes()]);
    let frame_seed = stable_seed(cfg.seed, &[seq.as_bytes(), &rec.frame_idx.to_le_bytes()]);
    let out = layout.frame_feature(task.modality, &seq, rec.frame_idx);
    match task.modality {
        Modality::Camera => {
            let mut img = ImageFrame::load(&src)?;
            if task.copy.is_some() {
                img = camera::camera_augment(&img, seq_seed, &cfg.camera_aug)?;
            }
            let s = cfg.camera_size();
            let t = camera::resize_normalize(&img, s, s)?.convert::<f32>();
            crate::binfmt::save(&out, |w| camera::write_features(&t, w))?;
            Ok(None)
        }
        Modality::Radar => {
            let mut cube = RadarCube::load(&src)?;
            if task.copy.is_some() {
                cube = radar::radar_augment(&cube, frame_seed, cfg.radar_noise_sigma)?;
            }
            let t = radar::assemble_radar_features(&cube)?.convert::<f32>();
            crate::binfmt::save(&out, |w| radar::write_features(&t, w))?;
            Ok(None)
        }
        Modality::Lidar => {
            let mut cloud = PointCloud::load(&src)?;
            if task.copy.is_some() {
                cloud = lidar::lidar_augment(&cloud, seq_seed, &cfg.lidar_augment())?;
            }
            let (bev, stats) = lidar::process_frame(&cloud, &cfg.lidar_pipeline(), frame_seed)?;
            crate::binfmt::save(&out, |w| lidar::write_bev(&bev, w))?;
            Ok(Some(stats))
        }
        Modality::Gps => Ok(None),
    }
}

pub fn preprocess(cfg: &RunConfig) -> Result<PreprocessSummary> {
    cfg.validate()?;
    let layout = Layout::new(cfg.root()?);
    require(&layout.index(), "simulate")?;
    let frames = read_index(File::open(layout.index())?)?;
    let modalities = cfg.modalities.clone().unwrap_or_else(|| Modality::ALL.to_vec());

    let seq_ids: Vec<String> = group_sequences(&frames).into_iter().map(|(s, _)| s.to_string()).collect();
    let splits: HashMap<String, Split> = seq_ids.iter().cloned().zip(assign_splits(seq_ids.len())?).collect();
    let windows = assemble_windows(&frames, cfg.horizons)?;
    if windows.is_empty() {
        return Err(Error::Data("no complete windows in the index".into()));
    }

    let mut rows: Vec<WindowRow> = windows
        .iter()
        .map(|w| WindowRow {
            seq_id: w.anchor().seq_id.clone(),
            anchor: w.anchor().frame_idx,
            split: splits[&w.anchor().seq_id],
            labels: w.future_labels.clone(),
        })
        .collect();
    let originals = rows.len();
    let augmentable = modalities.iter().any(|m| *m != Modality::Gps);
    if augmentable {
        for c in 1..=cfg.augment_copies {
            for i in 0..originals {
                if rows[i].split == Split::Train {
                    rows.push(WindowRow {
                        seq_id: augmented_id(&rows[i].seq_id, c),
                        ..rows[i].clone()
                    });
                }
            }
        }
    }

    let mut tasks = Vec::new();
    for m in modalities.iter().copied().filter(|m| *m != Modality::Gps) {
        for rec in &frames {
            tasks.push(FrameTask {
                record: rec,
                modality: m,
                copy: None,
            });
            if splits[&rec.seq_id] == Split::Train {
                for c in 1..=cfg.augment_copies {
                    tasks.push(FrameTask {
                        record: rec,
                        modality: m,
                        copy: Some(c),
                    });
                }
            }
        }
    }
    let stats: Vec<Option<LidarFrameStats>> = pool(cfg.jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|t| process_task(&layout, cfg, t))
            .collect::<Result<_>>()
    })?;
    if modalities.contains(&Modality::Lidar) {
        let mut w = csv::Writer::from_writer(create(&layout.lidar_stats())?);
        w.write_record(["seq_id", "frame_idx", "raw", "downsampled", "filtered", "above_ground", "clustered", "clusters"])?;
        for (t, s) in tasks.iter().zip(&stats) {
            if let Some(s) = s {
                let seq = t.copy.map_or_else(|| t.record.seq_id.clone(), |c| augmented_id(&t.record.seq_id, c));
                w.write_record([
                    seq,
                    t.record.frame_idx.to_string(),
                    s.raw.to_string(),
                    s.downsampled.to_string(),
                    s.filtered.to_string(),
                    s.above_ground.to_string(),
                    s.clustered.to_string(),
                    s.clusters.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    if modalities.contains(&Modality::Gps) {
        let gps_rows: Vec<[f64; gps::FEATURE_LEN]> = pool(cfg.jobs)?.install(|| {
            windows
                .par_iter()
                .map(|w| {
                    let readings = w
                        .frames
                        .iter()
                        .map(|f| gps::load_reading(&layout.root.join(payload(f, Modality::Gps)?), f.timestamp_ms))
                        .collect::<Result<Vec<GpsReading>>>()?;
                    gps::extract_gps_features(&readings)
                })
                .collect::<Result<_>>()
        })?;
        let train_rows: Vec<Vec<f64>> = rows[..originals]
            .iter()
            .zip(&gps_rows)
            .filter(|(r, _)| r.split == Split::Train)
            .map(|(_, f)| f.to_vec())
            .collect();
        let scaler = fit_scaler(&train_rows)?;
        scaler.write_csv(create(&layout.gps_scaler())?)?;
        let mut w = csv::Writer::from_writer(create(&layout.gps_windows())?);
        let mut header = vec!["seq_id".to_string(), "anchor".to_string()];
        header.extend((0..gps::FEATURE_LEN).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for (r, f) in rows[..originals].iter().zip(&gps_rows) {
            let mut rec = vec![r.seq_id.clone(), r.anchor.to_string()];
            rec.extend(f.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }

    write_windows(&rows, cfg.horizons, &layout.windows())?;
    let manifest = FeatureManifest {
        modalities: modalities.clone(),
        horizons: cfg.horizons,
        camera_size: cfg.camera_size(),
        bev_dims: cfg.lidar_pipeline().bev.shape(),
        windows: rows.len(),
    };
    manifest.write(&layout.manifest())?;
    log::info!("preprocessed {} frame payloads into {} windows", tasks.len(), rows.len());
    Ok(PreprocessSummary {
        modalities,
        windows: rows.len(),
        frames_processed: tasks.len(),
    })
}

// ---------------------------------------------------------------------------------
// datasets

/// Raw GPS feature vectors per `(seq_id, anchor)` plus the training-set scaler.
pub struct GpsTable {
    rows: HashMap<(String, u32), Vec<f64>>,
    pub scaler: MinMaxScaler,
}

impl GpsTable {
    pub fn load(layout: &Layout) -> Result<Self> {
        require(&layout.gps_windows(), "preprocess")?;
        let scaler = MinMaxScaler::read_csv(File::open(layout.gps_scaler())?)?;
        let mut rd = csv::Reader::from_path(layout.gps_windows())?;
        let mut rows = HashMap::new();
        for rec in rd.records() {
            let rec = rec?;
            let bad = || Error::Format {
                path: layout.gps_windows(),
                msg: format!("bad row {:?}", rec.iter().collect::<Vec<_>>()),
            };
            let anchor: u32 = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let f: Vec<f64> = rec.iter().skip(2).map(|v| v.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            if f.len() != gps::FEATURE_LEN {
                return Err(bad());
            }
            rows.insert((rec[0].to_string(), anchor), f);
        }
        Ok(GpsTable { rows, scaler })
    }

    pub fn normalized(&self, seq: &str, anchor: u32) -> Result<Vec<f64>> {
        let raw = self
            .rows
            .get(&(source_sequence(seq).to_string(), anchor))
            .ok_or_else(|| Error::Data(format!("no GPS features for {seq} anchor {anchor}")))?;
        gps::normalize_gps(raw, &self.scaler)
    }
}

fn load_frame_feature(layout: &Layout, spec: &ModelSpec, seq: &str, idx: u32) -> Result<Vec<f32>> {
    let path = layout.frame_feature(spec.modality, seq, idx);
    require(&path, "preprocess")?;
    match spec.modality {
        Modality::Camera => Ok(crate::binfmt::load(&path, |r| camera::read_features(r))?.into_data()),
        Modality::Radar => prepare_frame(spec, crate::binfmt::load(&path, |r| radar::read_features(r))?.into_data()),
        Modality::Lidar => Ok(crate::binfmt::load(&path, |r| lidar::read_bev(r))?.into_data()),
        Modality::Gps => Err(Error::Data("GPS has no per-frame features".into())),
    }
}

/// Model inputs for the windows of one split.
pub fn load_dataset(layout: &Layout, spec: &ModelSpec, windows: &[WindowRow], split: Split, gps_table: Option<&GpsTable>) -> Result<ModalityDataset> {
    let mut data = ModalityDataset::new(spec.prepared_shape());
    let mut cache: HashMap<(String, u32), Arc<[f32]>> = HashMap::new();
    for w in windows.iter().filter(|w| w.split == split) {
        let chunks = match spec.modality {
            Modality::Gps => {
                let table = gps_table.ok_or_else(|| Error::Data("GPS table not loaded".into()))?;
                let f: Vec<f32> = table.normalized(&w.seq_id, w.anchor)?.iter().map(|&v| v as f32).collect();
                vec![Arc::from(f)]
            }
            _ => {
                let first = w.anchor.checked_sub(WINDOW_LEN as u32 - 1).ok_or_else(|| Error::Data("window anchor below 4".into()))?;
                (first..=w.anchor)
                    .map(|idx| {
                        let key = (w.seq_id.clone(), idx);
                        if let Some(c) = cache.get(&key) {
                            return Ok(c.clone());
                        }
                        let chunk: Arc<[f32]> = Arc::from(load_frame_feature(layout, spec, &w.seq_id, idx)?);
                        cache.insert(key, chunk.clone());
                        Ok(chunk)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        data.push(chunks, w.labels.clone())?;
    }
    Ok(data)
}

// ---------------------------------------------------------------------------------
// train

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub modality: Modality,
    pub repeat: usize,
    pub report: TrainReport,
}

pub fn train_seed(cfg: &RunConfig, repeat: usize) -> u64 {
    cfg.seed.wrapping_add(repeat as u64)
}

pub fn train(cfg: &RunConfig) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    let layout = Layout::new(cfg.root()?);
    let manifest = FeatureManifest::read(&layout.manifest())?;
    let selection = select(cfg, &manifest.modalities, "preprocess", |m| layout.features().join(m.as_str()))?;
    let windows = read_windows(&layout.windows())?;
    let mut outcomes = Vec::new();
    for m in selection {
        let spec = manifest.spec(cfg, m)?;
        let table = (m == Modality::Gps).then(|| GpsTable::load(&layout)).transpose()?;
        let train_set = load_dataset(&layout, &spec, &windows, Split::Train, table.as_ref())?;
        let val_set = load_dataset(&layout, &spec, &windows, Split::Val, table.as_ref())?;
        for repeat in 0..cfg.train_repeats {
            let seed = train_seed(cfg, repeat);
            let mut model = build_model(&spec, seed)?;
            let report = train_model(&mut model, &train_set, &val_set, &cfg.train_config(seed), cfg.alpha)?;
            model.save(&layout.model(m, repeat))?;
            let mut w = csv::Writer::from_writer(create(&layout.curve(m, repeat))?);
            w.write_record(["epoch", "train_loss", "val_mean_f1"])?;
            for (e, (l, f)) in report.train_loss.iter().zip(&report.val_mean_f1).enumerate() {
                w.write_record([(e + 1).to_string(), l.to_string(), f.to_string()])?;
            }
            w.flush()?;
            log::info!("{m} repeat {repeat}: best epoch {}, val F1 {:?}", report.best_epoch + 1, report.validation_f1);
            outcomes.push(TrainOutcome {
                modality: m,
                repeat,
                report,
            });
        }
    }
    Ok(outcomes)
}

fn trained_modalities(layout: &Layout) -> Vec<Modality> {
    Modality::ALL.into_iter().filter(|&m| layout.model(m, 0).exists()).collect()
}

fn load_models(layout: &Layout, m: Modality, repeats: usize) -> Result<Vec<ModalityModel>> {
    (0..repeats)
        .map(|r| {
            let path = layout.model(m, r);
            require(&path, "train")?;
            ModalityModel::load(&path)
        })
        .collect()
}

fn ensemble(layout: &Layout, combo: &[Modality], models: &HashMap<Modality, Vec<ModalityModel>>, repeat: usize) -> Result<FusionEnsemble> {
    let members = combo
        .iter()
        .map(|&m| {
            Ok(FusionMember {
                modality: m,
                checkpoint: layout.model(m, repeat),
                score: models[&m][repeat].fusion_score()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FusionEnsemble::new(members)
}

// ---------------------------------------------------------------------------------
// fuse

/// Writes the ensemble manifest of every combination of the trained models.
pub fn fuse(cfg: &RunConfig) -> Result<Vec<FusionEnsemble>> {
    cfg.validate()?;
    let layout = Layout::new(cfg.root()?);
    let selection = select(cfg, &trained_modalities(&layout), "train", |m| layout.model(m, 0))?;
    let mut models = HashMap::new();
    for &m in &selection {
        models.insert(m, load_models(&layout, m, cfg.train_repeats)?);
    }
    let mut out = Vec::new();
    for combo in enumerate_combinations(&selection)? {
        for r in 0..cfg.train_repeats {
            let e = ensemble(&layout, &combo, &models, r)?;
            e.save(&layout.fusion_manifest(&e.name(), r))?;
            out.push(e);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------
// evaluate

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRow {
    pub horizon: usize,
    pub positive_rate: f64,
    pub majority_f1: f64,
    pub all_positive_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    /// Averaged over training repeats, in canonical combination order.
    pub combinations: Vec<CombinationMetrics>,
    /// `(repeat, metrics)` for every repeat.
    pub by_repeat: Vec<(usize, CombinationMetrics)>,
    pub baselines: Vec<BaselineRow>,
    pub test_windows: usize,
}

fn aggregate(name: &str, runs: &[CombinationMetrics]) -> CombinationMetrics {
    let k = runs[0].horizons.len();
    let n = runs.len() as f64;
    let horizons = (0..k)
        .map(|h| {
            let hs: Vec<&HorizonSummary> = runs.iter().map(|r| &r.horizons[h]).collect();
            let auc: Option<Vec<f64>> = hs.iter().map(|s| s.auc).collect();
            let mut counts = Confusion::default();
            for s in &hs {
                counts.tp += s.counts.tp;
                counts.fp += s.counts.fp;
                counts.tn += s.counts.tn;
                counts.fn_ += s.counts.fn_;
            }
            HorizonSummary {
                f1: hs.iter().map(|s| s.f1).sum::<f64>() / n,
                auc: auc.map(|a| a.iter().sum::<f64>() / n),
                counts,
            }
        })
        .collect();
    CombinationMetrics {
        combination: name.to_string(),
        horizons,
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<EvalSummary> {
    cfg.validate()?;
    let layout = Layout::new(cfg.root()?);
    let manifest = FeatureManifest::read(&layout.manifest())?;
    let selection = select(cfg, &trained_modalities(&layout), "train", |m| layout.model(m, 0))?;
    let windows = read_windows(&layout.windows())?;

    let mut labels: Option<Vec<Vec<u8>>> = None;
    let mut models = HashMap::new();
    let mut probs: HashMap<Modality, Vec<Vec<Vec<f64>>>> = HashMap::new();
    for &m in &selection {
        let spec = manifest.spec(cfg, m)?;
        let table = (m == Modality::Gps).then(|| GpsTable::load(&layout)).transpose()?;
        let test = load_dataset(&layout, &spec, &windows, Split::Test, table.as_ref())?;
        if test.is_empty() {
            return Err(Error::Data("test split has no windows".into()));
        }
        labels.get_or_insert_with(|| test.labels().to_vec());
        let ms = load_models(&layout, m, cfg.train_repeats)?;
        if let Some(bad) = ms.iter().find(|model| model.spec() != &spec) {
            return Err(Error::Config(format!(
                "{m} checkpoint was trained for {:?} but the features need {spec:?}; rerun `blockcast train`",
                bad.spec()
            )));
        }
        probs.insert(m, ms.iter().map(|model| predict_dataset(model, &test, cfg.batch_size)).collect::<Result<_>>()?);
        models.insert(m, ms);
    }
    let labels = labels.expect("at least one modality selected");

    let mut combinations = Vec::new();
    let mut by_repeat = Vec::new();
    for combo in enumerate_combinations(&selection)? {
        let name = combination_name(&combo);
        let mut runs = Vec::new();
        for r in 0..cfg.train_repeats {
            let e = ensemble(&layout, &combo, &models, r)?;
            let fused = (0..labels.len())
                .map(|i| e.fuse(&combo.iter().map(|m| probs[m][r][i].clone()).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?;
            let hm = evaluate_horizons(&labels, &fused)?;
            let metrics = CombinationMetrics {
                combination: name.clone(),
                horizons: hm
                    .iter()
                    .map(|h| HorizonSummary {
                        f1: h.f1,
                        auc: h.auc,
                        counts: h.counts,
                    })
                    .collect(),
            };
            by_repeat.push((r, metrics.clone()));
            runs.push(metrics);
        }
        combinations.push(aggregate(&name, &runs));
    }

    let train_labels: Vec<&Vec<u8>> = windows.iter().filter(|w| w.split == Split::Train).map(|w| &w.labels).collect();
    let baselines = (0..cfg.horizons)
        .map(|h| {
            let tr: Vec<u8> = train_labels.iter().map(|l| l[h]).collect();
            let te: Vec<u8> = labels.iter().map(|l| l[h]).collect();
            let ones = vec![1.0; te.len()];
            BaselineRow {
                horizon: h + 1,
                positive_rate: te.iter().filter(|&&y| y == 1).count() as f64 / te.len() as f64,
                majority_f1: majority_baseline_f1(&tr, &te),
                all_positive_f1: Confusion::from_scores(&te, &ones, THRESHOLD).map(|c| c.f1()).unwrap_or(0.0),
            }
        })
        .collect::<Vec<_>>();

    report::write_metrics_csv(&combinations, create(&layout.metrics())?)?;
    let mut w = csv::Writer::from_writer(create(&layout.metrics_by_repeat())?);
    w.write_record(["repeat", "combination", "horizon", "f1", "auc", "tp", "fp", "tn", "fn"])?;
    for (r, m) in &by_repeat {
        for (h, s) in m.horizons.iter().enumerate() {
            w.write_record([
                r.to_string(),
                m.combination.clone(),
                (h + 1).to_string(),
                s.f1.to_string(),
                s.auc.map(|a| a.to_string()).unwrap_or_default(),
                s.counts.tp.to_string(),
                s.counts.fp.to_string(),
                s.counts.tn.to_string(),
                s.counts.fn_.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&layout.baselines())?);
    w.write_record(["horizon", "positive_rate", "majority_f1", "all_positive_f1"])?;
    for b in &baselines {
        w.write_record([
            b.horizon.to_string(),
            b.positive_rate.to_string(),
            b.majority_f1.to_string(),
            b.all_positive_f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(EvalSummary {
        combinations,
        by_repeat,
        baselines,
        test_windows: labels.len(),
    })
}

// ---------------------------------------------------------------------------------
// bench

/// Mean and nearest-rank 95th percentile.
pub fn mean_p95(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    (mean, sorted[rank - 1])
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageTiming {
    pub modality: Modality,
    pub stage: &'static str,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSummary {
    pub rows: Vec<TimingRow>,
    pub stages: Vec<StageTiming>,
    pub warnings: Vec<String>,
}

enum Payload {
    Camera(ImageFrame),
    Radar(RadarCube),
    Lidar(PointCloud),
    Gps(GpsReading),
}

fn load_payload(root: &Path, rec: &FrameRecord, m: Modality) -> Result<Payload> {
    let path = root.join(payload(rec, m)?);
    Ok(match m {
        Modality::Camera => Payload::Camera(ImageFrame::load(&path)?),
        Modality::Radar => Payload::Radar(RadarCube::load(&path)?),
        Modality::Lidar => Payload::Lidar(PointCloud::load(&path)?),
        Modality::Gps => Payload::Gps(gps::load_reading(&path, rec.timestamp_ms)?),
    })
}

/// Pipeline work for one window: raw payloads to a `(1, ..input_shape)` model input.
fn window_input(cfg: &RunConfig, spec: &ModelSpec, frames: &[&Payload], scaler: Option<&MinMaxScaler>, seeds: &[u64]) -> Result<blockcast_nn::Tensor> {
    let mut data: Vec<f64> = Vec::new();
    match spec.modality {
        Modality::Camera => {
            for p in frames {
                let Payload::Camera(img) = p else { unreachable!() };
                data.extend(camera::resize_normalize(img, spec.camera_size, spec.camera_size)?.into_data());
            }
        }
        Modality::Radar => {
            for p in frames {
                let Payload::Radar(cube) = p else { unreachable!() };
                data.extend(radar::assemble_radar_features(cube)?.into_data());
            }
        }
        Modality::Lidar => {
            let pipeline = cfg.lidar_pipeline();
            let mut bevs = Vec::new();
            for (p, &seed) in frames.iter().zip(seeds) {
                let Payload::Lidar(cloud) = p else { unreachable!() };
                bevs.push(lidar::process_frame(cloud, &pipeline, seed)?.0);
            }
            data = lidar::stack_bev(&bevs.iter().collect::<Vec<_>>())?.into_data();
        }
        Modality::Gps => {
            let readings: Vec<GpsReading> = frames
                .iter()
                .map(|p| match p {
                    Payload::Gps(r) => *r,
                    _ => unreachable!(),
                })
                .collect();
            let f = gps::extract_gps_features(&readings)?;
            data = gps::normalize_gps(&f, scaler.ok_or_else(|| Error::Data("GPS scaler missing".into()))?)?;
        }
    }
    let mut shape = vec![1];
    shape.extend(spec.input_shape());
    Ok(blockcast_nn::Tensor::new(shape, data)?)
}

/// Per-window latency of every combination of the trained models over test windows,
/// measured single-threaded from preloaded payloads.
pub fn bench(cfg: &RunConfig) -> Result<BenchSummary> {
    cfg.validate()?;
    let layout = Layout::new(cfg.root()?);
    let manifest = FeatureManifest::read(&layout.manifest())?;
    let selection = select(cfg, &trained_modalities(&layout), "train", |m| layout.model(m, 0))?;
    require(&layout.index(), "simulate")?;
    let index = read_index(File::open(layout.index())?)?;
    let windows = read_windows(&layout.windows())?;
    let mut warnings = Vec::new();
    if cfg.bench_reps < 100 {
        let msg = format!("bench_reps = {} is below 100; timings are noisy", cfg.bench_reps);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let test: Vec<&WindowRow> = windows.iter().filter(|w| w.split == Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Data("test split has no windows".into()));
    }
    let total = cfg.bench_warmup + cfg.bench_reps;
    let chosen: Vec<&WindowRow> = (0..total).map(|i| test[i % test.len()]).collect();
    let by_key: HashMap<(&str, u32), &FrameRecord> = index.iter().map(|r| ((r.seq_id.as_str(), r.frame_idx), r)).collect();
    let frame_keys = |w: &WindowRow| -> Vec<(String, u32)> {
        (w.anchor + 1 - WINDOW_LEN as u32..=w.anchor).map(|i| (w.seq_id.clone(), i)).collect()
    };

    let scaler = if selection.contains(&Modality::Gps) {
        Some(MinMaxScaler::read_csv(File::open(layout.gps_scaler())?)?)
    } else {
        None
    };
    let mut stages = Vec::new();
    let mut pre: HashMap<Modality, Vec<f64>> = HashMap::new();
    let mut inf: HashMap<Modality, Vec<f64>> = HashMap::new();
    let mut outputs: HashMap<Modality, Vec<Vec<f64>>> = HashMap::new();
    let mut io_per_window = HashMap::new();
    for &m in &selection {
        let spec = manifest.spec(cfg, m)?;
        let model = ModalityModel::load(&layout.model(m, 0))?;
        let mut payloads: HashMap<(String, u32), Payload> = HashMap::new();
        let mut io = Vec::new();
        for w in &chosen {
            for key in frame_keys(w) {
                if payloads.contains_key(&key) {
                    continue;
                }
                let rec = by_key
                    .get(&(key.0.as_str(), key.1))
                    .ok_or_else(|| Error::Data(format!("{} frame {} missing from the index", key.0, key.1)))?;
                let t = Instant::now();
                let p = load_payload(&layout.root, rec, m)?;
                io.push(t.elapsed().as_secs_f64() * 1e3);
                payloads.insert(key, p);
            }
        }
        let (io_mean, io_p95) = mean_p95(&io);
        io_per_window.insert(m, io_mean * WINDOW_LEN as f64);
        let (mut pre_ms, mut inf_ms, mut outs) = (Vec::new(), Vec::new(), Vec::new());
        for (i, w) in chosen.iter().enumerate() {
            let keys = frame_keys(w);
            let frames: Vec<&Payload> = keys.iter().map(|k| &payloads[k]).collect();
            let seeds: Vec<u64> = keys
                .iter()
                .map(|(s, idx)| stable_seed(cfg.seed, &[s.as_bytes(), &idx.to_le_bytes()]))
                .collect();
            let t0 = Instant::now();
            let x = window_input(cfg, &spec, &frames, scaler.as_ref(), &seeds)?;
            let t1 = Instant::now();
            let p = model.predict(&x)?;
            let t2 = Instant::now();
            if i >= cfg.bench_warmup {
                pre_ms.push((t1 - t0).as_secs_f64() * 1e3);
                inf_ms.push((t2 - t1).as_secs_f64() * 1e3);
                outs.push(p.into_iter().next().expect("one window"));
            }
        }
        for (stage, samples) in [("preprocess", &pre_ms), ("inference", &inf_ms)] {
            let (mean_ms, p95_ms) = mean_p95(samples);
            stages.push(StageTiming {
                modality: m,
                stage,
                mean_ms,
                p95_ms,
            });
        }
        stages.push(StageTiming {
            modality: m,
            stage: "io_per_frame",
            mean_ms: io_mean,
            p95_ms: io_p95,
        });
        pre.insert(m, pre_ms);
        inf.insert(m, inf_ms);
        outputs.insert(m, outs);
    }

    let mut models = HashMap::new();
    for &m in &selection {
        models.insert(m, load_models(&layout, m, 1)?);
    }
    let mut rows = Vec::new();
    for combo in enumerate_combinations(&selection)? {
        let e = ensemble(&layout, &combo, &models, 0)?;
        let n = cfg.bench_reps;
        let mut fusion_ms = Vec::with_capacity(n);
        for i in 0..n {
            let member: Vec<Vec<f64>> = combo.iter().map(|m| outputs[m][i].clone()).collect();
            let t = Instant::now();
            std::hint::black_box(e.fuse(&member)?);
            fusion_ms.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let sum = |table: &HashMap<Modality, Vec<f64>>, i: usize| combo.iter().map(|m| table[m][i]).sum::<f64>();
        let pre_w: Vec<f64> = (0..n).map(|i| sum(&pre, i)).collect();
        let inf_w: Vec<f64> = (0..n).map(|i| sum(&inf, i) + fusion_ms[i]).collect();
        let tot_w: Vec<f64> = (0..n).map(|i| pre_w[i] + inf_w[i]).collect();
        let (pm, pp) = mean_p95(&pre_w);
        let (im, ip) = mean_p95(&inf_w);
        let (tm, tp) = mean_p95(&tot_w);
        let row = TimingRow {
            combination: e.name(),
            preprocess_ms_mean: pm,
            preprocess_ms_p95: pp,
            inference_ms_mean: im,
            inference_ms_p95: ip,
            fusion_ms_mean: mean_p95(&fusion_ms).0,
            io_ms_mean: combo.iter().map(|m| io_per_window[m]).sum(),
            total_ms_mean: tm,
            total_ms_p95: tp,
            windows: n,
        };
        if row.over_budget(report::BUDGET_MS) {
            let msg = format!("{} takes {:.1} ms per window, over the {} ms budget", row.combination, tm, report::BUDGET_MS);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        rows.push(row);
    }
    report::write_timings_csv(&rows, create(&layout.timings())?)?;
    let mut w = csv::Writer::from_writer(create(&layout.timing_stages())?);
    w.write_record(["modality", "stage", "mean_ms", "p95_ms"])?;
    for s in &stages {
        w.write_record([s.modality.as_str(), s.stage, &s.mean_ms.to_string(), &s.p95_ms.to_string()])?;
    }
    w.flush()?;
    Ok(BenchSummary { rows, stages, warnings })
}

// ---------------------------------------------------------------------------------
// report

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Wide CSV twin of the performance grid, full precision, rows in report order.
pub fn performance_csv(rows: &[CombinationMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let k = rows.first().map_or(0, |r| r.horizons.len());
    let mut header = vec!["combination".to_string()];
    for h in 1..=k {
        header.push(format!("t+{h}_f1"));
        header.push(format!("t+{h}_auc"));
    }
    w.write_record(&header)?;
    for r in report::sort_by_last_f1(rows) {
        let mut rec = vec![r.combination.clone()];
        for h in &r.horizons {
            rec.push(h.f1.to_string());
            rec.push(h.auc.map(|a| a.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `results/report.md` and returns the report in the requested format.
pub fn report(cfg: &RunConfig, format: ReportFormat) -> Result<String> {
    let layout = Layout::new(cfg.root()?);
    require(&layout.metrics(), "evaluate")?;
    let rows = report::read_metrics_csv(File::open(layout.metrics())?)?;
    let timings = if layout.timings().exists() {
        report::read_timings_csv(File::open(layout.timings())?)?
    } else {
        Vec::new()
    };
    let md = report::emit_report(&rows, &timings)?;
    create(&layout.report())?.write_all(md.as_bytes())?;
    match format {
        ReportFormat::Markdown => Ok(md),
        ReportFormat::Csv => performance_csv(&rows),
    }
}
