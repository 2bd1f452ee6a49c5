//! Shared domain types: the dataset index, sliding windows, feature tensors, min-max
//! scaling, class weighting and seeded random streams.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};

/// Frames per observation window (`t-4 ..= t`).
pub const WINDOW_LEN: usize = 5;
/// Default number of predicted horizons.
pub const DEFAULT_HORIZONS: usize = 5;
/// Default sampling interval between frames.
pub const DEFAULT_STEP_MS: i64 = 300;

/// One seeded random stream. Distinct `stream` values give independent sequences for the
/// same seed, so stages can draw randomness without coordinating.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Camera,
    Gps,
    Lidar,
    Radar,
}

impl Modality {
    /// All modalities in lexical order.
    pub const ALL: [Modality; 4] = [Modality::Camera, Modality::Gps, Modality::Lidar, Modality::Radar];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Camera => "camera",
            Modality::Gps => "gps",
            Modality::Lidar => "lidar",
            Modality::Radar => "radar",
        }
    }

    /// Parses a comma-separated list; `all` expands to every modality. The result is
    /// sorted and deduplicated.
    pub fn parse_list(s: &str) -> Result<Vec<Modality>> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        let mut out = s
            .split(',')
            .map(|part| part.trim().parse())
            .collect::<Result<Vec<Modality>>>()?;
        if out.is_empty() {
            return Err(Error::Input("empty modality list".into()));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "camera" => Ok(Modality::Camera),
            "gps" => Ok(Modality::Gps),
            "lidar" => Ok(Modality::Lidar),
            "radar" => Ok(Modality::Radar),
            other => Err(Error::Input(format!("unknown modality `{other}`"))),
        }
    }
}

/// Element type of a [`FeatureTensor`]: `f64` for training, `f32` for storage.
pub trait Scalar: Copy + Default + PartialOrd + fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

/// Dense row-major tensor with named dimensions. Values are always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor<T = f64> {
    dims: Vec<(&'static str, usize)>,
    data: Vec<T>,
}

impl<T: Scalar> FeatureTensor<T> {
    pub fn new(dims: Vec<(&'static str, usize)>, data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().map(|d| d.1).product();
        if expected != data.len() {
            return Err(shape_err("feature tensor", expected, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.to_f64().is_finite()) {
            return Err(Error::Input(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<(&'static str, usize)>) -> Self {
        let n = dims.iter().map(|d| d.1).product();
        Self {
            dims,
            data: vec![T::default(); n],
        }
    }

    pub fn dims(&self) -> &[(&'static str, usize)] {
        &self.dims
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|d| d.1).collect()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn convert<U: Scalar>(&self) -> FeatureTensor<U> {
        FeatureTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// One row of `index.csv`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub seq_id: String,
    pub frame_idx: u32,
    pub timestamp_ms: i64,
    pub camera: Option<PathBuf>,
    pub gps: Option<PathBuf>,
    pub lidar: Option<PathBuf>,
    pub radar: Option<PathBuf>,
    pub label: u8,
}

impl FrameRecord {
    pub fn payload(&self, modality: Modality) -> Option<&Path> {
        match modality {
            Modality::Camera => self.camera.as_deref(),
            Modality::Gps => self.gps.as_deref(),
            Modality::Lidar => self.lidar.as_deref(),
            Modality::Radar => self.radar.as_deref(),
        }
    }
}

pub const INDEX_HEADER: [&str; 8] = ["seq_id", "frame_idx", "timestamp_ms", "camera", "gps", "lidar", "radar", "label"];

fn path_cell(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn write_index<W: Write>(records: &[FrameRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(INDEX_HEADER)?;
    for r in records {
        out.write_record([
            r.seq_id.clone(),
            r.frame_idx.to_string(),
            r.timestamp_ms.to_string(),
            path_cell(&r.camera),
            path_cell(&r.gps),
            path_cell(&r.lidar),
            path_cell(&r.radar),
            r.label.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_index<R: Read>(r: R) -> Result<Vec<FrameRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(INDEX_HEADER) {
        return Err(Error::MalformedIndex(format!(
            "expected header {}, found {}",
            INDEX_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let bad = |line: usize, what: &str| Error::MalformedIndex(format!("row {line}: bad {what}"));
    let opt = |s: &str| (!s.is_empty()).then(|| PathBuf::from(s));
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let label: u8 = row[7].parse().map_err(|_| bad(line, "label"))?;
        if label > 1 {
            return Err(bad(line, "label"));
        }
        out.push(FrameRecord {
            seq_id: row[0].to_string(),
            frame_idx: row[1].parse().map_err(|_| bad(line, "frame_idx"))?,
            timestamp_ms: row[2].parse().map_err(|_| bad(line, "timestamp_ms"))?,
            camera: opt(&row[3]),
            gps: opt(&row[4]),
            lidar: opt(&row[5]),
            radar: opt(&row[6]),
            label,
        });
    }
    Ok(out)
}

/// Five consecutive frames of one sequence and the labels of the `k` frames after them.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub frames: [FrameRecord; WINDOW_LEN],
    pub future_labels: Vec<u8>,
}

impl SampleWindow {
    /// The most recent frame `t`.
    pub fn anchor(&self) -> &FrameRecord {
        &self.frames[WINDOW_LEN - 1]
    }
}

/// Rows of each sequence in their original order, sequences in order of first appearance.
pub fn group_sequences(frames: &[FrameRecord]) -> Vec<(&str, Vec<&FrameRecord>)> {
    let mut order: Vec<(&str, Vec<&FrameRecord>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for f in frames {
        let i = *slot.entry(f.seq_id.as_str()).or_insert_with(|| {
            order.push((f.seq_id.as_str(), Vec::new()));
            order.len() - 1
        });
        order[i].1.push(f);
    }
    order
}

/// Builds every window whose anchor `t` has four frames before it and `k` after it in
/// the same sequence. Anchors whose span has a gap in `frame_idx` are skipped.
pub fn assemble_windows(frames: &[FrameRecord], k: usize) -> Result<Vec<SampleWindow>> {
    if k == 0 {
        return Err(Error::Config("horizon count k must be positive".into()));
    }
    let mut windows = Vec::new();
    for (seq, rows) in group_sequences(frames) {
        if let Some(w) = rows.windows(2).find(|w| w[1].frame_idx <= w[0].frame_idx) {
            return Err(Error::MalformedIndex(format!(
                "sequence {seq}: frame_idx {} follows {}",
                w[1].frame_idx, w[0].frame_idx
            )));
        }
        let span = WINDOW_LEN + k;
        for start in 0..rows.len().saturating_sub(span - 1) {
            let run = &rows[start..start + span];
            if run[span - 1].frame_idx - run[0].frame_idx != (span - 1) as u32 {
                log::debug!("sequence {seq}: gap near frame {}, window skipped", run[0].frame_idx);
                continue;
            }
            let frames: [FrameRecord; WINDOW_LEN] = std::array::from_fn(|i| run[i].clone());
            windows.push(SampleWindow {
                frames,
                future_labels: run[WINDOW_LEN..].iter().map(|r| r.label).collect(),
            });
        }
    }
    Ok(windows)
}

/// Per-feature min-max scaler. Constant features map to 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinMaxScaler {
    bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl MinMaxScaler {
    pub fn unfitted() -> Self {
        Self::default()
    }

    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(shape_err("scaler bounds", min.len(), max.len()));
        }
        if min.iter().zip(&max).any(|(lo, hi)| !(hi >= lo)) {
            return Err(Error::Input("scaler max below min".into()));
        }
        Ok(Self {
            bounds: Some((min, max)),
        })
    }

    pub fn is_fitted(&self) -> bool {
        self.bounds.is_some()
    }

    pub fn min(&self) -> Option<&[f64]> {
        self.bounds.as_ref().map(|b| b.0.as_slice())
    }

    pub fn max(&self) -> Option<&[f64]> {
        self.bounds.as_ref().map(|b| b.1.as_slice())
    }

    fn scale(&self, row: &[f64], clamp: bool) -> Result<Vec<f64>> {
        let (min, max) = self.bounds.as_ref().ok_or(Error::UnfittedScaler)?;
        if row.len() != min.len() {
            return Err(shape_err("scaler input", min.len(), row.len()));
        }
        Ok(row
            .iter()
            .zip(min.iter().zip(max))
            .map(|(&v, (&lo, &hi))| {
                let s = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                if clamp {
                    s.clamp(0.0, 1.0)
                } else {
                    s
                }
            })
            .collect())
    }

    /// `(v - min) / (max - min)` per feature.
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.scale(row, false)
    }

    /// Like [`apply`](Self::apply) but clamps to `[0, 1]`.
    pub fn apply_clamped(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.scale(row, true)
    }

    /// Two CSV rows: minima then maxima.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let (min, max) = self.bounds.as_ref().ok_or(Error::UnfittedScaler)?;
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for row in [min, max] {
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let rows = rdr
            .records()
            .map(|rec| {
                rec?.iter()
                    .map(|c| c.parse::<f64>().map_err(|_| Error::Data(format!("bad scaler value `{c}`"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let [min, max]: [Vec<f64>; 2] = rows
            .try_into()
            .map_err(|_| Error::Data("scaler file must have exactly two rows".into()))?;
        Self::from_bounds(min, max)
    }
}

pub fn fit_scaler(rows: &[Vec<f64>]) -> Result<MinMaxScaler> {
    let first = rows.first().ok_or_else(|| Error::Input("cannot fit scaler on zero rows".into()))?;
    let mut min = first.clone();
    let mut max = first.clone();
    for row in &rows[1..] {
        if row.len() != min.len() {
            return Err(shape_err("scaler fit row", min.len(), row.len()));
        }
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    MinMaxScaler::from_bounds(min, max)
}

pub fn apply_scaler(scaler: &MinMaxScaler, row: &[f64]) -> Result<Vec<f64>> {
    scaler.apply(row)
}

/// `alpha * n_neg / n_pos`.
pub fn positive_class_weight(n_neg: usize, n_pos: usize, alpha: f64) -> Result<f64> {
    if n_pos == 0 {
        return Err(Error::DivisionGuard("positive class weight needs at least one positive sample"));
    }
    Ok(alpha * n_neg as f64 / n_pos as f64)
}
