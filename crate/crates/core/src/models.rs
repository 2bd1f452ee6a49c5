//! The four modality predictors assembled from `blockcast-nn` layers, at the full
//! `paper` widths or the reduced `desk` widths.
//!
//! Camera and radar encode each of the five frames separately, run an LSTM over the
//! frame embeddings and classify the final hidden state. LiDAR encodes the 15-channel
//! BEV stack in one pass. GPS feeds its single feature vector to a two-layer LSTM as a
//! length-1 sequence.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use blockcast_nn::checkpoint::{load_into, read_checkpoint, write_checkpoint};
use blockcast_nn::{Cache, LayerSpec, Mode, ParameterStore, Sequential, Tensor};

use crate::data::{seeded_rng, Modality, WINDOW_LEN};
use crate::error::{shape_err, Error, Result};
use crate::{gps, radar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalePreset {
    Paper,
    Desk,
}

impl ScalePreset {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalePreset::Paper => "paper",
            ScalePreset::Desk => "desk",
        }
    }
}

impl fmt::Display for ScalePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScalePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(ScalePreset::Paper),
            "desk" => Ok(ScalePreset::Desk),
            _ => Err(Error::Config(format!("unknown scale preset `{s}` (expected paper or desk)"))),
        }
    }
}

/// Everything that fixes a model's architecture and input shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub modality: Modality,
    pub preset: ScalePreset,
    pub horizons: usize,
    /// Side of the square camera input.
    pub camera_size: usize,
    /// `(H, W)` of each BEV raster.
    pub bev_dims: (usize, usize),
}

/// Radar frames are average-pooled to this `(range, doppler)` size before the desk
/// encoder. The pooling has no parameters, so it can be applied once per frame.
pub const DESK_RADAR_POOL: (usize, usize) = (64, 16);

impl ModelSpec {
    pub fn new(modality: Modality, preset: ScalePreset, horizons: usize) -> Self {
        let (camera_size, bev_dims) = match preset {
            ScalePreset::Paper => (256, (400, 400)),
            ScalePreset::Desk => (32, (64, 64)),
        };
        ModelSpec {
            modality,
            preset,
            horizons,
            camera_size,
            bev_dims,
        }
    }

    /// Per-window input shape, without the batch axis.
    pub fn input_shape(&self) -> Vec<usize> {
        let (h, w) = self.bev_dims;
        match self.modality {
            Modality::Camera => vec![WINDOW_LEN, 3, self.camera_size, self.camera_size],
            Modality::Radar => vec![WINDOW_LEN, radar::FEATURE_CHANNELS, radar::RANGE_BINS, radar::FEATURE_DOPPLER],
            Modality::Lidar => vec![3 * WINDOW_LEN, h, w],
            Modality::Gps => vec![gps::FEATURE_LEN],
        }
    }

    /// Parameter-free reduction applied to every radar frame, if any.
    pub fn radar_prepool(&self) -> Option<(usize, usize)> {
        (self.modality == Modality::Radar && self.preset == ScalePreset::Desk).then_some(DESK_RADAR_POOL)
    }

    /// Input shape after [`prepare_frame`].
    pub fn prepared_shape(&self) -> Vec<usize> {
        match self.radar_prepool() {
            Some((h, w)) => vec![WINDOW_LEN, radar::FEATURE_CHANNELS, h, w],
            None => self.input_shape(),
        }
    }

    fn frames_per_window(&self) -> usize {
        match self.modality {
            Modality::Camera | Modality::Radar => WINDOW_LEN,
            Modality::Lidar | Modality::Gps => 1,
        }
    }
}

/// Applies the model's parameter-free per-frame reduction to one `(C, H, W)` frame.
pub fn prepare_frame(spec: &ModelSpec, frame: Vec<f32>) -> Result<Vec<f32>> {
    let Some((oh, ow)) = spec.radar_prepool() else {
        return Ok(frame);
    };
    let (c, h, w) = (radar::FEATURE_CHANNELS, radar::RANGE_BINS, radar::FEATURE_DOPPLER);
    if frame.len() != c * h * w {
        return Err(shape_err("radar frame", [c, h, w], frame.len()));
    }
    let (bh, bw) = (h / oh, w / ow);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for y in oy * bh..(oy + 1) * bh {
                    let row = &frame[(ch * h + y) * w..];
                    acc += row[ox * bw..(ox + 1) * bw].iter().map(|&v| v as f64).sum::<f64>();
                }
                out[(ch * oh + oy) * ow + ox] = (acc / (bh * bw) as f64) as f32;
            }
        }
    }
    Ok(out)
}

struct Layers {
    frame: Vec<LayerSpec>,
    temporal: Vec<LayerSpec>,
    head: Vec<LayerSpec>,
}

fn conv(i: usize, o: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel,
        stride,
        padding: kernel / 2,
    }
}

fn block(i: usize, o: usize, stride: usize) -> LayerSpec {
    LayerSpec::ResidualBlock {
        in_channels: i,
        out_channels: o,
        stride,
    }
}

fn linear(i: usize, o: usize) -> LayerSpec {
    LayerSpec::Linear {
        in_features: i,
        out_features: o,
    }
}

fn lstm(i: usize, h: usize, layers: usize) -> LayerSpec {
    LayerSpec::Lstm {
        input_size: i,
        hidden_size: h,
        num_layers: layers,
    }
}

fn pool(h: usize, w: usize) -> LayerSpec {
    LayerSpec::AdaptiveAvgPool { out_h: h, out_w: w }
}

fn head(i: usize, hidden: usize, rate: f64, k: usize) -> Vec<LayerSpec> {
    vec![linear(i, hidden), LayerSpec::Relu, LayerSpec::Dropout { rate }, linear(hidden, k)]
}

/// Residual backbone and its pooled embedding width.
fn backbone(in_channels: usize, preset: ScalePreset) -> (Vec<LayerSpec>, usize) {
    match preset {
        ScalePreset::Paper => {
            let mut l = vec![conv(in_channels, 64, 7, 2), LayerSpec::BatchNorm { channels: 64 }, LayerSpec::Relu];
            let mut c = 64;
            for (width, stride) in [(64, 1), (128, 2), (256, 2), (512, 2)] {
                l.push(block(c, width, stride));
                l.push(block(width, width, 1));
                c = width;
            }
            l.push(pool(1, 1));
            (l, 512)
        }
        ScalePreset::Desk => {
            let mut l = vec![conv(in_channels, 8, 3, 2), LayerSpec::BatchNorm { channels: 8 }, LayerSpec::Relu];
            l.extend([block(8, 8, 2), block(8, 8, 1), block(8, 16, 2), block(16, 16, 1)]);
            l.push(pool(2, 2));
            (l, 64)
        }
    }
}

fn layers_for(spec: &ModelSpec) -> Layers {
    let k = spec.horizons;
    let desk = spec.preset == ScalePreset::Desk;
    match spec.modality {
        Modality::Camera => {
            let (frame, emb) = backbone(3, spec.preset);
            let (h, fc) = if desk { (32, 16) } else { (128, 64) };
            Layers {
                frame,
                temporal: vec![lstm(emb, h, 1)],
                head: head(h, fc, 0.4, k),
            }
        }
        Modality::Lidar => {
            let (frame, emb) = backbone(3 * WINDOW_LEN, spec.preset);
            Layers {
                frame,
                temporal: Vec::new(),
                head: vec![linear(emb, k)],
            }
        }
        Modality::Radar => {
            let widths: [usize; 3] = if desk { [16, 32, 32] } else { [32, 64, 128] };
            let mut frame = Vec::new();
            let mut c = radar::FEATURE_CHANNELS;
            for w in widths {
                frame.extend([conv(c, w, 3, 2), LayerSpec::BatchNorm { channels: w }, LayerSpec::Relu]);
                c = w;
            }
            let (ph, pw) = if desk { (2, 1) } else { (1, 1) };
            frame.push(pool(ph, pw));
            let (h, fc) = if desk { (16, 16) } else { (64, 32) };
            Layers {
                frame,
                temporal: vec![lstm(c * ph * pw, h, 1)],
                head: head(h, fc, 0.3, k),
            }
        }
        Modality::Gps => {
            let (h, fc) = if desk { (32, 16) } else { (128, 64) };
            Layers {
                frame: Vec::new(),
                temporal: vec![lstm(gps::FEATURE_LEN, h, 2)],
                head: head(h, fc, 0.2, k),
            }
        }
    }
}

/// A modality predictor with its parameters.
#[derive(Clone, Debug)]
pub struct ModalityModel {
    spec: ModelSpec,
    store: ParameterStore,
    prepool: Option<Sequential>,
    frame: Option<Sequential>,
    temporal: Option<Sequential>,
    head: Sequential,
    /// Validation F1 per horizon, filled in by training.
    pub validation_f1: Vec<f64>,
    pub train_seed: u64,
}

pub struct ModelCache {
    frame: Option<(Cache, Vec<usize>)>,
    temporal: Option<Cache>,
    head: Cache,
}

pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ModalityModel> {
    if spec.horizons == 0 {
        return Err(Error::Config("horizons must be positive".into()));
    }
    if spec.camera_size < 8 || spec.bev_dims.0 < 8 || spec.bev_dims.1 < 8 {
        return Err(Error::Config("camera and BEV inputs must be at least 8 pixels".into()));
    }
    let layers = layers_for(spec);
    let mut rng = seeded_rng(seed, 0x6d6f64);
    let mut store = ParameterStore::new();
    let part = |specs: &[LayerSpec], store: &mut ParameterStore, prefix: &str, rng: &mut _| {
        (!specs.is_empty())
            .then(|| Sequential::build(specs, store, prefix, rng))
            .transpose()
    };
    let prepool = match spec.radar_prepool() {
        Some((h, w)) => part(&[pool(h, w)], &mut store, "prepool", &mut rng)?,
        None => None,
    };
    let frame = part(&layers.frame, &mut store, "frame", &mut rng)?;
    let temporal = part(&layers.temporal, &mut store, "temporal", &mut rng)?;
    let head = Sequential::build(&layers.head, &mut store, "head", &mut rng)?;
    Ok(ModalityModel {
        spec: spec.clone(),
        store,
        prepool,
        frame,
        temporal,
        head,
        validation_f1: Vec::new(),
        train_seed: seed,
    })
}

pub fn build_camera_model(preset: ScalePreset, horizons: usize, seed: u64) -> Result<ModalityModel> {
    build_model(&ModelSpec::new(Modality::Camera, preset, horizons), seed)
}

pub fn build_gps_model(preset: ScalePreset, horizons: usize, seed: u64) -> Result<ModalityModel> {
    build_model(&ModelSpec::new(Modality::Gps, preset, horizons), seed)
}

pub fn build_lidar_model(preset: ScalePreset, horizons: usize, bev_dims: (usize, usize), seed: u64) -> Result<ModalityModel> {
    let spec = ModelSpec {
        bev_dims,
        ..ModelSpec::new(Modality::Lidar, preset, horizons)
    };
    build_model(&spec, seed)
}

pub fn build_radar_model(preset: ScalePreset, horizons: usize, seed: u64) -> Result<ModalityModel> {
    build_model(&ModelSpec::new(Modality::Radar, preset, horizons), seed)
}

fn check_batch(x: &Tensor, shape: &[usize], context: &'static str) -> Result<usize> {
    if x.rank() != shape.len() + 1 || x.shape()[1..] != *shape || x.dim(0) == 0 {
        let mut expected = vec![0];
        expected.extend_from_slice(shape);
        return Err(shape_err(context, expected, x.shape()));
    }
    Ok(x.dim(0))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl ModalityModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn modality(&self) -> Modality {
        self.spec.modality
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Logits `(N, k)` for a raw batch of shape `(N, ..input_shape)`.
    pub fn forward(&self, x: &Tensor, mode: &mut Mode<'_>) -> Result<(Tensor, ModelCache)> {
        let n = check_batch(x, &self.spec.input_shape(), "model input")?;
        match &self.prepool {
            Some(p) => {
                let s = self.spec.input_shape();
                let frames = x.clone().reshape(&[n * s[0], s[1], s[2], s[3]])?;
                let (pooled, _) = p.forward(&self.store, &frames, &mut Mode::Eval)?;
                let mut shape = vec![n];
                shape.extend(self.spec.prepared_shape());
                self.forward_prepared(&pooled.reshape(&shape)?, mode)
            }
            None => self.forward_prepared(x, mode),
        }
    }

    /// As [`forward`](Self::forward) on a batch already passed through [`prepare_frame`].
    pub fn forward_prepared(&self, x: &Tensor, mode: &mut Mode<'_>) -> Result<(Tensor, ModelCache)> {
        let shape = self.spec.prepared_shape();
        let n = check_batch(x, &shape, "model input")?;
        let t = self.spec.frames_per_window();
        let (features, frame_cache) = match &self.frame {
            Some(frame) => {
                let chw = &shape[shape.len() - 3..];
                let frames = x.clone().reshape(&[n * t, chw[0], chw[1], chw[2]])?;
                let (emb, cache) = frame.forward(&self.store, &frames, mode)?;
                let emb_shape = emb.shape().to_vec();
                let e = emb.scalar_count() / (n * t);
                let features = if self.temporal.is_some() {
                    emb.reshape(&[n, t, e])?
                } else {
                    emb.reshape(&[n, e])?
                };
                (features, Some((cache, emb_shape)))
            }
            None => (x.clone().reshape(&[n, 1, shape[0]])?, None),
        };
        let (hidden, temporal_cache) = match &self.temporal {
            Some(seq) => {
                let (h, c) = seq.forward(&self.store, &features, mode)?;
                (h, Some(c))
            }
            None => (features, None),
        };
        let (logits, head_cache) = self.head.forward(&self.store, &hidden, mode)?;
        Ok((
            logits,
            ModelCache {
                frame: frame_cache,
                temporal: temporal_cache,
                head: head_cache,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d logits`.
    pub fn backward(&mut self, cache: &ModelCache, grad_logits: &Tensor) -> Result<()> {
        let mut g = self.head.backward(&mut self.store, &cache.head, grad_logits)?;
        if let (Some(seq), Some(c)) = (&self.temporal, &cache.temporal) {
            g = seq.backward(&mut self.store, c, &g)?;
        }
        if let (Some(frame), Some((c, shape))) = (&self.frame, &cache.frame) {
            frame.backward(&mut self.store, c, &g.reshape(shape)?)?;
        }
        Ok(())
    }

    /// Eval-mode probabilities, one k-vector per window.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (logits, _) = self.forward(x, &mut Mode::Eval)?;
        Ok(to_probs(&logits, self.spec.horizons))
    }

    pub fn predict_prepared(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (logits, _) = self.forward_prepared(x, &mut Mode::Eval)?;
        Ok(to_probs(&logits, self.spec.horizons))
    }

    /// Writes the parameters to `path` and the metadata to `path` with a `.meta`
    /// extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::binfmt::save(path, |w| Ok(write_checkpoint(&self.store, w)?))?;
        crate::binfmt::save(&meta_path(path), |w| self.write_meta(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta = crate::binfmt::load(&meta_path(path), |r| read_meta(r))?;
        let mut model = build_model(&meta.spec, meta.train_seed)?;
        let entries = crate::binfmt::load(path, |r| Ok(read_checkpoint(r)?))?;
        load_into(&mut model.store, entries).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        model.validation_f1 = meta.validation_f1;
        Ok(model)
    }

    fn write_meta(&self, w: &mut dyn Write) -> Result<()> {
        let s = &self.spec;
        writeln!(w, "modality={}", s.modality)?;
        writeln!(w, "preset={}", s.preset)?;
        writeln!(w, "horizons={}", s.horizons)?;
        writeln!(w, "camera_size={}", s.camera_size)?;
        writeln!(w, "bev_dims={}x{}", s.bev_dims.0, s.bev_dims.1)?;
        writeln!(w, "train_seed={}", self.train_seed)?;
        let f1: Vec<String> = self.validation_f1.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "validation_f1={}", f1.join(","))?;
        Ok(())
    }

    /// Mean validation F1 over horizons, the model's fusion score.
    pub fn fusion_score(&self) -> Result<f64> {
        if self.validation_f1.is_empty() {
            return Err(Error::Data(format!("{} model has no validation F1", self.spec.modality)));
        }
        Ok(self.validation_f1.iter().sum::<f64>() / self.validation_f1.len() as f64)
    }
}

fn to_probs(logits: &Tensor, k: usize) -> Vec<Vec<f64>> {
    logits.data().chunks(k).map(|row| row.iter().map(|&z| sigmoid(z)).collect()).collect()
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("meta")
}

struct Meta {
    spec: ModelSpec,
    train_seed: u64,
    validation_f1: Vec<f64>,
}

fn read_meta<R: std::io::Read>(r: R) -> Result<Meta> {
    let mut fields = std::collections::BTreeMap::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("expected key=value, found `{line}`")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| Error::Data(format!("metadata lacks `{k}`")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Data(format!("bad `{k}`"))) };
    let (bh, bw) = get("bev_dims")?
        .split_once('x')
        .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
        .ok_or_else(|| Error::Data("bad `bev_dims`".into()))?;
    let f1 = get("validation_f1")?;
    let validation_f1 = if f1.is_empty() {
        Vec::new()
    } else {
        f1.split(',')
            .map(|v| v.parse().map_err(|_| Error::Data(format!("bad validation F1 `{v}`"))))
            .collect::<Result<_>>()?
    };
    Ok(Meta {
        spec: ModelSpec {
            modality: get("modality")?.parse()?,
            preset: get("preset")?.parse()?,
            horizons: num("horizons")?,
            camera_size: num("camera_size")?,
            bev_dims: (bh, bw),
        },
        train_seed: get("train_seed")?.parse().map_err(|_| Error::Data("bad `train_seed`".into()))?,
        validation_f1,
    })
}
