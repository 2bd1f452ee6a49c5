//! Radar preprocessing: Doppler spectra of the raw `(4, 256, 250)` cube and the eight
//! `(256, 64)` feature maps built from it.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;

use crate::binfmt;
use crate::data::{seeded_rng, FeatureTensor};
use crate::error::{shape_err, Error, Result};

pub const CHANNELS: usize = 4;
pub const RANGE_BINS: usize = 256;
pub const DOPPLER_BINS: usize = 250;
/// Index of zero Doppler after the spectrum shift.
pub const DOPPLER_CENTER: usize = DOPPLER_BINS / 2;
/// Doppler width of the feature maps.
pub const FEATURE_DOPPLER: usize = 64;
pub const FEATURE_CHANNELS: usize = 8;

/// Complex radar samples indexed `(channel, range, slow time)` in C order.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarCube {
    data: Vec<Complex32>,
}

impl RadarCube {
    pub const LEN: usize = CHANNELS * RANGE_BINS * DOPPLER_BINS;

    pub fn new(data: Vec<Complex32>) -> Result<Self> {
        if data.len() != Self::LEN {
            return Err(shape_err(
                "radar cube",
                [CHANNELS, RANGE_BINS, DOPPLER_BINS],
                format!("{} samples", data.len()),
            ));
        }
        if data.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Input("radar cube contains non-finite samples".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros() -> Self {
        Self {
            data: vec![Complex32::new(0.0, 0.0); Self::LEN],
        }
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex32] {
        &mut self.data
    }

    pub fn index(channel: usize, range: usize, doppler: usize) -> usize {
        (channel * RANGE_BINS + range) * DOPPLER_BINS + doppler
    }

    /// Slow-time samples of one `(channel, range)` cell.
    pub fn row(&self, channel: usize, range: usize) -> &[Complex32] {
        let start = Self::index(channel, range, 0);
        &self.data[start..start + DOPPLER_BINS]
    }

    /// `RDC1` encoding: magic, `u32` dims, interleaved `f32` real/imaginary pairs.
    pub fn write_rdc<W: Write>(&self, w: &mut W) -> Result<()> {
        binfmt::write_header(w, b"RDC1", &[CHANNELS as u32, RANGE_BINS as u32, DOPPLER_BINS as u32])?;
        binfmt::write_f32s(w, self.data.iter().flat_map(|c| [c.re, c.im]))
    }

    pub fn read_rdc<R: Read>(r: &mut R) -> Result<Self> {
        let dims = binfmt::read_header(r, b"RDC1", 3)?;
        if dims != [CHANNELS as u32, RANGE_BINS as u32, DOPPLER_BINS as u32] {
            return Err(shape_err("RDC1 header", [CHANNELS, RANGE_BINS, DOPPLER_BINS], dims));
        }
        let flat = binfmt::read_f32s(r, Self::LEN * 2)?;
        binfmt::expect_eof(r)?;
        Self::new(flat.chunks_exact(2).map(|p| Complex32::new(p[0], p[1])).collect())
            .map_err(|e| Error::Data(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        binfmt::load(path, Self::read_rdc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binfmt::save(path, |w| self.write_rdc(w))
    }
}

/// Squared magnitude of the DFT along the last axis, shifted so zero frequency lands
/// at [`DOPPLER_CENTER`]. Layout matches the cube.
pub fn doppler_fft(cube: &RadarCube) -> Vec<f64> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(DOPPLER_BINS);
    let mut out = vec![0.0; RadarCube::LEN];
    let mut buf = vec![Complex64::new(0.0, 0.0); DOPPLER_BINS];
    for (row_in, row_out) in cube.data.chunks_exact(DOPPLER_BINS).zip(out.chunks_exact_mut(DOPPLER_BINS)) {
        for (b, x) in buf.iter_mut().zip(row_in) {
            *b = Complex64::new(x.re as f64, x.im as f64);
        }
        fft.process(&mut buf);
        for (j, o) in row_out.iter_mut().enumerate() {
            *o = buf[(j + DOPPLER_BINS - DOPPLER_CENTER) % DOPPLER_BINS].norm_sqr();
        }
    }
    out
}

/// First index kept (crop) or zero-pad width on the left (pad) when resizing `len` to
/// [`FEATURE_DOPPLER`].
pub fn resize_offset(len: usize) -> usize {
    if len >= FEATURE_DOPPLER {
        (len - FEATURE_DOPPLER) / 2
    } else {
        (FEATURE_DOPPLER - len) / 2
    }
}

/// Center-crops or zero-pads the last axis of a row-major map with rows of length `len`.
pub fn resize_doppler(map: &[f64], len: usize) -> Result<Vec<f64>> {
    if len == 0 || map.len() % len != 0 {
        return Err(shape_err("resize_doppler", format!("rows of length {len}"), map.len()));
    }
    let rows = map.len() / len;
    let off = resize_offset(len);
    let mut out = vec![0.0; rows * FEATURE_DOPPLER];
    for (src, dst) in map.chunks_exact(len).zip(out.chunks_exact_mut(FEATURE_DOPPLER)) {
        if len >= FEATURE_DOPPLER {
            dst.copy_from_slice(&src[off..off + FEATURE_DOPPLER]);
        } else {
            dst[off..off + len].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Normalized Shannon entropy of non-negative weights, in `[0, 1]`; 0 for an all-zero set.
pub fn channel_entropy(m: &[f64; CHANNELS]) -> f64 {
    let total: f64 = m.iter().sum();
    if !(total > 0.0) {
        return 0.0;
    }
    if m.iter().all(|v| *v == m[0]) {
        return 1.0;
    }
    let h: f64 = m
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    (h / (CHANNELS as f64).ln()).clamp(0.0, 1.0)
}

/// Power-weighted mean and standard deviation of the centered Doppler index of one row,
/// both divided by [`DOPPLER_CENTER`]. Zero power gives `(0, 0)`.
pub fn doppler_moments(power_row: &[f64]) -> (f64, f64) {
    let total: f64 = power_row.iter().sum();
    if !(total > 0.0) {
        return (0.0, 0.0);
    }
    let offset = |d: usize| d as f64 - DOPPLER_CENTER as f64;
    let mean = power_row.iter().enumerate().map(|(d, w)| w * offset(d)).sum::<f64>() / total;
    let var = power_row
        .iter()
        .enumerate()
        .map(|(d, w)| w * (offset(d) - mean).powi(2))
        .sum::<f64>()
        / total;
    let scale = DOPPLER_CENTER as f64;
    (mean / scale, var.max(0.0).sqrt() / scale)
}

/// The `(8, 256, 64)` feature tensor: reference-channel magnitude and phase, Doppler
/// power, cross-channel magnitude mean and std, channel entropy, mean velocity and
/// spectral width.
pub fn assemble_radar_features(cube: &RadarCube) -> Result<FeatureTensor> {
    let plane = RANGE_BINS * DOPPLER_BINS;
    let mag: Vec<f64> = cube.data.iter().map(|c| (c.re as f64).hypot(c.im as f64)).collect();
    let mut maps = vec![vec![0.0; plane]; FEATURE_CHANNELS];

    for i in 0..plane {
        let c0 = cube.data[i];
        maps[0][i] = mag[i];
        maps[1][i] = ((c0.im as f64).atan2(c0.re as f64) + PI) / (2.0 * PI);
        let m: [f64; CHANNELS] = std::array::from_fn(|c| mag[c * plane + i]);
        let mean = m.iter().sum::<f64>() / CHANNELS as f64;
        let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / CHANNELS as f64;
        maps[3][i] = mean;
        maps[4][i] = var.sqrt();
        maps[5][i] = channel_entropy(&m);
    }

    let power = doppler_fft(cube);
    let avg: Vec<f64> = (0..plane)
        .map(|i| (0..CHANNELS).map(|c| power[c * plane + i]).sum::<f64>() / CHANNELS as f64)
        .collect();
    let logp: Vec<f64> = avg.iter().map(|p| p.ln_1p()).collect();
    let peak = logp.iter().copied().fold(0.0, f64::max);
    maps[2] = if peak > 0.0 {
        logp.iter().map(|v| v / peak).collect()
    } else {
        logp
    };
    for r in 0..RANGE_BINS {
        let (mean, width) = doppler_moments(&avg[r * DOPPLER_BINS..(r + 1) * DOPPLER_BINS]);
        maps[6][r * DOPPLER_BINS..(r + 1) * DOPPLER_BINS].fill(mean);
        maps[7][r * DOPPLER_BINS..(r + 1) * DOPPLER_BINS].fill(width);
    }

    let mut data = Vec::with_capacity(FEATURE_CHANNELS * RANGE_BINS * FEATURE_DOPPLER);
    for map in &maps {
        data.extend(resize_doppler(map, DOPPLER_BINS)?);
    }
    FeatureTensor::new(
        vec![("channel", FEATURE_CHANNELS), ("range", RANGE_BINS), ("doppler", FEATURE_DOPPLER)],
        data,
    )
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma` to each real and
/// imaginary component.
pub fn radar_augment(cube: &RadarCube, rng_seed: u64, sigma: f64) -> Result<RadarCube> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(cube.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = seeded_rng(rng_seed, 0x4ad4);
    let data = cube
        .data
        .iter()
        .map(|c| {
            Complex32::new(
                (c.re as f64 + normal.sample(&mut rng)) as f32,
                (c.im as f64 + normal.sample(&mut rng)) as f32,
            )
        })
        .collect();
    Ok(RadarCube { data })
}

/// `RFT1` encoding of a feature tensor: magic, `u32` dims, `f32` values.
pub fn write_features<W: Write>(t: &FeatureTensor<f32>, w: &mut W) -> Result<()> {
    let s = t.shape();
    if s != [FEATURE_CHANNELS, RANGE_BINS, FEATURE_DOPPLER] {
        return Err(shape_err("RFT1 tensor", [FEATURE_CHANNELS, RANGE_BINS, FEATURE_DOPPLER], s));
    }
    binfmt::write_header(w, b"RFT1", &[s[0] as u32, s[1] as u32, s[2] as u32])?;
    binfmt::write_f32s(w, t.data().iter().copied())
}

pub fn read_features<R: Read>(r: &mut R) -> Result<FeatureTensor<f32>> {
    let d = binfmt::read_header(r, b"RFT1", 3)?;
    let data = binfmt::read_f32s(r, d.iter().map(|&v| v as usize).product())?;
    binfmt::expect_eof(r)?;
    FeatureTensor::new(
        vec![("channel", d[0] as usize), ("range", d[1] as usize), ("doppler", d[2] as usize)],
        data,
    )
    .map_err(|e| Error::Data(e.to_string()))
}
