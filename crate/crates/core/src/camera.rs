//! Camera frames: PPM I/O, bilinear resize with `/255` normalization, augmentation.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::binfmt;
use crate::data::{seeded_rng, FeatureTensor};
use crate::error::{Error, Result};

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::MalformedImage(format!("zero dimension {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::MalformedImage(format!(
                "{width}x{height} RGB needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn write_ppm<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_ppm<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut token = Vec::new();
        let mut comment = false;
        while fields.len() < 4 {
            let mut b = [0u8; 1];
            if r.read(&mut b)? == 0 {
                return Err(Error::Data("truncated PPM header".into()));
            }
            let c = b[0];
            if comment {
                comment = c != b'\n';
                continue;
            }
            if c == b'#' {
                comment = true;
            } else if c.is_ascii_whitespace() {
                if !token.is_empty() {
                    fields.push(String::from_utf8_lossy(&token).into_owned());
                    token.clear();
                }
            } else {
                token.push(c);
            }
        }
        if fields[0] != "P6" {
            return Err(Error::Data(format!("expected P6, found {}", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad PPM field `{s}`")));
        let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Data(format!("only 8-bit PPM supported, maxval {maxval}")));
        }
        let mut data = vec![0u8; w * h * 3];
        r.read_exact(&mut data).map_err(|_| Error::Data("truncated PPM pixels".into()))?;
        Self::new(w, h, data).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        binfmt::load(path, Self::read_ppm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binfmt::save(path, |w| self.write_ppm(w))
    }
}

/// Source coordinate and blend weights for bilinear sampling with pixel centers at
/// half-integers.
fn taps(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resample to `(height, width)` and scale to `[0, 1]`, channels first.
pub fn resize_normalize(img: &ImageFrame, height: usize, width: usize) -> Result<FeatureTensor> {
    if height == 0 || width == 0 {
        return Err(Error::MalformedImage(format!("zero target dimension {width}x{height}")));
    }
    let cols: Vec<_> = (0..width).map(|x| taps(x, width, img.width)).collect();
    let mut data = vec![0.0; 3 * height * width];
    for y in 0..height {
        let (y0, y1, fy) = taps(y, height, img.height);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let (a, b, c, d) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data[(ch * height + y) * width + x] = (v / 255.0).clamp(0.0, 1.0);
            }
        }
    }
    FeatureTensor::new(vec![("channel", 3), ("row", height), ("col", width)], data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraAugmentParams {
    pub flip_prob: f64,
    /// Rotation angle drawn uniformly from `[-max, max]` degrees; at most 15.
    pub max_rotation_deg: f64,
    pub blur_prob: f64,
    pub blur_sigma: f64,
}

impl CameraAugmentParams {
    pub fn off() -> Self {
        Self {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
            blur_prob: 0.0,
            blur_sigma: 0.0,
        }
    }
}

impl Default for CameraAugmentParams {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            max_rotation_deg: 5.0,
            blur_prob: 0.3,
            blur_sigma: 0.8,
        }
    }
}

pub fn flip_horizontal(img: &ImageFrame) -> ImageFrame {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set_pixel(x, y, img.pixel(img.width - 1 - x, y));
        }
    }
    out
}

/// Rotation about the image center with bilinear sampling; samples falling outside the
/// image take the nearest edge pixel.
pub fn rotate(img: &ImageFrame, degrees: f64) -> ImageFrame {
    if degrees == 0.0 {
        return img.clone();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut out = img.clone();
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    for y in 0..img.height {
        for x in 0..img.width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = (c * dx + s * dy + cx).clamp(0.0, max_x);
            let sy = (-s * dx + c * dy + cy).clamp(0.0, max_y);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let (a, b, cc, d) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
            let px = std::array::from_fn(|ch| {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = cc[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
            });
            out.set_pixel(x, y, px);
        }
    }
    out
}

/// Normalized Gaussian taps over `[-ceil(3 sigma), ceil(3 sigma)]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with replicated edges.
pub fn gaussian_blur(img: &ImageFrame, sigma: f64) -> ImageFrame {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return img.clone();
    }
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);
    let mut tmp = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let sx = (x + t as i64 - r).clamp(0, w - 1);
                    acc += kv * img.data[((y * w + sx) * 3) as usize + ch] as f64;
                }
                tmp[((y * w + x) * 3) as usize + ch] = acc;
            }
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let sy = (y + t as i64 - r).clamp(0, h - 1);
                    acc += kv * tmp[((sy * w + x) * 3) as usize + ch];
                }
                out.data[((y * w + x) * 3) as usize + ch] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Independent random flip, small rotation and blur, reproducible from `rng_seed`.
pub fn camera_augment(img: &ImageFrame, rng_seed: u64, params: &CameraAugmentParams) -> Result<ImageFrame> {
    if !(0.0..=15.0).contains(&params.max_rotation_deg) {
        return Err(Error::Input(format!("rotation bound {} must be within [0, 15] degrees", params.max_rotation_deg)));
    }
    if !(params.blur_sigma >= 0.0) {
        return Err(Error::Input("blur sigma must be non-negative".into()));
    }
    let mut rng = seeded_rng(rng_seed, 0xca3e);
    let flip = rng.random::<f64>() < params.flip_prob;
    let angle = if params.max_rotation_deg > 0.0 {
        rng.random_range(-params.max_rotation_deg..=params.max_rotation_deg)
    } else {
        0.0
    };
    let blur = rng.random::<f64>() < params.blur_prob;
    let mut out = if flip { flip_horizontal(img) } else { img.clone() };
    out = rotate(&out, angle);
    if blur {
        out = gaussian_blur(&out, params.blur_sigma);
    }
    Ok(out)
}

/// `CFT1` encoding of a normalized `(3, H, W)` image: magic, `u32` dims, `f32` values.
pub fn write_features<W: Write>(t: &FeatureTensor<f32>, w: &mut W) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(crate::error::shape_err("CFT1 tensor", "[3, H, W]", s));
    }
    binfmt::write_header(w, b"CFT1", &[s[0] as u32, s[1] as u32, s[2] as u32])?;
    binfmt::write_f32s(w, t.data().iter().copied())
}

pub fn read_features<R: Read>(r: &mut R) -> Result<FeatureTensor<f32>> {
    let d = binfmt::read_header(r, b"CFT1", 3)?;
    let data = binfmt::read_f32s(r, d.iter().map(|&v| v as usize).product())?;
    binfmt::expect_eof(r)?;
    FeatureTensor::new(
        vec![("channel", d[0] as usize), ("row", d[1] as usize), ("col", d[2] as usize)],
        data,
    )
    .map_err(|e| Error::Data(e.to_string()))
}
