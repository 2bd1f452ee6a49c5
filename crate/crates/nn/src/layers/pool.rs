use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Bin `i` of `out` bins over an axis of length `len` covers `[floor(i*len/out), ceil((i+1)*len/out))`.
fn bin(i: usize, out: usize, len: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

fn check(x: &Tensor, out_h: usize, out_w: usize) -> Result<(usize, usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 || s[2] == 0 || s[3] == 0 {
        return Err(shape_err("adaptive_avg_pool input", &[0, 0, out_h, out_w], s));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

pub(crate) fn forward(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = check(x, out_h, out_w)?;
    let data = x.data();
    let mut out = vec![0.0; n * c * out_h * out_w];
    for plane in 0..n * c {
        let src = &data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1) = bin(oy, out_h, h);
            for ox in 0..out_w {
                let (x0, x1) = bin(ox, out_w, w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += src[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                dst[oy * out_w + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], out)
}

pub(crate) fn backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (out_h, out_w) = (grad_out.dim(2), grad_out.dim(3));
    if grad_out.shape() != [n, c, out_h, out_w] {
        return Err(shape_err("adaptive_avg_pool backward", &[n, c, out_h, out_w], grad_out.shape()));
    }
    let g = grad_out.data();
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &g[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1) = bin(oy, out_h, h);
            for ox in 0..out_w {
                let (x0, x1) = bin(ox, out_w, w);
                let share = src[oy * out_w + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    dst[y * w + x0..y * w + x1].iter_mut().for_each(|v| *v += share);
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::bin;

    #[test]
    fn bins_cover_axis_and_overlap_when_uneven() {
        assert_eq!(bin(0, 2, 4), (0, 2));
        assert_eq!(bin(1, 2, 4), (2, 4));
        assert_eq!(bin(0, 2, 5), (0, 3));
        assert_eq!(bin(1, 2, 5), (2, 5));
        assert_eq!(bin(0, 1, 7), (0, 7));
    }
}
