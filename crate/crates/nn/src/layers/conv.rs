use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, NnError, Result};
use crate::gemm::gemm;
use crate::params::{ParamId, ParameterStore};
use crate::tensor::Tensor;

/// 2D convolution over `(N, C, H, W)` with square kernels and zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub(crate) in_channels: usize,
    pub(crate) out_channels: usize,
    pub(crate) kernel: usize,
    pub(crate) stride: usize,
    pub(crate) padding: usize,
    pub(crate) weight: ParamId,
    pub(crate) bias: Option<ParamId>,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let n = out_channels * in_channels * kernel * kernel;
        let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        let weight = store.register(
            format!("{name}.weight"),
            Tensor::new(vec![out_channels, in_channels, kernel, kernel], w).expect("sized"),
            true,
        );
        let bias = with_bias
            .then(|| store.register(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true));
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        }
    }

    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(shape_err("conv2d input", &[0, self.in_channels, 0, 0], s));
        }
        let (h, w) = (s[2], s[3]);
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(NnError::Shape {
                context: "conv2d spatial extent smaller than kernel",
                expected: vec![self.kernel, self.kernel],
                actual: vec![h + 2 * self.padding, w + 2 * self.padding],
            });
        }
        Ok(Geometry {
            c: s[1],
            h,
            w,
            oh: (h + 2 * self.padding - self.kernel) / self.stride + 1,
            ow: (w + 2 * self.padding - self.kernel) / self.stride + 1,
        })
    }

    fn im2col(&self, g: &Geometry, x: &[f64], cols: &mut [f64]) {
        let k = self.kernel;
        let p = g.oh * g.ow;
        for c in 0..g.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..g.oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        if iy < 0 || iy >= g.h as isize {
                            line.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            *v = if ix < 0 || ix >= g.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, g: &Geometry, cols: &[f64], dx: &mut [f64]) {
        let k = self.kernel;
        let p = g.oh * g.ow;
        for c in 0..g.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..g.oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                        for ox in 0..g.ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn forward(&self, store: &ParameterStore, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let n = x.dim(0);
        let ckk = g.c * self.kernel * self.kernel;
        let p = g.oh * g.ow;
        let o = self.out_channels;
        let weight = store.value(self.weight).data();
        let mut out = vec![0.0; n * o * p];
        let mut cols = vec![0.0; ckk * p];
        let in_stride = g.c * g.h * g.w;
        for i in 0..n {
            self.im2col(&g, &x.data()[i * in_stride..(i + 1) * in_stride], &mut cols);
            let dst = &mut out[i * o * p..(i + 1) * o * p];
            gemm(o, ckk, p, 1.0, weight, false, &cols, false, 0.0, dst);
            if let Some(b) = self.bias {
                let bias = store.value(b).data();
                for (oc, chunk) in dst.chunks_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bias[oc]);
                }
            }
        }
        Tensor::new(vec![n, o, g.oh, g.ow], out)
    }

    pub(crate) fn backward(
        &self,
        store: &mut ParameterStore,
        x: &Tensor,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let n = x.dim(0);
        let o = self.out_channels;
        let expected = [n, o, g.oh, g.ow];
        if grad_out.shape() != expected {
            return Err(shape_err("conv2d backward", &expected, grad_out.shape()));
        }
        let ckk = g.c * self.kernel * self.kernel;
        let p = g.oh * g.ow;
        let in_stride = g.c * g.h * g.w;
        let mut dx = vec![0.0; x.scalar_count()];
        let mut cols = vec![0.0; ckk * p];
        let mut dcols = vec![0.0; ckk * p];
        for i in 0..n {
            let dout = &grad_out.data()[i * o * p..(i + 1) * o * p];
            self.im2col(&g, &x.data()[i * in_stride..(i + 1) * in_stride], &mut cols);
            {
                let (_, dw) = store.value_and_grad_mut(self.weight);
                gemm(o, p, ckk, 1.0, dout, false, &cols, true, 1.0, dw.data_mut());
            }
            if let Some(b) = self.bias {
                let db = store.grad_mut(b).data_mut();
                for (oc, chunk) in dout.chunks(p).enumerate() {
                    db[oc] += chunk.iter().sum::<f64>();
                }
            }
            let weight = store.value(self.weight).data();
            gemm(ckk, o, p, 1.0, weight, true, dout, false, 0.0, &mut dcols);
            self.col2im_add(&g, &dcols, &mut dx[i * in_stride..(i + 1) * in_stride]);
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}
