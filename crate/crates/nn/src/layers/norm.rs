use crate::error::{shape_err, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::Tensor;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(N, C)` or `(N, C, H, W)`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub(crate) channels: usize,
    pub(crate) gamma: ParamId,
    pub(crate) beta: ParamId,
    pub(crate) running_mean: ParamId,
    pub(crate) running_var: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNormCache {
    pub(crate) xhat: Vec<f64>,
    pub(crate) inv_std: Vec<f64>,
}

/// New running statistics produced by a training-mode forward pass.
#[derive(Clone, Debug)]
pub(crate) struct StatUpdate {
    pub(crate) mean: (ParamId, Vec<f64>),
    pub(crate) var: (ParamId, Vec<f64>),
}

impl BatchNorm {
    pub(crate) fn build(store: &mut ParameterStore, name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: store.register(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0), true),
            beta: store.register(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.register(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            ),
            running_var: store.register(
                format!("{name}.running_var"),
                Tensor::filled(&[channels], 1.0),
                false,
            ),
        }
    }

    /// (batch, channels, spatial) view of the input.
    fn layout(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        let ok = (s.len() == 2 || s.len() == 4) && s[1] == self.channels && s[0] > 0;
        if !ok {
            return Err(shape_err("batch_norm input", &[0, self.channels], s));
        }
        let spatial = if s.len() == 4 { s[2] * s[3] } else { 1 };
        Ok((s[0], spatial))
    }

    pub(crate) fn forward_eval(&self, store: &ParameterStore, x: &Tensor) -> Result<Tensor> {
        let (n, sp) = self.layout(x)?;
        let c = self.channels;
        let gamma = store.value(self.gamma).data();
        let beta = store.value(self.beta).data();
        let mean = store.value(self.running_mean).data();
        let var = store.value(self.running_var).data();
        let mut out = x.data().to_vec();
        for b in 0..n {
            for ch in 0..c {
                let scale = gamma[ch] / (var[ch] + BN_EPS).sqrt();
                let shift = beta[ch] - mean[ch] * scale;
                for v in &mut out[(b * c + ch) * sp..(b * c + ch + 1) * sp] {
                    *v = *v * scale + shift;
                }
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    pub(crate) fn forward_train(
        &self,
        store: &ParameterStore,
        x: &Tensor,
    ) -> Result<(Tensor, BatchNormCache, StatUpdate)> {
        let (n, sp) = self.layout(x)?;
        let c = self.channels;
        let m = (n * sp) as f64;
        let data = x.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                mean[ch] += data[(b * c + ch) * sp..(b * c + ch + 1) * sp].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for b in 0..n {
            for ch in 0..c {
                let mu = mean[ch];
                var[ch] += data[(b * c + ch) * sp..(b * c + ch + 1) * sp]
                    .iter()
                    .map(|v| (v - mu) * (v - mu))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gamma = store.value(self.gamma).data();
        let beta = store.value(self.beta).data();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for b in 0..n {
            for ch in 0..c {
                let range = (b * c + ch) * sp..(b * c + ch + 1) * sp;
                for i in range {
                    let h = (data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let rm = store.value(self.running_mean).data();
        let rv = store.value(self.running_var).data();
        let update = StatUpdate {
            mean: (
                self.running_mean,
                rm.iter()
                    .zip(&mean)
                    .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v)
                    .collect(),
            ),
            var: (
                self.running_var,
                rv.iter()
                    .zip(&var)
                    .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v * unbias)
                    .collect(),
            ),
        };
        Ok((
            Tensor::new(x.shape().to_vec(), out)?,
            BatchNormCache { xhat, inv_std },
            update,
        ))
    }

    pub(crate) fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &BatchNormCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let (n, sp) = self.layout(grad_out)?;
        let c = self.channels;
        let m = (n * sp) as f64;
        let dy = grad_out.data();
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * sp..(b * c + ch + 1) * sp {
                    sum_dy[ch] += dy[i];
                    sum_dy_xhat[ch] += dy[i] * cache.xhat[i];
                }
            }
        }
        {
            let dg = store.grad_mut(self.gamma).data_mut();
            for (d, s) in dg.iter_mut().zip(&sum_dy_xhat) {
                *d += s;
            }
        }
        {
            let db = store.grad_mut(self.beta).data_mut();
            for (d, s) in db.iter_mut().zip(&sum_dy) {
                *d += s;
            }
        }
        let gamma = store.value(self.gamma).data();
        let mut dx = vec![0.0; dy.len()];
        for b in 0..n {
            for ch in 0..c {
                let k = gamma[ch] * cache.inv_std[ch] / m;
                for i in (b * c + ch) * sp..(b * c + ch + 1) * sp {
                    dx[i] = k * (m * dy[i] - sum_dy[ch] - cache.xhat[i] * sum_dy_xhat[ch]);
                }
            }
        }
        Tensor::new(grad_out.shape().to_vec(), dx)
    }
}
