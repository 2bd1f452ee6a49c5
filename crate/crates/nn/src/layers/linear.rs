use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::gemm::gemm;
use crate::params::{ParamId, ParameterStore};
use crate::tensor::Tensor;

/// Fully connected layer. Input `(N, ...)` is flattened to `(N, in_features)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub(crate) in_features: usize,
    pub(crate) out_features: usize,
    pub(crate) weight: ParamId,
    pub(crate) bias: ParamId,
}

impl Linear {
    pub(crate) fn build<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_features as f64).sqrt()).expect("finite std");
        let w: Vec<f64> = (0..in_features * out_features).map(|_| normal.sample(rng)).collect();
        let weight = store.register(
            format!("{name}.weight"),
            Tensor::new(vec![out_features, in_features], w).expect("sized"),
            true,
        );
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_features]), true);
        Self {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    fn batch(&self, x: &Tensor) -> Result<usize> {
        if x.rank() < 1 || x.dim(0) == 0 {
            return Err(shape_err("linear input", &[1, self.in_features], x.shape()));
        }
        let n = x.dim(0);
        if x.scalar_count() != n * self.in_features {
            return Err(shape_err("linear input", &[n, self.in_features], x.shape()));
        }
        Ok(n)
    }

    pub(crate) fn forward(&self, store: &ParameterStore, x: &Tensor) -> Result<Tensor> {
        let n = self.batch(x)?;
        let (i, o) = (self.in_features, self.out_features);
        let mut out = vec![0.0; n * o];
        let bias = store.value(self.bias).data();
        for row in out.chunks_mut(o) {
            row.copy_from_slice(bias);
        }
        gemm(n, i, o, 1.0, x.data(), false, store.value(self.weight).data(), true, 1.0, &mut out);
        Tensor::new(vec![n, o], out)
    }

    pub(crate) fn backward(
        &self,
        store: &mut ParameterStore,
        x: &Tensor,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let n = self.batch(x)?;
        let (i, o) = (self.in_features, self.out_features);
        if grad_out.shape() != [n, o] {
            return Err(shape_err("linear backward", &[n, o], grad_out.shape()));
        }
        let dout = grad_out.data();
        {
            let (_, dw) = store.value_and_grad_mut(self.weight);
            gemm(o, n, i, 1.0, dout, true, x.data(), false, 1.0, dw.data_mut());
        }
        {
            let db = store.grad_mut(self.bias).data_mut();
            for row in dout.chunks(o) {
                for (d, g) in db.iter_mut().zip(row) {
                    *d += *g;
                }
            }
        }
        let mut dx = vec![0.0; n * i];
        gemm(n, o, i, 1.0, dout, false, store.value(self.weight).data(), false, 0.0, &mut dx);
        Tensor::new(x.shape().to_vec(), dx)
    }
}
