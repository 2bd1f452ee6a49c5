use rand::Rng;

use super::conv::Conv2d;
use super::norm::{BatchNorm, BatchNormCache, StatUpdate};
use crate::error::Result;
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Basic residual block: two 3x3 conv + batch-norm stages with a projection shortcut
/// whenever the stride or channel count changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
}

#[derive(Clone, Debug)]
pub(crate) struct ResidualCache {
    input: Tensor,
    bn1: Option<BatchNormCache>,
    r1: Tensor,
    bn2: Option<BatchNormCache>,
    sc_bn: Option<BatchNormCache>,
    sum: Tensor,
}

impl ResidualBlock {
    pub(crate) fn build<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv1 = Conv2d::build(
            store,
            &format!("{name}.conv1"),
            in_channels,
            out_channels,
            3,
            stride,
            1,
            false,
            rng,
        );
        let bn1 = BatchNorm::build(store, &format!("{name}.bn1"), out_channels);
        let conv2 = Conv2d::build(
            store,
            &format!("{name}.conv2"),
            out_channels,
            out_channels,
            3,
            1,
            1,
            false,
            rng,
        );
        let bn2 = BatchNorm::build(store, &format!("{name}.bn2"), out_channels);
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            (
                Conv2d::build(
                    store,
                    &format!("{name}.shortcut"),
                    in_channels,
                    out_channels,
                    1,
                    stride,
                    0,
                    false,
                    rng,
                ),
                BatchNorm::build(store, &format!("{name}.shortcut_bn"), out_channels),
            )
        });
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
        }
    }

    fn norm(
        bn: &BatchNorm,
        store: &ParameterStore,
        x: &Tensor,
        updates: Option<&mut Vec<StatUpdate>>,
    ) -> Result<(Tensor, Option<BatchNormCache>)> {
        match updates {
            Some(list) => {
                let (y, cache, update) = bn.forward_train(store, x)?;
                list.push(update);
                Ok((y, Some(cache)))
            }
            None => Ok((bn.forward_eval(store, x)?, None)),
        }
    }

    /// `updates` is `Some` in training mode and collects batch-norm running statistics.
    pub(crate) fn forward(
        &self,
        store: &ParameterStore,
        x: &Tensor,
        mut updates: Option<&mut Vec<StatUpdate>>,
    ) -> Result<(Tensor, ResidualCache)> {
        let a1 = self.conv1.forward(store, x)?;
        let (n1, bn1) = Self::norm(&self.bn1, store, &a1, updates.as_deref_mut())?;
        let r1 = relu(&n1);
        let a2 = self.conv2.forward(store, &r1)?;
        let (n2, bn2) = Self::norm(&self.bn2, store, &a2, updates.as_deref_mut())?;
        let (skip, sc_bn) = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(store, x)?;
                Self::norm(bn, store, &s, updates.as_deref_mut())?
            }
            None => (x.clone(), None),
        };
        let mut sum = n2;
        sum.add_assign(&skip)?;
        let out = relu(&sum);
        Ok((
            out,
            ResidualCache {
                input: x.clone(),
                bn1,
                r1,
                bn2,
                sc_bn,
                sum,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &ResidualCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let missing = || crate::error::NnError::InvalidSpec("residual backward needs a training cache".into());
        let d_sum = relu_backward(&cache.sum, grad_out);
        let d_a2 = self
            .bn2
            .backward(store, cache.bn2.as_ref().ok_or_else(missing)?, &d_sum)?;
        let d_r1 = self.conv2.backward(store, &cache.r1, &d_a2)?;
        let d_n1 = relu_backward_from_output(&cache.r1, &d_r1);
        let d_a1 = self
            .bn1
            .backward(store, cache.bn1.as_ref().ok_or_else(missing)?, &d_n1)?;
        let mut dx = self.conv1.backward(store, &cache.input, &d_a1)?;
        match &self.shortcut {
            Some((conv, bn)) => {
                let d_s = bn.backward(store, cache.sc_bn.as_ref().ok_or_else(missing)?, &d_sum)?;
                let d_skip = conv.backward(store, &cache.input, &d_s)?;
                dx.add_assign(&d_skip)?;
            }
            None => dx.add_assign(&d_sum)?,
        }
        Ok(dx)
    }
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient through ReLU given its pre-activation input.
pub(crate) fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Gradient through ReLU given its output (positive exactly where the input was).
pub(crate) fn relu_backward_from_output(output: &Tensor, grad_out: &Tensor) -> Tensor {
    relu_backward(output, grad_out)
}
