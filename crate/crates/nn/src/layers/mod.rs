//! Layer inventory, forward/backward dispatch and sequential composition.

mod conv;
mod linear;
mod norm;
mod pool;
mod residual;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::BatchNorm;
pub use residual::ResidualBlock;

use crate::error::{NnError, Result};
use crate::lstm::{Lstm, LstmCache};
use crate::params::ParameterStore;
use crate::tensor::Tensor;
use norm::{BatchNormCache, StatUpdate};
use residual::{relu, relu_backward, ResidualCache};

/// Declarative description of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ResidualBlock {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Lstm {
        input_size: usize,
        hidden_size: usize,
        num_layers: usize,
    },
    Relu,
    Sigmoid,
    Dropout {
        rate: f64,
    },
    AdaptiveAvgPool {
        out_h: usize,
        out_w: usize,
    },
    BatchNorm {
        channels: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::ResidualBlock { .. } => "residual_block",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::AdaptiveAvgPool { .. } => "adaptive_avg_pool",
            LayerSpec::BatchNorm { .. } => "batch_norm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |vals: &[usize]| vals.iter().all(|v| *v > 0);
        let ok = match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => positive(&[in_channels, out_channels, kernel, stride]),
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                stride,
            } => positive(&[in_channels, out_channels, stride]),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => positive(&[in_features, out_features]),
            LayerSpec::Lstm {
                input_size,
                hidden_size,
                num_layers,
            } => positive(&[input_size, hidden_size, num_layers]),
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
            LayerSpec::AdaptiveAvgPool { out_h, out_w } => positive(&[out_h, out_w]),
            LayerSpec::BatchNorm { channels } => channels > 0,
            LayerSpec::Relu | LayerSpec::Sigmoid => true,
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidSpec(format!("{self:?}")))
        }
    }
}

/// Mutable state threaded through a training-mode forward pass: the dropout RNG and
/// pending batch-norm running-statistic updates.
#[derive(Debug)]
pub struct TrainState {
    rng: ChaCha8Rng,
    stat_updates: Vec<StatUpdate>,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            stat_updates: Vec::new(),
        }
    }

    /// Writes the running statistics collected since the last call into `store`.
    pub fn apply_stat_updates(&mut self, store: &mut ParameterStore) {
        for update in self.stat_updates.drain(..) {
            for (id, values) in [update.mean, update.var] {
                store.value_mut(id).data_mut().copy_from_slice(&values);
            }
        }
    }

    pub fn discard_stat_updates(&mut self) {
        self.stat_updates.clear();
    }
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut TrainState),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Saved activations needed by a layer's backward pass.
#[derive(Clone, Debug)]
pub struct Cache(CacheKind);

#[derive(Clone, Debug)]
enum CacheKind {
    None,
    Input(Tensor),
    Output(Tensor),
    Mask(Vec<f64>),
    Shape(Vec<usize>),
    BatchNorm(BatchNormCache),
    Residual(Box<ResidualCache>),
    Lstm(LstmCache),
    Sequential(Vec<Cache>),
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv2d(Conv2d),
    ResidualBlock(ResidualBlock),
    Linear(Linear),
    Lstm(Lstm),
    Relu,
    Sigmoid,
    Dropout(f64),
    AdaptiveAvgPool(usize, usize),
    BatchNorm(BatchNorm),
}

fn no_cache(kind: &'static str) -> NnError {
    NnError::InvalidSpec(format!("{kind} backward called without a training-mode cache"))
}

impl Layer {
    /// Builds a layer, registering its parameters under `name` in `store`.
    pub fn build<R: Rng>(
        spec: &LayerSpec,
        store: &mut ParameterStore,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d(Conv2d::build(
                store,
                name,
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                true,
                rng,
            )),
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                stride,
            } => Layer::ResidualBlock(ResidualBlock::build(
                store,
                name,
                in_channels,
                out_channels,
                stride,
                rng,
            )),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Layer::Linear(Linear::build(store, name, in_features, out_features, rng)),
            LayerSpec::Lstm {
                input_size,
                hidden_size,
                num_layers,
            } => Layer::Lstm(Lstm::build(store, name, input_size, hidden_size, num_layers, rng)),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Dropout { rate } => Layer::Dropout(rate),
            LayerSpec::AdaptiveAvgPool { out_h, out_w } => Layer::AdaptiveAvgPool(out_h, out_w),
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::build(store, name, channels)),
        })
    }

    pub fn forward(
        &self,
        store: &ParameterStore,
        x: &Tensor,
        mode: &mut Mode<'_>,
    ) -> Result<(Tensor, Cache)> {
        let train = mode.is_train();
        let keep = |t: &Tensor| if train { CacheKind::Input(t.clone()) } else { CacheKind::None };
        let (out, cache) = match self {
            Layer::Conv2d(conv) => (conv.forward(store, x)?, keep(x)),
            Layer::Linear(lin) => (lin.forward(store, x)?, keep(x)),
            Layer::ResidualBlock(block) => match mode {
                Mode::Train(state) => {
                    let (y, c) = block.forward(store, x, Some(&mut state.stat_updates))?;
                    (y, CacheKind::Residual(Box::new(c)))
                }
                Mode::Eval => (block.forward(store, x, None)?.0, CacheKind::None),
            },
            Layer::Lstm(lstm) => {
                let (y, c) = lstm.forward(store, x, train)?;
                (y, c.map(CacheKind::Lstm).unwrap_or(CacheKind::None))
            }
            Layer::Relu => (relu(x), keep(x)),
            Layer::Sigmoid => {
                let data = x.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
                let y = Tensor::new(x.shape().to_vec(), data)?;
                let c = if train { CacheKind::Output(y.clone()) } else { CacheKind::None };
                (y, c)
            }
            Layer::Dropout(rate) => match mode {
                Mode::Train(state) if *rate > 0.0 => {
                    let keep_scale = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.scalar_count())
                        .map(|_| {
                            if state.rng.random::<f64>() >= *rate {
                                keep_scale
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    (Tensor::new(x.shape().to_vec(), data)?, CacheKind::Mask(mask))
                }
                Mode::Train(_) => (x.clone(), CacheKind::Mask(vec![1.0; x.scalar_count()])),
                Mode::Eval => (x.clone(), CacheKind::None),
            },
            Layer::AdaptiveAvgPool(oh, ow) => (
                pool::forward(x, *oh, *ow)?,
                if train { CacheKind::Shape(x.shape().to_vec()) } else { CacheKind::None },
            ),
            Layer::BatchNorm(bn) => match mode {
                Mode::Train(state) => {
                    let (y, c, update) = bn.forward_train(store, x)?;
                    state.stat_updates.push(update);
                    (y, CacheKind::BatchNorm(c))
                }
                Mode::Eval => (bn.forward_eval(store, x)?, CacheKind::None),
            },
        };
        Ok((out, Cache(cache)))
    }

    pub fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &Cache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        match (self, &cache.0) {
            (Layer::Conv2d(conv), CacheKind::Input(x)) => conv.backward(store, x, grad_out),
            (Layer::Linear(lin), CacheKind::Input(x)) => lin.backward(store, x, grad_out),
            (Layer::ResidualBlock(block), CacheKind::Residual(c)) => block.backward(store, c, grad_out),
            (Layer::Lstm(lstm), CacheKind::Lstm(c)) => lstm.backward(store, c, grad_out),
            (Layer::Relu, CacheKind::Input(x)) => Ok(relu_backward(x, grad_out)),
            (Layer::Sigmoid, CacheKind::Output(y)) => {
                let data = y
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(s, g)| g * s * (1.0 - s))
                    .collect();
                Tensor::new(y.shape().to_vec(), data)
            }
            (Layer::Dropout(_), CacheKind::Mask(mask)) => {
                let data = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::new(grad_out.shape().to_vec(), data)
            }
            (Layer::AdaptiveAvgPool(..), CacheKind::Shape(shape)) => pool::backward(shape, grad_out),
            (Layer::BatchNorm(bn), CacheKind::BatchNorm(c)) => bn.backward(store, c, grad_out),
            (layer, _) => Err(no_cache(layer.kind())),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::ResidualBlock(_) => "residual_block",
            Layer::Linear(_) => "linear",
            Layer::Lstm(_) => "lstm",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Dropout(_) => "dropout",
            Layer::AdaptiveAvgPool(..) => "adaptive_avg_pool",
            Layer::BatchNorm(_) => "batch_norm",
        }
    }
}

/// Layers applied in order.
#[derive(Clone, Debug, Default)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn build<R: Rng>(
        specs: &[LayerSpec],
        store: &mut ParameterStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| Layer::build(spec, store, &format!("{prefix}.{i}.{}", spec.kind()), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn forward(
        &self,
        store: &ParameterStore,
        x: &Tensor,
        mode: &mut Mode<'_>,
    ) -> Result<(Tensor, Cache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current: Option<Tensor> = None;
        for layer in &self.layers {
            let input = current.as_ref().unwrap_or(x);
            let (y, c) = layer.forward(store, input, mode)?;
            caches.push(c);
            current = Some(y);
        }
        Ok((current.unwrap_or_else(|| x.clone()), Cache(CacheKind::Sequential(caches))))
    }

    pub fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &Cache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let CacheKind::Sequential(caches) = &cache.0 else {
            return Err(no_cache("sequential"));
        };
        let mut grad = grad_out.clone();
        for (layer, c) in self.layers.iter().zip(caches).rev() {
            grad = layer.backward(store, c, &grad)?;
        }
        Ok(grad)
    }
}
