use crate::error::{NnError, Result};
use crate::params::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub pos_weight: f64,
    pub rng_seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global L2 norm clip applied to the gradient before each update.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            pos_weight: 1.0,
            rng_seed: 0,
            patience: 5,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(NnError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.pos_weight >= 0.0 && self.pos_weight.is_finite()) {
            return bad("pos_weight must be finite and non-negative");
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return bad("adam requires beta1, beta2 in [0,1) and eps > 0");
            }
        }
        if matches!(self.grad_clip, Some(c) if c <= 0.0 || !c.is_finite()) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }
}

/// First-order optimizer over the trainable entries of a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    grad_clip: Option<f64>,
    steps: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            kind: config.optimizer,
            learning_rate: config.learning_rate,
            grad_clip: config.grad_clip,
            steps: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients. Nothing is modified when any
    /// gradient is non-finite.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        let mut sq_norm = 0.0;
        for p in store.params().iter().filter(|p| p.trainable()) {
            for g in p.grad().data() {
                if !g.is_finite() {
                    return Err(NnError::Divergence(p.name().to_string()));
                }
                sq_norm += g * g;
            }
        }
        let scale = match self.grad_clip {
            Some(clip) if sq_norm.sqrt() > clip => clip / sq_norm.sqrt(),
            _ => 1.0,
        };
        if self.first_moment.is_empty() {
            for p in store.params() {
                self.first_moment.push(vec![0.0; p.value().scalar_count()]);
                self.second_moment.push(vec![0.0; p.value().scalar_count()]);
            }
        }
        self.steps += 1;
        let lr = self.learning_rate;
        let t = self.steps as i32;
        for (idx, p) in store.params_mut().iter_mut().enumerate() {
            let (_, value, grad, trainable) = p.parts_mut();
            if !trainable {
                continue;
            }
            let value = value.data_mut();
            let grad = grad.data();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (v, g) in value.iter_mut().zip(grad) {
                        *v -= lr * g * scale;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = &mut self.first_moment[idx];
                    let s = &mut self.second_moment[idx];
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..value.len() {
                        let g = grad[i] * scale;
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        s[i] = beta2 * s[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / c1;
                        let s_hat = s[i] / c2;
                        value[i] -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(value: f64, grad: f64) -> (ParameterStore, crate::params::ParamId) {
        let mut store = ParameterStore::new();
        let id = store.register("theta", Tensor::filled(&[1], value), true);
        store.grad_mut(id).data_mut()[0] = grad;
        (store, id)
    }

    fn config(kind: OptimizerKind, lr: f64) -> TrainConfig {
        TrainConfig {
            optimizer: kind,
            learning_rate: lr,
            grad_clip: None,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sgd_step_is_plain_descent() {
        let (mut store, id) = store_with(1.0, 0.5);
        Optimizer::new(&config(OptimizerKind::Sgd, 1.0)).step(&mut store).unwrap();
        assert_eq!(store.value(id).data()[0], 0.5);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam()] {
            let (mut store, id) = store_with(0.25, 0.0);
            Optimizer::new(&config(kind, 0.1)).step(&mut store).unwrap();
            assert_eq!(store.value(id).data()[0], 0.25);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // bias-corrected moments give m_hat = c, v_hat = c^2, so the step is lr * c / (|c| + eps)
        for c in [3.0, -0.02, 1e-3] {
            let (mut store, id) = store_with(0.0, c);
            Optimizer::new(&config(OptimizerKind::adam(), 1e-3)).step(&mut store).unwrap();
            let moved = store.value(id).data()[0];
            let expected = -1e-3 * c / (f64::abs(c) + 1e-8);
            assert!((moved - expected).abs() < 1e-15);
            assert!((moved.abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn nan_gradient_is_reported_and_nothing_moves() {
        let (mut store, id) = store_with(1.0, f64::NAN);
        let err = Optimizer::new(&config(OptimizerKind::Sgd, 1.0)).step(&mut store).unwrap_err();
        assert!(matches!(err, NnError::Divergence(ref name) if name == "theta"));
        assert_eq!(store.value(id).data()[0], 1.0);
    }

    #[test]
    fn buffers_are_not_optimized() {
        let mut store = ParameterStore::new();
        let id = store.register("running_mean", Tensor::filled(&[2], 4.0), false);
        store.grad_mut(id).data_mut().copy_from_slice(&[1.0, 1.0]);
        Optimizer::new(&config(OptimizerKind::Sgd, 1.0)).step(&mut store).unwrap();
        assert_eq!(store.value(id).data(), &[4.0, 4.0]);
    }

    #[test]
    fn gradient_clip_bounds_sgd_update() {
        let (mut store, id) = store_with(0.0, 10.0);
        let cfg = TrainConfig {
            grad_clip: Some(1.0),
            ..config(OptimizerKind::Sgd, 1.0)
        };
        Optimizer::new(&cfg).step(&mut store).unwrap();
        assert!((store.value(id).data()[0] + 1.0).abs() < 1e-12);
    }
}
