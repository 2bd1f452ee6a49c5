//! Finite-difference checking of layer stacks, shared with the acceptance suite.
#![allow(dead_code)]

use blockcast_nn::gradcheck::{central_difference, relative_error, STEP};
use blockcast_nn::{LayerSpec, Mode, ParameterStore, Sequential, Tensor, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar objective `sum(r * f(x))` evaluated in training mode with a fixed dropout seed.
fn objective(net: &Sequential, store: &ParameterStore, x: &Tensor, r: &Tensor, seed: u64) -> f64 {
    let mut state = TrainState::new(seed);
    let (y, _) = net.forward(store, x, &mut Mode::Train(&mut state)).unwrap();
    y.dot(r)
}

/// Worst relative error over every input and trainable parameter coordinate.
pub fn check(specs: &[LayerSpec], input_shape: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let net = Sequential::build(specs, &mut store, "net", &mut rng).unwrap();
    let x = random_tensor(&mut rng, input_shape);
    let mut state = TrainState::new(seed ^ 0xabc);
    let (y, cache) = net.forward(&store, &x, &mut Mode::Train(&mut state)).unwrap();
    let n_out = y.scalar_count() as f64;
    let mut r = random_tensor(&mut rng, y.shape());
    r.data_mut().iter_mut().for_each(|v| *v /= n_out.sqrt());
    store.zero_grad();
    let dx = net.backward(&mut store, &cache, &r).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..x.scalar_count() {
        let numeric = central_difference(
            |v| {
                let mut xp = x.clone();
                xp.data_mut()[i] = v;
                objective(&net, &store, &xp, &r, seed ^ 0xabc)
            },
            x.data()[i],
            STEP,
        );
        worst = worst.max(relative_error(dx.data()[i], numeric));
    }
    for id in store.ids().collect::<Vec<_>>() {
        if !store.params()[id.index()].trainable() {
            continue;
        }
        for j in 0..store.value(id).scalar_count() {
            let analytic = store.grad(id).data()[j];
            let base = store.value(id).data()[j];
            let mut probe = store.clone();
            let numeric = central_difference(
                |v| {
                    probe.value_mut(id).data_mut()[j] = v;
                    objective(&net, &probe, &x, &r, seed ^ 0xabc)
                },
                base,
                STEP,
            );
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}

pub type Generator = fn(&mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>);

fn conv2d(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>) {
    let c = rng.random_range(1..4);
    let o = rng.random_range(1..4);
    let k = rng.random_range(1..4);
    let s = rng.random_range(1..3);
    let p = rng.random_range(0..2);
    let h = rng.random_range(k.max(2)..6);
    let w = rng.random_range(k.max(2)..6);
    (
        vec![LayerSpec::Conv2d { in_channels: c, out_channels: o, kernel: k, stride: s, padding: p }],
        vec![2, c, h, w],
    )
}

fn residual_block(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>) {
    let c = rng.random_range(1..4);
    let o = if rng.random_bool(0.5) { c } else { rng.random_range(1..4) };
    let s = rng.random_range(1..3);
    (
        vec![LayerSpec::ResidualBlock { in_channels: c, out_channels: o, stride: s }],
        vec![2, c, rng.random_range(3..6), rng.random_range(3..6)],
    )
}

fn linear(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>) {
    let i = rng.random_range(1..7);
    let o = rng.random_range(1..5);
    (vec![LayerSpec::Linear { in_features: i, out_features: o }], vec![rng.random_range(1..4), i])
}

fn lstm(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>) {
    let f = rng.random_range(1..4);
    let h = rng.random_range(1..4);
    let layers = rng.random_range(1..3);
    let t = rng.random_range(1..6);
    (
        vec![LayerSpec::Lstm { input_size: f, hidden_size: h, num_layers: layers }],
        vec![rng.random_range(1..3), t, f],
    )
}

fn lstm_five_steps(_: &mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>) {
    (vec![LayerSpec::Lstm { input_size: 3, hidden_size: 4, num_layers: 1 }], vec![2, 5, 3])
}

fn batch_norm(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>) {
    let c = rng.random_range(1..4);
    let shape = if rng.random_bool(0.5) {
        vec![rng.random_range(2..5), c]
    } else {
        vec![2, c, rng.random_range(1..4), rng.random_range(2..4)]
    };
    (vec![LayerSpec::BatchNorm { channels: c }], shape)
}

fn adaptive_avg_pool(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>) {
    let oh = rng.random_range(1..4);
    let ow = rng.random_range(1..4);
    (
        vec![LayerSpec::AdaptiveAvgPool { out_h: oh, out_w: ow }],
        vec![2, 2, rng.random_range(oh..7), rng.random_range(ow..7)],
    )
}

fn activations_and_dropout(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>) {
    let n = rng.random_range(2..6);
    (
        vec![
            LayerSpec::Linear { in_features: 3, out_features: n },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Linear { in_features: n, out_features: 2 },
            LayerSpec::Sigmoid,
        ],
        vec![3, 3],
    )
}

/// Every layer kind, each with a generator of random small configurations.
pub const PRIMITIVES: [(&str, Generator); 8] = [
    ("conv2d", conv2d),
    ("residual_block", residual_block),
    ("linear", linear),
    ("lstm", lstm),
    ("lstm_five_steps", lstm_five_steps),
    ("batch_norm", batch_norm),
    ("adaptive_avg_pool", adaptive_avg_pool),
    ("relu/sigmoid/dropout", activations_and_dropout),
];

/// Worst error of one primitive over [`SEEDS`] random configurations.
pub fn worst_over_seeds(generator: Generator) -> (f64, Vec<usize>) {
    let mut worst = (0.0, Vec::new());
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (specs, shape) = generator(&mut rng);
        let err = check(&specs, &shape, seed);
        if err >= worst.0 {
            worst = (err, shape);
        }
    }
    worst
}
