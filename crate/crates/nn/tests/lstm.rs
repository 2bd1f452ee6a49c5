use blockcast_nn::{LayerSpec, Mode, NnError, ParameterStore, Sequential, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lstm(input: usize, hidden: usize, layers: usize, seed: u64) -> (Sequential, ParameterStore) {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Sequential::build(
        &[LayerSpec::Lstm { input_size: input, hidden_size: hidden, num_layers: layers }],
        &mut store,
        "lstm",
        &mut rng,
    )
    .unwrap();
    (net, store)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[test]
fn zero_weights_and_inputs_give_zero_hidden_state() {
    let (net, mut store) = lstm(3, 4, 2, 1);
    for id in store.ids().collect::<Vec<_>>() {
        store.value_mut(id).fill(0.0);
    }
    let (h, _) = net.forward(&store, &Tensor::zeros(&[2, 5, 3]), &mut Mode::Eval).unwrap();
    assert_eq!(h.shape(), &[2, 4]);
    assert!(h.data().iter().all(|v| *v == 0.0));
}

#[test]
fn single_step_matches_hand_written_cell() {
    let (net, store) = lstm(2, 3, 1, 7);
    let x = [0.4, -0.8];
    let (h, _) = net
        .forward(&store, &Tensor::new(vec![1, 1, 2], x.to_vec()).unwrap(), &mut Mode::Eval)
        .unwrap();
    let w_ih = store.value(store.id_of("lstm.0.lstm.l0.w_ih").unwrap()).data().to_vec();
    let bias = store.value(store.id_of("lstm.0.lstm.l0.bias").unwrap()).data().to_vec();
    let hd = 3;
    let z: Vec<f64> = (0..4 * hd).map(|r| bias[r] + w_ih[r * 2] * x[0] + w_ih[r * 2 + 1] * x[1]).collect();
    for j in 0..hd {
        let i = sigmoid(z[j]);
        let g = z[2 * hd + j].tanh();
        let o = sigmoid(z[3 * hd + j]);
        let c = i * g;
        let expected = o * c.tanh();
        assert!((h.data()[j] - expected).abs() < 1e-14);
    }
}

#[test]
fn empty_sequence_is_an_arity_error() {
    let (net, store) = lstm(3, 2, 1, 0);
    let err = net.forward(&store, &Tensor::zeros(&[1, 0, 3]), &mut Mode::Eval).unwrap_err();
    assert!(matches!(err, NnError::EmptySequence(_)));
}

#[test]
fn output_depends_on_step_order() {
    let (net, store) = lstm(2, 3, 1, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut rev = Vec::new();
    for step in seq.chunks(2).rev() {
        rev.extend_from_slice(step);
    }
    let a = net.forward(&store, &Tensor::new(vec![1, 5, 2], seq).unwrap(), &mut Mode::Eval).unwrap().0;
    let b = net.forward(&store, &Tensor::new(vec![1, 5, 2], rev).unwrap(), &mut Mode::Eval).unwrap().0;
    assert_ne!(a, b);
}
