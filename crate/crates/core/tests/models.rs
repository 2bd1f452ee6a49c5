//! Model shapes, gradients, determinism and input validation for both presets.

mod common;

use blockcast::data::Modality;
use blockcast::models::{build_model, ModelSpec, ScalePreset};
use blockcast::Error;
use blockcast_nn::{Mode, Tensor};

fn input(spec: &ModelSpec, n: usize, seed: u64) -> Tensor {
    let mut shape = vec![n];
    shape.extend(spec.input_shape());
    let count: usize = shape.iter().product();
    let data = (0..count).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0).collect();
    Tensor::new(shape, data).unwrap()
}

fn desk(m: Modality) -> ModelSpec {
    ModelSpec::new(m, ScalePreset::Desk, 5)
}

#[test]
fn desk_outputs_are_probabilities_of_length_k() {
    for m in Modality::ALL {
        let spec = desk(m);
        let model = build_model(&spec, 1).unwrap();
        let p = model.predict(&input(&spec, 3, 0)).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|row| row.len() == 5 && row.iter().all(|v| (0.0..=1.0).contains(v))), "{m}");
    }
}

#[test]
fn full_width_models_build_and_run_on_reduced_inputs() {
    for m in Modality::ALL {
        let spec = ModelSpec {
            camera_size: 32,
            bev_dims: (32, 32),
            ..ModelSpec::new(m, ScalePreset::Paper, 3)
        };
        let model = build_model(&spec, 2).unwrap();
        let (y, _) = model.forward(&input(&spec, 1, 0), &mut Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 3], "{m}");
    }
    let big = build_model(&ModelSpec::new(Modality::Camera, ScalePreset::Paper, 5), 0).unwrap();
    let small = build_model(&desk(Modality::Camera), 0).unwrap();
    assert!(big.store().trainable_scalar_count() > 100 * small.store().trainable_scalar_count());
}

#[test]
fn full_desk_stacks_pass_gradient_checks() {
    for m in Modality::ALL {
        let spec = desk(m);
        for seed in 0..20 {
            // A 1e-5 step lets some of the thousands of ReLU units cross zero.
            let err = common::model_gradcheck(&spec, seed, 2, 5, 1e-6);
            assert!(err < 1e-3, "{m} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn eval_inference_is_deterministic_and_seeded() {
    for m in Modality::ALL {
        let spec = desk(m);
        let x = input(&spec, 2, 5);
        let a = build_model(&spec, 9).unwrap();
        let b = build_model(&spec, 9).unwrap();
        assert_eq!(a.predict(&x).unwrap(), a.predict(&x).unwrap());
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
        let c = build_model(&spec, 10).unwrap();
        assert_ne!(a.predict(&x).unwrap(), c.predict(&x).unwrap(), "{m}");
    }
}

#[test]
fn wrong_inputs_are_rejected() {
    let lidar = build_model(&desk(Modality::Lidar), 0).unwrap();
    let twelve = Tensor::zeros(&[1, 12, 64, 64]);
    assert!(matches!(lidar.predict(&twelve), Err(Error::Shape { .. })));
    let gps = build_model(&desk(Modality::Gps), 0).unwrap();
    assert!(matches!(gps.predict(&Tensor::zeros(&[1, 17])), Err(Error::Shape { .. })));
    assert!(build_model(&ModelSpec::new(Modality::Gps, ScalePreset::Desk, 0), 0).is_err());
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for m in Modality::ALL {
        let spec = desk(m);
        let mut model = build_model(&spec, 4).unwrap();
        model.validation_f1 = vec![0.5, 0.25, 0.125, 0.0, 1.0];
        let path = dir.path().join(format!("{m}.nnp"));
        model.save(&path).unwrap();
        let back = blockcast::models::ModalityModel::load(&path).unwrap();
        assert_eq!(back.spec(), &spec);
        assert_eq!(back.validation_f1, model.validation_f1);
        let x = input(&spec, 1, 3);
        let (p, q) = (model.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert!(p[0].iter().zip(&q[0]).all(|(a, b)| (a - b).abs() < 1e-4), "{m}");
    }
}
