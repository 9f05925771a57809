mod common;

use aimc_map::analog::AnalogConfig;
use aimc_map::autodiff::{cross_entropy, Tape};
use aimc_map::model::{pretrain, weight_id, TrainedNetwork};
use aimc_map::network::MappingVector;
use aimc_map::rng::stream;
use aimc_map::tensor::Tensor;
use proptest::prelude::*;

const H: f64 = 1e-5;

#[test]
fn digital_gradients_match_finite_differences() {
    for desc in common::gradient_nets() {
        for seed in 0..3 {
            let err = common::max_gradient_error(&desc, false, seed, H);
            assert!(err < 1e-3, "{} seed {seed}: relative error {err:e}", desc.name);
        }
    }
}

#[test]
fn noiseless_hardware_aware_gradients_match_finite_differences() {
    for desc in common::gradient_nets() {
        let err = common::max_gradient_error(&desc, true, 11, H);
        assert!(err < 1e-3, "{}: relative error {err:e}", desc.name);
    }
}

#[test]
fn noiseless_analog_gradients_equal_digital_ones() {
    let desc = &common::gradient_nets()[3];
    let net = TrainedNetwork::init(desc, 4).unwrap();
    let x = common::random_tensor(&[2, 6, 6, 1], 4, "x");
    let grads = |mapping: &MappingVector| {
        let mut tape = Tape::new();
        let logits = net
            .tape_forward(&mut tape, x.clone(), mapping, &AnalogConfig::noiseless(), &mut stream(0, "g", &[]))
            .unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[1, 3]).unwrap();
        tape.backward(loss).unwrap()
    };
    let d = grads(&MappingVector::all_digital(desc));
    let a = grads(&MappingVector::all_analog(desc));
    for layer in 0..desc.layers.len() {
        let (gd, ga) = (d.get(weight_id(layer)).unwrap(), a.get(weight_id(layer)).unwrap());
        for (p, q) in gd.data().iter().zip(ga.data()) {
            assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0));
        }
    }
}

#[test]
fn training_is_bit_reproducible() {
    let data = common::small_data(400);
    let cfg = common::short_train(2);
    let desc = aimc_map::presets::desk_mlp6();
    let (a, la) = pretrain(&desc, &data.train, &cfg, 9).unwrap();
    let (b, lb) = pretrain(&desc, &data.train, &cfg, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (c, _) = pretrain(&desc, &data.train, &cfg, 10).unwrap();
    assert_ne!(a, c);
}

proptest! {
    #[test]
    fn cross_entropy_is_non_negative(
        logits in prop::collection::vec(-30.0f64..30.0, 12),
        label in 0usize..4,
    ) {
        let t = Tensor::matrix(3, 4, logits).unwrap();
        let loss = cross_entropy(&t, &[label, (label + 1) % 4, 0]);
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn uniform_logits_give_log_k(k in 2usize..50, v in -5.0f64..5.0) {
        let t = Tensor::matrix(1, k, vec![v; k]).unwrap();
        prop_assert!((cross_entropy(&t, &[k - 1]) - (k as f64).ln()).abs() < 1e-12);
    }
}
