mod common;

use aimc_map::analog::{
    analog_forward, crossbar_mvm, drift_to, hwa_noise_forward, program, scale_channels, AnalogConfig,
    DriftModel,
};
use aimc_map::mapper::mean_std;
use aimc_map::network::TileGeometry;
use aimc_map::rng::stream;
use aimc_map::tensor::{add_row_bias, matmul, Tensor};
use proptest::prelude::*;

#[test]
fn noiseless_limit_matches_digital_layers() {
    for case in 0..50 {
        let err = common::noiseless_layer_error(case);
        assert!(err < 1e-9, "case {case}: relative error {err:e}");
    }
}

#[test]
fn programming_noise_std_is_calibrated() {
    let n = 100_000;
    let cfg = AnalogConfig {
        sigma_w: 0.08,
        ..AnalogConfig::noiseless()
    };
    let w = Tensor::full(&[n, 1], 1.0);
    let state = program(&w, &Tensor::zeros(&[1]), &cfg, &mut stream(1, "p", &[])).unwrap();
    let rel: Vec<f64> = state.programmed_weights.data().iter().map(|v| v - 1.0).collect();
    let (mean, std) = mean_std(&rel);
    assert!((std / 0.08 - 1.0).abs() < 0.05, "std {std}");
    assert!(mean.abs() < 4.0 * 0.08 / (n as f64).sqrt());
}

#[test]
fn output_noise_std_is_calibrated() {
    let n = 100_000;
    let cfg = AnalogConfig {
        sigma_out: 0.02,
        ..AnalogConfig::noiseless()
    };
    let y = crossbar_mvm(
        &Tensor::full(&[1, 1], 1.0),
        &[1.0],
        &Tensor::zeros(&[1]),
        &Tensor::zeros(&[n, 1]),
        &cfg,
        &mut stream(2, "o", &[]),
    )
    .unwrap();
    let (_, std) = mean_std(y.data());
    assert!((std / 0.02 - 1.0).abs() < 0.05, "std {std}");
}

#[test]
fn noisy_forward_is_unbiased() {
    let draws = 10_000;
    let w = common::random_tensor(&[5, 3], 3, "w");
    let b = common::random_tensor(&[3], 3, "b");
    let x = common::random_tensor(&[1, 5], 3, "x");
    let mut exact = matmul(&x, &w).unwrap();
    add_row_bias(&mut exact, &b).unwrap();
    let cfg = AnalogConfig {
        sigma_w: 0.08,
        sigma_out: 0.02,
        ..AnalogConfig::noiseless()
    };
    let mut rng = stream(3, "mc", &[]);
    let mut samples = vec![Vec::with_capacity(draws); 3];
    for _ in 0..draws {
        let (_, y) = hwa_noise_forward(&w, &b, &x, &cfg, &mut rng).unwrap();
        for (s, v) in samples.iter_mut().zip(y.data()) {
            s.push(*v);
        }
    }
    for (s, e) in samples.iter().zip(exact.data()) {
        let (mean, std) = mean_std(s);
        assert!((mean - e).abs() <= 3.0 * std / (draws as f64).sqrt(), "{mean} vs {e}");
    }
}

#[test]
fn tiling_is_transparent_without_noise() {
    let w = common::random_tensor(&[700, 6], 5, "w");
    let b = common::random_tensor(&[6], 5, "b");
    let x = common::random_tensor(&[4, 700], 5, "x");
    let read = |rows: usize| {
        let cfg = AnalogConfig {
            tile: TileGeometry { rows, cols: 256 },
            ..AnalogConfig::noiseless()
        };
        let mut rng = stream(5, "t", &[]);
        let state = program(&w, &b, &cfg, &mut rng).unwrap();
        analog_forward(&state, &x, &cfg, 0.0, &mut rng).unwrap()
    };
    let one = read(1024);
    for rows in [1, 7, 100, 256, 699] {
        let other = read(rows);
        for (p, q) in one.data().iter().zip(other.data()) {
            assert!((p - q).abs() <= 1e-10 * p.abs().max(1.0));
        }
    }
}

#[test]
fn identical_seeds_give_identical_noisy_outputs() {
    let w = common::random_tensor(&[40, 8], 6, "w");
    let b = common::random_tensor(&[8], 6, "b");
    let x = common::random_tensor(&[3, 40], 6, "x");
    let cfg = AnalogConfig::default();
    let run = |seed| {
        let mut rng = stream(seed, "r", &[]);
        let state = program(&w, &b, &cfg, &mut rng).unwrap();
        analog_forward(&state, &x, &cfg, 86_400.0, &mut rng).unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

proptest! {
    #[test]
    fn channel_scaling_round_trips(
        rows in 1usize..8,
        cols in 1usize..8,
        seed in any::<u64>(),
    ) {
        let w = common::random_tensor(&[rows, cols], seed, "w");
        let (unit, scales) = scale_channels(&w).unwrap();
        prop_assert!(scales.iter().all(|s| *s > 0.0));
        prop_assert!(unit.data().iter().all(|u| u.abs() <= 1.0));
        for (i, v) in w.data().iter().enumerate() {
            prop_assert!((unit.data()[i] * scales[i % cols] - v).abs() <= 1e-15 * v.abs().max(1.0));
        }
    }

    #[test]
    fn drift_never_grows_weights(
        seed in any::<u64>(),
        t1 in 20.0f64..1e5,
        dt in 0.0f64..1e6,
    ) {
        let cfg = AnalogConfig {
            drift: DriftModel::default(),
            ..AnalogConfig::noiseless()
        };
        let w = common::random_tensor(&[6, 4], seed, "w");
        let state = program(&w, &Tensor::zeros(&[4]), &cfg, &mut stream(seed, "d", &[])).unwrap();
        prop_assert!(state.drift_exponents.data().iter().all(|nu| *nu >= 0.0));
        let a = drift_to(&state, t1).unwrap();
        let b = drift_to(&state, t1 + dt).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!(q.abs() <= p.abs());
        }
    }

    #[test]
    fn rescaling_a_layer_keeps_noiseless_argmax(
        seed in any::<u64>(),
        factor in 0.01f64..100.0,
    ) {
        let w = common::random_tensor(&[10, 5], seed, "w");
        let b = common::random_tensor(&[5], seed, "b");
        let x = common::random_tensor(&[3, 10], seed, "x");
        let cfg = AnalogConfig::noiseless();
        let mut rng = stream(seed, "s", &[]);
        let read = |w: &Tensor, b: &Tensor, rng: &mut _| {
            let state = program(w, b, &cfg, rng).unwrap();
            analog_forward(&state, &x, &cfg, 0.0, rng).unwrap()
        };
        let base = read(&w, &b, &mut rng);
        let scaled = read(&w.map(|v| v * factor), &b.map(|v| v * factor), &mut rng);
        prop_assert_eq!(
            aimc_map::tensor::argmax_rows(&base).unwrap(),
            aimc_map::tensor::argmax_rows(&scaled).unwrap()
        );
    }
}
