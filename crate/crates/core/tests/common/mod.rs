#![allow(dead_code)]

use aimc_map::analog::AnalogConfig;
use aimc_map::dataset::{generate_synthetic, Dataset, SyntheticSpec};
use aimc_map::mapper::MapperConfig;
use aimc_map::model::{pretrain, TrainConfig, TrainedNetwork};
use aimc_map::network::NetworkDescriptor;
use aimc_map::rng::stream;
use aimc_map::tensor::Tensor;
use rand::Rng;

pub fn random_tensor(shape: &[usize], seed: u64, label: &str) -> Tensor {
    let mut rng = stream(seed, label, &[]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// 8x8 single-channel task small enough for sub-second training.
pub fn small_data(train_pool: usize) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        input: [8, 8, 1],
        noise: 0.8,
        train_pool,
        test_samples: 200,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

pub fn short_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        pretrain_epochs: epochs,
        ..TrainConfig::default()
    }
}

pub fn quick_mapper(threshold: f64) -> MapperConfig {
    MapperConfig {
        drop_threshold: threshold,
        max_epochs_per_candidate: 3,
        convergence_window: 2,
        eval_reps_inner: 3,
        eval_reps_final: 5,
        ..MapperConfig::default()
    }
}

pub struct Fixture {
    pub data: Dataset,
    pub train: TrainConfig,
    pub analog: AnalogConfig,
    pub net: TrainedNetwork,
}

impl Fixture {
    pub fn new(desc: &NetworkDescriptor, train_pool: usize, epochs: usize) -> Self {
        let data = small_data(train_pool);
        let train = short_train(epochs);
        let (net, _) = pretrain(desc, &data.train, &train, 0).unwrap();
        Fixture {
            data,
            train,
            analog: AnalogConfig::default(),
            net,
        }
    }

    pub fn bench(&self) -> aimc_map::mapper::Bench<'_> {
        aimc_map::mapper::Bench {
            data: &self.data,
            train: &self.train,
            analog: &self.analog,
        }
    }
}

/// Tiny networks that together exercise every layer kind, activation and pool.
pub fn gradient_nets() -> Vec<NetworkDescriptor> {
    use aimc_map::network::{Activation, LayerDescriptor, Pool};
    let net = |name: &str, input: [usize; 3], layers: Vec<LayerDescriptor>| NetworkDescriptor {
        name: name.into(),
        input,
        classes: 4,
        layers,
    };
    vec![
        aimc_map::presets::mlp("fc", [1, 1, 6], &[6, 5, 4]),
        net(
            "conv",
            [5, 5, 2],
            vec![
                LayerDescriptor::conv(0, 2, 3, 3, 1, 1, 5),
                LayerDescriptor::fc(1, 75, 4).with_activation(Activation::None),
            ],
        ),
        net(
            "conv-stride",
            [7, 7, 1],
            vec![
                LayerDescriptor::conv(0, 1, 2, 3, 2, 0, 7).with_activation(Activation::None),
                LayerDescriptor::fc(1, 18, 4).with_activation(Activation::None),
            ],
        ),
        net(
            "conv-pool",
            [6, 6, 1],
            vec![
                LayerDescriptor::conv(0, 1, 3, 3, 1, 1, 6).with_pool(Pool::Max2),
                LayerDescriptor::conv(1, 3, 2, 3, 1, 1, 3),
                LayerDescriptor::fc(2, 18, 4).with_activation(Activation::None),
            ],
        ),
    ]
}

/// Largest relative disagreement between tape gradients and central finite
/// differences of the mean cross-entropy, over every weight and bias.
/// `analog` runs the tape through the hardware-aware path with all noise off.
pub fn max_gradient_error(desc: &NetworkDescriptor, analog: bool, seed: u64, h: f64) -> f64 {
    use aimc_map::autodiff::{cross_entropy, Tape};
    use aimc_map::model::{bias_id, weight_id};
    use aimc_map::network::MappingVector;

    let mut net = TrainedNetwork::init(desc, seed).unwrap();
    for (i, p) in net.params.iter_mut().enumerate() {
        p.bias = random_tensor(p.bias.shape(), seed + i as u64, "bias");
    }
    let batch = 3;
    let [hh, ww, cc] = desc.input;
    let x = random_tensor(&[batch, hh, ww, cc], seed, "x");
    let labels: Vec<usize> = (0..batch).map(|i| (i * 7 + seed as usize) % desc.classes).collect();
    let mapping = if analog {
        MappingVector::all_analog(desc)
    } else {
        MappingVector::all_digital(desc)
    };
    let cfg = AnalogConfig::noiseless();

    let mut tape = Tape::new();
    let logits = net
        .tape_forward(&mut tape, x.clone(), &mapping, &cfg, &mut stream(seed, "g", &[]))
        .unwrap();
    let loss = tape.softmax_cross_entropy(logits, &labels).unwrap();
    let grads = tape.backward(loss).unwrap();

    let loss_at = |n: &TrainedNetwork| cross_entropy(&n.logits_digital(&x).unwrap(), &labels) / batch as f64;
    let mut worst: f64 = 0.0;
    for layer in 0..net.params.len() {
        for is_bias in [false, true] {
            let id = if is_bias { bias_id(layer) } else { weight_id(layer) };
            let analytic = grads.get(id).unwrap().clone();
            for j in 0..analytic.len() {
                let mut probe = net.clone();
                let orig = *entry(&mut probe, layer, is_bias, j);
                *entry(&mut probe, layer, is_bias, j) = orig + h;
                let up = loss_at(&probe);
                *entry(&mut probe, layer, is_bias, j) = orig - h;
                let down = loss_at(&probe);
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.data()[j];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
    }
    worst
}

fn entry(net: &mut TrainedNetwork, layer: usize, bias: bool, j: usize) -> &mut f64 {
    let p = &mut net.params[layer];
    let t = if bias { &mut p.bias } else { &mut p.weight };
    &mut t.data_mut()[j]
}

/// Relative max-norm distance between an analog layer read under the
/// noiseless configuration and its exact digital counterpart, for one random
/// FC or CONV layer with a random tile height.
pub fn noiseless_layer_error(case: u64) -> f64 {
    use aimc_map::analog::{analog_forward, program};
    use aimc_map::model::forward_digital;
    use aimc_map::network::{unfolded_shape, LayerDescriptor, TileGeometry};
    use aimc_map::tensor::im2col;

    let mut rng = stream(case, "layer", &[]);
    let (layer, x) = if case % 2 == 0 {
        let m = rng.gen_range(1..600);
        let n = rng.gen_range(1..40);
        let batch = rng.gen_range(1..5);
        (LayerDescriptor::fc(0, m, n), random_tensor(&[batch, m], case, "x"))
    } else {
        let c = rng.gen_range(1..5);
        let f = rng.gen_range(1..9);
        let k = rng.gen_range(1..4);
        let s = rng.gen_range(1..3);
        let size = rng.gen_range(k..10);
        let p = rng.gen_range(0..k);
        (
            LayerDescriptor::conv(0, c, f, k, s, p, size),
            random_tensor(&[2, size, size, c], case, "x"),
        )
    };
    let (rows, cols) = unfolded_shape(&layer);
    let w = random_tensor(&[rows, cols], case, "w");
    let b = random_tensor(&[cols], case, "b");
    let cfg = AnalogConfig {
        tile: TileGeometry {
            rows: rng.gen_range(1..=rows.max(1) + 3),
            cols: 256,
        },
        ..AnalogConfig::noiseless()
    };
    let state = program(&w, &b, &cfg, &mut rng).unwrap();
    let digital = forward_digital(&layer, &w, &b, &x).unwrap();
    let input = match layer.conv_geometry() {
        Some(g) => im2col(&x, &g).unwrap(),
        None => x.clone(),
    };
    let analog = analog_forward(&state, &input, &cfg, 0.0, &mut rng).unwrap();
    let scale = digital.max_abs().max(f64::MIN_POSITIVE);
    digital
        .data()
        .iter()
        .zip(analog.data())
        .map(|(d, a)| (d - a).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Runs a naive padded convolution (or mat-vec) on random data and counts the
/// multiplications it performs.
pub fn direct_loop_multiplies(layer: &aimc_map::network::LayerDescriptor) -> u64 {
    use aimc_map::network::LayerKind;
    let mut count = 0u64;
    let mut acc = 0.0f64;
    match layer.kind {
        LayerKind::Fc {
            in_features,
            out_features,
        } => {
            let x = random_tensor(&[in_features], 0, "x");
            for _ in 0..out_features {
                for v in x.data() {
                    acc += v * 0.5;
                    count += 1;
                }
            }
        }
        LayerKind::Conv {
            in_channels: c,
            filters,
            kernel: k,
            stride,
            padding: p,
            in_height,
            in_width,
            ..
        } => {
            let (ph, pw) = (in_height + 2 * p, in_width + 2 * p);
            let padded = random_tensor(&[ph, pw, c], 0, "x");
            let px = padded.data();
            let mut oy = 0;
            while oy + k <= ph {
                let mut ox = 0;
                while ox + k <= pw {
                    for _ in 0..filters {
                        for ky in 0..k {
                            for kx in 0..k {
                                for ch in 0..c {
                                    acc += px[((oy + ky) * pw + ox + kx) * c + ch] * 0.5;
                                    count += 1;
                                }
                            }
                        }
                    }
                    ox += stride;
                }
                oy += stride;
            }
        }
    }
    assert!(acc.is_finite());
    count
}

/// Lays tiles on a grid from the origin until the matrix is covered.
pub fn brute_force_tiles(rows: usize, cols: usize, tr: usize, tc: usize) -> usize {
    let mut tiles = 0;
    let mut r = 0;
    while r < rows {
        let mut c = 0;
        while c < cols {
            tiles += 1;
            c += tc;
        }
        r += tr;
    }
    tiles
}

/// A random valid CONV descriptor.
pub fn random_conv(seed: u64) -> aimc_map::network::LayerDescriptor {
    let mut rng = stream(seed, "conv", &[]);
    let k = rng.gen_range(1..6);
    let size = rng.gen_range(k..24);
    aimc_map::network::LayerDescriptor::conv(
        0,
        rng.gen_range(1..9),
        rng.gen_range(1..17),
        k,
        rng.gen_range(1..4),
        rng.gen_range(0..k),
        size,
    )
}

pub fn point(ratio: f64, acc: f64) -> aimc_map::explorer::ParetoPoint {
    aimc_map::explorer::ParetoPoint {
        mapping: aimc_map::network::MappingVector::default(),
        mac_ratio: ratio,
        mean_accuracy: acc,
        std_accuracy: 0.0,
        source: aimc_map::explorer::PointSource::Exhaustive,
    }
}

/// Coarse-grid random points, so ties and exact duplicates are common.
pub fn random_points(seed: u64, n: usize) -> Vec<aimc_map::explorer::ParetoPoint> {
    let mut rng = stream(seed, "points", &[]);
    (0..n)
        .map(|_| point(rng.gen_range(0..21) as f64 / 20.0, 80.0 + rng.gen_range(0..41) as f64 / 2.0))
        .collect()
}

/// Quadratic dominance filter, returned as sorted `(ratio, accuracy)` pairs.
pub fn brute_force_front(points: &[aimc_map::explorer::ParetoPoint]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| {
            !points.iter().any(|q| {
                q.mac_ratio >= p.mac_ratio
                    && q.mean_accuracy >= p.mean_accuracy
                    && (q.mac_ratio > p.mac_ratio || q.mean_accuracy > p.mean_accuracy)
            })
        })
        .map(|p| (p.mac_ratio, p.mean_accuracy))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    out
}

pub fn as_pairs(points: &[aimc_map::explorer::ParetoPoint]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = points.iter().map(|p| (p.mac_ratio, p.mean_accuracy)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    out
}
