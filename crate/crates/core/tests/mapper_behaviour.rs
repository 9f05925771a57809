mod common;

use aimc_map::analog::AnalogConfig;
use aimc_map::baselines::{
    all_analog_map, flms_map, harmonica_map, layer_sensitivity, sensitivity_order, Sensitivity,
};
use aimc_map::explorer::{exhaustive_ceiling, sweep};
use aimc_map::mapper::{evaluate_mapping, greedy_map, rank_layers, Decision, MappingTrace};
use aimc_map::network::{mac_ratio, Domain, MappingVector};
use aimc_map::presets;
use aimc_map::Error;
use common::{quick_mapper, Fixture};

fn mlp6() -> Fixture {
    Fixture::new(&presets::desk_mlp6(), 1000, 10)
}

#[test]
fn huge_threshold_keeps_everything_analog() {
    let f = mlp6();
    let out = greedy_map(&f.net, &f.bench(), &quick_mapper(100.0)).unwrap();
    assert_eq!(out.mapping, MappingVector::all_analog(&f.net.descriptor));
    assert_eq!(out.retrain_sessions, 6);
    let order: Vec<usize> = out.trace.entries.iter().map(|e| e.layer_id).collect();
    assert_eq!(order, rank_layers(&f.net.descriptor));
    assert!(out.trace.entries.iter().all(|e| e.decision == Decision::Accepted));
}

#[test]
fn accepted_prefixes_respect_the_float_baseline() {
    let f = mlp6();
    let cfg = quick_mapper(2.0);
    let out = greedy_map(&f.net, &f.bench(), &cfg).unwrap();
    assert_eq!(out.baseline_accuracy, f.net.accuracy_digital(&f.data.val).unwrap());
    for e in &out.trace.entries {
        let drop = out.baseline_accuracy - e.mean_acc.unwrap();
        match e.decision {
            Decision::Accepted => assert!(drop <= cfg.drop_threshold),
            Decision::RolledBack => assert!(drop > cfg.drop_threshold),
            other => panic!("unexpected {other}"),
        }
        assert_eq!(out.mapping.is_analog(e.layer_id), e.decision == Decision::Accepted);
    }
}

#[test]
fn zero_threshold_with_heavy_noise_stays_digital_and_restores_weights() {
    let mut f = mlp6();
    f.analog = AnalogConfig {
        sigma_w: 0.3,
        sigma_out: 0.3,
        ..AnalogConfig::default()
    };
    for seed in 0..5 {
        let cfg = aimc_map::mapper::MapperConfig {
            seed,
            ..quick_mapper(0.0)
        };
        let out = greedy_map(&f.net, &f.bench(), &cfg).unwrap();
        assert_eq!(out.mapping.analog_count(), 0, "seed {seed}: {}", out.mapping.code());
        assert!(out.trace.entries.iter().all(|e| e.decision == Decision::RolledBack));
        // every candidate rolled back: parameters are the untouched snapshot
        assert_eq!(out.network, f.net);
    }
}

#[test]
fn divergent_candidates_roll_back() {
    let mut f = mlp6();
    f.train.analog.learning_rate = 1e12;
    f.train.digital.learning_rate = 1e12;
    let out = greedy_map(&f.net, &f.bench(), &quick_mapper(100.0)).unwrap();
    assert!(out.trace.entries.iter().all(|e| e.decision == Decision::Diverged));
    assert_eq!(out.mapping.analog_count(), 0);
    assert_eq!(out.network, f.net);
    assert!(matches!(
        all_analog_map(&f.net, &f.bench(), &quick_mapper(1.0)),
        Err(Error::Divergence(_))
    ));
}

#[test]
fn trace_csv_round_trips() {
    let f = mlp6();
    let out = greedy_map(&f.net, &f.bench(), &quick_mapper(3.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    out.trace.save_csv(&path, Some("config_hash: abc")).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# config_hash: abc\nlayer_id,macs,decision,mean_acc,std_acc,epochs\n"));
    assert_eq!(MappingTrace::read_csv(&path).unwrap(), out.trace);
}

#[test]
fn flms_ratio_has_zero_variance_across_seeds() {
    let f = mlp6();
    let ratios: Vec<f64> = (0..5)
        .map(|seed| {
            let cfg = aimc_map::mapper::MapperConfig {
                seed,
                max_epochs_per_candidate: 1,
                ..quick_mapper(1.0)
            };
            let out = flms_map(&f.net, &f.bench(), &cfg, true).unwrap();
            mac_ratio(&f.net.descriptor, &out.mapping).unwrap()
        })
        .collect();
    assert!(ratios.iter().all(|r| *r == ratios[0]));
    let hwa = flms_map(&f.net, &f.bench(), &quick_mapper(1.0), false).unwrap();
    assert_eq!(hwa.retrain_sessions, 2);
}

#[test]
fn all_analog_baseline_has_unit_ratio() {
    let f = mlp6();
    let out = all_analog_map(&f.net, &f.bench(), &quick_mapper(1.0)).unwrap();
    assert_eq!(mac_ratio(&f.net.descriptor, &out.mapping).unwrap(), 1.0);
    assert_eq!(out.retrain_sessions, 1);
}

#[test]
fn harmonica_follows_single_layer_ablation_order() {
    let desc = presets::mlp("four", [8, 8, 1], &[64, 32, 24, 16, 8]);
    let f = Fixture::new(&desc, 1000, 10);
    let cfg = quick_mapper(0.5);
    let hwa = all_analog_map(&f.net, &f.bench(), &cfg).unwrap().network;

    // oracle: accuracy drop with exactly one analog layer, same evaluation protocol
    let analog = f.bench().analog_at(cfg.t_eval);
    let reference = hwa.accuracy_digital(&f.data.val).unwrap();
    let mut drops: Vec<(usize, f64)> = (0..4)
        .map(|l| {
            let mut m = MappingVector::all_digital(&desc);
            m.set(l, Domain::Analog);
            let e = evaluate_mapping(&hwa, &m, &f.data.val, &analog, cfg.eval_reps_inner, cfg.t_eval, cfg.seed)
                .unwrap();
            (l, reference - e.mean)
        })
        .collect();
    drops.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let expected: Vec<usize> = drops.iter().map(|d| d.0).collect();
    let scores = layer_sensitivity(&hwa, &f.bench(), &cfg, Sensitivity::Ablation).unwrap();
    assert_eq!(sensitivity_order(&scores), expected);

    let float_baseline = f.net.accuracy_digital(&f.data.val).unwrap();
    let out = harmonica_map(&hwa, float_baseline, &f.bench(), &cfg, false, Sensitivity::Ablation).unwrap();
    assert_eq!(out.retrain_sessions, 0);
    // each trace step moves exactly the next most sensitive layer to digital
    for (k, e) in out.trace.entries.iter().enumerate() {
        assert_eq!(e.layer_id, expected[k]);
        assert_eq!(e.decision, Decision::ToDigital);
    }
    assert_eq!(out.mapping.analog_count(), 4 - out.trace.entries.len());

    let t = harmonica_map(&hwa, float_baseline, &f.bench(), &cfg, true, Sensitivity::Fisher).unwrap();
    assert!(t.retrain_sessions <= 1);
}

#[test]
fn ceiling_covers_both_extremes_and_refuses_large_nets() {
    let desc = presets::mlp("one", [8, 8, 1], &[64, 8]);
    let f = Fixture::new(&desc, 600, 5);
    let pts = exhaustive_ceiling(&f.net, &f.bench(), &quick_mapper(1.0), 12).unwrap();
    assert_eq!(pts.len(), 2);
    let codes: Vec<String> = pts.iter().map(|p| p.mapping.code()).collect();
    assert!(codes.contains(&"D".to_string()) && codes.contains(&"A".to_string()));

    let big = Fixture::new(&presets::desk_mlp10(), 300, 1);
    assert!(matches!(
        exhaustive_ceiling(&big.net, &big.bench(), &quick_mapper(1.0), 8),
        Err(Error::Refused(_))
    ));
}

#[test]
fn sweep_runs_every_pair_and_rejects_empty_inputs() {
    let desc = presets::mlp("small", [8, 8, 1], &[64, 16, 8]);
    let f = Fixture::new(&desc, 600, 5);
    let cfg = quick_mapper(1.0);
    let out = sweep(&f.net, &f.bench(), &cfg, &[1.0, 5.0], &[0, 1], 2).unwrap();
    assert_eq!(out.runs.len(), 4);
    assert_eq!(out.aggregates.len(), 2);
    assert!(sweep(&f.net, &f.bench(), &cfg, &[1.0], &[], 1).is_err());
    assert!(sweep(&f.net, &f.bench(), &cfg, &[], &[0], 1).is_err());
}
