// The reference strategies side by side on one small network.

use aimc_map::analog::AnalogConfig;
use aimc_map::baselines::{all_analog_map, all_digital_map, flms_map, harmonica_map, Sensitivity};
use aimc_map::dataset::{generate_synthetic, SyntheticSpec};
use aimc_map::mapper::{evaluate_mapping, greedy_map, Bench, MapperConfig};
use aimc_map::model::{pretrain, TrainConfig, TrainedNetwork};
use aimc_map::network::MappingVector;
use aimc_map::perf::{estimate, SystemParams};
use aimc_map::presets;

pub fn run_example() -> aimc_map::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        input: [8, 8, 1],
        noise: 0.8,
        train_pool: 1500,
        ..SyntheticSpec::default()
    })?;
    let train = TrainConfig {
        pretrain_epochs: 15,
        ..TrainConfig::default()
    };
    let analog = AnalogConfig::default();
    let (net, _) = pretrain(&presets::desk_mlp6(), &data.train, &train, 0)?;
    let bench = Bench {
        data: &data,
        train: &train,
        analog: &analog,
    };
    let cfg = MapperConfig {
        drop_threshold: 2.0,
        max_epochs_per_candidate: 4,
        eval_reps_final: 10,
        ..MapperConfig::default()
    };
    let float = net.accuracy_digital(&data.val)?;
    let system = SystemParams::default();
    let show = |name: &str, n: &TrainedNetwork, m: &MappingVector, sessions: usize| -> aimc_map::Result<()> {
        let e = evaluate_mapping(n, m, &data.val, &bench.analog_at(cfg.t_eval), cfg.eval_reps_final, cfg.t_eval, cfg.seed)?;
        let perf = estimate(&n.descriptor, m, &system)?;
        println!(
            "{name:<12} {}  ratio {:.3}  acc {:>6.2} +/- {:<5.2} drop {:>6.2}  speedup {:.2}x  retrains {sessions}",
            m.code(),
            e.mac_ratio,
            e.mean,
            e.std,
            float - e.mean,
            perf.speedup
        );
        Ok(())
    };

    let d = all_digital_map(&net);
    show("all-digital", &d.network, &d.mapping, d.retrain_sessions)?;
    let a = all_analog_map(&net, &bench, &cfg)?;
    show("all-analog", &a.network, &a.mapping, a.retrain_sessions)?;
    let f = flms_map(&net, &bench, &cfg, true)?;
    show("flms", &f.network, &f.mapping, f.retrain_sessions)?;
    let h = harmonica_map(&a.network, float, &bench, &cfg, false, Sensitivity::Ablation)?;
    show("harmonica", &h.network, &h.mapping, h.retrain_sessions)?;
    let g = greedy_map(&net, &bench, &cfg)?;
    show("greedy", &g.network, &g.mapping, g.retrain_sessions)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> aimc_map::Result<()> {
    run_example()
}
