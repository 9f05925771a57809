// Retrain every layer-wise mapping of a four-layer MLP and compare the exact
// front with one greedy run.

use aimc_map::analog::AnalogConfig;
use aimc_map::dataset::{generate_synthetic, SyntheticSpec};
use aimc_map::explorer::{exhaustive_ceiling, greedy_run, pareto_front};
use aimc_map::mapper::{Bench, MapperConfig};
use aimc_map::model::{pretrain, TrainConfig};
use aimc_map::presets;

pub fn run_example() -> aimc_map::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        input: [8, 8, 1],
        noise: 0.8,
        train_pool: 1000,
        ..SyntheticSpec::default()
    })?;
    let train = TrainConfig {
        pretrain_epochs: 12,
        ..TrainConfig::default()
    };
    let analog = AnalogConfig::default();
    let desc = presets::mlp("mlp4", [8, 8, 1], &[64, 40, 32, 16, 8]);
    let (net, _) = pretrain(&desc, &data.train, &train, 0)?;
    let bench = Bench {
        data: &data,
        train: &train,
        analog: &analog,
    };
    let cfg = MapperConfig {
        drop_threshold: 1.0,
        max_epochs_per_candidate: 3,
        eval_reps_final: 5,
        ..MapperConfig::default()
    };
    let all = exhaustive_ceiling(&net, &bench, &cfg, 4)?;
    println!("{} mappings retrained", all.len());
    for p in pareto_front(&all)? {
        println!("  front {} ratio {:.3} accuracy {:.2}", p.mapping.code(), p.mac_ratio, p.mean_accuracy);
    }
    let g = greedy_run(&net, &bench, &cfg)?.point();
    let beaten = all.iter().filter(|e| e.dominates(&g)).count();
    println!(
        "greedy {} ratio {:.3} accuracy {:.2}: dominated by {beaten} exhaustive mappings",
        g.mapping.code(),
        g.mac_ratio,
        g.mean_accuracy
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> aimc_map::Result<()> {
    run_example()
}
