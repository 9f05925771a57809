// Greedy layer-by-layer mapping of a small MLP under a 2-point accuracy budget.

use aimc_map::analog::AnalogConfig;
use aimc_map::dataset::{generate_synthetic, SyntheticSpec};
use aimc_map::mapper::{evaluate_mapping, greedy_map, Bench, MapperConfig};
use aimc_map::model::{pretrain, TrainConfig};
use aimc_map::network::mac_ratio;
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
        max_epochs_per_candidate: 5,
        ..MapperConfig::default()
    };

    let out = greedy_map(&net, &bench, &cfg)?;
    println!("float validation accuracy {:.2}%", out.baseline_accuracy);
    println!("layer      macs  decision      mean    std  epochs");
    for e in &out.trace.entries {
        println!(
            "{:>5} {:>9}  {:<12} {:>6.2} {:>6.2} {:>7}",
            e.layer_id,
            e.macs,
            e.decision.to_string(),
            e.mean_acc.unwrap_or(f64::NAN),
            e.std_acc.unwrap_or(f64::NAN),
            e.epochs
        );
    }
    let test = evaluate_mapping(
        &out.network,
        &out.mapping,
        &data.test,
        &bench.analog_at(cfg.t_eval),
        cfg.eval_reps_final,
        cfg.t_eval,
        cfg.seed,
    )?;
    println!(
        "mapping {} (MAC ratio {:.3}), test accuracy {:.2} +/- {:.2}% after {} retraining sessions",
        out.mapping.code(),
        mac_ratio(&net.descriptor, &out.mapping)?,
        test.mean,
        test.std,
        out.retrain_sessions
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> aimc_map::Result<()> {
    run_example()
}
