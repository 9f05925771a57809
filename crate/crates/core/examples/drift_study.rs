// All-analog accuracy against read-out time, for two training-time drift targets.

use aimc_map::analog::AnalogConfig;
use aimc_map::dataset::{generate_synthetic, SyntheticSpec};
use aimc_map::explorer::drift_study;
use aimc_map::mapper::{Bench, MapperConfig};
use aimc_map::model::{pretrain, TrainConfig};
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
        max_epochs_per_candidate: 5,
        eval_reps_final: 10,
        ..MapperConfig::default()
    };
    let times = [20.0, 60.0, 3600.0, 86_400.0];
    let rows = drift_study(&net, &bench, &cfg, &[1.0, 86_400.0], &times)?;
    println!("{:>12} {}", "train t_eval", times.map(|t| format!("{t:>9}")).join(""));
    for tt in [1.0, 86_400.0] {
        let accs: String = rows
            .iter()
            .filter(|r| r.train_t_eval == tt)
            .map(|r| format!("{:>9.2}", r.mean_acc))
            .collect();
        println!("{tt:>12} {accs}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> aimc_map::Result<()> {
    run_example()
}
