// Threshold-by-seed sweep of the greedy mapper, its approximate front and elbow.

use aimc_map::analog::AnalogConfig;
use aimc_map::dataset::{generate_synthetic, SyntheticSpec};
use aimc_map::explorer::{elbow, pareto_front, sweep};
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
    let (net, _) = pretrain(&presets::desk_mlp6(), &data.train, &train, 0)?;
    let bench = Bench {
        data: &data,
        train: &train,
        analog: &analog,
    };
    let base = MapperConfig {
        max_epochs_per_candidate: 3,
        eval_reps_final: 5,
        ..MapperConfig::default()
    };
    let result = sweep(&net, &bench, &base, &[0.5, 2.0, 10.0], &[0, 1], 0)?;
    for a in &result.aggregates {
        println!(
            "threshold {:>4}: ratio {:.3} +/- {:.3}, accuracy {:.2} +/- {:.2} over {} runs",
            a.threshold, a.mac_ratio_mean, a.mac_ratio_std, a.acc_mean, a.acc_std, a.runs
        );
    }
    let points: Vec<_> = result.runs.iter().filter_map(|r| r.result.as_ref().ok().map(|s| s.point())).collect();
    let front = pareto_front(&points)?;
    println!("front:");
    for p in &front {
        println!("  {} ratio {:.3} accuracy {:.2}", p.mapping.code(), p.mac_ratio, p.mean_accuracy);
    }
    let knee = elbow(&front)?;
    println!("elbow: {} ({:.3}, {:.2})", knee.mapping.code(), knee.mac_ratio, knee.mean_accuracy);
    Ok(())
}

#[allow(dead_code)]
fn main() -> aimc_map::Result<()> {
    run_example()
}
