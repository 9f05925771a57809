// Floating-point pre-training of the desk CNN on the synthetic task, then a
// round trip through the weight container format.

use aimc_map::dataset::{generate_synthetic, SyntheticSpec};
use aimc_map::model::{pretrain, TrainConfig, TrainedNetwork};
use aimc_map::presets;

pub fn run_example() -> aimc_map::Result<()> {
    let data = generate_synthetic(&SyntheticSpec::default())?;
    println!(
        "synthetic task: {} classes, {} train / {} val / {} test",
        data.classes,
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    let cfg = TrainConfig {
        pretrain_epochs: 8,
        ..TrainConfig::default()
    };
    let (net, losses) = pretrain(&presets::desk_cnn(), &data.train, &cfg, 0)?;
    for (epoch, loss) in losses.iter().enumerate() {
        println!("epoch {epoch:>2}  loss {loss:.4}");
    }
    println!("validation accuracy {:.2}%", net.accuracy_digital(&data.val)?);

    let dir = std::env::temp_dir().join("aimc-map-example");
    std::fs::create_dir_all(&dir).map_err(|e| aimc_map::Error::io(&dir, e))?;
    let path = dir.join("desk-cnn.net");
    net.save(&path, serde_json::json!({ "epochs": cfg.pretrain_epochs }))?;
    let (back, meta) = TrainedNetwork::load(&path)?;
    println!(
        "reloaded {} ({} layers, meta {meta}); f32 storage keeps accuracy at {:.2}%",
        path.display(),
        back.layer_count(),
        back.accuracy_digital(&data.val)?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> aimc_map::Result<()> {
    run_example()
}
