// Analytical latency and energy of the CIFAR-scale presets, from all-digital
// to all-analog with the largest layers moved first.

use aimc_map::mapper::rank_layers;
use aimc_map::network::{mac_ratio, Domain, MappingVector};
use aimc_map::perf::{estimate, SystemParams};
use aimc_map::presets;

pub fn run_example() -> aimc_map::Result<()> {
    let params = SystemParams::default();
    for net in [presets::vgg16_cifar(10), presets::alexnet_cifar(10), presets::depthwise_cifar(10)] {
        println!("{} ({} mappable layers)", net.name, net.mappable_count());
        let mut m = MappingVector::all_digital(&net);
        let order = rank_layers(&net);
        let steps = [0, order.len() / 4, order.len() / 2, order.len()];
        let mut moved = 0;
        for &k in &steps {
            while moved < k {
                m.set(order[moved], Domain::Analog);
                moved += 1;
            }
            let r = estimate(&net, &m, &params)?;
            println!(
                "  MAC ratio {:.3}: latency {:.3} ms, energy {:.3} mJ, speedup {:.2}x, energy gain {:.2}x",
                mac_ratio(&net, &m)?,
                r.total_latency_s * 1e3,
                r.total_energy_j * 1e3,
                r.speedup,
                r.energy_gain
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> aimc_map::Result<()> {
    run_example()
}
