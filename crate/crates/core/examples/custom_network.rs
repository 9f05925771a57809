// Load a network descriptor from JSON, validate it and inspect its layers.

use aimc_map::network::{count_macs, tile_count, unfolded_shape, NetworkDescriptor, TileGeometry};

const DESCRIPTOR: &str = include_str!("../../../docs/sample_network.json");

pub fn run_example() -> aimc_map::Result<()> {
    let net = NetworkDescriptor::from_json_str(DESCRIPTOR)?;
    println!("{}: input {:?}, {} classes", net.name, net.input, net.classes);
    for l in &net.layers {
        let shape = unfolded_shape(l);
        println!(
            "  layer {} {:?}: crossbar {}x{}, {} tiles, {} MACs{}",
            l.id,
            l.activation,
            shape.0,
            shape.1,
            tile_count(shape, TileGeometry::default()),
            count_macs(l),
            if l.always_digital { ", always digital" } else { "" }
        );
    }
    println!("total mappable MACs: {}", net.total_mappable_macs());
    Ok(())
}

#[allow(dead_code)]
fn main() -> aimc_map::Result<()> {
    run_example()
}
