// Program one random layer onto crossbar tiles and read it back under the
// default noise model at increasing drift times.

use aimc_map::analog::{analog_forward, program, AnalogConfig};
use aimc_map::model::forward_digital;
use aimc_map::network::{tile_count, unfolded_shape, LayerDescriptor};
use aimc_map::rng::stream;
use aimc_map::tensor::Tensor;
use rand::Rng;

pub fn run_example() -> aimc_map::Result<()> {
    let layer = LayerDescriptor::fc(0, 600, 16);
    let (rows, cols) = unfolded_shape(&layer);
    let mut rng = stream(7, "example", &[]);
    let mut random = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let w = Tensor::matrix(rows, cols, random(rows * cols))?;
    let b = Tensor::vector(random(cols));
    let x = Tensor::matrix(8, rows, random(8 * rows))?;

    let exact = forward_digital(&layer, &w, &b, &x)?;
    let cfg = AnalogConfig::default();
    println!(
        "{rows}x{cols} weights on {} tiles of {}x{}",
        tile_count((rows, cols), cfg.tile),
        cfg.tile.rows,
        cfg.tile.cols
    );

    let noiseless = AnalogConfig::noiseless();
    let ideal = analog_forward(&program(&w, &b, &noiseless, &mut stream(7, "program", &[]))?, &x, &noiseless, 0.0, &mut stream(7, "read", &[]))?;
    println!("noiseless read, max |error|: {:.2e}", max_diff(&exact, &ideal));

    let state = program(&w, &b, &cfg, &mut stream(7, "program", &[]))?;
    for t in [20.0, 3600.0, 86_400.0, 86_400.0 * 365.0] {
        let y = analog_forward(&state, &x, &cfg, t, &mut stream(7, "read", &[]))?;
        println!("t = {t:>10} s: relative error {:.4}", max_diff(&exact, &y) / exact.max_abs());
    }
    Ok(())
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

#[allow(dead_code)]
fn main() -> aimc_map::Result<()> {
    run_example()
}
