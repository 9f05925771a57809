//! Roofline-style latency and energy estimates for a mapped network.
//!
//! Digital layer: `max(2*MACs / effective CPU ops, bytes / effective DRAM bandwidth)`,
//! where bytes count unfolded input traffic (divided by a cache-reuse factor),
//! weights and outputs.
//!
//! Analog layer: `max(tile invocations * tile latency, tile I/O / link bandwidth)`
//! scaled by the effective AIMC fraction, bounded below by activation traffic
//! (weights stay in the crossbars), plus digital accumulation of per-tile
//! partial sums. A layer never runs slower than its digital execution.
//!
//! Both domains pay the same per-output cost for activation, pooling and
//! requantisation. Energy is a static system power drawn for the whole run plus
//! a per-operation dynamic energy for each domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    count_macs, tile_count, unfolded_shape, Domain, LayerDescriptor, LayerKind, MappingVector,
    NetworkDescriptor, TileGeometry,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub cpu_clock_hz: f64,
    /// INT8 SIMD operations retired per cycle at peak.
    pub cpu_simd_ops_per_cycle: f64,
    pub cpu_effective_fraction: f64,
    pub aimc_tile_latency_s: f64,
    pub aimc_transfer_bandwidth: f64,
    pub aimc_effective_fraction: f64,
    /// Ops/s/W of the crossbar tiles.
    pub aimc_energy_eff: f64,
    /// Whole-system Ops/s/W of the CPU+SIMD baseline at peak throughput.
    pub digital_energy_eff: f64,
    pub dram_clock_hz: f64,
    pub dram_bus_bytes: f64,
    pub dram_effective_fraction: f64,
    pub bytes_per_element: f64,
    /// Reuse of unfolded input elements out of cache (depthwise-like layers use 1).
    pub cache_reuse: f64,
    /// Non-MVM digital ops per output element (activation, pooling, requantisation).
    pub aux_ops_per_output: f64,
    /// Share of peak system power drawn regardless of activity.
    pub static_power_share: f64,
    #[serde(default)]
    pub tile: TileGeometry,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            cpu_clock_hz: 2.3e9,
            cpu_simd_ops_per_cycle: 64.0,
            cpu_effective_fraction: 0.35,
            aimc_tile_latency_s: 100e-9,
            aimc_transfer_bandwidth: 4e9,
            aimc_effective_fraction: 0.57,
            aimc_energy_eff: 20e12,
            digital_energy_eff: 22.8e9,
            dram_clock_hz: 2400e6,
            dram_bus_bytes: 8.0,
            dram_effective_fraction: 0.35,
            bytes_per_element: 1.0,
            cache_reuse: 8.0,
            aux_ops_per_output: 32.0,
            static_power_share: 0.6,
            tile: TileGeometry::default(),
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cpu_clock_hz", self.cpu_clock_hz),
            ("cpu_simd_ops_per_cycle", self.cpu_simd_ops_per_cycle),
            ("aimc_tile_latency_s", self.aimc_tile_latency_s),
            ("aimc_transfer_bandwidth", self.aimc_transfer_bandwidth),
            ("aimc_energy_eff", self.aimc_energy_eff),
            ("digital_energy_eff", self.digital_energy_eff),
            ("dram_clock_hz", self.dram_clock_hz),
            ("dram_bus_bytes", self.dram_bus_bytes),
            ("bytes_per_element", self.bytes_per_element),
            ("cache_reuse", self.cache_reuse),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("cpu_effective_fraction", self.cpu_effective_fraction),
            ("aimc_effective_fraction", self.aimc_effective_fraction),
            ("dram_effective_fraction", self.dram_effective_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.aux_ops_per_output >= 0.0) {
            return Err(Error::Config("aux_ops_per_output must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.static_power_share) {
            return Err(Error::Config("static_power_share must lie in [0, 1)".into()));
        }
        self.tile.validate()
    }

    pub fn cpu_peak_ops(&self) -> f64 {
        self.cpu_clock_hz * self.cpu_simd_ops_per_cycle
    }

    pub fn cpu_effective_ops(&self) -> f64 {
        self.cpu_peak_ops() * self.cpu_effective_fraction
    }

    pub fn dram_effective_bandwidth(&self) -> f64 {
        self.dram_clock_hz * self.dram_bus_bytes * self.dram_effective_fraction
    }

    pub fn static_power_w(&self) -> f64 {
        self.static_power_share * self.cpu_peak_ops() / self.digital_energy_eff
    }

    /// Dynamic energy of one digital operation (J).
    pub fn digital_op_energy(&self) -> f64 {
        (1.0 - self.static_power_share) / self.digital_energy_eff
    }

    pub fn analog_op_energy(&self) -> f64 {
        1.0 / self.aimc_energy_eff
    }
}

/// Geometry the model needs from one layer.
struct LayerTraffic {
    macs: f64,
    positions: f64,
    /// Input elements each output position presents to the MVM.
    patch: f64,
    outputs_per_position: f64,
    weights: f64,
    reuse: f64,
    /// Crossbar footprint `(rows, cols)`; depthwise-like layers are block diagonal.
    crossbar: (usize, usize),
}

fn traffic(layer: &LayerDescriptor, params: &SystemParams) -> LayerTraffic {
    let (rows, cols) = unfolded_shape(layer);
    let positions = layer.positions() as f64;
    let (patch, crossbar) = match layer.kind {
        LayerKind::Conv {
            kernel, filters, ..
        } if layer.depthwise_like => {
            let rows = kernel * kernel * filters;
            (rows as f64, (rows, filters))
        }
        _ => (rows as f64, (rows, cols)),
    };
    LayerTraffic {
        macs: count_macs(layer) as f64,
        positions,
        patch,
        outputs_per_position: cols as f64,
        weights: (rows * cols) as f64,
        reuse: if layer.depthwise_like { 1.0 } else { params.cache_reuse },
        crossbar,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPerf {
    pub layer_id: usize,
    pub domain: Domain,
    pub macs: u64,
    pub digital_latency_s: f64,
    pub analog_latency_s: f64,
    /// Latency in the mapped domain.
    pub latency_s: f64,
    pub digital_ops: f64,
    pub analog_ops: f64,
    pub dynamic_energy_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub network: String,
    pub mapping: String,
    pub layers: Vec<LayerPerf>,
    pub total_latency_s: f64,
    pub static_energy_j: f64,
    pub dynamic_energy_j: f64,
    pub total_energy_j: f64,
    pub baseline_latency_s: f64,
    pub baseline_energy_j: f64,
    pub speedup: f64,
    pub energy_gain: f64,
}

struct PathCost {
    latency: f64,
    digital_ops: f64,
    analog_ops: f64,
}

fn digital_path(layer: &LayerDescriptor, p: &SystemParams) -> PathCost {
    let t = traffic(layer, p);
    if t.macs == 0.0 {
        return PathCost {
            latency: 0.0,
            digital_ops: 0.0,
            analog_ops: 0.0,
        };
    }
    let bpe = p.bytes_per_element;
    let ops = 2.0 * t.macs;
    let compute = ops / p.cpu_effective_ops();
    let bytes = (t.positions * t.patch / t.reuse + t.weights + t.positions * t.outputs_per_position) * bpe;
    let memory = bytes / p.dram_effective_bandwidth();
    let aux_ops = t.positions * t.outputs_per_position * p.aux_ops_per_output;
    PathCost {
        latency: compute.max(memory) + aux_ops / p.cpu_effective_ops(),
        digital_ops: ops + aux_ops,
        analog_ops: 0.0,
    }
}

fn analog_path(layer: &LayerDescriptor, p: &SystemParams) -> PathCost {
    let t = traffic(layer, p);
    let bpe = p.bytes_per_element;
    if t.macs == 0.0 {
        return PathCost {
            latency: 0.0,
            digital_ops: 0.0,
            analog_ops: 0.0,
        };
    }
    let tiles = tile_count(t.crossbar, p.tile) as f64;
    let row_tiles = t.crossbar.0.div_ceil(p.tile.rows) as f64;
    let invocations = t.positions * tiles;
    let io_bytes = t.positions * (t.patch + t.outputs_per_position * row_tiles) * bpe;
    let tile_time = (invocations * p.aimc_tile_latency_s).max(io_bytes / p.aimc_transfer_bandwidth)
        / p.aimc_effective_fraction;
    let activation_bytes = (t.positions * t.patch / t.reuse + t.positions * t.outputs_per_position) * bpe;
    let memory = activation_bytes / p.dram_effective_bandwidth();
    // partial-sum accumulation plus per-channel scale and bias
    let accum_ops = t.positions * t.outputs_per_position * (row_tiles + 1.0);
    let aux_ops = t.positions * t.outputs_per_position * p.aux_ops_per_output;
    PathCost {
        latency: tile_time.max(memory) + (accum_ops + aux_ops) / p.cpu_effective_ops(),
        digital_ops: accum_ops + aux_ops,
        analog_ops: 2.0 * t.macs,
    }
}

/// Latency (s) of one layer executed in `domain`.
pub fn layer_latency(layer: &LayerDescriptor, domain: Domain, params: &SystemParams) -> f64 {
    let d = digital_path(layer, params);
    match domain {
        Domain::Digital => d.latency,
        Domain::Analog => analog_path(layer, params).latency.min(d.latency),
    }
}

fn layer_perf(layer: &LayerDescriptor, domain: Domain, p: &SystemParams) -> LayerPerf {
    let d = digital_path(layer, p);
    let a = analog_path(layer, p);
    let analog_latency = a.latency.min(d.latency);
    let (latency, cost) = match domain {
        Domain::Digital => (d.latency, &d),
        Domain::Analog => (analog_latency, &a),
    };
    LayerPerf {
        layer_id: layer.id,
        domain,
        macs: count_macs(layer),
        digital_latency_s: d.latency,
        analog_latency_s: analog_latency,
        latency_s: latency,
        digital_ops: cost.digital_ops,
        analog_ops: cost.analog_ops,
        dynamic_energy_j: cost.digital_ops * p.digital_op_energy() + cost.analog_ops * p.analog_op_energy(),
    }
}

fn totals(layers: &[LayerPerf], p: &SystemParams) -> (f64, f64, f64) {
    let latency: f64 = layers.iter().map(|l| l.latency_s).sum();
    let dynamic: f64 = layers.iter().map(|l| l.dynamic_energy_j).sum();
    let static_e = p.static_power_w() * latency;
    (latency, static_e, dynamic)
}

/// Latency/energy of `mapping` and its gains over the all-digital mapping.
pub fn estimate(
    net: &NetworkDescriptor,
    mapping: &MappingVector,
    params: &SystemParams,
) -> Result<PerfReport> {
    params.validate()?;
    mapping.validate(net)?;
    let layers: Vec<LayerPerf> = net
        .layers
        .iter()
        .map(|l| layer_perf(l, mapping.get(l.id), params))
        .collect();
    let baseline: Vec<LayerPerf> = net
        .layers
        .iter()
        .map(|l| layer_perf(l, Domain::Digital, params))
        .collect();
    let (latency, static_e, dynamic) = totals(&layers, params);
    let (base_latency, base_static, base_dynamic) = totals(&baseline, params);
    let energy = static_e + dynamic;
    let base_energy = base_static + base_dynamic;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 1.0 };
    Ok(PerfReport {
        network: net.name.clone(),
        mapping: mapping.code(),
        layers,
        total_latency_s: latency,
        static_energy_j: static_e,
        dynamic_energy_j: dynamic,
        total_energy_j: energy,
        baseline_latency_s: base_latency,
        baseline_energy_j: base_energy,
        speedup: ratio(base_latency, latency),
        energy_gain: ratio(base_energy, energy),
    })
}
