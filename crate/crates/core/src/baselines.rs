//! Reference mapping strategies.
//!
//! * all-digital and all-analog mappings,
//! * FLMS: first and last mappable layers digital, everything else analog,
//! * Harmonica (layer-wise): start all-analog and move the most
//!   noise-sensitive layers back to digital until the accuracy constraint
//!   holds, optionally followed by one retraining pass.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::mapper::{
    evaluate_mapping, retrain_until_converged, Bench, Decision, MapperConfig, MappingTrace,
    TraceEntry,
};
use crate::model::{weight_id, TrainedNetwork, EVAL_BATCH};
use crate::network::{count_macs, Domain, MappingVector, NetworkDescriptor};
use crate::rng::stream;

/// Retraining session ids for baselines, kept clear of the greedy scan's
/// rank-indexed sessions.
const SESSION_ALL_ANALOG: u64 = 1 << 32;
const SESSION_FLMS: u64 = (1 << 32) + 1;
const SESSION_HARMONICA: u64 = (1 << 32) + 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    AllDigital,
    AllAnalog,
    Flms { float_input: bool },
    Harmonica { retrain: bool },
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaselineKind::AllDigital => f.write_str("all-digital"),
            BaselineKind::AllAnalog => f.write_str("all-analog"),
            BaselineKind::Flms { float_input: true } => f.write_str("flms"),
            BaselineKind::Flms { float_input: false } => f.write_str("flms-hwa"),
            BaselineKind::Harmonica { retrain: false } => f.write_str("harmonica"),
            BaselineKind::Harmonica { retrain: true } => f.write_str("harmonica-t"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    /// Validation accuracy lost when only that layer is analog.
    #[default]
    Ablation,
    /// Diagonal Fisher proxy: `sum_i E[g_i^2] * w_i^2`, the expected loss
    /// increase under multiplicative weight noise up to a constant.
    Fisher,
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub kind: BaselineKind,
    pub mapping: MappingVector,
    pub network: TrainedNetwork,
    pub trace: MappingTrace,
    pub retrain_sessions: usize,
}

pub fn all_digital_map(net: &TrainedNetwork) -> BaselineOutcome {
    BaselineOutcome {
        kind: BaselineKind::AllDigital,
        mapping: MappingVector::all_digital(&net.descriptor),
        network: net.clone(),
        trace: MappingTrace::default(),
        retrain_sessions: 0,
    }
}

/// Every mappable layer analog, one retraining pass. Divergence is returned as
/// an error because this strategy has nothing to fall back to.
pub fn all_analog_map(net: &TrainedNetwork, bench: &Bench, cfg: &MapperConfig) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let mapping = MappingVector::all_analog(&net.descriptor);
    let r = retrain_until_converged(net, &mapping, bench, cfg, SESSION_ALL_ANALOG)?;
    Ok(BaselineOutcome {
        kind: BaselineKind::AllAnalog,
        mapping,
        network: r.network,
        trace: MappingTrace::default(),
        retrain_sessions: 1,
    })
}

/// First and last mappable layers digital, the rest analog.
pub fn flms_mapping(net: &NetworkDescriptor) -> MappingVector {
    let mut m = MappingVector::all_analog(net);
    let mappable: Vec<usize> = net.layers.iter().filter(|l| l.is_mappable()).map(|l| l.id).collect();
    if let (Some(&first), Some(&last)) = (mappable.first(), mappable.last()) {
        m.set(first, Domain::Digital);
        m.set(last, Domain::Digital);
    }
    m
}

/// FLMS with one retraining pass. With `float_input = false` the pass starts
/// from the all-analog retrained network instead of the float one.
pub fn flms_map(
    net: &TrainedNetwork,
    bench: &Bench,
    cfg: &MapperConfig,
    float_input: bool,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let (start, mut sessions) = if float_input {
        (net.clone(), 0)
    } else {
        (all_analog_map(net, bench, cfg)?.network, 1)
    };
    let mapping = flms_mapping(&net.descriptor);
    let r = retrain_until_converged(&start, &mapping, bench, cfg, SESSION_FLMS)?;
    sessions += 1;
    Ok(BaselineOutcome {
        kind: BaselineKind::Flms { float_input },
        mapping,
        network: r.network,
        trace: MappingTrace::default(),
        retrain_sessions: sessions,
    })
}

/// Per-layer sensitivity scores indexed by layer id (`None` for layers that
/// cannot be mapped). Larger means more sensitive.
pub fn layer_sensitivity(
    net: &TrainedNetwork,
    bench: &Bench,
    cfg: &MapperConfig,
    method: Sensitivity,
) -> Result<Vec<Option<f64>>> {
    let desc = &net.descriptor;
    match method {
        Sensitivity::Ablation => {
            let analog = bench.analog_at(cfg.t_eval);
            let reference = net.accuracy_digital(&bench.data.val)?;
            desc.layers
                .iter()
                .map(|l| {
                    if !l.is_mappable() {
                        return Ok(None);
                    }
                    let mut m = MappingVector::all_digital(desc);
                    m.set(l.id, Domain::Analog);
                    let e = evaluate_mapping(
                        net,
                        &m,
                        &bench.data.val,
                        &analog,
                        cfg.eval_reps_inner,
                        cfg.t_eval,
                        cfg.seed,
                    )?;
                    Ok(Some(reference - e.mean))
                })
                .collect()
        }
        Sensitivity::Fisher => {
            let fisher = diagonal_fisher(net, &bench.data.train)?;
            Ok(desc
                .layers
                .iter()
                .zip(&fisher)
                .zip(&net.params)
                .map(|((l, f), p)| {
                    l.is_mappable().then(|| {
                        f.iter()
                            .zip(p.weight.data())
                            .map(|(g2, w)| g2 * w * w)
                            .sum()
                    })
                })
                .collect())
        }
    }
}

/// Mean squared per-batch weight gradient of the digital network.
fn diagonal_fisher(net: &TrainedNetwork, data: &crate::dataset::Split) -> Result<Vec<Vec<f64>>> {
    let mapping = MappingVector::all_digital(&net.descriptor);
    let noiseless = crate::analog::AnalogConfig::noiseless();
    let mut acc: Vec<Vec<f64>> = net.params.iter().map(|p| vec![0.0; p.weight.len()]).collect();
    let mut batches = 0usize;
    let mut rng = stream(0, "fisher", &[]);
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(data.len())).collect();
        let part = data.subset(&idx);
        let mut tape = Tape::new();
        let logits = net.tape_forward(&mut tape, part.x, &mapping, &noiseless, &mut rng)?;
        let loss = tape.softmax_cross_entropy(logits, &part.y)?;
        let grads = tape.backward(loss)?;
        for (i, a) in acc.iter_mut().enumerate() {
            for (s, g) in a.iter_mut().zip(grads.get(weight_id(i))?.data()) {
                *s += g * g;
            }
        }
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::Empty("sensitivity needs training samples".into()));
    }
    for a in &mut acc {
        a.iter_mut().for_each(|v| *v /= batches as f64);
    }
    Ok(acc)
}

/// Mappable layers from most to least sensitive; ties by ascending id.
pub fn sensitivity_order(scores: &[Option<f64>]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_some()).collect();
    ids.sort_by(|&a, &b| {
        let (sa, sb) = (scores[a].unwrap(), scores[b].unwrap());
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    ids
}

/// Layer-wise Harmonica. `net_hwa` must already be retrained all-analog;
/// `float_baseline` is the floating-point validation accuracy the threshold
/// refers to. The trace logs one entry per layer moved back to digital, with
/// the accuracy of the mapping after the move.
pub fn harmonica_map(
    net_hwa: &TrainedNetwork,
    float_baseline: f64,
    bench: &Bench,
    cfg: &MapperConfig,
    retrain: bool,
    method: Sensitivity,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let desc = &net_hwa.descriptor;
    let analog = bench.analog_at(cfg.t_eval);
    let order = sensitivity_order(&layer_sensitivity(net_hwa, bench, cfg, method)?);
    let mut mapping = MappingVector::all_analog(desc);
    let mut trace = MappingTrace::default();
    let eval = |m: &MappingVector| {
        evaluate_mapping(net_hwa, m, &bench.data.val, &analog, cfg.eval_reps_inner, cfg.t_eval, cfg.seed)
    };
    let mut report = eval(&mapping)?;
    let mut next = order.iter();
    loop {
        let satisfied = float_baseline - report.mean <= cfg.drop_threshold;
        if satisfied || mapping.analog_count() == 0 {
            break;
        }
        let Some(&layer) = next.next() else { break };
        mapping.set(layer, Domain::Digital);
        report = eval(&mapping)?;
        trace.entries.push(TraceEntry {
            layer_id: layer,
            macs: count_macs(&desc.layers[layer]),
            decision: Decision::ToDigital,
            mean_acc: Some(report.mean),
            std_acc: Some(report.std),
            epochs: 0,
        });
    }
    let (network, sessions) = if retrain && mapping.analog_count() > 0 {
        let r = retrain_until_converged(net_hwa, &mapping, bench, cfg, SESSION_HARMONICA)?;
        (r.network, 1)
    } else {
        (net_hwa.clone(), 0)
    };
    Ok(BaselineOutcome {
        kind: BaselineKind::Harmonica { retrain },
        mapping,
        network,
        trace,
        retrain_sessions: sessions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn flms_on_ten_equal_layers() {
        let net = presets::mlp("eq", [1, 1, 8], &[8; 11]);
        let m = flms_mapping(&net);
        assert_eq!(m.get(0), Domain::Digital);
        assert_eq!(m.get(9), Domain::Digital);
        assert_eq!(m.analog_count(), 8);
        assert!((crate::network::mac_ratio(&net, &m).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn flms_skips_always_digital_layers() {
        let mut net = presets::mlp("eq", [1, 1, 8], &[8; 5]);
        net.layers[0].always_digital = true;
        let m = flms_mapping(&net);
        assert_eq!(m.get(1), Domain::Digital);
        assert_eq!(m.get(3), Domain::Digital);
        assert_eq!(m.get(2), Domain::Analog);
    }

    #[test]
    fn sensitivity_order_ties_by_id() {
        let s = [Some(1.0), None, Some(3.0), Some(1.0)];
        assert_eq!(sensitivity_order(&s), vec![2, 0, 3]);
    }

    #[test]
    fn kind_names() {
        assert_eq!(BaselineKind::Harmonica { retrain: true }.to_string(), "harmonica-t");
        assert_eq!(BaselineKind::Flms { float_input: false }.to_string(), "flms-hwa");
    }
}
