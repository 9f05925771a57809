//! Accuracy-constrained greedy layer mapping.
//!
//! Layers are visited once each in descending MAC order. Each candidate is
//! tentatively moved to analog, the whole network is retrained with injected
//! analog noise until its training loss stops improving, and the mapping is
//! evaluated on the validation split over several programmed instances. The
//! candidate is kept if the mean drop from the floating-point baseline stays
//! within the threshold; otherwise the network is restored from a snapshot.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analog::AnalogConfig;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{LayerParams, Optimizers, TrainConfig, TrainedNetwork};
use crate::network::{count_macs, mac_ratio, Domain, MappingVector, NetworkDescriptor};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperConfig {
    /// Largest allowed drop (percentage points) from the float baseline.
    pub drop_threshold: f64,
    pub convergence_window: usize,
    pub max_epochs_per_candidate: usize,
    pub eval_reps_inner: usize,
    pub eval_reps_final: usize,
    /// Overrides `AnalogConfig::t_eval` for training and evaluation.
    pub t_eval: f64,
    pub seed: u64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            drop_threshold: 1.0,
            convergence_window: 5,
            max_epochs_per_candidate: 60,
            eval_reps_inner: 5,
            eval_reps_final: 20,
            t_eval: 86_400.0,
            seed: 0,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "drop_threshold must be >= 0, got {}",
                self.drop_threshold
            )));
        }
        if self.convergence_window == 0 || self.max_epochs_per_candidate == 0 {
            return Err(Error::Config(
                "convergence_window and max_epochs_per_candidate must be >= 1".into(),
            ));
        }
        if self.eval_reps_inner == 0 || self.eval_reps_final == 0 {
            return Err(Error::Config("evaluation repetitions must be >= 1".into()));
        }
        if !(self.t_eval >= 0.0 && self.t_eval.is_finite()) {
            return Err(Error::Config(format!("t_eval must be >= 0, got {}", self.t_eval)));
        }
        Ok(())
    }
}

/// Everything a retraining or evaluation step reads but never changes.
#[derive(Clone, Copy, Debug)]
pub struct Bench<'a> {
    pub data: &'a Dataset,
    pub train: &'a TrainConfig,
    pub analog: &'a AnalogConfig,
}

impl Bench<'_> {
    /// Analog configuration with the mapper's evaluation time applied.
    pub fn analog_at(&self, t_eval: f64) -> AnalogConfig {
        AnalogConfig {
            t_eval,
            ..self.analog.clone()
        }
    }
}

/// Mappable layer ids by MAC count, largest first; ties keep topological order.
pub fn rank_layers(net: &NetworkDescriptor) -> Vec<usize> {
    let mut ids: Vec<usize> = net
        .layers
        .iter()
        .filter(|l| l.is_mappable())
        .map(|l| l.id)
        .collect();
    ids.sort_by_key(|&i| (std::cmp::Reverse(count_macs(&net.layers[i])), i));
    ids
}

/// Convergence-window stopping rule over a stream of epoch losses.
#[derive(Clone, Debug)]
pub struct ConvergenceMonitor {
    window: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
    seen: usize,
}

impl ConvergenceMonitor {
    pub fn new(window: usize) -> Self {
        ConvergenceMonitor {
            window: window.max(1),
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
            seen: 0,
        }
    }

    /// Record one epoch's loss. Returns `true` when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        let epoch = self.seen;
        self.seen += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.window
    }

    pub fn improved_last(&self) -> bool {
        self.seen > 0 && self.best_epoch == Some(self.seen - 1)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn epochs(&self) -> usize {
        self.seen
    }
}

#[derive(Clone, Debug)]
pub struct Retrained {
    pub network: TrainedNetwork,
    pub losses: Vec<f64>,
    pub best_epoch: usize,
}

impl Retrained {
    pub fn epochs(&self) -> usize {
        self.losses.len()
    }
}

/// Hardware-aware retraining of `net` under `mapping`, keeping the parameters
/// of the best-loss epoch. Fresh optimizer state per call; the cosine schedule
/// spans `max_epochs_per_candidate`. A NaN loss surfaces as `Error::Divergence`.
pub fn retrain_until_converged(
    net: &TrainedNetwork,
    mapping: &MappingVector,
    bench: &Bench,
    cfg: &MapperConfig,
    session: u64,
) -> Result<Retrained> {
    let cap = cfg.max_epochs_per_candidate;
    let analog = bench.analog_at(cfg.t_eval);
    let mut opts = Optimizers::new(
        &bench.train.digital.with_horizon(cap),
        &bench.train.analog.with_horizon(cap),
    );
    let mut work = net.clone();
    let mut best: Vec<LayerParams> = work.params.clone();
    let mut monitor = ConvergenceMonitor::new(cfg.convergence_window);
    let mut losses = Vec::new();
    for epoch in 0..cap {
        let loss = work.train_epoch(
            &bench.data.train,
            mapping,
            &analog,
            &mut opts,
            epoch,
            cfg.seed,
            session,
        )?;
        losses.push(loss);
        let stop = monitor.observe(loss);
        if monitor.improved_last() {
            best.clone_from(&work.params);
        }
        if stop {
            break;
        }
    }
    work.params = best;
    Ok(Retrained {
        network: work,
        losses,
        best_epoch: monitor.best_epoch().unwrap_or(0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: f64,
    pub std: f64,
    pub per_rep: Vec<f64>,
    pub mac_ratio: f64,
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Accuracy on `split` over `reps` freshly programmed instances read at
/// `t_eval`. Repetition `r` always uses the same programming and read-noise
/// streams for a given seed.
pub fn evaluate_mapping(
    net: &TrainedNetwork,
    mapping: &MappingVector,
    split: &Split,
    analog: &AnalogConfig,
    reps: usize,
    t_eval: f64,
    seed: u64,
) -> Result<EvalReport> {
    if reps == 0 {
        return Err(Error::Config("evaluation needs at least one repetition".into()));
    }
    let ratio = mac_ratio(&net.descriptor, mapping)?;
    let per_rep: Vec<f64> = if mapping.analog_count() == 0 {
        vec![net.accuracy_digital(split)?; reps]
    } else {
        (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let states = net.program_layers(mapping, analog, seed, rep)?;
                let mut rng = stream(seed, "eval-rep", &[rep]);
                net.accuracy_programmed(split, &states, analog, t_eval, &mut rng)
            })
            .collect::<Result<_>>()?
    };
    let (mean, std) = mean_std(&per_rep);
    Ok(EvalReport {
        mean,
        std,
        per_rep,
        mac_ratio: ratio,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    RolledBack,
    /// Retraining produced a non-finite loss; treated as a rollback.
    Diverged,
    /// Moved back to digital by a sensitivity-ordered strategy.
    ToDigital,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Accepted => "accepted",
            Decision::RolledBack => "rolled_back",
            Decision::Diverged => "diverged",
            Decision::ToDigital => "to_digital",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub layer_id: usize,
    pub macs: u64,
    pub decision: Decision,
    pub mean_acc: Option<f64>,
    pub std_acc: Option<f64>,
    pub epochs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingTrace {
    pub entries: Vec<TraceEntry>,
}

impl MappingTrace {
    pub fn write_csv<W: Write>(&self, out: W, header_comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = header_comment {
            writeln!(out, "# {c}").map_err(|e| Error::io("<trace>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, header_comment: Option<&str>) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f), header_comment)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)?;
        let entries = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(MappingTrace { entries })
    }
}

#[derive(Clone, Debug)]
pub struct MappingOutcome {
    pub mapping: MappingVector,
    pub network: TrainedNetwork,
    pub trace: MappingTrace,
    /// Float validation accuracy every candidate is compared against.
    pub baseline_accuracy: f64,
    /// Number of `retrain_until_converged` calls made.
    pub retrain_sessions: usize,
}

/// The greedy scan. `net` must be the floating-point pre-trained network.
pub fn greedy_map(net: &TrainedNetwork, bench: &Bench, cfg: &MapperConfig) -> Result<MappingOutcome> {
    cfg.validate()?;
    bench.analog.validate()?;
    let desc = &net.descriptor;
    let analog = bench.analog_at(cfg.t_eval);
    let baseline = net.accuracy_digital(&bench.data.val)?;

    let mut current = net.clone();
    let mut mapping = MappingVector::all_digital(desc);
    let mut trace = MappingTrace::default();
    let mut sessions = 0;

    for (rank, layer) in rank_layers(desc).into_iter().enumerate() {
        mapping.set(layer, Domain::Analog);
        sessions += 1;
        let macs = count_macs(&desc.layers[layer]);
        let entry = match retrain_until_converged(&current, &mapping, bench, cfg, rank as u64) {
            Ok(r) => {
                let eval = evaluate_mapping(
                    &r.network,
                    &mapping,
                    &bench.data.val,
                    &analog,
                    cfg.eval_reps_inner,
                    cfg.t_eval,
                    cfg.seed,
                )?;
                let epochs = r.epochs();
                let decision = if baseline - eval.mean <= cfg.drop_threshold {
                    current = r.network;
                    Decision::Accepted
                } else {
                    // `current` still holds the pre-tentative snapshot
                    Decision::RolledBack
                };
                TraceEntry {
                    layer_id: layer,
                    macs,
                    decision,
                    mean_acc: Some(eval.mean),
                    std_acc: Some(eval.std),
                    epochs,
                }
            }
            Err(Error::Divergence(_)) => TraceEntry {
                layer_id: layer,
                macs,
                decision: Decision::Diverged,
                mean_acc: None,
                std_acc: None,
                epochs: 0,
            },
            Err(e) => return Err(e),
        };
        if entry.decision != Decision::Accepted {
            mapping.set(layer, Domain::Digital);
        }
        trace.entries.push(entry);
    }

    Ok(MappingOutcome {
        mapping,
        network: current,
        trace,
        baseline_accuracy: baseline,
        retrain_sessions: sessions,
    })
}
