//! Sweeps over thresholds and seeds, Pareto fronts, elbow selection and the
//! exhaustive-retraining ceiling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::error::{Error, Result};
use crate::mapper::{
    evaluate_mapping, greedy_map, mean_std, retrain_until_converged, Bench, MapperConfig,
    MappingTrace,
};
use crate::model::TrainedNetwork;
use crate::network::{Domain, MappingVector};

/// Largest mappable-layer count the exhaustive ceiling accepts (4096 mappings).
pub const MAX_EXHAUSTIVE_LAYERS: usize = 12;

/// Retraining sessions of exhaustive mappings start here so their streams
/// never coincide with the greedy scan or the baselines.
const SESSION_EXHAUSTIVE: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointSource {
    Greedy { threshold: f64, seed: u64 },
    Baseline { baseline: BaselineKind },
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub mapping: MappingVector,
    pub mac_ratio: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub source: PointSource,
}

impl ParetoPoint {
    /// `self` is at least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.mac_ratio >= other.mac_ratio
            && self.mean_accuracy >= other.mean_accuracy
            && (self.mac_ratio > other.mac_ratio || self.mean_accuracy > other.mean_accuracy)
    }
}

/// Non-dominated subset (maximising both MAC ratio and accuracy), sorted by
/// ascending MAC ratio. Exact duplicates are all kept.
pub fn pareto_front(points: &[ParetoPoint]) -> Result<Vec<ParetoPoint>> {
    if points.is_empty() {
        return Err(Error::Empty("pareto front of no points".into()));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !p.mac_ratio.is_finite() || !p.mean_accuracy.is_finite())
    {
        return Err(Error::NonFinite(format!(
            "pareto point ({}, {})",
            p.mac_ratio, p.mean_accuracy
        )));
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    // ratio descending, accuracy descending
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pb.mac_ratio
            .total_cmp(&pa.mac_ratio)
            .then(pb.mean_accuracy.total_cmp(&pa.mean_accuracy))
            .then(a.cmp(&b))
    });
    let mut keep = Vec::new();
    // best accuracy among strictly larger ratios
    let mut best_above = f64::NEG_INFINITY;
    let mut i = 0;
    while i < idx.len() {
        let ratio = points[idx[i]].mac_ratio;
        let group_best = points[idx[i]].mean_accuracy;
        let mut j = i;
        while j < idx.len() && points[idx[j]].mac_ratio == ratio {
            let p = &points[idx[j]];
            if p.mean_accuracy == group_best && p.mean_accuracy > best_above {
                keep.push(idx[j]);
            }
            j += 1;
        }
        best_above = best_above.max(group_best);
        i = j;
    }
    keep.sort_by(|&a, &b| {
        points[a]
            .mac_ratio
            .total_cmp(&points[b].mac_ratio)
            .then(a.cmp(&b))
    });
    Ok(keep.into_iter().map(|i| points[i].clone()).collect())
}

/// Knee of a front: the point farthest from the chord between the lowest- and
/// highest-ratio points after min-max normalising both axes. Fronts with
/// fewer than three points yield their highest-ratio point; exact ties go to
/// the lower ratio.
pub fn elbow(front: &[ParetoPoint]) -> Result<ParetoPoint> {
    if front.is_empty() {
        return Err(Error::Empty("elbow of an empty front".into()));
    }
    let mut sorted: Vec<&ParetoPoint> = front.iter().collect();
    sorted.sort_by(|a, b| a.mac_ratio.total_cmp(&b.mac_ratio));
    if sorted.len() < 3 {
        return Ok(sorted[sorted.len() - 1].clone());
    }
    let distances = chord_distances(
        &sorted
            .iter()
            .map(|p| (p.mac_ratio, p.mean_accuracy))
            .collect::<Vec<_>>(),
    );
    let mut best = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d > distances[best] {
            best = i;
        }
    }
    Ok(sorted[best].clone())
}

/// Distance of each point to the first-to-last chord in min-max normalised
/// coordinates. Points must be sorted by x.
pub fn chord_distances(points: &[(f64, f64)]) -> Vec<f64> {
    let norm = |vals: Vec<f64>| -> Vec<f64> {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        vals.iter()
            .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect()
    };
    let xs = norm(points.iter().map(|p| p.0).collect());
    let ys = norm(points.iter().map(|p| p.1).collect());
    let n = points.len();
    let (x0, y0, x1, y1) = (xs[0], ys[0], xs[n - 1], ys[n - 1]);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = dx.hypot(dy);
    xs.iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            if len > 0.0 {
                (dy * (x - x0) - dx * (y - y0)).abs() / len
            } else {
                (x - x0).hypot(y - y0)
            }
        })
        .collect()
}

/// Number of layer-wise mappings of `layers` mappable layers.
pub fn mapping_count(layers: usize) -> u128 {
    1u128 << layers
}

/// Mapping number `mask` over the mappable layers of `net`: bit `k` set means
/// the `k`-th mappable layer (in topological order) is analog.
pub fn mapping_from_mask(net: &crate::network::NetworkDescriptor, mask: u64) -> MappingVector {
    let mut m = MappingVector::all_digital(net);
    for (k, l) in net.layers.iter().filter(|l| l.is_mappable()).enumerate() {
        if mask >> k & 1 == 1 {
            m.set(l.id, Domain::Analog);
        }
    }
    m
}

/// Retrain and evaluate every layer-wise mapping of `net` with the same
/// convergence rule and final evaluation as the greedy mapper. Points come
/// back in mask order.
pub fn exhaustive_ceiling(
    net: &TrainedNetwork,
    bench: &Bench,
    cfg: &MapperConfig,
    max_layers: usize,
) -> Result<Vec<ParetoPoint>> {
    cfg.validate()?;
    let layers = net.descriptor.mappable_count();
    let limit = max_layers.min(MAX_EXHAUSTIVE_LAYERS);
    if layers > limit {
        return Err(Error::Refused(format!(
            "{} has {layers} mappable layers ({} mappings); the exhaustive ceiling is limited \
             to {limit} layers. Use a smaller network or run `sweep` instead",
            net.descriptor.name,
            mapping_count(layers)
        )));
    }
    let analog = bench.analog_at(cfg.t_eval);
    (0..mapping_count(layers) as u64)
        .into_par_iter()
        .map(|mask| {
            let mapping = mapping_from_mask(&net.descriptor, mask);
            let r = retrain_until_converged(net, &mapping, bench, cfg, SESSION_EXHAUSTIVE + mask)?;
            let e = evaluate_mapping(
                &r.network,
                &mapping,
                &bench.data.val,
                &analog,
                cfg.eval_reps_final,
                cfg.t_eval,
                cfg.seed,
            )?;
            Ok(ParetoPoint {
                mapping,
                mac_ratio: e.mac_ratio,
                mean_accuracy: e.mean,
                std_accuracy: e.std,
                source: PointSource::Exhaustive,
            })
        })
        .collect()
}

/// One completed greedy run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub threshold: f64,
    pub seed: u64,
    pub mapping: MappingVector,
    pub mac_ratio: f64,
    /// Final validation accuracy over `eval_reps_final` instances.
    pub mean_acc: f64,
    pub std_acc: f64,
    pub baseline_accuracy: f64,
    pub retrain_sessions: usize,
    pub trace: MappingTrace,
}

impl RunSummary {
    pub fn drop(&self) -> f64 {
        self.baseline_accuracy - self.mean_acc
    }

    pub fn point(&self) -> ParetoPoint {
        ParetoPoint {
            mapping: self.mapping.clone(),
            mac_ratio: self.mac_ratio,
            mean_accuracy: self.mean_acc,
            std_accuracy: self.std_acc,
            source: PointSource::Greedy {
                threshold: self.threshold,
                seed: self.seed,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub threshold: f64,
    pub seed: u64,
    pub result: std::result::Result<RunSummary, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAggregate {
    pub threshold: f64,
    pub runs: usize,
    pub mac_ratio_mean: f64,
    pub mac_ratio_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    pub aggregates: Vec<ThresholdAggregate>,
}

impl SweepResult {
    pub fn successes(&self) -> impl Iterator<Item = &RunSummary> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.result.is_err()).count()
    }

    pub fn points(&self) -> Vec<ParetoPoint> {
        self.successes().map(RunSummary::point).collect()
    }
}

/// One greedy run plus its final evaluation.
pub fn greedy_run(net: &TrainedNetwork, bench: &Bench, cfg: &MapperConfig) -> Result<RunSummary> {
    let out = greedy_map(net, bench, cfg)?;
    let e = evaluate_mapping(
        &out.network,
        &out.mapping,
        &bench.data.val,
        &bench.analog_at(cfg.t_eval),
        cfg.eval_reps_final,
        cfg.t_eval,
        cfg.seed,
    )?;
    Ok(RunSummary {
        threshold: cfg.drop_threshold,
        seed: cfg.seed,
        mapping: out.mapping,
        mac_ratio: e.mac_ratio,
        mean_acc: e.mean,
        std_acc: e.std,
        baseline_accuracy: out.baseline_accuracy,
        retrain_sessions: out.retrain_sessions,
        trace: out.trace,
    })
}

/// Per-threshold mean and sample std over successful runs.
pub fn aggregate(runs: &[SweepRun]) -> Vec<ThresholdAggregate> {
    let mut thresholds: Vec<f64> = runs.iter().map(|r| r.threshold).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds
        .into_iter()
        .filter_map(|t| {
            let ok: Vec<&RunSummary> = runs
                .iter()
                .filter(|r| r.threshold == t)
                .filter_map(|r| r.result.as_ref().ok())
                .collect();
            if ok.is_empty() {
                return None;
            }
            let (mac_ratio_mean, mac_ratio_std) =
                mean_std(&ok.iter().map(|r| r.mac_ratio).collect::<Vec<_>>());
            let (acc_mean, acc_std) = mean_std(&ok.iter().map(|r| r.mean_acc).collect::<Vec<_>>());
            Some(ThresholdAggregate {
                threshold: t,
                runs: ok.len(),
                mac_ratio_mean,
                mac_ratio_std,
                acc_mean,
                acc_std,
            })
        })
        .collect()
}

/// One greedy run per `(threshold, seed)` on a pool of `jobs` workers
/// (0 = rayon default). Individual failures are recorded, not propagated.
/// Runs come back ordered by threshold, then seed.
pub fn sweep(
    net: &TrainedNetwork,
    bench: &Bench,
    base: &MapperConfig,
    thresholds: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepResult> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::Config("sweep needs at least one threshold".into()));
    }
    let mut keys: Vec<(f64, u64)> = thresholds
        .iter()
        .flat_map(|&t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.dedup();
    let configs: Vec<MapperConfig> = keys
        .iter()
        .map(|&(t, s)| MapperConfig {
            drop_threshold: t,
            seed: s,
            ..base.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| SweepRun {
                threshold: c.drop_threshold,
                seed: c.seed,
                result: greedy_run(net, bench, c).map_err(|e| e.to_string()),
            })
            .collect()
    });
    let aggregates = aggregate(&runs);
    Ok(SweepResult { runs, aggregates })
}

/// Session id of drift-study retraining for training time index `i`.
const SESSION_DRIFT: u64 = 1 << 48;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub train_t_eval: f64,
    pub eval_t: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Accuracy of the all-analog mapping over a grid of read-out times, once per
/// training `t_eval`. Each training time retrains from the float network.
pub fn drift_study(
    net: &TrainedNetwork,
    bench: &Bench,
    base: &MapperConfig,
    train_t_evals: &[f64],
    eval_times: &[f64],
) -> Result<Vec<DriftRow>> {
    base.validate()?;
    let mapping = MappingVector::all_analog(&net.descriptor);
    let mut rows = Vec::new();
    for (i, &tt) in train_t_evals.iter().enumerate() {
        let cfg = MapperConfig {
            t_eval: tt,
            ..base.clone()
        };
        let r = retrain_until_converged(net, &mapping, bench, &cfg, SESSION_DRIFT + i as u64)?;
        let analog = bench.analog_at(tt);
        for &t in eval_times {
            let e = evaluate_mapping(
                &r.network,
                &mapping,
                &bench.data.val,
                &analog,
                cfg.eval_reps_final,
                t,
                cfg.seed,
            )?;
            rows.push(DriftRow {
                train_t_eval: tt,
                eval_t: t,
                mean_acc: e.mean,
                std_acc: e.std,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(r: f64, a: f64) -> ParetoPoint {
        ParetoPoint {
            mapping: MappingVector::default(),
            mac_ratio: r,
            mean_accuracy: a,
            std_accuracy: 0.0,
            source: PointSource::Exhaustive,
        }
    }

    fn coords(ps: &[ParetoPoint]) -> Vec<(f64, f64)> {
        ps.iter().map(|p| (p.mac_ratio, p.mean_accuracy)).collect()
    }

    #[test]
    fn dominance_example() {
        let f = pareto_front(&[pt(0.2, 90.0), pt(0.5, 90.0), pt(0.5, 85.0)]).unwrap();
        assert_eq!(coords(&f), vec![(0.5, 90.0)]);
        assert_eq!(coords(&pareto_front(&[pt(0.3, 1.0)]).unwrap()), vec![(0.3, 1.0)]);
        assert!(pareto_front(&[]).is_err());
    }

    #[test]
    fn duplicates_survive() {
        let f = pareto_front(&[pt(0.5, 90.0), pt(0.5, 90.0), pt(0.1, 95.0)]).unwrap();
        assert_eq!(f.len(), 3);
    }

    #[test]
    fn elbow_examples() {
        let front = [pt(0.0, 100.0), pt(0.5, 99.5), pt(1.0, 80.0)];
        assert_eq!(coords(&[elbow(&front).unwrap()]), vec![(0.5, 99.5)]);
        let line = [pt(0.0, 100.0), pt(0.5, 95.0), pt(1.0, 90.0)];
        assert_eq!(elbow(&line).unwrap().mac_ratio, 0.0);
        let two = [pt(0.2, 99.0), pt(0.8, 90.0)];
        assert_eq!(elbow(&two).unwrap().mac_ratio, 0.8);
        assert!(elbow(&[]).is_err());
    }

    #[test]
    fn masks_cover_extremes() {
        let net = crate::presets::desk_mlp6();
        assert_eq!(mapping_from_mask(&net, 0).analog_count(), 0);
        assert_eq!(mapping_from_mask(&net, 63).analog_count(), 6);
        assert_eq!(mapping_count(10), 1024);
    }

    #[test]
    fn aggregate_skips_failures() {
        let ok = |t: f64, s: u64, r: f64, a: f64| SweepRun {
            threshold: t,
            seed: s,
            result: Ok(RunSummary {
                threshold: t,
                seed: s,
                mapping: MappingVector::default(),
                mac_ratio: r,
                mean_acc: a,
                std_acc: 0.0,
                baseline_accuracy: 95.0,
                retrain_sessions: 1,
                trace: MappingTrace::default(),
            }),
        };
        let runs = vec![
            ok(1.0, 0, 0.2, 90.0),
            ok(1.0, 1, 0.4, 92.0),
            SweepRun {
                threshold: 1.0,
                seed: 2,
                result: Err("boom".into()),
            },
        ];
        let agg = aggregate(&runs);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].runs, 2);
        assert!((agg[0].mac_ratio_mean - 0.3).abs() < 1e-15);
        assert!((agg[0].acc_std - 2f64.sqrt()).abs() < 1e-12);
    }
}
