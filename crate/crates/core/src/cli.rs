//! Command-line front end: `train`, `map`, `sweep`, `ceiling`, `perf`,
//! `drift-study` and `report`.
//!
//! Every command resolves the run config (file + flags), writes its outputs
//! into the output directory and finishes with `<command>.manifest.json`
//! holding the resolved config, its hash and the seed. CSV and `.dat` files
//! start with a `# config_hash: <hex>` comment line; JSON outputs carry a
//! `config_hash` field and containers carry it in their header.
//!
//! Exit codes: 0 success, 1 configuration error, 2 partial failure (some sweep
//! runs failed), 3 total failure.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::baselines::{self, BaselineKind, BaselineOutcome, Sensitivity};
use crate::config::{Manifest, Overrides, RunConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::explorer::{self, ParetoPoint};
use crate::mapper::{evaluate_mapping, greedy_map, Bench};
use crate::model::{pretrain, TrainedNetwork};
use crate::network::{mac_ratio, MappingVector, NetworkDescriptor};
use crate::perf;

#[derive(Debug, Parser)]
#[command(name = "aimc-map", version, about = "Accuracy-constrained analog/digital layer mapping")]
pub struct Cli {
    /// JSON run config, or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Allowed accuracy drop in percentage points.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Drift time simulated in training and evaluation (s).
    #[arg(long = "t-eval", global = true)]
    pub t_eval: Option<f64>,
    /// Programming-noise standard deviation.
    #[arg(long = "sigma-w", global = true)]
    pub sigma_w: Option<f64>,
    /// Worker threads for sweeps and ceilings (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Float pre-training; writes the network container.
    Train,
    /// Map one network with one strategy.
    Map(MapArgs),
    /// Greedy mapping over every configured threshold and seed.
    Sweep(WeightsArg),
    /// Retrain every layer-wise mapping and compute the exact front.
    Ceiling(WeightsArg),
    /// Latency/energy estimate of a mapping.
    Perf(PerfArgs),
    /// All-analog accuracy over read-out times and training drift times.
    DriftStudy(WeightsArg),
    /// Check and summarise the outputs of earlier commands.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct WeightsArg {
    /// Float network container from `train` (otherwise pre-train now).
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long, value_enum, default_value_t = Strategy::Greedy)]
    pub strategy: Strategy,
    /// Sensitivity measure for the harmonica strategies.
    #[arg(long, value_enum, default_value_t = SensitivityArg::Ablation)]
    pub sensitivity: SensitivityArg,
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerfArgs {
    /// Mapping JSON written by `map`; takes precedence over `--strategy`.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PerfStrategy::AllAnalog)]
    pub strategy: PerfStrategy,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directories to aggregate (default: the configured output directory).
    pub dirs: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Greedy,
    AllAnalog,
    AllDigital,
    Flms,
    FlmsHwa,
    Harmonica,
    HarmonicaT,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PerfStrategy {
    AllAnalog,
    AllDigital,
    Flms,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SensitivityArg {
    Ablation,
    Fisher,
}

/// How a command finished when it did not return an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success,
    Partial,
    Failed,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::Partial => 2,
            Status::Failed => 3,
        }
    }
}

/// Exit code for an error: configuration and input problems are 1, the rest 3.
pub fn error_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Network(_) | Error::Refused(_) | Error::Format { .. } => 1,
        _ => 3,
    }
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    ExitCode::from(run_args(std::env::args_os()))
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        threshold: cli.threshold,
        seed: cli.seed,
        t_eval: cli.t_eval,
        sigma_w: cli.sigma_w,
        jobs: cli.jobs,
        output_dir: cli.output.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Status> {
    let cfg = resolve_config(cli)?;
    let mut out = Outputs::create(&cfg)?;
    let status = match &cli.command {
        Command::Train => cmd_train(&cfg, &mut out)?,
        Command::Map(a) => cmd_map(&cfg, a, &mut out)?,
        Command::Sweep(a) => cmd_sweep(&cfg, a.weights.as_deref(), &mut out)?,
        Command::Ceiling(a) => cmd_ceiling(&cfg, a.weights.as_deref(), &mut out)?,
        Command::Perf(a) => cmd_perf(&cfg, a, &mut out)?,
        Command::DriftStudy(a) => cmd_drift(&cfg, a.weights.as_deref(), &mut out)?,
        Command::Report(a) => return cmd_report(&cfg, a),
    };
    out.finish(command_name(&cli.command), &cfg)?;
    Ok(status)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train => "train",
        Command::Map(_) => "map",
        Command::Sweep(_) => "sweep",
        Command::Ceiling(_) => "ceiling",
        Command::Perf(_) => "perf",
        Command::DriftStudy(_) => "drift-study",
        Command::Report(_) => "report",
    }
}

/// Single writer for one output directory; remembers what it wrote.
struct Outputs {
    dir: PathBuf,
    hash: String,
    written: Vec<String>,
}

impl Outputs {
    fn create(cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        Ok(Outputs {
            dir: cfg.output_dir.clone(),
            hash: cfg.hash(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert("config_hash".into(), json!(self.hash));
        }
        let body = serde_json::to_string_pretty(&v)? + "\n";
        self.text(name, &body)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut buf = format!("# config_hash: {}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| Error::io(name, e))?;
        }
        let p = self.path(name);
        fs::write(&p, buf).map_err(|e| Error::io(&p, e))
    }

    /// Two-column gnuplot data with a comment header.
    fn dat(&mut self, name: &str, columns: (&str, &str), rows: &[(f64, f64)]) -> Result<()> {
        let mut s = format!("# config_hash: {}\n# {} {}\n", self.hash, columns.0, columns.1);
        for (x, y) in rows {
            writeln!(s, "{x} {y}").expect("string write");
        }
        self.text(name, &s)
    }

    fn network(&mut self, name: &str, net: &TrainedNetwork, extra: serde_json::Value) -> Result<()> {
        let p = self.path(name);
        let mut meta = json!({ "config_hash": self.hash });
        if let (Some(m), Some(e)) = (meta.as_object_mut(), extra.as_object()) {
            m.extend(e.clone());
        }
        net.save(&p, meta)
    }

    fn finish(self, command: &str, cfg: &RunConfig) -> Result<()> {
        let manifest = Manifest::new(command, cfg, self.written);
        let p = self.dir.join(format!("{command}.manifest.json"));
        let body = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    }
}

fn descriptor(cfg: &RunConfig) -> Result<NetworkDescriptor> {
    cfg.network.resolve()
}

fn dataset(cfg: &RunConfig, net: &NetworkDescriptor) -> Result<Dataset> {
    let data = cfg.dataset.load()?;
    if data.input != net.input || data.classes != net.classes {
        return Err(Error::Config(format!(
            "dataset provides {:?} inputs and {} classes but {} expects {:?} and {}",
            data.input, data.classes, net.name, net.input, net.classes
        )));
    }
    Ok(data)
}

fn float_network(
    cfg: &RunConfig,
    desc: &NetworkDescriptor,
    data: &Dataset,
    weights: Option<&Path>,
) -> Result<TrainedNetwork> {
    match weights {
        Some(p) => {
            let (net, _) = TrainedNetwork::load(p)?;
            if &net.descriptor != desc {
                return Err(Error::Config(format!(
                    "{} holds network {:?}, the config describes {:?}",
                    p.display(),
                    net.descriptor.name,
                    desc.name
                )));
            }
            Ok(net)
        }
        None => Ok(pretrain(desc, &data.train, &cfg.train, cfg.seed)?.0),
    }
}

fn bench<'a>(cfg: &'a RunConfig, data: &'a Dataset) -> Bench<'a> {
    Bench {
        data,
        train: &cfg.train,
        analog: &cfg.analog,
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn cmd_train(cfg: &RunConfig, out: &mut Outputs) -> Result<Status> {
    let desc = descriptor(cfg)?;
    let data = dataset(cfg, &desc)?;
    let (net, losses) = pretrain(&desc, &data.train, &cfg.train, cfg.seed)?;
    let val = net.accuracy_digital(&data.val)?;
    let test = net.accuracy_digital(&data.test)?;
    out.network("float.net", &net, json!({ "seed": cfg.seed, "val_accuracy": val }))?;
    out.json(
        "train.json",
        &json!({
            "network": desc.name,
            "seed": cfg.seed,
            "epochs": losses.len(),
            "losses": losses,
            "val_accuracy": val,
            "test_accuracy": test,
        }),
    )?;
    let curve: Vec<(f64, f64)> = losses.iter().enumerate().map(|(e, l)| (e as f64, *l)).collect();
    out.dat("train_loss.dat", ("epoch", "loss"), &curve)?;
    println!("{}: val {val:.2}%, test {test:.2}% after {} epochs", desc.name, losses.len());
    Ok(Status::Success)
}

fn strategy_kind(s: Strategy) -> Option<BaselineKind> {
    match s {
        Strategy::Greedy => None,
        Strategy::AllAnalog => Some(BaselineKind::AllAnalog),
        Strategy::AllDigital => Some(BaselineKind::AllDigital),
        Strategy::Flms => Some(BaselineKind::Flms { float_input: true }),
        Strategy::FlmsHwa => Some(BaselineKind::Flms { float_input: false }),
        Strategy::Harmonica => Some(BaselineKind::Harmonica { retrain: false }),
        Strategy::HarmonicaT => Some(BaselineKind::Harmonica { retrain: true }),
    }
}

fn cmd_map(cfg: &RunConfig, a: &MapArgs, out: &mut Outputs) -> Result<Status> {
    let desc = descriptor(cfg)?;
    let data = dataset(cfg, &desc)?;
    let float = float_network(cfg, &desc, &data, a.weights.as_deref())?;
    let b = bench(cfg, &data);
    let m = &cfg.mapper;
    let baseline_acc = float.accuracy_digital(&data.val)?;
    let sensitivity = match a.sensitivity {
        SensitivityArg::Ablation => Sensitivity::Ablation,
        SensitivityArg::Fisher => Sensitivity::Fisher,
    };
    let (name, mapping, network, trace, sessions) = match strategy_kind(a.strategy) {
        None => {
            let o = greedy_map(&float, &b, m)?;
            ("greedy".to_string(), o.mapping, o.network, o.trace, o.retrain_sessions)
        }
        Some(kind) => {
            let o: BaselineOutcome = match kind {
                BaselineKind::AllDigital => baselines::all_digital_map(&float),
                BaselineKind::AllAnalog => baselines::all_analog_map(&float, &b, m)?,
                BaselineKind::Flms { float_input } => baselines::flms_map(&float, &b, m, float_input)?,
                BaselineKind::Harmonica { retrain } => {
                    let hwa = baselines::all_analog_map(&float, &b, m)?;
                    let mut o =
                        baselines::harmonica_map(&hwa.network, baseline_acc, &b, m, retrain, sensitivity)?;
                    o.retrain_sessions += hwa.retrain_sessions;
                    o
                }
            };
            (kind.to_string(), o.mapping, o.network, o.trace, o.retrain_sessions)
        }
    };
    let analog = b.analog_at(m.t_eval);
    let val = evaluate_mapping(&network, &mapping, &data.val, &analog, m.eval_reps_final, m.t_eval, m.seed)?;
    let test = evaluate_mapping(&network, &mapping, &data.test, &analog, m.eval_reps_final, m.t_eval, m.seed)?;
    out.json(
        "mapping.json",
        &json!({
            "strategy": name,
            "network": desc.name,
            "seed": m.seed,
            "drop_threshold": m.drop_threshold,
            "t_eval": m.t_eval,
            "mapping": mapping,
            "code": mapping.code(),
            "mac_ratio": mac_ratio(&desc, &mapping)?,
            "baseline_accuracy": baseline_acc,
            "retrain_sessions": sessions,
            "validation": val,
            "test": test,
        }),
    )?;
    out.csv("trace.csv", &trace.entries)?;
    out.network("mapped.net", &network, json!({ "mapping": mapping }))?;
    println!(
        "{name}: {} mac_ratio {:.3}, val {:.2} ± {:.2} (float {baseline_acc:.2})",
        mapping.code(),
        val.mac_ratio,
        val.mean,
        val.std
    );
    Ok(Status::Success)
}

#[derive(Serialize)]
struct SweepRow {
    threshold: f64,
    seed: u64,
    mac_ratio: f64,
    mean_acc: f64,
    std_acc: f64,
}

#[derive(Serialize)]
struct SweepTraceRow {
    threshold: f64,
    seed: u64,
    layer_id: usize,
    macs: u64,
    decision: String,
    mean_acc: Option<f64>,
    std_acc: Option<f64>,
    epochs: usize,
}

fn front_summary(points: &[ParetoPoint]) -> Result<(Vec<ParetoPoint>, ParetoPoint)> {
    let front = explorer::pareto_front(points)?;
    let knee = explorer::elbow(&front)?;
    Ok((front, knee))
}

fn xy(points: &[ParetoPoint]) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.mac_ratio, p.mean_accuracy)).collect()
}

fn cmd_sweep(cfg: &RunConfig, weights: Option<&Path>, out: &mut Outputs) -> Result<Status> {
    let desc = descriptor(cfg)?;
    let data = dataset(cfg, &desc)?;
    let float = float_network(cfg, &desc, &data, weights)?;
    let b = bench(cfg, &data);
    let result = explorer::sweep(&float, &b, &cfg.mapper, &cfg.sweep.thresholds, &cfg.sweep.seeds, cfg.jobs)?;
    let rows: Vec<SweepRow> = result
        .successes()
        .map(|r| SweepRow {
            threshold: r.threshold,
            seed: r.seed,
            mac_ratio: r.mac_ratio,
            mean_acc: r.mean_acc,
            std_acc: r.std_acc,
        })
        .collect();
    out.csv("sweep.csv", &rows)?;
    let traces: Vec<SweepTraceRow> = result
        .successes()
        .flat_map(|r| {
            r.trace.entries.iter().map(move |e| SweepTraceRow {
                threshold: r.threshold,
                seed: r.seed,
                layer_id: e.layer_id,
                macs: e.macs,
                decision: e.decision.to_string(),
                mean_acc: e.mean_acc,
                std_acc: e.std_acc,
                epochs: e.epochs,
            })
        })
        .collect();
    out.csv("sweep_traces.csv", &traces)?;
    let failures: Vec<_> = result
        .runs
        .iter()
        .filter_map(|r| r.result.as_ref().err().map(|e| json!({"threshold": r.threshold, "seed": r.seed, "error": e})))
        .collect();
    let points = result.points();
    let summary = if points.is_empty() {
        json!({ "aggregates": result.aggregates, "failures": failures })
    } else {
        let (front, knee) = front_summary(&points)?;
        out.dat("sweep_points.dat", ("mac_ratio", "mean_acc"), &xy(&points))?;
        out.dat("sweep_front.dat", ("mac_ratio", "mean_acc"), &xy(&front))?;
        let agg: Vec<(f64, f64)> = result
            .aggregates
            .iter()
            .map(|a| (a.mac_ratio_mean, a.acc_mean))
            .collect();
        out.dat("sweep_aggregates.dat", ("mac_ratio_mean", "acc_mean"), &agg)?;
        json!({
            "baseline_accuracy": result.successes().next().map(|r| r.baseline_accuracy),
            "aggregates": result.aggregates,
            "front": front,
            "elbow": knee,
            "failures": failures,
        })
    };
    out.json("sweep_front.json", &summary)?;
    for a in &result.aggregates {
        println!(
            "threshold {:>5}: mac_ratio {:.3} ± {:.3}, acc {:.2} ± {:.2} ({} runs)",
            a.threshold, a.mac_ratio_mean, a.mac_ratio_std, a.acc_mean, a.acc_std, a.runs
        );
    }
    let failed = result.failures();
    Ok(if failed == 0 {
        Status::Success
    } else if failed == result.runs.len() {
        eprintln!("all {failed} sweep runs failed");
        Status::Failed
    } else {
        eprintln!("{failed} of {} sweep runs failed", result.runs.len());
        Status::Partial
    })
}

#[derive(Serialize)]
struct CeilingRow {
    mapping: String,
    mac_ratio: f64,
    mean_acc: f64,
    std_acc: f64,
}

fn cmd_ceiling(cfg: &RunConfig, weights: Option<&Path>, out: &mut Outputs) -> Result<Status> {
    let desc = descriptor(cfg)?;
    let layers = desc.mappable_count();
    if layers > cfg.ceiling_max_layers.min(explorer::MAX_EXHAUSTIVE_LAYERS) {
        // refuse before spending time on data and pre-training
        return Err(Error::Refused(format!(
            "{} has {layers} mappable layers; the exhaustive ceiling is limited to {}",
            desc.name,
            cfg.ceiling_max_layers.min(explorer::MAX_EXHAUSTIVE_LAYERS)
        )));
    }
    let data = dataset(cfg, &desc)?;
    let float = float_network(cfg, &desc, &data, weights)?;
    let b = bench(cfg, &data);
    let points = pool(cfg.jobs)?
        .install(|| explorer::exhaustive_ceiling(&float, &b, &cfg.mapper, cfg.ceiling_max_layers))?;
    let rows: Vec<CeilingRow> = points
        .iter()
        .map(|p| CeilingRow {
            mapping: p.mapping.code(),
            mac_ratio: p.mac_ratio,
            mean_acc: p.mean_accuracy,
            std_acc: p.std_accuracy,
        })
        .collect();
    out.csv("ceiling.csv", &rows)?;
    let (front, knee) = front_summary(&points)?;
    out.dat("ceiling_points.dat", ("mac_ratio", "mean_acc"), &xy(&points))?;
    out.dat("ceiling_front.dat", ("mac_ratio", "mean_acc"), &xy(&front))?;
    out.json(
        "ceiling_front.json",
        &json!({
            "network": desc.name,
            "mappings": points.len(),
            "baseline_accuracy": float.accuracy_digital(&data.val)?,
            "front": front,
            "elbow": knee,
        }),
    )?;
    println!("{} mappings evaluated, {} on the front", points.len(), front.len());
    Ok(Status::Success)
}

#[derive(Serialize)]
struct PerfRow {
    layer_id: usize,
    domain: String,
    macs: u64,
    digital_latency_s: f64,
    analog_latency_s: f64,
    latency_s: f64,
    dynamic_energy_j: f64,
}

fn cmd_perf(cfg: &RunConfig, a: &PerfArgs, out: &mut Outputs) -> Result<Status> {
    let desc = descriptor(cfg)?;
    let mapping = match &a.mapping {
        Some(p) => load_mapping(p, &desc)?,
        None => match a.strategy {
            PerfStrategy::AllAnalog => MappingVector::all_analog(&desc),
            PerfStrategy::AllDigital => MappingVector::all_digital(&desc),
            PerfStrategy::Flms => baselines::flms_mapping(&desc),
        },
    };
    let report = perf::estimate(&desc, &mapping, &cfg.system)?;
    out.json("perf.json", &report)?;
    let rows: Vec<PerfRow> = report
        .layers
        .iter()
        .map(|l| PerfRow {
            layer_id: l.layer_id,
            domain: l.domain.to_string(),
            macs: l.macs,
            digital_latency_s: l.digital_latency_s,
            analog_latency_s: l.analog_latency_s,
            latency_s: l.latency_s,
            dynamic_energy_j: l.dynamic_energy_j,
        })
        .collect();
    out.csv("perf.csv", &rows)?;
    let per_layer: Vec<(f64, f64)> = report
        .layers
        .iter()
        .map(|l| {
            let s = if l.latency_s > 0.0 { l.digital_latency_s / l.latency_s } else { 1.0 };
            (l.layer_id as f64, s)
        })
        .collect();
    out.dat("perf_layers.dat", ("layer_id", "speedup"), &per_layer)?;
    println!(
        "{} {}: speedup {:.2}x, energy gain {:.2}x",
        desc.name, report.mapping, report.speedup, report.energy_gain
    );
    Ok(Status::Success)
}

fn load_mapping(path: &Path, desc: &NetworkDescriptor) -> Result<MappingVector> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let m: MappingVector = serde_json::from_value(v.get("mapping").cloned().unwrap_or(v))
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    m.validate(desc)?;
    Ok(m)
}

#[derive(Serialize)]
struct DriftCsvRow {
    train_t_eval: f64,
    eval_t: f64,
    mean_acc: f64,
    std_acc: f64,
}

fn cmd_drift(cfg: &RunConfig, weights: Option<&Path>, out: &mut Outputs) -> Result<Status> {
    let desc = descriptor(cfg)?;
    let data = dataset(cfg, &desc)?;
    let float = float_network(cfg, &desc, &data, weights)?;
    let b = bench(cfg, &data);
    let rows = explorer::drift_study(
        &float,
        &b,
        &cfg.mapper,
        &cfg.drift_study.train_t_evals,
        &cfg.drift_study.eval_times,
    )?;
    let csv_rows: Vec<DriftCsvRow> = rows
        .iter()
        .map(|r| DriftCsvRow {
            train_t_eval: r.train_t_eval,
            eval_t: r.eval_t,
            mean_acc: r.mean_acc,
            std_acc: r.std_acc,
        })
        .collect();
    out.csv("drift.csv", &csv_rows)?;
    for &tt in &cfg.drift_study.train_t_evals {
        let series: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.train_t_eval == tt)
            .map(|r| (r.eval_t, r.mean_acc))
            .collect();
        out.dat(&format!("drift_train_{tt}.dat"), ("eval_t", "mean_acc"), &series)?;
    }
    out.json(
        "drift.json",
        &json!({
            "network": desc.name,
            "float_accuracy": float.accuracy_digital(&data.val)?,
            "rows": rows,
        }),
    )?;
    for r in &rows {
        println!(
            "train t_eval {:>8} s, read at {:>8} s: {:.2} ± {:.2}",
            r.train_t_eval, r.eval_t, r.mean_acc, r.std_acc
        );
    }
    Ok(Status::Success)
}

/// First `# config_hash: ...` comment or `config_hash` JSON field of a file.
fn embedded_hash(path: &Path) -> Result<Option<String>> {
    let name = path.to_string_lossy();
    if name.ends_with(".net") {
        let (header, _) = crate::persist::load(path)?;
        let meta = &header.meta["extra"];
        return Ok(meta["config_hash"].as_str().map(str::to_string));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if name.ends_with(".json") {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        return Ok(v["config_hash"].as_str().map(str::to_string));
    }
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash: "))
        .map(|h| h.trim().to_string()))
}

fn cmd_report(cfg: &RunConfig, a: &ReportArgs) -> Result<Status> {
    let dirs = if a.dirs.is_empty() {
        vec![cfg.output_dir.clone()]
    } else {
        a.dirs.clone()
    };
    let mut manifests: Vec<(PathBuf, Manifest)> = Vec::new();
    for d in &dirs {
        let entries = fs::read_dir(d).map_err(|e| Error::io(d, e))?;
        let mut names: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
            .collect();
        names.sort();
        for p in names {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            manifests.push((p, m));
        }
    }
    let Some((_, first)) = manifests.first() else {
        return Err(Error::Config(format!("no manifests found in {dirs:?}")));
    };
    let hash = first.config_hash.clone();
    let mut commands = Vec::new();
    for (path, m) in &manifests {
        if m.config.hash() != m.config_hash {
            return Err(Error::Config(format!(
                "{}: config does not match its recorded hash",
                path.display()
            )));
        }
        if m.config_hash != hash {
            return Err(Error::Config(format!(
                "config hash mismatch: {} has {}, expected {hash}",
                path.display(),
                m.config_hash
            )));
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        for o in &m.outputs {
            let f = dir.join(o);
            match embedded_hash(&f)? {
                Some(h) if h == hash => {}
                found => {
                    return Err(Error::Config(format!(
                        "config hash mismatch in {}: found {found:?}, expected {hash}",
                        f.display()
                    )))
                }
            }
        }
        commands.push(json!({ "command": m.command, "outputs": m.outputs }));
    }
    let summary = json!({
        "config_hash": hash,
        "seed": first.seed,
        "network": first.config.network,
        "commands": commands,
    });
    let target = dirs[0].join("report.json");
    let body = serde_json::to_string_pretty(&summary)? + "\n";
    let mut f = fs::File::create(&target).map_err(|e| Error::io(&target, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(&target, e))?;
    println!("{} manifests consistent (config hash {hash})", manifests.len());
    Ok(Status::Success)
}
