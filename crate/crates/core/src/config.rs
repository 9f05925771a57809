//! Run configuration, its content hash and the per-command manifest.
//!
//! A config file is a JSON object; every block is optional and falls back to
//! its defaults, and unknown keys are rejected. The config hash is the SHA-256
//! of the canonical JSON serialisation of the fully resolved config (defaults
//! filled in, flag overrides applied, output location and worker count
//! ignored), so two runs with equal hashes saw identical settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analog::AnalogConfig;
use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::mapper::MapperConfig;
use crate::model::TrainConfig;
use crate::network::NetworkDescriptor;
use crate::perf::SystemParams;
use crate::presets;

pub const MANIFEST_FORMAT: &str = "aimc-map-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Built-in descriptor names accepted by `NetworkSource::Preset`.
pub const PRESETS: [&str; 6] = [
    "desk-cnn",
    "desk-mlp6",
    "desk-mlp10",
    "vgg16-cifar",
    "alexnet-cifar",
    "depthwise-cifar",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    Preset { name: String },
    File { path: PathBuf },
}

impl Default for NetworkSource {
    fn default() -> Self {
        NetworkSource::Preset {
            name: "desk-cnn".into(),
        }
    }
}

impl NetworkSource {
    pub fn resolve(&self) -> Result<NetworkDescriptor> {
        let net = match self {
            NetworkSource::Preset { name } => match name.as_str() {
                "desk-cnn" => presets::desk_cnn(),
                "desk-mlp6" => presets::desk_mlp6(),
                "desk-mlp10" => presets::desk_mlp10(),
                "vgg16-cifar" => presets::vgg16_cifar(10),
                "alexnet-cifar" => presets::alexnet_cifar(10),
                "depthwise-cifar" => presets::depthwise_cifar(10),
                other => {
                    return Err(Error::Config(format!(
                        "unknown network preset {other:?}; expected one of {PRESETS:?}"
                    )))
                }
            },
            NetworkSource::File { path } => NetworkDescriptor::load(path)?,
        };
        net.validate()?;
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub thresholds: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            thresholds: vec![0.5, 1.0, 3.0, 5.0, 10.0],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftStudyConfig {
    /// Read-out times after programming (s).
    pub eval_times: Vec<f64>,
    /// `t_eval` values used during hardware-aware training (s).
    pub train_t_evals: Vec<f64>,
}

impl Default for DriftStudyConfig {
    fn default() -> Self {
        DriftStudyConfig {
            eval_times: vec![0.0, 1.0, 60.0, 3600.0, 86_400.0],
            train_t_evals: vec![1.0, 3600.0, 86_400.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkSource,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub analog: AnalogConfig,
    pub mapper: MapperConfig,
    pub system: SystemParams,
    pub sweep: SweepConfig,
    pub drift_study: DriftStudyConfig,
    /// Mappable-layer limit for the exhaustive ceiling.
    pub ceiling_max_layers: usize,
    pub output_dir: PathBuf,
    /// Global seed: weight initialisation and pre-training.
    pub seed: u64,
    /// Worker threads for sweeps and ceilings (0 = one per core).
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkSource::default(),
            dataset: DatasetSpec::default(),
            train: TrainConfig::default(),
            analog: AnalogConfig::default(),
            mapper: MapperConfig::default(),
            system: SystemParams::default(),
            sweep: SweepConfig::default(),
            drift_study: DriftStudyConfig::default(),
            ceiling_max_layers: crate::explorer::MAX_EXHAUSTIVE_LAYERS,
            output_dir: PathBuf::from("out"),
            seed: 0,
            jobs: 0,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub t_eval: Option<f64>,
    pub sigma_w: Option<f64>,
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Load a config file, or the config embedded in a manifest (whose hash
    /// is re-verified).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if value.get("format").and_then(|f| f.as_str()) == Some(MANIFEST_FORMAT) {
            let m: Manifest = serde_json::from_value(value)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let actual = m.config.hash();
            if actual != m.config_hash {
                return Err(Error::Config(format!(
                    "{}: manifest hash {} does not match its config ({actual})",
                    path.display(),
                    m.config_hash
                )));
            }
            return Ok(m.config);
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(t) = o.threshold {
            self.mapper.drop_threshold = t;
        }
        if let Some(s) = o.seed {
            self.seed = s;
            self.mapper.seed = s;
        }
        if let Some(t) = o.t_eval {
            self.mapper.t_eval = t;
            self.analog.t_eval = t;
        }
        if let Some(s) = o.sigma_w {
            self.analog.sigma_w = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.resolve()?;
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        self.train.validate()?;
        self.analog.validate()?;
        self.mapper.validate()?;
        self.system.validate()?;
        if self.sweep.thresholds.is_empty() || self.sweep.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one threshold and one seed".into()));
        }
        if self.sweep.thresholds.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::Config("sweep thresholds must be finite and >= 0".into()));
        }
        let times = self.drift_study.eval_times.iter().chain(&self.drift_study.train_t_evals);
        if self.drift_study.eval_times.is_empty()
            || self.drift_study.train_t_evals.is_empty()
            || times.clone().any(|t| !(*t >= 0.0 && t.is_finite()))
        {
            return Err(Error::Config(
                "drift study needs non-empty, finite, non-negative time lists".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialisation. `output_dir` and `jobs`
    /// are left out: they change where and how fast results are produced,
    /// never the results themselves.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            output_dir: PathBuf::new(),
            jobs: 0,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serialises");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Output files relative to the output directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, outputs: Vec<String>) -> Self {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config.hash(),
            seed: config.seed,
            config: config.clone(),
            outputs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default_config() {
        let c = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_blocks_fill_in_defaults() {
        let c = RunConfig::from_json_str(
            r#"{"analog": {"sigma_w": 0.0}, "dataset": {"kind": "synthetic", "noise": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(c.analog.sigma_w, 0.0);
        assert_eq!(c.analog.sigma_out, AnalogConfig::default().sigma_out);
        match c.dataset {
            DatasetSpec::Synthetic(s) => assert_eq!(s.noise, 0.5),
            _ => panic!("expected synthetic"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            r#"{"bogus": 1}"#,
            r#"{"analog": {"sigma_q": 1}}"#,
            r#"{"dataset": {"kind": "synthetic", "colour": 1}}"#,
        ] {
            assert!(matches!(RunConfig::from_json_str(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.apply(&Overrides {
            sigma_w: Some(0.1),
            ..Default::default()
        });
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = RunConfig {
            output_dir: "elsewhere".into(),
            jobs: 3,
            ..a.clone()
        };
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_preset_is_a_config_error() {
        let c = RunConfig {
            network: NetworkSource::Preset { name: "resnet".into() },
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
