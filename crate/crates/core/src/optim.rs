//! SGD with momentum and an optional cosine-annealed learning rate.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamId;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    CosineAnnealing {
        t_max: usize,
        #[serde(default)]
        eta_min: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    /// Epochs of linear ramp-up at the start of each session; epoch `e < n`
    /// runs at `(e + 1) / (n + 1)` of the scheduled rate.
    #[serde(default)]
    pub warmup_epochs: usize,
}

impl OptimizerConfig {
    /// Default settings for digital parameters.
    pub fn digital_default() -> Self {
        OptimizerConfig {
            learning_rate: 0.057,
            momentum: 0.867,
            weight_decay: 0.0,
            schedule: Schedule::CosineAnnealing {
                t_max: 50,
                eta_min: 0.0,
            },
            batch_size: 64,
            warmup_epochs: 1,
        }
    }

    /// Default settings for analog (crossbar) parameters.
    pub fn analog_default() -> Self {
        OptimizerConfig {
            learning_rate: 0.024,
            momentum: 0.775,
            warmup_epochs: 0,
            ..OptimizerConfig::digital_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Schedule::CosineAnnealing { t_max, eta_min } = self.schedule {
            if t_max == 0 {
                return Err(Error::Config("cosine t_max must be >= 1".into()));
            }
            if !(eta_min >= 0.0 && eta_min <= self.learning_rate) {
                return Err(Error::Config(format!(
                    "eta_min must lie in [0, learning_rate], got {eta_min}"
                )));
            }
        }
        Ok(())
    }

    /// Same settings with the cosine horizon replaced by `t_max`.
    pub fn with_horizon(&self, t_max: usize) -> Self {
        let mut out = self.clone();
        if let Schedule::CosineAnnealing { eta_min, .. } = self.schedule {
            out.schedule = Schedule::CosineAnnealing {
                t_max: t_max.max(1),
                eta_min,
            };
        }
        out
    }

    /// Learning rate for `epoch` (0-based). Past `t_max` the rate stays at `eta_min`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let ramp = if epoch < self.warmup_epochs {
            (epoch + 1) as f64 / (self.warmup_epochs + 1) as f64
        } else {
            1.0
        };
        ramp * match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::CosineAnnealing { t_max, eta_min } => {
                let t = epoch.min(t_max) as f64;
                eta_min + (self.learning_rate - eta_min) * 0.5 * (1.0 + (PI * t / t_max as f64).cos())
            }
        }
    }
}

/// One momentum-SGD update of a single parameter tensor:
/// `v <- mu * v + g + lambda * w`, `w <- w - lr(epoch) * v`.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    config: &OptimizerConfig,
    epoch: usize,
) -> Result<()> {
    param.check_same_shape(grad)?;
    param.check_same_shape(velocity)?;
    let lr = config.lr_at(epoch);
    let (mu, wd) = (config.momentum, config.weight_decay);
    for ((w, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = mu * *v + g + wd * *w;
        *w -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers keyed by parameter id.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: OptimizerConfig,
    velocity: HashMap<ParamId, Tensor>,
}

impl Sgd {
    pub fn new(config: OptimizerConfig) -> Self {
        Sgd {
            config,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, id: ParamId, param: &mut Tensor, grad: &Tensor, epoch: usize) -> Result<()> {
        let v = self
            .velocity
            .entry(id)
            .or_insert_with(|| Tensor::zeros(param.shape()));
        sgd_step(param, grad, v, &self.config, epoch)
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }
}
