//! Deterministic synthetic image classification data and external dataset files.
//!
//! Each class owns a template built from an oriented sinusoidal grating and a
//! Gaussian blob. Samples are the template (scaled by `separation`, with a
//! random contrast and a small translation) plus white Gaussian noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist;
use crate::rng::stream;
use crate::tensor::Tensor;

/// Fraction of the training pool kept for training; the rest is validation.
pub const TRAIN_FRACTION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Training pool size before the 90/10 train/validation carve.
    pub train_pool: usize,
    pub test_samples: usize,
    /// `[height, width, channels]`.
    pub input: [usize; 3],
    pub separation: f64,
    pub noise: f64,
    /// Maximum translation in pixels along each axis.
    #[serde(default = "default_jitter")]
    pub jitter: usize,
    pub seed: u64,
}

fn default_jitter() -> usize {
    1
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 8,
            train_pool: 5000,
            test_samples: 500,
            input: [16, 16, 1],
            separation: 1.0,
            noise: 1.6,
            jitter: 1,
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    External { path: PathBuf, format_version: u32 },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// `[n, h, w, c]`.
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, index: &[usize]) -> Split {
        Split {
            x: self.x.gather_rows(index),
            y: index.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub input: [usize; 3],
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic(s) => generate_synthetic(s),
            DatasetSpec::External {
                path,
                format_version,
            } => load_external(path, *format_version),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "synthetic data needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.input.contains(&0) {
            return Err(Error::Config("input extents must be >= 1".into()));
        }
        if self.train_pool < 10 || self.test_samples == 0 {
            return Err(Error::Config(
                "need a training pool of at least 10 samples and a non-empty test split".into(),
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite())
            || !(self.noise >= 0.0 && self.noise.is_finite())
        {
            return Err(Error::Config("separation and noise must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn class_templates(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let [h, w, c] = spec.input;
    let mut rng = stream(spec.seed, "data", &[0]);
    (0..spec.classes)
        .map(|k| {
            let angle = PI * k as f64 / spec.classes as f64 + rng.gen_range(-0.1..0.1);
            let freq = 1.5 + (k % 3) as f64 * 0.75;
            let phase = rng.gen_range(0.0..2.0 * PI);
            let cy = rng.gen_range(0.25..0.75) * h as f64;
            let cx = rng.gen_range(0.25..0.75) * w as f64;
            let radius = 0.18 * h.min(w) as f64;
            let channel_gain: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.0)).collect();
            let mut t = Vec::with_capacity(h * w * c);
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 * angle.cos() + y as f64 * angle.sin()) / w as f64;
                    let grating = (2.0 * PI * freq * u + phase).sin();
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let blob = 1.5 * (-d2 / (2.0 * radius * radius)).exp();
                    for g in &channel_gain {
                        t.push(g * (0.7 * grating + blob));
                    }
                }
            }
            let rms = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
            t.iter_mut().for_each(|v| *v /= rms);
            t
        })
        .collect()
}

fn render_split(
    spec: &SyntheticSpec,
    templates: &[Vec<f64>],
    n: usize,
    split_id: u64,
) -> Split {
    let [h, w, c] = spec.input;
    let mut rng = stream(spec.seed, "data", &[split_id]);
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let j = spec.jitter as i64;
    let mut data = Vec::with_capacity(n * h * w * c);
    for &label in &labels {
        let t = &templates[label];
        let contrast = spec.separation * rng.gen_range(0.8..1.2);
        let dy = rng.gen_range(-j..=j);
        let dx = rng.gen_range(-j..=j);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sy, sx) = (y - dy, x - dx);
                let inside = sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64;
                for ch in 0..c {
                    let base = if inside {
                        t[((sy as usize) * w + sx as usize) * c + ch]
                    } else {
                        0.0
                    };
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(contrast * base + spec.noise * z);
                }
            }
        }
    }
    Split {
        x: Tensor::new(vec![n, h, w, c], data).expect("split shape"),
        y: labels,
    }
}

/// Generate train/validation/test splits. Identical specs give identical bytes.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let templates = class_templates(spec);
    let pool = render_split(spec, &templates, spec.train_pool, 1);
    let test = render_split(spec, &templates, spec.test_samples, 2);
    let (train, val) = carve_validation(&pool);
    Ok(Dataset {
        classes: spec.classes,
        input: spec.input,
        train,
        val,
        test,
    })
}

/// Split off the trailing 10% of a (pre-shuffled) pool as validation data.
pub fn carve_validation(pool: &Split) -> (Split, Split) {
    let n_train = ((pool.len() as f64) * TRAIN_FRACTION).round() as usize;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let val_idx: Vec<usize> = (n_train..pool.len()).collect();
    (pool.subset(&train_idx), pool.subset(&val_idx))
}

pub const EXTERNAL_FORMAT_VERSION: u32 = 1;

/// Write a dataset in the external container layout: tensors `train_x`,
/// `train_y`, `test_x`, `test_y` (labels stored as reals); validation data is
/// carved from `train_*` when loading.
pub fn save_external(path: &Path, train_pool: &Split, test: &Split, classes: usize) -> Result<()> {
    let ty = Tensor::vector(train_pool.y.iter().map(|&v| v as f64).collect());
    let sy = Tensor::vector(test.y.iter().map(|&v| v as f64).collect());
    persist::save(
        path,
        serde_json::json!({ "dataset_format_version": EXTERNAL_FORMAT_VERSION, "classes": classes }),
        &[
            ("train_x", &train_pool.x),
            ("train_y", &ty),
            ("test_x", &test.x),
            ("test_y", &sy),
        ],
    )
}

pub fn load_external(path: &Path, format_version: u32) -> Result<Dataset> {
    let fail = |reason: String| Error::Format {
        path: path.into(),
        reason,
    };
    if format_version != EXTERNAL_FORMAT_VERSION {
        return Err(fail(format!("unsupported dataset format version {format_version}")));
    }
    let (header, tensors) = persist::load(path)?;
    let classes = header.meta["classes"]
        .as_u64()
        .ok_or_else(|| fail("header meta lacks `classes`".into()))? as usize;
    let find = |name: &str| -> Result<Tensor> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| fail(format!("missing tensor {name}")))
    };
    let labels = |t: Tensor| -> Result<Vec<usize>> {
        t.data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && (v as usize) < classes {
                    Ok(v as usize)
                } else {
                    Err(fail(format!("invalid label {v}")))
                }
            })
            .collect()
    };
    let train_x = find("train_x")?;
    let test_x = find("test_x")?;
    let input = match train_x.shape() {
        [_, h, w, c] => [*h, *w, *c],
        other => return Err(fail(format!("train_x must be NHWC, got {other:?}"))),
    };
    let pool = Split {
        y: labels(find("train_y")?)?,
        x: train_x,
    };
    let test = Split {
        y: labels(find("test_y")?)?,
        x: test_x,
    };
    if pool.x.shape()[0] != pool.len() || test.x.shape()[0] != test.len() {
        return Err(fail("image and label counts differ".into()));
    }
    let (train, val) = carve_validation(&pool);
    Ok(Dataset {
        classes,
        input,
        train,
        val,
        test,
    })
}
