//! Crossbar matrix-vector products with programming noise, read noise,
//! converter clipping/quantisation and per-device conductance drift.
//!
//! A layer's unfolded weight matrix `W [rows, cols]` is stored as unit-scaled
//! conductances `U` with one digital scale per output column, `W = U * diag(alpha)`.
//! One forward computes, per tile `t` covering an even share of the rows,
//!
//! ```text
//! s_t = sum_{j in t} (u_ij (1 + sigma_w xi_ij) d(nu_ij, t)) (dac(x_j) + sigma_inp xi_j) + sigma_out xi_i
//! y_i = alpha_i * b_in * sum_t adc(s_t) + beta_i
//! ```
//!
//! where `b_in` is the DAC input range and `d` is the drift factor.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{even_row_split, TileGeometry};
use crate::tensor::Tensor;

/// Floor applied to all-zero columns when extracting channel scales.
pub const SCALE_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClipBound {
    Unbounded,
    Fixed { bound: f64 },
    /// `k` times the root-mean-square of the values seen in the current batch.
    Dynamic { k: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Levels {
    Continuous,
    Discrete(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Converter {
    pub clip: ClipBound,
    pub levels: Levels,
}

impl Converter {
    pub const IDEAL: Converter = Converter {
        clip: ClipBound::Unbounded,
        levels: Levels::Continuous,
    };

    pub fn dynamic(k: f64) -> Self {
        Converter {
            clip: ClipBound::Dynamic { k },
            levels: Levels::Continuous,
        }
    }

    fn validate(&self, which: &str) -> Result<()> {
        match self.clip {
            ClipBound::Fixed { bound } if !(bound > 0.0 && bound.is_finite()) => {
                return Err(Error::Config(format!("{which} clip bound must be > 0")))
            }
            ClipBound::Dynamic { k } if !(k > 0.0 && k.is_finite()) => {
                return Err(Error::Config(format!("{which} dynamic range factor must be > 0")))
            }
            _ => {}
        }
        if let Levels::Discrete(n) = self.levels {
            if n < 2 {
                return Err(Error::Config(format!("{which} needs at least 2 levels")));
            }
            if self.clip == ClipBound::Unbounded {
                return Err(Error::Config(format!(
                    "{which} quantisation needs a finite clip bound"
                )));
            }
        }
        Ok(())
    }

    /// Range for a batch of values (`None` when unbounded).
    fn range(&self, values: impl Iterator<Item = f64>) -> Option<f64> {
        match self.clip {
            ClipBound::Unbounded => None,
            ClipBound::Fixed { bound } => Some(bound),
            ClipBound::Dynamic { k } => {
                let (mut sq, mut n) = (0.0, 0usize);
                for v in values {
                    sq += v * v;
                    n += 1;
                }
                let rms = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };
                Some(if rms > 0.0 { k * rms } else { 1.0 })
            }
        }
    }

    /// Clip to `[-1, 1]` and quantise a value already divided by its range.
    fn apply_normalized(&self, v: f64) -> f64 {
        let c = v.clamp(-1.0, 1.0);
        match self.levels {
            Levels::Continuous => c,
            Levels::Discrete(n) => {
                let step = 2.0 / (n - 1) as f64;
                ((c + 1.0) / step).round() * step - 1.0
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftModel {
    None,
    PowerLaw { nu_mean: f64, nu_std: f64, t_ref: f64 },
}

impl Default for DriftModel {
    fn default() -> Self {
        DriftModel::PowerLaw {
            nu_mean: 0.06,
            nu_std: 0.02,
            t_ref: 20.0,
        }
    }
}

impl DriftModel {
    fn validate(&self) -> Result<()> {
        if let DriftModel::PowerLaw {
            nu_mean,
            nu_std,
            t_ref,
        } = *self
        {
            if !(t_ref > 0.0) || !(nu_std >= 0.0) || !nu_mean.is_finite() {
                return Err(Error::Config(
                    "power-law drift needs t_ref > 0, nu_std >= 0 and finite nu_mean".into(),
                ));
            }
        }
        Ok(())
    }

    /// One exponent per device, clipped at zero.
    pub fn sample_exponents<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            DriftModel::None => vec![0.0; n],
            DriftModel::PowerLaw { nu_mean, nu_std, .. } => (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (nu_mean + nu_std * z).max(0.0)
                })
                .collect(),
        }
    }

    /// `ln(max(t, t_ref) / t_ref)`; the drift factor of exponent `nu` is `exp(-nu * log_ratio)`.
    pub fn log_ratio(&self, t: f64) -> f64 {
        match *self {
            DriftModel::None => 0.0,
            DriftModel::PowerLaw { t_ref, .. } => (t.max(t_ref) / t_ref).ln(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalogConfig {
    pub sigma_w: f64,
    pub sigma_inp: f64,
    pub sigma_out: f64,
    pub dac: Converter,
    pub adc: Converter,
    #[serde(default)]
    pub tile: TileGeometry,
    /// Drift time simulated during hardware-aware training and evaluation (s).
    pub t_eval: f64,
    #[serde(default)]
    pub drift: DriftModel,
    /// Rescale each drifted layer by one scalar estimated from an all-ones probe.
    #[serde(default)]
    pub drift_compensation: bool,
}

impl Default for AnalogConfig {
    fn default() -> Self {
        AnalogConfig {
            sigma_w: 0.08,
            sigma_inp: 0.0,
            sigma_out: 0.02,
            dac: Converter::dynamic(3.0),
            adc: Converter::dynamic(3.0),
            tile: TileGeometry::default(),
            t_eval: 86_400.0,
            drift: DriftModel::default(),
            drift_compensation: false,
        }
    }
}

impl AnalogConfig {
    /// No noise, ideal converters, no drift: the exact digital limit.
    pub fn noiseless() -> Self {
        AnalogConfig {
            sigma_w: 0.0,
            sigma_inp: 0.0,
            sigma_out: 0.0,
            dac: Converter::IDEAL,
            adc: Converter::IDEAL,
            tile: TileGeometry::default(),
            t_eval: 0.0,
            drift: DriftModel::None,
            drift_compensation: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_w", self.sigma_w),
            ("sigma_inp", self.sigma_inp),
            ("sigma_out", self.sigma_out),
            ("t_eval", self.t_eval),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        self.dac.validate("dac")?;
        self.adc.validate("adc")?;
        self.tile.validate()?;
        self.drift.validate()
    }
}

/// Split a weight matrix into unit-range columns and per-column scales.
pub fn scale_channels(weights: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (rows, cols) = weights.dims2()?;
    let mut scales = vec![0.0f64; cols];
    for row in weights.data().chunks(cols) {
        for (s, v) in scales.iter_mut().zip(row) {
            *s = s.max(v.abs());
        }
    }
    for s in scales.iter_mut() {
        *s = s.max(SCALE_EPSILON);
    }
    let mut unit = weights.clone();
    for row in unit.data_mut().chunks_mut(cols) {
        for (v, s) in row.iter_mut().zip(&scales) {
            *v /= s;
        }
    }
    debug_assert_eq!(unit.len(), rows * cols);
    Ok((unit, scales))
}

/// A programmed crossbar layer. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalogLayerState {
    pub programmed_weights: Tensor,
    pub channel_scales: Vec<f64>,
    pub digital_bias: Tensor,
    pub program_time: f64,
    pub drift_exponents: Tensor,
    pub drift: DriftModel,
}

/// Write `weights` to devices: scale per channel, perturb each unit weight by
/// `(1 + sigma_w * xi)` and draw one drift exponent per device.
pub fn program<R: Rng>(
    weights: &Tensor,
    bias: &Tensor,
    cfg: &AnalogConfig,
    rng: &mut R,
) -> Result<AnalogLayerState> {
    let (unit, scales) = scale_channels(weights)?;
    if bias.len() != scales.len() {
        return Err(Error::Shape(format!(
            "bias of length {} for {} channels",
            bias.len(),
            scales.len()
        )));
    }
    let mut programmed = unit;
    if cfg.sigma_w > 0.0 {
        for v in programmed.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v *= 1.0 + cfg.sigma_w * z;
        }
    }
    let nu = cfg.drift.sample_exponents(programmed.len(), rng);
    Ok(AnalogLayerState {
        drift_exponents: Tensor::new(programmed.shape().to_vec(), nu)?,
        programmed_weights: programmed,
        channel_scales: scales,
        digital_bias: bias.clone(),
        program_time: 0.0,
        drift: cfg.drift,
    })
}

/// Unit weights after drifting to time `t` (seconds since programming).
pub fn drift_to(state: &AnalogLayerState, t: f64) -> Result<Tensor> {
    if !(t >= 0.0) {
        return Err(Error::Config(format!("drift time must be >= 0, got {t}")));
    }
    let elapsed = (t - state.program_time).max(0.0);
    let lr = state.drift.log_ratio(elapsed);
    if lr == 0.0 {
        return Ok(state.programmed_weights.clone());
    }
    state
        .programmed_weights
        .zip_map(&state.drift_exponents, |w, nu| w * (-nu * lr).exp())
}

fn compensation_factor(reference: &Tensor, drifted: &Tensor) -> f64 {
    // all-ones probe through both matrices, compared by summed magnitude
    let cols = reference.shape()[1];
    let probe = |m: &Tensor| -> f64 {
        let mut acc = vec![0.0; cols];
        for row in m.data().chunks(cols) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.iter().map(|v| v.abs()).sum()
    };
    let d = probe(drifted);
    if d > 0.0 {
        probe(reference) / d
    } else {
        1.0
    }
}

/// Inference through a programmed layer at time `t`. `x` is `[batch, rows]`.
pub fn analog_forward<R: Rng>(
    state: &AnalogLayerState,
    x: &Tensor,
    cfg: &AnalogConfig,
    t: f64,
    rng: &mut R,
) -> Result<Tensor> {
    let mut weights = drift_to(state, t)?;
    if cfg.drift_compensation {
        let c = compensation_factor(&state.programmed_weights, &weights);
        weights.data_mut().iter_mut().for_each(|v| *v *= c);
    }
    crossbar_mvm(&weights, &state.channel_scales, &state.digital_bias, x, cfg, rng)
}

/// The converter/tile/read-noise pipeline over already-perturbed unit weights.
pub fn crossbar_mvm<R: Rng>(
    unit: &Tensor,
    scales: &[f64],
    bias: &Tensor,
    x: &Tensor,
    cfg: &AnalogConfig,
    rng: &mut R,
) -> Result<Tensor> {
    let (rows, cols) = unit.dims2()?;
    let (batch, xin) = x.dims2()?;
    if xin != rows {
        return Err(Error::Shape(format!(
            "crossbar has {rows} rows, input has {xin} features"
        )));
    }
    if scales.len() != cols || bias.len() != cols {
        return Err(Error::Shape(format!(
            "{} scales and {} biases for {cols} columns",
            scales.len(),
            bias.len()
        )));
    }
    x.ensure_finite("analog layer input")?;

    // DAC
    let in_range = cfg.dac.range(x.data().iter().copied());
    let b_in = in_range.unwrap_or(1.0);
    let mut xn: Vec<f64> = match in_range {
        None => x.data().to_vec(),
        Some(r) => x.data().iter().map(|&v| cfg.dac.apply_normalized(v / r)).collect(),
    };
    if cfg.sigma_inp > 0.0 {
        for v in xn.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += cfg.sigma_inp * z;
        }
    }

    // per-tile analog partial sums
    let tiles = even_row_split(rows, cfg.tile.rows);
    let w = unit.data();
    let mut partials: Vec<Vec<f64>> = Vec::with_capacity(tiles.len());
    for range in &tiles {
        let mut s = vec![0.0; batch * cols];
        if batch > 0 {
            crate::tensor::gemm(
                batch,
                range.len(),
                cols,
                &xn[range.start..],
                (rows, 1),
                &w[range.start * cols..],
                (cols, 1),
                &mut s,
            );
        }
        if cfg.sigma_out > 0.0 {
            for v in s.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += cfg.sigma_out * z;
            }
        }
        partials.push(s);
    }

    // ADC per tile, digital accumulation, channel scale and bias
    let mut out = vec![0.0; batch * cols];
    for s in &partials {
        match cfg.adc.range(s.iter().copied()) {
            None => {
                for (o, v) in out.iter_mut().zip(s) {
                    *o += v;
                }
            }
            Some(r) => {
                for (o, v) in out.iter_mut().zip(s) {
                    *o += r * cfg.adc.apply_normalized(v / r);
                }
            }
        }
    }
    for row in out.chunks_mut(cols) {
        for ((o, a), b) in row.iter_mut().zip(scales).zip(bias.data()) {
            *o = a * b_in * *o + b;
        }
    }
    Tensor::matrix(batch, cols, out)
}

/// Noise multipliers for one training forward pass: `(1 + sigma_w xi) * drift(t_eval)`,
/// freshly sampled per call.
pub fn training_multipliers<R: Rng>(
    shape: &[usize],
    cfg: &AnalogConfig,
    rng: &mut R,
) -> Tensor {
    let n: usize = shape.iter().product();
    let lr = cfg.drift.log_ratio(cfg.t_eval);
    let nu = if lr > 0.0 {
        cfg.drift.sample_exponents(n, rng)
    } else {
        Vec::new()
    };
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let mut m = 1.0;
        if cfg.sigma_w > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            m += cfg.sigma_w * z;
        }
        if lr > 0.0 {
            m *= (-nu[i] * lr).exp();
        }
        data.push(m);
    }
    Tensor::new(shape.to_vec(), data).expect("multiplier shape")
}

/// Training-mode forward: weight noise resampled on every call. Returns the
/// multiplier tensor (for the straight-through backward) and the layer output.
pub fn hwa_noise_forward<R: Rng>(
    weights: &Tensor,
    bias: &Tensor,
    x: &Tensor,
    cfg: &AnalogConfig,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    let (unit, scales) = scale_channels(weights)?;
    let mult = training_multipliers(unit.shape(), cfg, rng);
    let noisy = unit.zip_map(&mult, |u, m| u * m)?;
    let out = crossbar_mvm(&noisy, &scales, bias, x, cfg, rng)?;
    Ok((mult, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::{add_row_bias, matmul};

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = stream(seed, "test", &[]);
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn column_scaling_examples() {
        let w = Tensor::matrix(2, 1, vec![2.0, -4.0]).unwrap();
        let (u, s) = scale_channels(&w).unwrap();
        assert_eq!(s, vec![4.0]);
        assert_eq!(u.data(), &[0.5, -1.0]);

        let (u, s) = scale_channels(&Tensor::identity(3)).unwrap();
        assert_eq!(s, vec![1.0; 3]);
        assert_eq!(u, Tensor::identity(3));

        let z = Tensor::zeros(&[3, 2]);
        let (u, s) = scale_channels(&z).unwrap();
        assert_eq!(s, vec![SCALE_EPSILON; 2]);
        assert!(u.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_sigma_programs_exactly() {
        let w = rand_matrix(5, 4, 1);
        let cfg = AnalogConfig {
            sigma_w: 0.0,
            ..AnalogConfig::default()
        };
        let st = program(&w, &Tensor::zeros(&[4]), &cfg, &mut stream(1, "p", &[])).unwrap();
        assert_eq!(st.programmed_weights, scale_channels(&w).unwrap().0);
    }

    #[test]
    fn no_drift_means_zero_exponents_and_static_weights() {
        let w = rand_matrix(4, 3, 2);
        let cfg = AnalogConfig {
            drift: DriftModel::None,
            ..AnalogConfig::default()
        };
        let st = program(&w, &Tensor::zeros(&[3]), &cfg, &mut stream(2, "p", &[])).unwrap();
        assert!(st.drift_exponents.data().iter().all(|&v| v == 0.0));
        for t in [0.0, 1.0, 1e6] {
            assert_eq!(drift_to(&st, t).unwrap(), st.programmed_weights);
        }
    }

    #[test]
    fn drift_closed_form() {
        let w = rand_matrix(3, 3, 3);
        let mut st = program(
            &w,
            &Tensor::zeros(&[3]),
            &AnalogConfig::noiseless(),
            &mut stream(3, "p", &[]),
        )
        .unwrap();
        st.drift = DriftModel::PowerLaw {
            nu_mean: 0.06,
            nu_std: 0.0,
            t_ref: 20.0,
        };
        st.drift_exponents = Tensor::full(&[3, 3], 0.06);
        assert_eq!(drift_to(&st, 20.0).unwrap(), st.programmed_weights);
        let d = drift_to(&st, 86_400.0).unwrap();
        let expected = (86_400.0f64 / 20.0).powf(-0.06);
        assert!((expected - 0.605).abs() < 5e-4);
        for (a, b) in d.data().iter().zip(st.programmed_weights.data()) {
            assert!((a - b * expected).abs() < 1e-15);
        }
        assert!(drift_to(&st, -1.0).is_err());
    }

    #[test]
    fn noiseless_forward_matches_affine() {
        let w = rand_matrix(600, 7, 4);
        let bias = Tensor::vector((0..7).map(|i| i as f64 * 0.1).collect());
        let x = rand_matrix(3, 600, 5);
        let cfg = AnalogConfig::noiseless();
        let mut rng = stream(4, "p", &[]);
        let st = program(&w, &bias, &cfg, &mut rng).unwrap();
        let y = analog_forward(&st, &x, &cfg, 0.0, &mut rng).unwrap();
        let mut reference = matmul(&x, &w).unwrap();
        add_row_bias(&mut reference, &bias).unwrap();
        for (a, b) in y.data().iter().zip(reference.data()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let w = rand_matrix(2, 2, 6);
        let cfg = AnalogConfig::noiseless();
        let mut rng = stream(6, "p", &[]);
        let st = program(&w, &Tensor::zeros(&[2]), &cfg, &mut rng).unwrap();
        let x = Tensor::matrix(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            analog_forward(&st, &x, &cfg, 0.0, &mut rng),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn quantisation_and_clipping() {
        let c = Converter {
            clip: ClipBound::Fixed { bound: 1.0 },
            levels: Levels::Discrete(3),
        };
        assert_eq!(c.apply_normalized(0.4), 0.0);
        assert_eq!(c.apply_normalized(0.6), 1.0);
        assert_eq!(c.apply_normalized(-7.0), -1.0);
        let bad = Converter {
            clip: ClipBound::Unbounded,
            levels: Levels::Discrete(8),
        };
        assert!(bad.validate("adc").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AnalogConfig::default().validate().is_ok());
        let bad = AnalogConfig {
            sigma_w: -0.1,
            ..AnalogConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
