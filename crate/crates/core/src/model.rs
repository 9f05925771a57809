//! Network parameters, forward passes in each execution mode, and training epochs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analog::{self, AnalogConfig, AnalogLayerState};
use crate::autodiff::{Tape, Var};
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::network::{Activation, LayerDescriptor, LayerKind, MappingVector, NetworkDescriptor, Pool};
use crate::optim::{OptimizerConfig, Sgd};
use crate::persist;
use crate::rng::{stream, StreamRng};
use crate::tensor::{self, Tensor};

/// Batch size used for inference-only passes.
pub const EVAL_BATCH: usize = 250;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Unfolded `[rows, cols]` weight matrix.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedNetwork {
    pub descriptor: NetworkDescriptor,
    pub params: Vec<LayerParams>,
}

pub fn weight_id(layer: usize) -> usize {
    2 * layer
}

pub fn bias_id(layer: usize) -> usize {
    2 * layer + 1
}

/// Flatten/unfold a layer input into the `[positions * batch, rows]` matrix
/// its weight matrix multiplies.
fn unfold(layer: &LayerDescriptor, x: &Tensor) -> Result<(Tensor, usize)> {
    if layer.depthwise_like {
        return Err(Error::Network(format!(
            "layer {} is depthwise-like, which only the performance model supports",
            layer.id
        )));
    }
    match layer.conv_geometry() {
        Some(g) => {
            let batch = x.shape()[0];
            Ok((tensor::im2col(x, &g)?, batch))
        }
        None => {
            let LayerKind::Fc { in_features, .. } = layer.kind else {
                unreachable!()
            };
            let batch = if x.shape().len() == 1 { 1 } else { x.shape()[0] };
            if x.len() != batch * in_features {
                return Err(Error::Shape(format!(
                    "layer {} expects {in_features} features per sample, input has shape {:?}",
                    layer.id,
                    x.shape()
                )));
            }
            Ok((x.clone().reshape(vec![batch, in_features])?, batch))
        }
    }
}

fn fold(layer: &LayerDescriptor, y: Tensor, batch: usize) -> Result<Tensor> {
    match layer.kind {
        LayerKind::Conv {
            filters,
            out_height,
            out_width,
            ..
        } => y.reshape(vec![batch, out_height, out_width, filters]),
        LayerKind::Fc { .. } => Ok(y),
    }
}

fn check_params(layer: &LayerDescriptor, weights: &Tensor, bias: &Tensor) -> Result<()> {
    let (rows, cols) = crate::network::unfolded_shape(layer);
    if weights.shape() != [rows, cols] || bias.len() != cols {
        return Err(Error::Shape(format!(
            "layer {} needs weights [{rows}, {cols}] and {cols} biases, got {:?} and {}",
            layer.id,
            weights.shape(),
            bias.len()
        )));
    }
    Ok(())
}

/// Exact affine map of one layer. FC accepts `[batch, M]` (or a single `[M]`
/// vector); CONV accepts NHWC and is computed as im2col followed by a matrix product.
pub fn forward_digital(
    layer: &LayerDescriptor,
    weights: &Tensor,
    bias: &Tensor,
    input: &Tensor,
) -> Result<Tensor> {
    check_params(layer, weights, bias)?;
    let single = input.shape().len() == 1;
    let (cols, batch) = unfold(layer, input)?;
    let mut y = tensor::matmul(&cols, weights)?;
    tensor::add_row_bias(&mut y, bias)?;
    let y = fold(layer, y, batch)?;
    if single && matches!(layer.kind, LayerKind::Fc { .. }) {
        let n = y.len();
        return y.reshape(vec![n]);
    }
    Ok(y)
}

fn post_process(layer: &LayerDescriptor, y: Tensor) -> Result<Tensor> {
    let y = match layer.activation {
        Activation::Relu => tensor::relu(&y),
        Activation::None => y,
    };
    match layer.pool {
        Pool::Max2 => Ok(tensor::max_pool2(&y)?.0),
        Pool::None => Ok(y),
    }
}

/// Programmed crossbar state for each analog layer (`None` for digital layers).
pub type ProgrammedLayers = Vec<Option<AnalogLayerState>>;

impl TrainedNetwork {
    /// He-normal weights, zero biases.
    pub fn init(descriptor: &NetworkDescriptor, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        let params = descriptor
            .layers
            .iter()
            .map(|l| {
                let (rows, cols) = crate::network::unfolded_shape(l);
                let std = (2.0 / rows as f64).sqrt();
                let mut rng = stream(seed, "init", &[l.id as u64]);
                let data = (0..rows * cols)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Ok(LayerParams {
                    weight: Tensor::matrix(rows, cols, data)?,
                    bias: Tensor::zeros(&[cols]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainedNetwork {
            descriptor: descriptor.clone(),
            params,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.params.len()
    }

    /// Logits of the all-digital network.
    pub fn logits_digital(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (layer, p) in self.descriptor.layers.iter().zip(&self.params) {
            h = post_process(layer, forward_digital(layer, &p.weight, &p.bias, &h)?)?;
        }
        Ok(h)
    }

    /// Program every analog layer of `mapping` once.
    pub fn program_layers(
        &self,
        mapping: &MappingVector,
        cfg: &AnalogConfig,
        seed: u64,
        rep: u64,
    ) -> Result<ProgrammedLayers> {
        mapping.validate(&self.descriptor)?;
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if mapping.is_analog(i) {
                    let mut rng = stream(seed, "program", &[rep, i as u64]);
                    analog::program(&p.weight, &p.bias, cfg, &mut rng).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    /// Logits with analog layers executed on programmed crossbars read at time `t`.
    pub fn logits_programmed<R: Rng>(
        &self,
        x: &Tensor,
        states: &[Option<AnalogLayerState>],
        cfg: &AnalogConfig,
        t: f64,
        rng: &mut R,
    ) -> Result<Tensor> {
        let mut h = x.clone();
        for ((layer, p), st) in self.descriptor.layers.iter().zip(&self.params).zip(states) {
            let y = match st {
                None => forward_digital(layer, &p.weight, &p.bias, &h)?,
                Some(state) => {
                    let (cols, batch) = unfold(layer, &h)?;
                    let y = analog::analog_forward(state, &cols, cfg, t, rng)?;
                    fold(layer, y, batch)?
                }
            };
            h = post_process(layer, y)?;
        }
        Ok(h)
    }

    /// Percentage of correctly classified samples, all-digital.
    pub fn accuracy_digital(&self, data: &Split) -> Result<f64> {
        let mut correct = 0usize;
        for idx in batches(data.len(), EVAL_BATCH) {
            let part = data.subset(&idx);
            let pred = tensor::argmax_rows(&self.logits_digital(&part.x)?)?;
            correct += pred.iter().zip(&part.y).filter(|(p, y)| p == y).count();
        }
        Ok(100.0 * correct as f64 / data.len() as f64)
    }

    /// Percentage accuracy of one programmed instance read at time `t`.
    pub fn accuracy_programmed<R: Rng>(
        &self,
        data: &Split,
        states: &[Option<AnalogLayerState>],
        cfg: &AnalogConfig,
        t: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let mut correct = 0usize;
        for idx in batches(data.len(), EVAL_BATCH) {
            let part = data.subset(&idx);
            let logits = self.logits_programmed(&part.x, states, cfg, t, rng)?;
            let pred = tensor::argmax_rows(&logits)?;
            correct += pred.iter().zip(&part.y).filter(|(p, y)| p == y).count();
        }
        Ok(100.0 * correct as f64 / data.len() as f64)
    }

    /// Record a training-mode forward pass: analog layers draw fresh weight
    /// noise and drift and pass gradients straight through.
    pub fn tape_forward<R: Rng>(
        &self,
        tape: &mut Tape,
        x: Tensor,
        mapping: &MappingVector,
        cfg: &AnalogConfig,
        rng: &mut R,
    ) -> Result<Var> {
        let mut h = tape.leaf(x);
        for (i, (layer, p)) in self.descriptor.layers.iter().zip(&self.params).enumerate() {
            let w = tape.param(weight_id(i), p.weight.clone());
            let b = tape.param(bias_id(i), p.bias.clone());
            let batch = tape.value(h).shape()[0];
            let input = match layer.conv_geometry() {
                Some(g) => tape.im2col(h, g)?,
                None => {
                    let features = tape.value(h).len() / batch;
                    if tape.value(h).shape().len() == 2 {
                        h
                    } else {
                        tape.reshape(h, vec![batch, features])?
                    }
                }
            };
            let mut y = if mapping.is_analog(i) {
                let (mult, out) =
                    analog::hwa_noise_forward(&p.weight, &p.bias, tape.value(input), cfg, rng)?;
                tape.straight_through_affine(input, w, b, mult, out)?
            } else {
                tape.affine(input, w, b)?
            };
            if let LayerKind::Conv {
                filters,
                out_height,
                out_width,
                ..
            } = layer.kind
            {
                y = tape.reshape(y, vec![batch, out_height, out_width, filters])?;
            }
            if layer.activation == Activation::Relu {
                y = tape.relu(y);
            }
            if layer.pool == Pool::Max2 {
                y = tape.max_pool2(y)?;
            }
            h = y;
        }
        Ok(h)
    }

    /// One pass over `data`. Returns the sample-weighted mean training loss.
    #[allow(clippy::too_many_arguments)]
    pub fn train_epoch(
        &mut self,
        data: &Split,
        mapping: &MappingVector,
        cfg: &AnalogConfig,
        opts: &mut Optimizers,
        epoch: usize,
        seed: u64,
        session: u64,
    ) -> Result<f64> {
        mapping.validate(&self.descriptor)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(seed, "shuffle", &[session, epoch as u64]));
        let mut noise_rng: StreamRng = stream(seed, "train-noise", &[session, epoch as u64]);
        let batch_size = opts.digital.config.batch_size;
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let part = data.subset(chunk);
            let mut tape = Tape::new();
            // blown-up parameters surface as non-finite activations first
            let logits = self
                .tape_forward(&mut tape, part.x, mapping, cfg, &mut noise_rng)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence(f64::NAN),
                    e => e,
                })?;
            let loss = tape.softmax_cross_entropy(logits, &part.y)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence(value));
            }
            let grads = tape.backward(loss)?;
            for (i, p) in self.params.iter_mut().enumerate() {
                let opt = if mapping.is_analog(i) {
                    &mut opts.analog
                } else {
                    &mut opts.digital
                };
                opt.step(weight_id(i), &mut p.weight, grads.get(weight_id(i))?, epoch)?;
                // biases stay digital even on analog layers
                opts.digital
                    .step(bias_id(i), &mut p.bias, grads.get(bias_id(i))?, epoch)?;
            }
            total += value * chunk.len() as f64;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || self.params.iter().any(|p| !p.weight.is_finite()) {
            return Err(Error::Divergence(mean));
        }
        Ok(mean)
    }

    /// Mean cross-entropy of the digital network on `data`.
    pub fn loss_digital(&self, data: &Split) -> Result<f64> {
        let mut total = 0.0;
        for idx in batches(data.len(), EVAL_BATCH) {
            let part = data.subset(&idx);
            total += crate::autodiff::cross_entropy(&self.logits_digital(&part.x)?, &part.y);
        }
        Ok(total / data.len() as f64)
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let names: Vec<(String, String)> = (0..self.params.len())
            .map(|i| (format!("w{i}"), format!("b{i}")))
            .collect();
        let mut tensors: Vec<(&str, &Tensor)> = Vec::new();
        for ((wn, bn), p) in names.iter().zip(&self.params) {
            tensors.push((wn, &p.weight));
            tensors.push((bn, &p.bias));
        }
        let meta = serde_json::json!({
            "descriptor": self.descriptor,
            "extra": meta,
        });
        persist::save(path, meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (header, tensors) = persist::load(path)?;
        let fail = |reason: String| Error::Format {
            path: path.into(),
            reason,
        };
        let descriptor: NetworkDescriptor = serde_json::from_value(header.meta["descriptor"].clone())
            .map_err(|e| fail(format!("descriptor: {e}")))?;
        descriptor.validate()?;
        if tensors.len() != 2 * descriptor.layers.len() {
            return Err(fail(format!(
                "{} tensors for {} layers",
                tensors.len(),
                descriptor.layers.len()
            )));
        }
        let mut params = Vec::new();
        for (i, pair) in tensors.chunks(2).enumerate() {
            let (weight, bias) = (pair[0].1.clone(), pair[1].1.clone());
            check_params(&descriptor.layers[i], &weight, &bias)?;
            params.push(LayerParams { weight, bias });
        }
        Ok((
            TrainedNetwork { descriptor, params },
            header.meta["extra"].clone(),
        ))
    }
}

fn batches(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(size).map(move |s| (s..(s + size).min(n)).collect())
}

/// Independent optimizer state for digital and analog parameters.
#[derive(Clone, Debug)]
pub struct Optimizers {
    pub digital: Sgd,
    pub analog: Sgd,
}

impl Optimizers {
    pub fn new(digital: &OptimizerConfig, analog: &OptimizerConfig) -> Self {
        Optimizers {
            digital: Sgd::new(digital.clone()),
            analog: Sgd::new(analog.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub digital: OptimizerConfig,
    pub analog: OptimizerConfig,
    /// Epochs of floating-point pre-training.
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            digital: OptimizerConfig::digital_default(),
            analog: OptimizerConfig::analog_default(),
            pretrain_epochs: 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.digital.validate()?;
        self.analog.validate()?;
        if self.pretrain_epochs == 0 {
            return Err(Error::Config("pretrain_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Floating-point training from a fresh initialisation. Returns the network
/// and the per-epoch training loss.
pub fn pretrain(
    descriptor: &NetworkDescriptor,
    data: &Split,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainedNetwork, Vec<f64>)> {
    cfg.validate()?;
    let mut net = TrainedNetwork::init(descriptor, seed)?;
    let digital = cfg.digital.with_horizon(cfg.pretrain_epochs);
    let mut opts = Optimizers::new(&digital, &digital);
    let mapping = MappingVector::all_digital(descriptor);
    let analog = AnalogConfig::noiseless();
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        losses.push(net.train_epoch(data, &mapping, &analog, &mut opts, epoch, seed, u64::MAX)?);
    }
    Ok((net, losses))
}
