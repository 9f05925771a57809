//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid reverse
//! topological order because a node can only reference earlier nodes.
//!
//! ```
//! use aimc_map::autodiff::Tape;
//! use aimc_map::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(0, Tensor::scalar(3.0));
//! let sq = tape.mul(w, w).unwrap();
//! let f = tape.sum(sq);
//! let grads = tape.backward(f).unwrap();
//! assert_eq!(grads.get(0).unwrap().data(), &[6.0]);
//! ```

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, Tensor};

pub type ParamId = usize;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    /// Forward value supplied by the caller; backward treats the layer as
    /// `x * w_eff + b` with `w_eff = w * mult` and `mult` held constant.
    StraightThroughAffine {
        x: Var,
        w: Var,
        b: Var,
        mult: Tensor,
        w_eff: Tensor,
    },
    Im2col {
        x: Var,
        geom: ConvGeometry,
        batch: usize,
    },
    Reshape {
        x: Var,
        from: Vec<usize>,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input; receives no gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A trainable parameter identified by `id`.
    pub fn param(&mut self, id: ParamId, t: Tensor) -> Var {
        self.push(t, Op::Param(id))
    }

    fn check_affine(&self, x: Var, w: Var, b: Var) -> Result<(usize, usize)> {
        let (rows, k) = self.value(x).dims2()?;
        let (k2, n) = self.value(w).dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "affine input has {k} features but weight has {k2} rows"
            )));
        }
        if self.value(b).len() != n {
            return Err(Error::Shape(format!(
                "affine bias has {} entries for {n} outputs",
                self.value(b).len()
            )));
        }
        Ok((rows, n))
    }

    /// `x [batch, in] * w [in, out] + b [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.check_affine(x, w, b)?;
        let mut y = tensor::matmul(self.value(x), self.value(w))?;
        tensor::add_row_bias(&mut y, self.value(b))?;
        Ok(self.push(y, Op::Affine { x, w, b }))
    }

    /// Affine layer whose forward value was produced elsewhere (e.g. by a noisy
    /// analog simulation). Gradients flow as if the layer were exactly
    /// `x * (w ⊙ mult) + b`.
    pub fn straight_through_affine(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        mult: Tensor,
        output: Tensor,
    ) -> Result<Var> {
        let (rows, n) = self.check_affine(x, w, b)?;
        self.value(w).check_same_shape(&mult)?;
        if output.shape() != [rows, n] {
            return Err(Error::Shape(format!(
                "supplied output {:?}, expected [{rows}, {n}]",
                output.shape()
            )));
        }
        let w_eff = self.value(w).zip_map(&mult, |a, m| a * m)?;
        Ok(self.push(
            output,
            Op::StraightThroughAffine {
                x,
                w,
                b,
                mult,
                w_eff,
            },
        ))
    }

    pub fn im2col(&mut self, x: Var, geom: ConvGeometry) -> Result<Var> {
        let batch = self.value(x).shape().first().copied().unwrap_or(0);
        let cols = tensor::im2col(self.value(x), &geom)?;
        Ok(self.push(cols, Op::Im2col { x, geom, batch }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let from = self.value(x).shape().to_vec();
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x, from }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = tensor::relu(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = tensor::max_pool2(self.value(x))?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.push(y, Op::Mul { a, b }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = self.value(logits).dims2()?;
        if labels.len() != batch {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Shape(format!("label {bad} out of range for {classes} classes")));
        }
        let probs = tensor::softmax_rows(self.value(logits))?;
        let loss = cross_entropy(self.value(logits), labels) / batch as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.value(loss).ensure_finite("loss")?;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut by_param: HashMap<ParamId, Tensor> = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => match by_param.get_mut(id) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        by_param.insert(*id, g);
                    }
                },
                Op::Affine { x, w, b } => {
                    let dx = tensor::matmul_nt(&g, self.value(*w))?;
                    let dw = tensor::matmul_tn(self.value(*x), &g)?;
                    let db = column_sums(&g)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *w, dw)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::StraightThroughAffine {
                    x,
                    w,
                    b,
                    mult,
                    w_eff,
                } => {
                    let dx = tensor::matmul_nt(&g, w_eff)?;
                    let dw = tensor::matmul_tn(self.value(*x), &g)?.zip_map(mult, |d, m| d * m)?;
                    let db = column_sums(&g)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *w, dw)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Im2col { x, geom, batch } => {
                    let dx = tensor::col2im(&g, geom, *batch)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Reshape { x, from } => {
                    accumulate(&mut grads, *x, g.reshape(from.clone())?)?;
                }
                Op::Relu { x } => {
                    let dx = g.zip_map(self.value(*x), |d, v| if v > 0.0 { d } else { 0.0 })?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    for (&i, &d) in argmax.iter().zip(g.data()) {
                        dx.data_mut()[i] += d;
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Mul { a, b } => {
                    let da = g.zip_map(self.value(*b), |d, v| d * v)?;
                    let db = g.zip_map(self.value(*a), |d, v| d * v)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Sum { x } => {
                    let d = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), d))?;
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.data()[0] / labels.len() as f64;
                    let classes = probs.shape()[1];
                    let mut d = probs.clone();
                    for (row, &l) in d.data_mut().chunks_mut(classes).zip(labels) {
                        row[l] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, d)?;
                }
            }
        }
        Ok(Gradients { by_param })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn column_sums(g: &Tensor) -> Result<Tensor> {
    let (_, n) = g.dims2()?;
    let mut out = vec![0.0; n];
    for row in g.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(Tensor::vector(out))
}

/// Summed (not averaged) softmax cross-entropy, computed with log-sum-exp.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> f64 {
    let classes = logits.shape()[logits.shape().len() - 1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .map(|(row, &l)| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[l]
        })
        .sum()
}

/// Parameter gradients produced by one backward sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient for `id`; an error if the parameter never reached the loss.
    pub fn get(&self, id: ParamId) -> Result<&Tensor> {
        self.by_param.get(&id).ok_or(Error::Detached(id))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let w = tape.param(7, Tensor::scalar(3.0));
        let sq = tape.mul(w, w).unwrap();
        let f = tape.sum(sq);
        let grads = tape.backward(f).unwrap();
        assert_eq!(grads.get(7).unwrap().data(), &[6.0]);
    }

    #[test]
    fn uniform_logits_cross_entropy() {
        let k = 5;
        let mut tape = Tape::new();
        let z = tape.param(0, Tensor::zeros(&[1, k]));
        let loss = tape.softmax_cross_entropy(z, &[2]).unwrap();
        assert!((tape.value(loss).data()[0] - (k as f64).ln()).abs() < 1e-12);
        let g = tape.backward(loss).unwrap();
        for (i, &v) in g.get(0).unwrap().data().iter().enumerate() {
            let expected = 1.0 / k as f64 - if i == 2 { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_parameter_is_detached() {
        let mut tape = Tape::new();
        let w = tape.param(0, Tensor::scalar(2.0));
        let _unused = tape.param(1, Tensor::scalar(5.0));
        let f = tape.sum(w);
        let grads = tape.backward(f).unwrap();
        assert!(grads.get(0).is_ok());
        assert!(matches!(grads.get(1), Err(Error::Detached(1))));
        assert!(matches!(grads.get(9), Err(Error::Detached(9))));
    }

    #[test]
    fn affine_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]));
        let w = tape.param(0, Tensor::zeros(&[4, 2]));
        let b = tape.param(1, Tensor::zeros(&[2]));
        assert!(matches!(tape.affine(x, w, b), Err(Error::Shape(_))));
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(0, Tensor::scalar(2.0));
        let b = tape.param(0, Tensor::scalar(2.0));
        let p = tape.mul(a, b).unwrap();
        let f = tape.sum(p);
        let grads = tape.backward(f).unwrap();
        assert_eq!(grads.get(0).unwrap().data(), &[4.0]);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(0, Tensor::scalar(f64::NAN));
        let f = tape.sum(w);
        assert!(matches!(tape.backward(f), Err(Error::NonFinite(_))));
    }
}
