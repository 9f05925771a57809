//! Dense row-major `f64` tensors and the handful of kernels the engine needs.
//!
//! Image tensors use NHWC layout so that an im2col unfold of a batch yields a
//! `[batch * out_h * out_w, k * k * c]` matrix whose product with the unfolded
//! `[k * k * c, f]` weight matrix is already the NHWC output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Shape(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Rows `[start, end)` of a matrix as a new matrix.
    pub fn row_slice(&self, start: usize, end: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2()?;
        if start > end || end > rows {
            return Err(Error::Shape(format!(
                "row range {start}..{end} out of bounds for {rows} rows"
            )));
        }
        Tensor::matrix(end - start, cols, self.data[start * cols..end * cols].to_vec())
    }

    /// Gather the leading-axis entries listed in `index`.
    pub fn gather_rows(&self, index: &[usize]) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(index.len() * inner);
        for &i in index {
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = index.len();
        Tensor { shape, data }
    }
}

/// `a [m, k] * b [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: [{m}, {k}] x [{k2}, {n}]"
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, (k, 1), &b.data, (n, 1), &mut out);
    Tensor::matrix(m, n, out)
}

/// `a^T [k, m]^T * b [k, n]` without materialising the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul_tn leading dimensions differ: [{k}, {m}]^T x [{k2}, {n}]"
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, (1, m), &b.data, (n, 1), &mut out);
    Tensor::matrix(m, n, out)
}

/// `a [m, n] * b^T` where `b` is `[k, n]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    let (k, n2) = b.dims2()?;
    if n != n2 {
        return Err(Error::Shape(format!(
            "matmul_nt trailing dimensions differ: [{m}, {n}] x [{k}, {n2}]^T"
        )));
    }
    let mut out = vec![0.0; m * k];
    gemm(m, n, k, &a.data, (n, 1), &b.data, (1, n), &mut out);
    Tensor::matrix(m, k, out)
}

/// Row-major `out [m, n] = a [m, k] * b [k, n]` with element strides
/// `(row, col)` for each operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    out: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, r: usize, c: usize| (r - 1) * rs + (c - 1) * cs;
    assert!(a.len() > last(rsa, csa, m, k) && b.len() > last(rsb, csb, k, n));
    assert!(out.len() >= m * n);
    // SAFETY: the asserts above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Add `bias [n]` to every row of `x [m, n]` in place.
pub fn add_row_bias(x: &mut Tensor, bias: &Tensor) -> Result<()> {
    let (_, n) = x.dims2()?;
    if bias.len() != n {
        return Err(Error::Shape(format!(
            "bias of length {} for {} columns",
            bias.len(),
            n
        )));
    }
    for row in x.data.chunks_mut(n) {
        for (v, b) in row.iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    Ok(())
}

/// Spatial geometry of one convolution over NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output extent of a convolution along one spatial axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfold NHWC `x` into `[batch * out_h * out_w, k * k * c]`, column order `(kh, kw, c)`.
pub fn im2col(x: &Tensor, g: &ConvGeometry) -> Result<Tensor> {
    let batch = match x.shape() {
        [b, h, w, c] if *h == g.in_h && *w == g.in_w && *c == g.channels => *b,
        other => {
            return Err(Error::Shape(format!(
                "conv input {:?} does not match [_, {}, {}, {}]",
                other, g.in_h, g.in_w, g.channels
            )))
        }
    };
    let patch = g.patch_len();
    let rows = batch * g.positions();
    let mut out = vec![0.0; rows * patch];
    let c = g.channels;
    for b in 0..batch {
        let img = &x.data[b * g.in_h * g.in_w * c..(b + 1) * g.in_h * g.in_w * c];
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let r = (b * g.out_h + oh) * g.out_w + ow;
                let dst = &mut out[r * patch..(r + 1) * patch];
                for kh in 0..g.kernel {
                    let ih = (oh * g.stride + kh) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.in_h as isize {
                        continue;
                    }
                    for kw in 0..g.kernel {
                        let iw = (ow * g.stride + kw) as isize - g.padding as isize;
                        if iw < 0 || iw >= g.in_w as isize {
                            continue;
                        }
                        let src = (ih as usize * g.in_w + iw as usize) * c;
                        let off = (kh * g.kernel + kw) * c;
                        dst[off..off + c].copy_from_slice(&img[src..src + c]);
                    }
                }
            }
        }
    }
    Tensor::matrix(rows, patch, out)
}

/// Adjoint of [`im2col`]: scatter-add unfolded gradients back onto the NHWC input.
pub fn col2im(cols: &Tensor, g: &ConvGeometry, batch: usize) -> Result<Tensor> {
    let patch = g.patch_len();
    let (rows, width) = cols.dims2()?;
    if rows != batch * g.positions() || width != patch {
        return Err(Error::Shape(format!(
            "col2im got [{rows}, {width}], expected [{}, {patch}]",
            batch * g.positions()
        )));
    }
    let c = g.channels;
    let mut out = Tensor::zeros(&[batch, g.in_h, g.in_w, c]);
    for b in 0..batch {
        let img = &mut out.data[b * g.in_h * g.in_w * c..(b + 1) * g.in_h * g.in_w * c];
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let r = (b * g.out_h + oh) * g.out_w + ow;
                let src = &cols.data[r * patch..(r + 1) * patch];
                for kh in 0..g.kernel {
                    let ih = (oh * g.stride + kh) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.in_h as isize {
                        continue;
                    }
                    for kw in 0..g.kernel {
                        let iw = (ow * g.stride + kw) as isize - g.padding as isize;
                        if iw < 0 || iw >= g.in_w as isize {
                            continue;
                        }
                        let dst = (ih as usize * g.in_w + iw as usize) * c;
                        let off = (kh * g.kernel + kw) * c;
                        for ch in 0..c {
                            img[dst + ch] += src[off + ch];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 2x2/stride-2 max pooling over NHWC. Returns the pooled tensor and the flat
/// input index chosen for each output element.
pub fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (b, h, w, c) = match x.shape() {
        [b, h, w, c] => (*b, *h, *w, *c),
        other => return Err(Error::Shape(format!("max_pool2 expects NHWC, got {other:?}"))),
    };
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("cannot pool a {h}x{w} map")));
    }
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut argmax = Vec::with_capacity(b * oh * ow * c);
    for bi in 0..b {
        for y in 0..oh {
            for xx in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((bi * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
                            if x.data[i] > best {
                                best = x.data[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::new(vec![b, oh, ow, c], out)?, argmax))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Row-wise softmax of `[batch, classes]` logits.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data.chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Index of the largest logit in each row; ties resolve to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    let (_, k) = logits.dims2()?;
    Ok(logits
        .data
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);

        let at = Tensor::matrix(3, 2, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        assert_eq!(matmul_tn(&at, &b).unwrap(), c);

        let bt = Tensor::matrix(2, 3, vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]).unwrap();
        assert_eq!(matmul_nt(&a, &bt).unwrap(), c);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry {
            in_h: 5,
            in_w: 4,
            channels: 2,
            kernel: 3,
            stride: 2,
            padding: 1,
            out_h: 3,
            out_w: 2,
        };
        let x = Tensor::new(
            vec![2, 5, 4, 2],
            (0..80).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let cols = im2col(&x, &g).unwrap();
        let y = cols.map(|v| v * 0.5 + 0.1);
        let lhs: f64 = cols.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let back = col2im(&y, &g, 2).unwrap();
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pool_picks_maximum() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 5.0, -2.0, 3.0]).unwrap();
        let (y, idx) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[5.0]);
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn out_extent() {
        assert_eq!(conv_out_extent(16, 3, 1, 1), Some(16));
        assert_eq!(conv_out_extent(16, 3, 1, 0), Some(14));
        assert_eq!(conv_out_extent(2, 5, 1, 0), None);
    }
}
