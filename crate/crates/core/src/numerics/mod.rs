//! Dense 2-D linear algebra and differentiable-layer primitives.
//!
//! Everything is 64-bit, row-major, desk-scale (d <= 128, seq <= 64); no
//! sparse paths, no broadcasting beyond what the ops below state.

mod layers;

pub use layers::{
    softmax_backward, Activation, ActivationKind, Conv1dSame, LayerGrads, LayerNormLayer, Linear,
    Param, SoftmaxRows, TrainableLayer,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense 2-D real-valued array, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dims must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "cannot build {}x{} tensor from {} values",
                rows,
                cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::Dimension("empty row list".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "ragged rows: expected {} columns, found {}",
                    cols,
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Fill with uniform(lo, hi) draws from the given generator.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut crate::rng::SplitMix64) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b)
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "elementwise op on {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "add_assign on {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Column sums as a 1 x cols tensor.
    pub fn col_sums(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c] += self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copy of columns [start, start+len) as a new tensor.
    pub fn col_slice(&self, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.cols);
        let mut out = Tensor::zeros(self.rows, len);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + len]);
        }
        out
    }

    /// Add `src` into columns [start, start+src.cols).
    pub fn col_splice_add(&mut self, start: usize, src: &Tensor) {
        assert!(self.rows == src.rows && start + src.cols <= self.cols);
        for r in 0..self.rows {
            for c in 0..src.cols {
                self.data[r * self.cols + start + c] += src.data[r * src.cols + c];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Standard matrix product. Errors name both shapes when the inner
/// dimensions disagree.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(Error::Dimension(format!(
            "matmul: {}x{} incompatible with {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax with per-row max subtraction. Entries may be -inf
/// (masked); each row must keep at least one finite entry.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let mut out = Tensor::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Contract(format!(
                "softmax row {} has no finite entry",
                r
            )));
        }
        let mut sum = 0.0;
        let orow = out.row_mut(r);
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Per-row standardization: (x - mean) / sqrt(var + eps), scaled by gamma
/// and shifted by beta (both 1 x cols). Population variance.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    if gamma.shape() != (1, x.cols) || beta.shape() != (1, x.cols) {
        return Err(Error::Dimension(format!(
            "layer_norm: gamma {}x{}, beta {}x{} incompatible with input {}x{}",
            gamma.rows, gamma.cols, beta.rows, beta.cols, x.rows, x.cols
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let n = x.cols as f64;
    let mut out = Tensor::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + eps).sqrt();
        let orow = out.row_mut(r);
        for c in 0..x.cols {
            orow[c] = (row[c] - mean) * inv_std * gamma.data[c] + beta.data[c];
        }
    }
    Ok(out)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// 1-D convolution over the sequence axis with zero padding so output
/// length equals input length. `x` is (seq_len, d_in); `kernel` is
/// (width * d_in, d_out) with taps stacked row-major (tap 0 = leftmost);
/// `bias` is (1, d_out). Returns pre-activation values.
pub fn conv1d_same(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d_in = x.cols;
    if kernel.rows % d_in != 0 {
        return Err(Error::Dimension(format!(
            "conv1d: kernel {}x{} not a multiple of input dim {}",
            kernel.rows, kernel.cols, d_in
        )));
    }
    let width = kernel.rows / d_in;
    if width % 2 == 0 {
        return Err(Error::Config(format!("conv1d kernel width must be odd, got {width}")));
    }
    let d_out = kernel.cols;
    if bias.shape() != (1, d_out) {
        return Err(Error::Dimension(format!(
            "conv1d: bias {}x{} incompatible with d_out {}",
            bias.rows, bias.cols, d_out
        )));
    }
    let cols = im2col(x, width);
    let mut out = matmul(&cols, kernel)?;
    for r in 0..out.rows {
        for c in 0..d_out {
            out.data[r * d_out + c] += bias.data[c];
        }
    }
    Ok(out)
}

/// Gather the width-wide window around each position into one row,
/// zero-padded beyond the sequence ends.
pub(crate) fn im2col(x: &Tensor, width: usize) -> Tensor {
    let half = width / 2;
    let (seq, d) = x.shape();
    let mut cols = Tensor::zeros(seq, width * d);
    for t in 0..seq {
        for tap in 0..width {
            let src = t as isize + tap as isize - half as isize;
            if src < 0 || src >= seq as isize {
                continue;
            }
            let dst = &mut cols.row_mut(t)[tap * d..(tap + 1) * d];
            dst.copy_from_slice(x.row(src as usize));
        }
    }
    cols
}

/// Scatter-add of an im2col-shaped gradient back onto sequence positions.
pub(crate) fn im2col_backward(d_cols: &Tensor, seq: usize, d: usize, width: usize) -> Tensor {
    let half = width / 2;
    let mut dx = Tensor::zeros(seq, d);
    for t in 0..seq {
        for tap in 0..width {
            let src = t as isize + tap as isize - half as isize;
            if src < 0 || src >= seq as isize {
                continue;
            }
            let grad = &d_cols.row(t)[tap * d..(tap + 1) * d];
            let row = dx.row_mut(src as usize);
            for (o, g) in row.iter_mut().zip(grad) {
                *o += g;
            }
        }
    }
    dx
}
