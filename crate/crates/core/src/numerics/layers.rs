//! Trainable layers: forward caches activations, backward accumulates
//! analytic parameter gradients and returns the input gradient.

use super::{im2col, im2col_backward, layer_norm, matmul, softmax_rows, Tensor};
use crate::error::{Error, Result};

/// A parameter tensor paired with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param {
    value: Tensor,
    grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Tensor {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = 0.0;
        }
    }

    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        self.grad.add_assign(g)
    }

    /// Plain gradient-descent update with optional L2 weight decay.
    pub fn sgd_step(&mut self, lr: f64, l2: f64) {
        let n = self.value.data().len();
        for i in 0..n {
            let g = self.grad.data()[i] + l2 * self.value.data()[i];
            self.value.data_mut()[i] -= lr * g;
        }
    }
}

/// Parameter gradients keyed by name plus the gradient w.r.t. the input.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub params: Vec<(String, Tensor)>,
    pub input: Tensor,
}

/// Common contract for differentiable blocks with a single tensor input.
pub trait TrainableLayer {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor>;

    /// Accumulates parameter gradients and returns d(loss)/d(input).
    /// Fails with a state error when no forward pass has been cached.
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor>;

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param)) {}

    fn zero_grads(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }

    /// One backward pass reported as named gradients; grads are reset first
    /// so the report reflects exactly this upstream signal.
    fn backward_grads(&mut self, upstream: &Tensor) -> Result<LayerGrads> {
        self.zero_grads();
        let input = self.backward(upstream)?;
        let mut params = Vec::new();
        self.visit_params("", &mut |name, p| {
            params.push((name.to_string(), p.grad().clone()));
        });
        Ok(LayerGrads { params, input })
    }
}

fn state_err(op: &str) -> Error {
    Error::State(format!("{op}: backward called before forward"))
}

/// y = x W + 1 b
pub struct Linear {
    pub w: Param,
    pub b: Param,
    cached_input: Option<Tensor>,
}

impl Linear {
    pub fn new(w: Tensor, b: Tensor) -> Self {
        Self { w: Param::new(w), b: Param::new(b), cached_input: None }
    }

    pub fn seeded(d_in: usize, d_out: usize, rng: &mut crate::rng::SplitMix64) -> Self {
        Self::new(
            Tensor::random_uniform(d_in, d_out, -0.1, 0.1, rng),
            Tensor::random_uniform(1, d_out, -0.1, 0.1, rng),
        )
    }
}

impl TrainableLayer for Linear {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.cached_input = Some(x.clone());
        let mut y = matmul(x, self.w.value())?;
        for r in 0..y.rows() {
            for c in 0..y.cols() {
                let v = y.get(r, c) + self.b.value().get(0, c);
                y.set(r, c, v);
            }
        }
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self.cached_input.as_ref().ok_or_else(|| state_err("linear"))?;
        self.w.accumulate(&matmul(&x.transpose(), upstream)?)?;
        self.b.accumulate(&upstream.col_sums())?;
        matmul(upstream, &self.w.value().transpose())
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}w"), &mut self.w);
        f(&format!("{prefix}b"), &mut self.b);
    }
}

/// Row-wise layer normalization with learned scale and shift.
pub struct LayerNormLayer {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
    cache: Option<LnCache>,
}

struct LnCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNormLayer {
    pub fn new(dim: usize, eps: f64) -> Self {
        let mut gamma = Tensor::zeros(1, dim);
        for g in gamma.data_mut() {
            *g = 1.0;
        }
        Self { gamma: Param::new(gamma), beta: Param::new(Tensor::zeros(1, dim)), eps, cache: None }
    }
}

impl TrainableLayer for LayerNormLayer {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = x.cols() as f64;
        let mut normalized = Tensor::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            for c in 0..x.cols() {
                normalized.set(r, c, (row[c] - mean) * is);
            }
        }
        let y = layer_norm(x, self.gamma.value(), self.beta.value(), self.eps)?;
        self.cache = Some(LnCache { normalized, inv_std });
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| state_err("layer_norm"))?;
        let (rows, cols) = upstream.shape();
        let n = cols as f64;

        let mut d_gamma = Tensor::zeros(1, cols);
        let mut d_beta = Tensor::zeros(1, cols);
        let mut dx = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let up = upstream.row(r);
            let xhat = cache.normalized.row(r);
            // d_xhat = upstream * gamma
            let d_xhat: Vec<f64> = (0..cols).map(|c| up[c] * self.gamma.value().get(0, c)).collect();
            let mean_dxhat = d_xhat.iter().sum::<f64>() / n;
            let mean_dxhat_xhat = d_xhat.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / n;
            for c in 0..cols {
                d_gamma.set(0, c, d_gamma.get(0, c) + up[c] * xhat[c]);
                d_beta.set(0, c, d_beta.get(0, c) + up[c]);
                dx.set(r, c, cache.inv_std[r] * (d_xhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat));
            }
        }
        self.gamma.accumulate(&d_gamma)?;
        self.beta.accumulate(&d_beta)?;
        Ok(dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}gamma"), &mut self.gamma);
        f(&format!("{prefix}beta"), &mut self.beta);
    }
}

/// Same-length 1-D convolution; forward returns pre-activation values.
pub struct Conv1dSame {
    pub kernel: Param,
    pub bias: Param,
    pub width: usize,
    cache: Option<ConvCache>,
}

struct ConvCache {
    cols: Tensor,
    seq: usize,
    d_in: usize,
}

impl Conv1dSame {
    pub fn new(kernel: Tensor, bias: Tensor, width: usize) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel width must be odd, got {width}")));
        }
        if kernel.rows() % width != 0 {
            return Err(Error::Dimension(format!(
                "conv kernel {}x{} not divisible into {} taps",
                kernel.rows(),
                kernel.cols(),
                width
            )));
        }
        Ok(Self { kernel: Param::new(kernel), bias: Param::new(bias), width, cache: None })
    }

    pub fn seeded(width: usize, d_in: usize, d_out: usize, rng: &mut crate::rng::SplitMix64) -> Result<Self> {
        Self::new(
            Tensor::random_uniform(width * d_in, d_out, -0.1, 0.1, rng),
            Tensor::random_uniform(1, d_out, -0.1, 0.1, rng),
            width,
        )
    }
}

impl TrainableLayer for Conv1dSame {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = super::conv1d_same(x, self.kernel.value(), self.bias.value())?;
        self.cache = Some(ConvCache { cols: im2col(x, self.width), seq: x.rows(), d_in: x.cols() });
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| state_err("conv1d"))?;
        self.kernel.accumulate(&matmul(&cache.cols.transpose(), upstream)?)?;
        self.bias.accumulate(&upstream.col_sums())?;
        let d_cols = matmul(upstream, &self.kernel.value().transpose())?;
        Ok(im2col_backward(&d_cols, cache.seq, cache.d_in, self.width))
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}kernel"), &mut self.kernel);
        f(&format!("{prefix}bias"), &mut self.bias);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Tanh,
    Logistic,
}

/// Elementwise activation.
pub struct Activation {
    pub kind: ActivationKind,
    cache: Option<ActCache>,
}

enum ActCache {
    Input(Tensor),
    Output(Tensor),
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, cache: None }
    }
}

impl TrainableLayer for Activation {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = match self.kind {
            ActivationKind::Relu => x.map(|v| v.max(0.0)),
            ActivationKind::Tanh => x.map(f64::tanh),
            ActivationKind::Logistic => x.map(|v| 1.0 / (1.0 + (-v).exp())),
        };
        self.cache = Some(match self.kind {
            ActivationKind::Relu => ActCache::Input(x.clone()),
            _ => ActCache::Output(y.clone()),
        });
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        match self.cache.as_ref().ok_or_else(|| state_err("activation"))? {
            ActCache::Input(x) => upstream.zip_derivative(x, |v| if v > 0.0 { 1.0 } else { 0.0 }),
            ActCache::Output(y) => match self.kind {
                ActivationKind::Tanh => upstream.zip_derivative(y, |t| 1.0 - t * t),
                ActivationKind::Logistic => upstream.zip_derivative(y, |s| s * (1.0 - s)),
                ActivationKind::Relu => unreachable!(),
            },
        }
    }
}

impl Tensor {
    fn zip_derivative(&self, basis: &Tensor, d: impl Fn(f64) -> f64) -> Result<Tensor> {
        self.hadamard(&basis.map(d))
    }
}

/// Row-wise softmax as a layer (no parameters).
pub struct SoftmaxRows {
    cache: Option<Tensor>,
}

impl SoftmaxRows {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl Default for SoftmaxRows {
    fn default() -> Self {
        Self::new()
    }
}

impl TrainableLayer for SoftmaxRows {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = softmax_rows(x)?;
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let s = self.cache.as_ref().ok_or_else(|| state_err("softmax"))?;
        Ok(softmax_backward(s, upstream))
    }
}

/// Jacobian-vector product of row-wise softmax:
/// dX[r,j] = S[r,j] * (dY[r,j] - sum_k dY[r,k] S[r,k]).
pub fn softmax_backward(softmax_out: &Tensor, upstream: &Tensor) -> Tensor {
    let (rows, cols) = softmax_out.shape();
    let mut dx = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let s = softmax_out.row(r);
        let up = upstream.row(r);
        let dot: f64 = s.iter().zip(up).map(|(a, b)| a * b).sum();
        for c in 0..cols {
            dx.set(r, c, s[c] * (up[c] - dot));
        }
    }
    dx
}
