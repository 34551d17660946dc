//! Refinement head over encoder hidden states: convolutional n-gram
//! features, single-head attention aggregation, masked mean pooling to a
//! sentence embedding, and a logistic scalar prediction head.

use crate::encoder::HiddenStates;
use crate::error::{Error, Result};
use crate::numerics::{
    matmul, softmax_backward, softmax_rows, Activation, ActivationKind, Conv1dSame, Param, Tensor,
    TrainableLayer,
};
use crate::rng::SplitMix64;

/// Fixed-dimension sentence representation plus the id of what it encodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding {
    pub values: Vec<f64>,
    pub source_id: String,
}

impl SentenceEmbedding {
    pub fn new(values: Vec<f64>, source_id: impl Into<String>) -> Self {
        Self { values, source_id: source_id.into() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Conv1d + ReLU (or tanh) followed by headless scaled dot-product
/// attention with Q/K/V projected from the convolution output.
pub struct Refinement {
    pub conv: Conv1dSame,
    pub act: Activation,
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    cache: Option<RefineCache>,
}

struct RefineCache {
    features: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    weights: Tensor,
}

impl Refinement {
    pub fn seeded(d_model: usize, kernel_width: usize, activation: ActivationKind, rng: &mut SplitMix64) -> Result<Self> {
        Ok(Self {
            conv: Conv1dSame::seeded(kernel_width, d_model, d_model, rng)?,
            act: Activation::new(activation),
            wq: Param::new(Tensor::random_uniform(d_model, d_model, -0.1, 0.1, rng)),
            wk: Param::new(Tensor::random_uniform(d_model, d_model, -0.1, 0.1, rng)),
            wv: Param::new(Tensor::random_uniform(d_model, d_model, -0.1, 0.1, rng)),
            cache: None,
        })
    }

    /// F_conv = act(conv(H)); A = softmax(Q K^T / sqrt(d)); returns A V.
    /// PAD keys are masked out of every attention row.
    pub fn refine(&mut self, h: &HiddenStates) -> Result<Tensor> {
        let pre = self.conv.forward(&h.states)?;
        let features = self.act.forward(&pre)?;
        let q = matmul(&features, self.wq.value())?;
        let k = matmul(&features, self.wk.value())?;
        let v = matmul(&features, self.wv.value())?;
        let d = self.wq.value().cols() as f64;
        let mut scores = matmul(&q, &k.transpose())?.scale(1.0 / d.sqrt());
        for r in 0..scores.rows() {
            for (c, &valid) in h.mask.iter().enumerate() {
                if !valid {
                    scores.set(r, c, f64::NEG_INFINITY);
                }
            }
        }
        let weights = softmax_rows(&scores)?;
        let out = matmul(&weights, &v)?;
        self.cache = Some(RefineCache { features, q, k, v, weights });
        Ok(out)
    }

    /// Attention matrix A of the last refine call.
    pub fn last_weights(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|c| &c.weights)
    }

    /// Returns the gradient w.r.t. the hidden states.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("refinement: backward called before refine".into()))?;
        let scale = 1.0 / (self.wq.value().cols() as f64).sqrt();

        let d_weights = matmul(upstream, &cache.v.transpose())?;
        let d_v = matmul(&cache.weights.transpose(), upstream)?;
        let d_scores = softmax_backward(&cache.weights, &d_weights).scale(scale);
        let d_q = matmul(&d_scores, &cache.k)?;
        let d_k = matmul(&d_scores.transpose(), &cache.q)?;

        self.wq.accumulate(&matmul(&cache.features.transpose(), &d_q)?)?;
        self.wk.accumulate(&matmul(&cache.features.transpose(), &d_k)?)?;
        self.wv.accumulate(&matmul(&cache.features.transpose(), &d_v)?)?;

        let mut d_features = matmul(&d_q, &self.wq.value().transpose())?;
        d_features.add_assign(&matmul(&d_k, &self.wk.value().transpose())?)?;
        d_features.add_assign(&matmul(&d_v, &self.wv.value().transpose())?)?;

        let d_pre = self.act.backward(&d_features)?;
        self.conv.backward(&d_pre)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_params(&format!("{prefix}conv."), f);
        f(&format!("{prefix}wq"), &mut self.wq);
        f(&format!("{prefix}wk"), &mut self.wk);
        f(&format!("{prefix}wv"), &mut self.wv);
    }
}

/// Mean over non-PAD rows, as a 1 x d tensor.
pub fn pool(h_attn: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Contract("pool requires at least one unmasked position".into()));
    }
    let mut out = Tensor::zeros(1, h_attn.cols());
    for (r, &valid) in mask.iter().enumerate() {
        if !valid {
            continue;
        }
        for c in 0..h_attn.cols() {
            out.set(0, c, out.get(0, c) + h_attn.get(r, c));
        }
    }
    Ok(out.scale(1.0 / count as f64))
}

/// Distribute a pooled-embedding gradient back over the unmasked rows.
pub fn pool_backward(d_pooled: &Tensor, mask: &[bool]) -> Tensor {
    let count = mask.iter().filter(|&&m| m).count().max(1);
    let mut out = Tensor::zeros(mask.len(), d_pooled.cols());
    for (r, &valid) in mask.iter().enumerate() {
        if !valid {
            continue;
        }
        for c in 0..d_pooled.cols() {
            out.set(r, c, d_pooled.get(0, c) / count as f64);
        }
    }
    out
}

/// logistic(w . e + b): maps a sentence embedding to a score in (0, 1).
pub struct ScalarHead {
    pub w: Param,
    pub b: Param,
    cache: Option<(Tensor, f64)>,
}

impl ScalarHead {
    pub fn seeded(d_model: usize, rng: &mut SplitMix64) -> Self {
        Self {
            w: Param::new(Tensor::random_uniform(d_model, 1, -0.1, 0.1, rng)),
            b: Param::new(Tensor::random_uniform(1, 1, -0.1, 0.1, rng)),
            cache: None,
        }
    }

    pub fn predict(&mut self, embedding: &Tensor) -> Result<f64> {
        let logit = matmul(embedding, self.w.value())?.get(0, 0) + self.b.value().get(0, 0);
        let y = 1.0 / (1.0 + (-logit).exp());
        self.cache = Some((embedding.clone(), y));
        Ok(y)
    }

    /// Returns the gradient w.r.t. the embedding.
    pub fn backward(&mut self, d_pred: f64) -> Result<Tensor> {
        let (embedding, y) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("head: backward called before predict".into()))?;
        let d_logit = d_pred * y * (1.0 - y);
        self.w.accumulate(&embedding.transpose().scale(d_logit))?;
        let mut db = Tensor::zeros(1, 1);
        db.set(0, 0, d_logit);
        self.b.accumulate(&db)?;
        Ok(self.w.value().transpose().scale(d_logit))
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}w"), &mut self.w);
        f(&format!("{prefix}b"), &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hidden(states: Tensor, true_len: usize) -> HiddenStates {
        let mask = (0..states.rows()).map(|r| r < true_len).collect();
        HiddenStates { states, mask }
    }

    #[test]
    fn refine_preserves_shape() {
        let mut rng = SplitMix64::new(1);
        let mut refine = Refinement::seeded(8, 3, ActivationKind::Relu, &mut rng).unwrap();
        let h = hidden(Tensor::random_uniform(4, 8, -1.0, 1.0, &mut rng), 4);
        let out = refine.refine(&h).unwrap();
        assert_eq!(out.shape(), (4, 8));
    }

    #[test]
    fn identity_kernel_zero_bias_reduces_conv_to_relu() {
        let d = 3;
        let mut kernel = Tensor::zeros(3 * d, d);
        for c in 0..d {
            kernel.set(d + c, c, 1.0); // center tap identity
        }
        let conv = Conv1dSame::new(kernel, Tensor::zeros(1, d), 3).unwrap();
        let mut rng = SplitMix64::new(2);
        let mut refine = Refinement::seeded(d, 3, ActivationKind::Relu, &mut rng).unwrap();
        refine.conv = conv;
        let h = hidden(Tensor::random_uniform(5, d, -1.0, 1.0, &mut rng), 5);
        refine.refine(&h).unwrap();
        // F_conv inside the cache equals ReLU(H).
        let expect = h.states.map(|v| v.max(0.0));
        let got = &refine.cache.as_ref().unwrap().features;
        assert!(got.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn refine_matches_manual_composition() {
        let mut rng = SplitMix64::new(3);
        let mut refine = Refinement::seeded(8, 3, ActivationKind::Relu, &mut rng).unwrap();
        let h = hidden(Tensor::random_uniform(4, 8, -1.0, 1.0, &mut rng), 4);
        let out = refine.refine(&h).unwrap();

        let pre = crate::numerics::conv1d_same(&h.states, refine.conv.kernel.value(), refine.conv.bias.value()).unwrap();
        let features = pre.map(|v| v.max(0.0));
        let q = matmul(&features, refine.wq.value()).unwrap();
        let k = matmul(&features, refine.wk.value()).unwrap();
        let v = matmul(&features, refine.wv.value()).unwrap();
        let scores = matmul(&q, &k.transpose()).unwrap().scale(1.0 / (8.0f64).sqrt());
        let weights = softmax_rows(&scores).unwrap();
        let manual = matmul(&weights, &v).unwrap();
        assert!(out.max_abs_diff(&manual) < 1e-12);
    }

    #[test]
    fn refine_attention_rows_sum_to_one_and_mask_pads() {
        let mut rng = SplitMix64::new(4);
        let mut refine = Refinement::seeded(6, 3, ActivationKind::Relu, &mut rng).unwrap();
        let h = hidden(Tensor::random_uniform(5, 6, -1.0, 1.0, &mut rng), 3);
        refine.refine(&h).unwrap();
        let a = refine.last_weights().unwrap();
        for r in 0..a.rows() {
            let sum: f64 = a.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(a.get(r, 3), 0.0);
            assert_eq!(a.get(r, 4), 0.0);
        }
    }

    #[test]
    fn pool_single_row_is_identity() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![9.0, 9.0, 9.0]]).unwrap();
        let e = pool(&t, &[true, false]).unwrap();
        assert_eq!(e.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn pool_of_identical_rows_is_that_row() {
        let t = Tensor::from_rows(&[vec![0.5, -1.0], vec![0.5, -1.0]]).unwrap();
        let e = pool(&t, &[true, true]).unwrap();
        assert_eq!(e.row(0), &[0.5, -1.0]);
    }

    #[test]
    fn pool_matches_masked_mean_oracle() {
        let mut rng = SplitMix64::new(5);
        let t = Tensor::random_uniform(5, 8, -1.0, 1.0, &mut rng);
        let mask = [true, false, true, true, false];
        let e = pool(&t, &mask).unwrap();
        for c in 0..8 {
            let mut sum = 0.0;
            let mut n = 0.0;
            for (r, &m) in mask.iter().enumerate() {
                if m {
                    sum += t.get(r, c);
                    n += 1.0;
                }
            }
            assert!((e.get(0, c) - sum / n).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_rejects_all_masked() {
        let t = Tensor::zeros(2, 2);
        assert!(matches!(pool(&t, &[false, false]), Err(Error::Contract(_))));
    }

    #[test]
    fn head_zero_weights_give_half() {
        let mut head = ScalarHead {
            w: Param::new(Tensor::zeros(4, 1)),
            b: Param::new(Tensor::zeros(1, 1)),
            cache: None,
        };
        let e = Tensor::from_rows(&[vec![3.0, -2.0, 0.5, 1.0]]).unwrap();
        assert_eq!(head.predict(&e).unwrap(), 0.5);
    }

    #[test]
    fn head_output_strictly_inside_unit_interval_and_monotone_in_bias() {
        let mut rng = SplitMix64::new(6);
        let mut head = ScalarHead::seeded(4, &mut rng);
        let e = Tensor::random_uniform(1, 4, -5.0, 5.0, &mut rng);
        let y0 = head.predict(&e).unwrap();
        assert!(y0 > 0.0 && y0 < 1.0);
        let b0 = head.b.value().get(0, 0);
        head.b.value_mut().set(0, 0, b0 + 1.0);
        let y1 = head.predict(&e).unwrap();
        assert!(y1 > y0);
    }

    #[test]
    fn cosine_self_similarity_is_one() {
        let e = SentenceEmbedding::new(vec![0.3, -0.7, 1.2], "x");
        let sim = crate::curation::cosine_similarity(&e, &e).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
    }
}
