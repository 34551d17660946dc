//! One ensemble member: encoder stack + refinement head + scalar head,
//! assembled end to end with a shared parameter registry.

use crate::encoder::{ContextEmbeddings, CrossAttentionLayer, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::numerics::{ActivationKind, Param, Tensor};
use crate::refinement::{pool, pool_backward, Refinement, ScalarHead, SentenceEmbedding};
use crate::rng::SplitMix64;
use crate::tokenizer::TokenSeq;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberConfig {
    pub encoder: EncoderConfig,
    pub kernel_width: usize,
    #[serde(default = "default_activation")]
    pub activation: ActivationKind,
}

fn default_activation() -> ActivationKind {
    ActivationKind::Relu
}

impl MemberConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.kernel_width == 0 || self.kernel_width % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_width must be odd and >= 1, got {}",
                self.kernel_width
            )));
        }
        Ok(())
    }
}

pub struct MemberModel {
    pub cfg: MemberConfig,
    pub encoder: Encoder,
    pub refinement: Refinement,
    pub head: ScalarHead,
    last_mask: Option<Vec<bool>>,
}

impl MemberModel {
    /// Deterministic initialization from the config seed. The
    /// cross-attention block draws its parameters last so that toggling
    /// `use_cross_attention` leaves every shared parameter bit-identical.
    pub fn seeded(cfg: MemberConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(cfg.encoder.seed);
        let mut core_cfg = cfg.encoder.clone();
        core_cfg.use_cross_attention = false;
        let mut encoder = Encoder::seeded(core_cfg, &mut rng)?;
        let refinement = Refinement::seeded(cfg.encoder.d_model, cfg.kernel_width, cfg.activation, &mut rng)?;
        let head = ScalarHead::seeded(cfg.encoder.d_model, &mut rng);
        if cfg.encoder.use_cross_attention {
            encoder.cross = Some(CrossAttentionLayer::seeded(&cfg.encoder, &mut rng));
            encoder.cfg.use_cross_attention = true;
        }
        Ok(Self { cfg, encoder, refinement, head, last_mask: None })
    }

    pub fn max_len(&self) -> usize {
        self.cfg.encoder.max_len
    }

    /// Full forward pass to a scalar score in (0, 1).
    pub fn forward(&mut self, seq: &TokenSeq, ctx: Option<&ContextEmbeddings>) -> Result<f64> {
        let embedding = self.embed_tensor(seq, ctx)?;
        self.head.predict(&embedding)
    }

    /// Pooled sentence embedding (1 x d_model) after refinement.
    pub fn embed_tensor(&mut self, seq: &TokenSeq, ctx: Option<&ContextEmbeddings>) -> Result<Tensor> {
        let hidden = self.encoder.encode(seq, ctx)?;
        let refined = self.refinement.refine(&hidden)?;
        let pooled = pool(&refined, &hidden.mask)?;
        self.last_mask = Some(hidden.mask);
        Ok(pooled)
    }

    pub fn embed(&mut self, seq: &TokenSeq, ctx: Option<&ContextEmbeddings>, source_id: &str) -> Result<SentenceEmbedding> {
        let t = self.embed_tensor(seq, ctx)?;
        Ok(SentenceEmbedding::new(t.row(0).to_vec(), source_id))
    }

    /// Backpropagate from d(loss)/d(score); accumulates into every
    /// parameter's gradient buffer.
    pub fn backward(&mut self, d_pred: f64) -> Result<()> {
        let mask = self
            .last_mask
            .clone()
            .ok_or_else(|| Error::State("model: backward called before forward".into()))?;
        let d_embedding = self.head.backward(d_pred)?;
        let d_refined = pool_backward(&d_embedding, &mask);
        let d_states = self.refinement.backward(&d_refined)?;
        self.encoder.backward(&d_states)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_params("encoder.", f);
        self.refinement.visit_params("refine.", f);
        self.head.visit_params("head.", f);
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    pub fn sgd_step(&mut self, lr: f64, l2: f64) {
        self.visit_params(&mut |_, p| p.sgd_step(lr, l2));
    }

    pub fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _| names.push(n.to_string()));
        names
    }

    /// Snapshot of every parameter tensor in registry order.
    pub fn param_values(&mut self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, p| out.push((n.to_string(), p.value().clone())));
        out
    }

    /// The freshly seeded token-embedding table for this config; used as the
    /// fixed retrieval embedder regardless of how far training has moved the
    /// live table.
    pub fn initial_token_embedding(cfg: &MemberConfig) -> Result<Tensor> {
        let snapshot = MemberModel::seeded(cfg.clone())?;
        Ok(snapshot.encoder.tok_emb.value().clone())
    }
}
