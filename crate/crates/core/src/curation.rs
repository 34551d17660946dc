//! Pseudo-label data curation: corpus ingestion, embedding-based top-k
//! retrieval, error-filtered pseudo-labeling, rule-based augmentation, and
//! final dataset assembly.

use crate::dataset::{LabeledExample, Origin};
use crate::error::{Error, Result};
use crate::model::MemberModel;
use crate::numerics::Tensor;
use crate::refinement::SentenceEmbedding;
use crate::rng::SplitMix64;
use crate::tokenizer::{tokenize, Snippet, Vocab};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

pub const DEFAULT_TOP_K: usize = 5;

/// u.v / (|u||v|); rejects zero-norm inputs.
pub fn cosine_similarity(u: &SentenceEmbedding, v: &SentenceEmbedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Dimension(format!(
            "cosine: dimensions {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    let nu: f64 = u.values.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.values.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Contract(format!(
            "cosine similarity undefined for zero-norm embedding ({} / {})",
            u.source_id, v.source_id
        )));
    }
    Ok(dot / (nu * nv))
}

/// Ranked top-k retrieval result for one anchor. Scores are non-increasing;
/// ties broken by snippet id ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub anchor_id: String,
    pub ranked: Vec<(usize, f64)>,
}

/// The k highest-cosine snippets for the anchor. Bounded insertion keeps
/// this O(N k) rather than a full sort.
pub fn retrieve_top_k(anchor: &SentenceEmbedding, snippets: &[Snippet], k: usize) -> Result<RetrievalResult> {
    if snippets.is_empty() {
        return Err(Error::Contract("retrieval over an empty snippet set".into()));
    }
    if k == 0 {
        return Err(Error::Config("retrieval k must be >= 1".into()));
    }
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    for s in snippets {
        let emb = s
            .embedding
            .as_ref()
            .ok_or_else(|| Error::State(format!("snippet {} has no embedding", s.id)))?;
        let cand = SentenceEmbedding::new(emb.clone(), format!("snippet:{}", s.id));
        let score = cosine_similarity(anchor, &cand)?;
        // Insertion position: by score descending, then id ascending.
        let pos = best
            .iter()
            .position(|&(id, sc)| score > sc || (score == sc && s.id < id))
            .unwrap_or(best.len());
        if pos < k {
            best.insert(pos, (s.id, score));
            best.truncate(k);
        }
    }
    Ok(RetrievalResult { anchor_id: anchor.source_id.clone(), ranked: best })
}

/// How the per-anchor filter width sigma_i is resolved when an example
/// carries none of its own.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaFallback {
    /// Sample standard deviation of all gold labels divided by sqrt(N).
    Stderr,
    /// A fixed width.
    Const(f64),
    /// No fallback: missing sigma is a configuration error.
    None,
}

impl Default for SigmaFallback {
    fn default() -> Self {
        SigmaFallback::Stderr
    }
}

/// Standard error of the gold labels: sample std dev / sqrt(N).
pub fn gold_label_stderr(gold: &[LabeledExample]) -> Result<f64> {
    if gold.len() < 2 {
        return Err(Error::Config(
            "stderr sigma fallback needs at least two gold examples".into(),
        ));
    }
    let n = gold.len() as f64;
    let mean = gold.iter().map(|g| g.label).sum::<f64>() / n;
    let var = gold.iter().map(|g| (g.label - mean) * (g.label - mean)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / n.sqrt())
}

fn resolve_sigma(anchor: &LabeledExample, fallback: SigmaFallback, stderr: Option<f64>) -> Result<f64> {
    if let Some(s) = anchor.sigma {
        return Ok(s);
    }
    match fallback {
        SigmaFallback::Stderr => stderr.ok_or_else(|| {
            Error::Config("sigma fallback unavailable: gold label stderr undefined".into())
        }),
        SigmaFallback::Const(c) => Ok(c),
        SigmaFallback::None => Err(Error::Config(format!(
            "example {:?} has no sigma and no fallback is configured",
            anchor.text
        ))),
    }
}

/// Score retrieved snippets with the model and keep those whose pseudo-label
/// lands within sigma_i of the anchor's gold label (boundary inclusive).
/// Snippets retrieved by several anchors are deduplicated by exact text,
/// first anchor (in result order) wins. With `filter_enabled` false every
/// unique scored snippet is kept.
pub fn pseudo_label_and_filter(
    results: &[RetrievalResult],
    snippets: &[Snippet],
    scorer: &mut dyn FnMut(&Snippet) -> Result<f64>,
    gold: &[LabeledExample],
    fallback: SigmaFallback,
    filter_enabled: bool,
) -> Result<Vec<LabeledExample>> {
    let by_id: BTreeMap<usize, &Snippet> = snippets.iter().map(|s| (s.id, s)).collect();
    let stderr = gold_label_stderr(gold).ok();
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for result in results {
        let anchor_idx: usize = result
            .anchor_id
            .strip_prefix("gold:")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("unparseable anchor id {:?}", result.anchor_id)))?;
        let anchor = gold
            .get(anchor_idx)
            .ok_or_else(|| Error::Data(format!("anchor {} out of range", result.anchor_id)))?;
        let sigma = resolve_sigma(anchor, fallback, stderr)?;
        for &(snippet_id, _score) in &result.ranked {
            let snippet = by_id
                .get(&snippet_id)
                .ok_or_else(|| Error::Data(format!("retrieved unknown snippet {snippet_id}")))?;
            let text = snippet.text();
            if text.is_empty() || !seen.insert(text.clone()) {
                continue;
            }
            let pseudo_label = scorer(snippet)?;
            if filter_enabled && (pseudo_label - anchor.label).abs() > sigma {
                continue;
            }
            kept.push(LabeledExample {
                text,
                label: pseudo_label,
                sigma: None,
                origin: Origin::Pseudo,
                anchor_id: Some(result.anchor_id.clone()),
            });
        }
    }
    Ok(kept)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmenterKind {
    /// Replace each lexicon-covered token with a random synonym with
    /// probability `rate`.
    SynonymReplace,
    /// Swap adjacent token pairs with probability `rate`; a paraphrase stub.
    AdjacentSwap,
}

/// Deterministic rule-based augmentation. Labels are copied; token count is
/// preserved by both augmenters; origin becomes `augmented`.
pub fn augment(
    examples: &[LabeledExample],
    lexicon: &BTreeMap<String, Vec<String>>,
    rate: f64,
    seed: u64,
    kind: AugmenterKind,
) -> Result<Vec<LabeledExample>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("augmentation rate {rate} outside [0,1]")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let mut tokens = tokenize(&ex.text);
        match kind {
            AugmenterKind::SynonymReplace => {
                for tok in tokens.iter_mut() {
                    if let Some(synonyms) = lexicon.get(tok.as_str()) {
                        if rng.next_f64() < rate {
                            *tok = synonyms[rng.below(synonyms.len())].clone();
                        }
                    }
                }
            }
            AugmenterKind::AdjacentSwap => {
                let mut i = 0;
                while i + 1 < tokens.len() {
                    if rng.next_f64() < rate {
                        tokens.swap(i, i + 1);
                        i += 2;
                    } else {
                        i += 1;
                    }
                }
            }
        }
        out.push(LabeledExample {
            text: tokens.join(" "),
            label: ex.label,
            sigma: None,
            origin: Origin::Augmented,
            anchor_id: ex.anchor_id.clone(),
        });
    }
    Ok(out)
}

/// D_final = gold U pseudo U augmented with exact-text deduplication,
/// precedence gold > pseudo > augmented, gold-first stable ordering.
pub fn assemble_final(
    gold: &[LabeledExample],
    pseudo: &[LabeledExample],
    augmented: &[LabeledExample],
) -> Vec<LabeledExample> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(gold.len() + pseudo.len() + augmented.len());
    for tier in [gold, pseudo, augmented] {
        for ex in tier {
            if seen.insert(ex.text.clone()) {
                out.push(ex.clone());
            }
        }
    }
    out
}

/// A tokenized external document.
#[derive(Clone, Debug)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
}

/// Load a directory of plain-text files, one document per file, sorted by
/// file name. An optional keyword allowlist keeps only documents containing
/// at least one listed token.
pub fn load_corpus(dir: &Path, keyword_allowlist: &[String]) -> Result<Vec<Document>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("corpus directory {} does not exist", dir.display())));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().map(|e| e == "txt").unwrap_or(false))
        .collect();
    paths.sort();
    let allow: HashSet<&str> = keyword_allowlist.iter().map(String::as_str).collect();
    let mut docs = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path)?;
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            continue;
        }
        if !allow.is_empty() && !tokens.iter().any(|t| allow.contains(t.as_str())) {
            continue;
        }
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        docs.push(Document { id, tokens });
    }
    Ok(docs)
}

/// Sentence embedder used for retrieval.
pub trait SnippetEmbedder {
    fn dim(&self) -> usize;
    fn embed_tokens(&mut self, tokens: &[String], source_id: &str) -> Result<SentenceEmbedding>;
}

/// Mean of word-embedding rows; the pre-training-phase retrieval mode.
pub struct MeanWordEmbedder<'a> {
    table: Tensor,
    vocab: &'a Vocab,
}

impl<'a> MeanWordEmbedder<'a> {
    pub fn new(table: Tensor, vocab: &'a Vocab) -> Self {
        Self { table, vocab }
    }
}

impl SnippetEmbedder for MeanWordEmbedder<'_> {
    fn dim(&self) -> usize {
        self.table.cols()
    }

    fn embed_tokens(&mut self, tokens: &[String], source_id: &str) -> Result<SentenceEmbedding> {
        let ids: Vec<u32> = tokens
            .iter()
            .filter(|t| t.as_str() != crate::tokenizer::PAD_TOKEN)
            .map(|t| self.vocab.id_of(t))
            .collect();
        if ids.is_empty() {
            return Err(Error::Contract(format!("cannot embed empty token list ({source_id})")));
        }
        let mut acc = vec![0.0; self.table.cols()];
        for &id in &ids {
            for (a, &v) in acc.iter_mut().zip(self.table.row(id as usize)) {
                *a += v;
            }
        }
        let n = ids.len() as f64;
        for a in acc.iter_mut() {
            *a /= n;
        }
        Ok(SentenceEmbedding::new(acc, source_id))
    }
}

/// Full encode -> refine -> pool embedding through a member model.
pub struct ModelEmbedder<'a> {
    model: &'a mut MemberModel,
    vocab: &'a Vocab,
}

impl<'a> ModelEmbedder<'a> {
    pub fn new(model: &'a mut MemberModel, vocab: &'a Vocab) -> Self {
        Self { model, vocab }
    }
}

impl SnippetEmbedder for ModelEmbedder<'_> {
    fn dim(&self) -> usize {
        self.model.cfg.encoder.d_model
    }

    fn embed_tokens(&mut self, tokens: &[String], source_id: &str) -> Result<SentenceEmbedding> {
        let seq = self.vocab.encode_tokens(tokens, self.model.max_len());
        self.model.embed(&seq, None, source_id)
    }
}
