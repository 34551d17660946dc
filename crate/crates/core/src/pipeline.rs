//! End-to-end pipeline commands over a validated run configuration:
//! vocabulary building, curation, member training, ensemble fitting,
//! evaluation, ablation, and report assembly. Every command is idempotent
//! given identical config and seed.

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{EmbedMode, RunConfig};
use crate::curation::{
    assemble_final, augment, load_corpus, pseudo_label_and_filter, retrieve_top_k,
    MeanWordEmbedder, ModelEmbedder, RetrievalResult, SnippetEmbedder,
};
use crate::dataset::{read_jsonl, read_lexicon, write_jsonl, LabeledExample};
use crate::encoder::ContextEmbeddings;
use crate::ensemble::{fit_ridge, fnv1a64, EnsembleModel, PredictionMatrix};
use crate::error::{Error, Result};
use crate::metrics::{EvalPair, MetricsReport};
use crate::model::{MemberConfig, MemberModel};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, SplitMix64};
use crate::tokenizer::{avg_snippet_length, snippet_windows, tokenize, Snippet, Vocab};
use crate::trainer::{train, TrainExample};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;

/// Build the vocabulary from the gold training texts plus the external
/// corpus and write it to the output directory.
pub fn cmd_build_vocab(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.paths.output_dir)?;
    let train = read_jsonl(&cfg.paths.train)?;
    let docs = load_corpus(&cfg.paths.corpus_dir, &cfg.curation.keyword_allowlist)?;
    let mut token_lists: Vec<Vec<String>> = train.iter().map(|ex| tokenize(&ex.text)).collect();
    token_lists.extend(docs.into_iter().map(|d| d.tokens));
    let refs: Vec<&[String]> = token_lists.iter().map(|t| t.as_slice()).collect();
    let vocab = Vocab::build(refs);
    let path = cfg.vocab_path();
    vocab.write_to(&path)?;
    Ok(path)
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocab> {
    let path = cfg.vocab_path();
    if !path.exists() {
        return Err(Error::Data(format!(
            "{} not found; run build-vocab first",
            path.display()
        )));
    }
    Vocab::read_from(&path)
}

/// Snippet length L (mean gold-train token count) and the windowed,
/// id-numbered snippet pool over the corpus.
fn snippet_pool(cfg: &RunConfig) -> Result<(usize, Vec<Snippet>)> {
    let train = read_jsonl(&cfg.paths.train)?;
    if train.is_empty() {
        return Err(Error::Config(format!("{} holds no examples", cfg.paths.train.display())));
    }
    let counts: Vec<usize> = train.iter().map(|ex| tokenize(&ex.text).len()).collect();
    let len = avg_snippet_length(&counts)?;
    let docs = load_corpus(&cfg.paths.corpus_dir, &cfg.curation.keyword_allowlist)?;
    let mut snippets = Vec::new();
    for doc in &docs {
        let mut windows = snippet_windows(&doc.id, &doc.tokens, len, snippets.len());
        snippets.append(&mut windows);
    }
    Ok((len, snippets))
}

/// Fixed per-example cross-attention context: snippets embedded in a
/// member's freshly-seeded word-embedding space, retrieved per input text.
/// Re-derived from the member seed, so training-time and evaluation-time
/// context agree bit-for-bit.
pub struct ContextProvider {
    k: usize,
    snippets: Vec<Snippet>,
    init_table: Tensor,
}

impl ContextProvider {
    pub fn build(cfg: &RunConfig, vocab: &Vocab, member_cfg: &MemberConfig) -> Result<Option<Self>> {
        if !member_cfg.encoder.use_cross_attention {
            return Ok(None);
        }
        let (_, mut snippets) = snippet_pool(cfg)?;
        if snippets.is_empty() {
            return Ok(None);
        }
        let init_table = MemberModel::initial_token_embedding(member_cfg)?;
        let mut embedder = MeanWordEmbedder::new(init_table.clone(), vocab);
        for s in snippets.iter_mut() {
            let e = embedder.embed_tokens(&s.tokens, &format!("snippet:{}", s.id))?;
            s.embedding = Some(e.values);
        }
        Ok(Some(Self { k: cfg.curation.k, snippets, init_table }))
    }

    pub fn context_for(&self, text: &str, vocab: &Vocab) -> Result<Option<ContextEmbeddings>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Ok(None);
        }
        let mut embedder = MeanWordEmbedder::new(self.init_table.clone(), vocab);
        let anchor = embedder.embed_tokens(&tokens, "query")?;
        let result = retrieve_top_k(&anchor, &self.snippets, self.k)?;
        let rows: Vec<Vec<f64>> = result
            .ranked
            .iter()
            .map(|&(id, _)| self.snippets[id].embedding.clone().expect("embedded above"))
            .collect();
        Ok(Some(ContextEmbeddings::new(Tensor::from_rows(&rows)?)))
    }
}

fn encode_dataset(
    examples: &[LabeledExample],
    vocab: &Vocab,
    max_len: usize,
    ctx: Option<&ContextProvider>,
) -> Result<Vec<TrainExample>> {
    examples
        .iter()
        .map(|ex| {
            let seq = vocab.encode_text(&ex.text, max_len);
            let ctx = match ctx {
                Some(provider) => provider.context_for(&ex.text, vocab)?,
                None => None,
            };
            Ok(TrainExample { seq, ctx, label: ex.label })
        })
        .collect()
}

/// Deterministic holdout: indices shuffled by a stream derived from the
/// global seed; the calibration tail fits the ensemble, the head trains
/// members. Both halves are returned sorted.
pub fn calibration_split(cfg: &RunConfig, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(derive_seed(cfg.seed, "calibration-split"));
    rng.shuffle(&mut order);
    let n_calib = ((n as f64 * cfg.ensemble.calibration_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut calib: Vec<usize> = order[..n_calib].to_vec();
    let mut train: Vec<usize> = order[n_calib..].to_vec();
    calib.sort_unstable();
    train.sort_unstable();
    (train, calib)
}

fn calibration_hash(examples: &[LabeledExample], idxs: &[usize]) -> String {
    let mut bytes = Vec::new();
    for &i in idxs {
        bytes.extend_from_slice(examples[i].text.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&examples[i].label.to_le_bytes());
    }
    format!("{:016x}", fnv1a64(&bytes))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurationReport {
    pub n_train: usize,
    pub snippet_len: usize,
    pub n_snippets: usize,
    /// Unique retrieved candidates scored (pre-filter).
    pub n_retrieved_unique: usize,
    /// Retained pseudo examples (post-filter).
    pub n_pseudo: usize,
    pub n_augmented: usize,
    pub n_final: usize,
    pub filter_enabled: bool,
}

/// Curate the final training dataset: retrieve top-k snippets per gold
/// anchor, pseudo-label and filter them, augment, assemble, and write
/// `d_final.jsonl` plus the counts report and the top-k similarity CSV.
pub fn cmd_curate(cfg: &RunConfig, no_filter: bool) -> Result<CurationReport> {
    std::fs::create_dir_all(&cfg.paths.output_dir)?;
    let vocab = load_vocab(cfg)?;
    let gold = read_jsonl(&cfg.paths.train)?;
    if gold.is_empty() {
        return Err(Error::Config(format!("{} holds no examples", cfg.paths.train.display())));
    }
    let (snippet_len, mut snippets) = snippet_pool(cfg)?;

    // Retrieval/scoring model: the configured checkpoint, or member 0's
    // seeded initialization as the pre-training-phase fallback.
    let mut model = match &cfg.curation.checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Data(format!(
                    "curation checkpoint {} does not exist",
                    path.display()
                )));
            }
            read_checkpoint(path)?
        }
        None => MemberModel::seeded(cfg.members[0].to_member_config(0, cfg.seed, vocab.len()))?,
    };
    let mode = match cfg.curation.embed_mode {
        EmbedMode::Auto => {
            if cfg.curation.checkpoint.is_some() {
                EmbedMode::Full
            } else {
                EmbedMode::Mean
            }
        }
        other => other,
    };

    // Phase 1: embed snippets and anchors.
    let mut anchors = Vec::with_capacity(gold.len());
    {
        let mut embedder: Box<dyn SnippetEmbedder + '_> = match mode {
            EmbedMode::Mean => Box::new(MeanWordEmbedder::new(model.encoder.tok_emb.value().clone(), &vocab)),
            _ => Box::new(ModelEmbedder::new(&mut model, &vocab)),
        };
        for s in snippets.iter_mut() {
            let e = embedder.embed_tokens(&s.tokens, &format!("snippet:{}", s.id))?;
            s.embedding = Some(e.values);
        }
        for (i, ex) in gold.iter().enumerate() {
            let tokens = tokenize(&ex.text);
            if tokens.is_empty() {
                return Err(Error::Data(format!("gold example {i} has no tokens")));
            }
            anchors.push(embedder.embed_tokens(&tokens, &format!("gold:{i}"))?);
        }
    }

    // Phase 2: retrieval.
    let mut results: Vec<RetrievalResult> = Vec::new();
    if !snippets.is_empty() {
        for anchor in &anchors {
            results.push(retrieve_top_k(anchor, &snippets, cfg.curation.k)?);
        }
    }

    // Top-k similarity distribution per anchor.
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(
            cfg.paths.output_dir.join("topk_similarity.csv"),
        )?);
        writeln!(f, "anchor_id,mean_topk_cosine")?;
        for r in &results {
            let mean = r.ranked.iter().map(|&(_, s)| s).sum::<f64>() / r.ranked.len().max(1) as f64;
            writeln!(f, "{},{}", r.anchor_id, mean)?;
        }
    }

    let n_retrieved_unique = {
        let mut seen = std::collections::HashSet::new();
        results
            .iter()
            .flat_map(|r| r.ranked.iter())
            .filter(|&&(id, _)| {
                let text = snippets[id].text();
                !text.is_empty() && seen.insert(text)
            })
            .count()
    };

    // Phase 3: pseudo-label and filter.
    let vocab_ref = &vocab;
    let max_len = model.max_len();
    let mut scorer = {
        let model = &mut model;
        move |snippet: &Snippet| {
            let seq = vocab_ref.encode_tokens(&snippet.tokens, max_len);
            model.forward(&seq, None)
        }
    };
    let pseudo = pseudo_label_and_filter(
        &results,
        &snippets,
        &mut scorer,
        &gold,
        cfg.curation.sigma_fallback,
        !no_filter,
    )?;

    // Phase 4: augmentation over gold plus retained pseudo examples.
    let lexicon = read_lexicon(&cfg.paths.lexicon)?;
    let mut base = gold.clone();
    base.extend(pseudo.iter().cloned());
    let augmented = augment(
        &base,
        &lexicon,
        cfg.curation.augment_rate,
        derive_seed(cfg.seed, "augment"),
        cfg.curation.augmenter,
    )?;

    let final_set = assemble_final(&gold, &pseudo, &augmented);
    write_jsonl(&cfg.d_final_path(), &final_set)?;

    let report = CurationReport {
        n_train: gold.len(),
        snippet_len,
        n_snippets: snippets.len(),
        n_retrieved_unique,
        n_pseudo: pseudo.len(),
        n_augmented: augmented.len(),
        n_final: final_set.len(),
        filter_enabled: !no_filter,
    };
    std::fs::write(
        cfg.paths.output_dir.join("curation_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}

/// Train one member. In bootstrap mode the model trains on the gold split
/// alone and lands in `bootstrap.ckpt` (the curation scorer); otherwise it
/// trains on the non-calibration share of `d_final.jsonl`.
pub fn cmd_train(cfg: &RunConfig, member_index: usize, bootstrap: bool) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(&cfg.paths.output_dir)?;
    if member_index >= cfg.members.len() {
        return Err(Error::Config(format!(
            "member index {member_index} out of range ({} members)",
            cfg.members.len()
        )));
    }
    let vocab = load_vocab(cfg)?;
    let member_cfg = cfg.members[member_index].to_member_config(member_index, cfg.seed, vocab.len());
    let mut model = MemberModel::seeded(member_cfg.clone())?;

    let dataset: Vec<LabeledExample> = if bootstrap {
        read_jsonl(&cfg.paths.train)?
    } else {
        let path = cfg.d_final_path();
        if !path.exists() {
            return Err(Error::Data(format!("{} not found; run curate first", path.display())));
        }
        let d_final = read_jsonl(&path)?;
        let (train_idx, _) = calibration_split(cfg, d_final.len());
        train_idx.into_iter().map(|i| d_final[i].clone()).collect()
    };
    let val = read_jsonl(&cfg.paths.val)?;

    let ctx = ContextProvider::build(cfg, &vocab, &member_cfg)?;
    let train_examples = encode_dataset(&dataset, &vocab, model.max_len(), ctx.as_ref())?;
    let val_examples = encode_dataset(&val, &vocab, model.max_len(), ctx.as_ref())?;

    let mut train_cfg = cfg.train_config(member_index);
    if bootstrap {
        train_cfg.seed = derive_seed(cfg.seed, "train:bootstrap");
    }
    let trace = train(&mut model, &train_examples, Some(&val_examples), &train_cfg)?;

    let (ckpt_path, trace_path) = if bootstrap {
        (cfg.bootstrap_checkpoint_path(), cfg.paths.output_dir.join("bootstrap_trace.csv"))
    } else {
        (cfg.member_checkpoint_path(member_index), cfg.member_trace_path(member_index))
    };
    write_checkpoint(&ckpt_path, &mut model)?;
    trace.write_csv(&trace_path)?;
    Ok((ckpt_path, trace_path))
}

/// Score a gold dataset with a trained member, honoring its cross-attention
/// context when configured.
fn member_scores(
    cfg: &RunConfig,
    vocab: &Vocab,
    model: &mut MemberModel,
    dataset: &[LabeledExample],
) -> Result<Vec<f64>> {
    let ctx = ContextProvider::build(cfg, vocab, &model.cfg.clone())?;
    let examples = encode_dataset(dataset, vocab, model.max_len(), ctx.as_ref())?;
    examples
        .iter()
        .map(|ex| model.forward(&ex.seq, ex.ctx.as_ref()))
        .collect()
}

/// Fit the stacking weights on the held-out calibration share of d_final
/// and write the ensemble manifest.
pub fn cmd_fit_ensemble(cfg: &RunConfig) -> Result<EnsembleModel> {
    let vocab = load_vocab(cfg)?;
    let d_final_path = cfg.d_final_path();
    if !d_final_path.exists() {
        return Err(Error::Data(format!("{} not found; run curate first", d_final_path.display())));
    }
    let d_final = read_jsonl(&d_final_path)?;
    let (_, calib_idx) = calibration_split(cfg, d_final.len());
    let calib: Vec<LabeledExample> = calib_idx.iter().map(|&i| d_final[i].clone()).collect();

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cfg.members.len());
    let mut member_names = Vec::with_capacity(cfg.members.len());
    for i in 0..cfg.members.len() {
        let ckpt = cfg.member_checkpoint_path(i);
        if !ckpt.exists() {
            return Err(Error::Data(format!("{} not found; train member {i} first", ckpt.display())));
        }
        let mut model = read_checkpoint(&ckpt)?;
        columns.push(member_scores(cfg, &vocab, &mut model, &calib)?);
        member_names.push(format!("member_{i}.ckpt"));
    }

    let n = calib.len();
    let m = columns.len();
    let mut f = Tensor::zeros(n, m);
    for (c, col) in columns.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            f.set(r, c, v);
        }
    }
    let y: Vec<f64> = calib.iter().map(|ex| ex.label).collect();
    let pm = PredictionMatrix::new(f, y)?;
    let weights = fit_ridge(&pm, cfg.ensemble.lambda)?;

    let ensemble = EnsembleModel {
        members: member_names,
        weights,
        lambda: cfg.ensemble.lambda,
        calibration_hash: calibration_hash(&d_final, &calib_idx),
    };
    ensemble.write_manifest(&cfg.ensemble_manifest_path())?;
    Ok(ensemble)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalTarget {
    Member(usize),
    Ensemble,
}

impl EvalTarget {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "ensemble" {
            return Ok(EvalTarget::Ensemble);
        }
        let idx = s
            .strip_prefix("member:")
            .or_else(|| s.strip_prefix("member"))
            .unwrap_or(s);
        idx.parse::<usize>()
            .map(EvalTarget::Member)
            .map_err(|_| Error::Config(format!("unknown evaluation target {s:?}; use ensemble or member:<i>")))
    }

    fn label(&self) -> String {
        match self {
            EvalTarget::Member(i) => format!("member_{i}"),
            EvalTarget::Ensemble => "ensemble".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}; use train, val, or test"))),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn path(&self, cfg: &RunConfig) -> PathBuf {
        match self {
            Split::Train => cfg.paths.train.clone(),
            Split::Val => cfg.paths.val.clone(),
            Split::Test => cfg.paths.test.clone(),
        }
    }
}

/// One evaluation row: the four metrics plus identification columns
/// (lambda and member list are filled for ensemble rows).
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub target: String,
    pub split: String,
    pub lambda: Option<f64>,
    pub members: Vec<String>,
    pub report: MetricsReport,
}

impl EvalRow {
    pub const CSV_HEADER: &'static str =
        "target,split,lambda,members,accuracy,f1,logloss,auroc,n,threshold";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.target,
            self.split,
            self.lambda.map(|l| l.to_string()).unwrap_or_default(),
            self.members.join(";"),
            self.report.accuracy,
            self.report.f1,
            self.report.logloss,
            self.report.auroc,
            self.report.n,
            self.report.threshold
        )
    }
}

/// Evaluate a member or the ensemble on a gold split; prints and writes the
/// report row.
pub fn cmd_evaluate(cfg: &RunConfig, target: EvalTarget, split: Split) -> Result<EvalRow> {
    std::fs::create_dir_all(&cfg.paths.output_dir)?;
    let vocab = load_vocab(cfg)?;
    let dataset = read_jsonl(&split.path(cfg))?;
    if dataset.is_empty() {
        return Err(Error::Data(format!("{} split holds no examples", split.label())));
    }

    let row = match target {
        EvalTarget::Member(i) => {
            let ckpt = cfg.member_checkpoint_path(i);
            if !ckpt.exists() {
                return Err(Error::Data(format!("{} not found; train member {i} first", ckpt.display())));
            }
            let mut model = read_checkpoint(&ckpt)?;
            let scores = member_scores(cfg, &vocab, &mut model, &dataset)?;
            let pairs: Vec<EvalPair> = scores
                .iter()
                .zip(&dataset)
                .map(|(&s, ex)| EvalPair::new(s, ex.label >= 0.5))
                .collect();
            EvalRow {
                target: target.label(),
                split: split.label().into(),
                lambda: None,
                members: Vec::new(),
                report: MetricsReport::compute(&pairs)?,
            }
        }
        EvalTarget::Ensemble => {
            let manifest_path = cfg.ensemble_manifest_path();
            if !manifest_path.exists() {
                return Err(Error::Data(format!(
                    "{} not found; run fit-ensemble first",
                    manifest_path.display()
                )));
            }
            let ensemble = EnsembleModel::read_manifest(&manifest_path)?;
            let mut member_cols = Vec::new();
            for name in &ensemble.members {
                let ckpt = cfg.paths.output_dir.join(name);
                if !ckpt.exists() {
                    return Err(Error::Data(format!("member checkpoint {} missing", ckpt.display())));
                }
                let mut model = read_checkpoint(&ckpt)?;
                member_cols.push(member_scores(cfg, &vocab, &mut model, &dataset)?);
            }
            let pairs: Vec<EvalPair> = dataset
                .iter()
                .enumerate()
                .map(|(r, ex)| {
                    let member_scores: Vec<f64> = member_cols.iter().map(|col| col[r]).collect();
                    Ok(EvalPair::new(ensemble.combine(&member_scores)?, ex.label >= 0.5))
                })
                .collect::<Result<_>>()?;
            EvalRow {
                target: target.label(),
                split: split.label().into(),
                lambda: Some(ensemble.lambda),
                members: ensemble.members.clone(),
                report: MetricsReport::compute(&pairs)?,
            }
        }
    };

    let out = cfg
        .paths
        .output_dir
        .join(format!("eval_{}_{}.csv", row.target, row.split));
    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(f, "{}", EvalRow::CSV_HEADER)?;
    writeln!(f, "{}", row.csv_row())?;
    println!("{}", row.report.text_record(&format!("{} {}", row.target, row.split)));
    Ok(row)
}

/// Outcome of one full pipeline run (used by the ablation driver).
pub struct VariantOutcome {
    pub ensemble_test: MetricsReport,
    pub members_test: Vec<MetricsReport>,
    pub members_val: Vec<MetricsReport>,
}

/// The complete documented flow: build-vocab, bootstrap-train member 0 on
/// gold, curate with the bootstrap checkpoint, train all members on
/// d_final, fit the ensemble, and evaluate everything on val/test.
pub fn run_full_pipeline(cfg: &RunConfig) -> Result<VariantOutcome> {
    cmd_build_vocab(cfg)?;
    cmd_train(cfg, 0, true)?;
    let mut curated_cfg = cfg.clone();
    curated_cfg.curation.checkpoint = Some(cfg.bootstrap_checkpoint_path());
    cmd_curate(&curated_cfg, false)?;
    for i in 0..cfg.members.len() {
        cmd_train(cfg, i, false)?;
    }
    cmd_fit_ensemble(cfg)?;
    collect_outcome(cfg)
}

fn collect_outcome(cfg: &RunConfig) -> Result<VariantOutcome> {
    let ensemble_test = cmd_evaluate(cfg, EvalTarget::Ensemble, Split::Test)?.report;
    let mut members_test = Vec::new();
    let mut members_val = Vec::new();
    for i in 0..cfg.members.len() {
        members_test.push(cmd_evaluate(cfg, EvalTarget::Member(i), Split::Test)?.report);
        members_val.push(cmd_evaluate(cfg, EvalTarget::Member(i), Split::Val)?.report);
    }
    Ok(VariantOutcome { ensemble_test, members_test, members_val })
}

pub const ABLATION_VARIANTS: [&str; 4] =
    ["full", "without_augmentation", "without_cross_attention", "without_ensemble"];

/// Run the four ablation variants and write one CSV row per variant.
/// `without_cross_attention` reuses the full variant's curated dataset and
/// retrains the members with the flag off; `without_ensemble` is the full
/// variant's best member by validation accuracy.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.paths.output_dir)?;
    let ablate_dir = cfg.paths.output_dir.join("ablate");
    std::fs::create_dir_all(&ablate_dir)?;

    let in_variant = |name: &str| {
        let mut c = cfg.clone();
        c.paths.output_dir = ablate_dir.join(name);
        c
    };
    let named = |name: &str, e: Error| Error::Data(format!("ablation variant {name} failed: {e}"));

    // Full pipeline.
    let full_cfg = in_variant("full");
    let full = run_full_pipeline(&full_cfg).map_err(|e| named("full", e))?;

    // Without augmentation: same flow, rate zeroed.
    let mut noaug_cfg = in_variant("without_augmentation");
    noaug_cfg.curation.augment_rate = 0.0;
    let noaug = run_full_pipeline(&noaug_cfg).map_err(|e| named("without_augmentation", e))?;

    // Without cross-attention: reuse the full variant's vocab and curated
    // dataset; retrain members with the flag off.
    let mut nocross_cfg = in_variant("without_cross_attention");
    for m in nocross_cfg.members.iter_mut() {
        m.use_cross_attention = false;
    }
    let nocross = (|| -> Result<VariantOutcome> {
        std::fs::create_dir_all(&nocross_cfg.paths.output_dir)?;
        std::fs::copy(full_cfg.vocab_path(), nocross_cfg.vocab_path())?;
        std::fs::copy(full_cfg.d_final_path(), nocross_cfg.d_final_path())?;
        for i in 0..nocross_cfg.members.len() {
            cmd_train(&nocross_cfg, i, false)?;
        }
        cmd_fit_ensemble(&nocross_cfg)?;
        collect_outcome(&nocross_cfg)
    })()
    .map_err(|e| named("without_cross_attention", e))?;

    // Without ensemble: best full-variant member by validation accuracy.
    let best = full
        .members_val
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.accuracy.partial_cmp(&b.accuracy).unwrap())
        .map(|(i, _)| i)
        .ok_or_else(|| named("without_ensemble", Error::Data("no members evaluated".into())))?;
    let noens = full.members_test[best].clone();

    let csv_path = cfg.paths.output_dir.join("ablation.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(f, "variant,accuracy,f1,logloss,auroc")?;
    for (name, report) in [
        ("full", &full.ensemble_test),
        ("without_augmentation", &noaug.ensemble_test),
        ("without_cross_attention", &nocross.ensemble_test),
        ("without_ensemble", &noens),
    ] {
        writeln!(f, "{name},{},{},{},{}", report.accuracy, report.f1, report.logloss, report.auroc)?;
    }
    Ok(csv_path)
}

/// Merge every eval_*.csv in the output directory into report.csv,
/// Table-I style: one row per evaluated target.
pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = &cfg.paths.output_dir;
    let mut rows = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .map(|n| {
                    let n = n.to_string_lossy();
                    n.starts_with("eval_") && n.ends_with(".csv")
                })
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    for path in &paths {
        let text = std::fs::read_to_string(path)?;
        for line in text.lines().skip(1) {
            if !line.trim().is_empty() {
                rows.push(line.to_string());
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "no eval_*.csv files under {}; run evaluate first",
            dir.display()
        )));
    }
    let out = dir.join("report.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(f, "{}", EvalRow::CSV_HEADER)?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(out)
}
