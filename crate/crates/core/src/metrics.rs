//! Binary classification metrics over scored pairs: accuracy, F1, LogLoss,
//! and rank-based AUROC with ties credited 0.5.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One scored example: model score in [0,1] against a binary gold label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPair {
    pub score: f64,
    pub gold: bool,
}

impl EvalPair {
    pub fn new(score: f64, gold: bool) -> Self {
        Self { score, gold }
    }
}

pub const CLASSIFICATION_THRESHOLD: f64 = 0.5;
pub const LOGLOSS_CLIP: f64 = 1e-15;

fn require_non_empty(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Contract("metrics require at least one pair".into()));
    }
    Ok(())
}

/// (TP + TN) / N at threshold 0.5; score >= 0.5 counts as positive.
pub fn accuracy(pairs: &[EvalPair]) -> Result<f64> {
    require_non_empty(pairs)?;
    let correct = pairs
        .iter()
        .filter(|p| (p.score >= CLASSIFICATION_THRESHOLD) == p.gold)
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// 2PR / (P + R); 0 by convention when there are no true positives.
pub fn f1(pairs: &[EvalPair]) -> Result<f64> {
    require_non_empty(pairs)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for p in pairs {
        let predicted = p.score >= CLASSIFICATION_THRESHOLD;
        match (predicted, p.gold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// -(1/N) sum[y ln s + (1-y) ln(1-s)] with scores clipped to
/// [1e-15, 1 - 1e-15] before the logs.
pub fn logloss(pairs: &[EvalPair]) -> Result<f64> {
    require_non_empty(pairs)?;
    let sum: f64 = pairs
        .iter()
        .map(|p| {
            let s = p.score.clamp(LOGLOSS_CLIP, 1.0 - LOGLOSS_CLIP);
            if p.gold {
                s.ln()
            } else {
                (1.0 - s).ln()
            }
        })
        .sum();
    Ok(-sum / pairs.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counted 0.5 (Mann-Whitney rank formulation).
pub fn auroc(pairs: &[EvalPair]) -> Result<f64> {
    require_non_empty(pairs)?;
    let n_pos = pairs.iter().filter(|p| p.gold).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        let missing = if n_pos == 0 { "positive" } else { "negative" };
        return Err(Error::Contract(format!("auroc needs at least one {missing} example")));
    }

    // Midranks: ties share the average of the integer ranks they span.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].score.partial_cmp(&pairs[b].score).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].score == pairs[order[i]].score {
            j += 1;
        }
        // Ranks are 1-based; the tied block spans ranks i+1 ..= j+1.
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if pairs[idx].gold {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// The four-metric report row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    pub logloss: f64,
    pub auroc: f64,
    pub n: usize,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn compute(pairs: &[EvalPair]) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(pairs)?,
            f1: f1(pairs)?,
            logloss: logloss(pairs)?,
            auroc: auroc(pairs)?,
            n: pairs.len(),
            threshold: CLASSIFICATION_THRESHOLD,
        })
    }

    pub fn csv_header() -> &'static str {
        "accuracy,f1,logloss,auroc,n,threshold"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.accuracy, self.f1, self.logloss, self.auroc, self.n, self.threshold
        )
    }

    /// Structured one-record text form.
    pub fn text_record(&self, label: &str) -> String {
        format!(
            "[{label}] n={} threshold={} accuracy={:.6} f1={:.6} logloss={:.6} auroc={:.6}",
            self.n, self.threshold, self.accuracy, self.f1, self.logloss, self.auroc
        )
    }
}
