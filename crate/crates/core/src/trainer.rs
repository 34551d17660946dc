//! Mini-batch gradient-descent training of a member model under the MSE
//! objective, plus the finite-difference gradient-check harness.

use crate::encoder::ContextEmbeddings;
use crate::error::{Error, Result};
use crate::metrics::{EvalPair, MetricsReport};
use crate::model::MemberModel;
use crate::rng::SplitMix64;
use crate::tokenizer::TokenSeq;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub l2: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.l2 < 0.0 {
            return Err(Error::Config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        Ok(())
    }
}

/// An encoded training example: token ids, fixed context rows (when the
/// member uses cross-attention), and the scalar label in [0, 1].
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub seq: TokenSeq,
    pub ctx: Option<ContextEmbeddings>,
    pub label: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub val: Option<MetricsReport>,
}

/// Per-epoch loss and validation metrics, one entry per completed epoch.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str = "epoch,train_mse,val_accuracy,val_f1,val_logloss,val_auroc";

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{}", Self::CSV_HEADER)?;
        for row in &self.rows {
            match &row.val {
                Some(v) => writeln!(
                    f,
                    "{},{},{},{},{},{}",
                    row.epoch, row.train_mse, v.accuracy, v.f1, v.logloss, v.auroc
                )?,
                None => writeln!(f, "{},{},,,,", row.epoch, row.train_mse)?,
            }
        }
        Ok(())
    }
}

/// (1/N) sum (pred_i - gold_i)^2.
pub fn mse_loss(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != gold.len() {
        return Err(Error::Contract(format!(
            "mse_loss needs equal non-zero lengths, got {} and {}",
            pred.len(),
            gold.len()
        )));
    }
    let sum: f64 = pred.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(sum / pred.len() as f64)
}

/// Minimize the MSE objective with plain mini-batch gradient descent.
/// Shuffling is seeded per run; batches truncate (the remainder of an
/// epoch that does not fill a batch is skipped, without reweighting); the
/// effective batch size is capped at the dataset size. Deterministic given
/// (seed, data, config).
pub fn train(
    model: &mut MemberModel,
    data: &[TrainExample],
    val: Option<&[TrainExample]>,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training data must be non-empty".into()));
    }
    let batch = cfg.batch_size.min(data.len());
    let mut rng = SplitMix64::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainTrace::default();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let n_batches = data.len() / batch;
        let mut epoch_loss = 0.0;
        for b in 0..n_batches {
            let idxs = &order[b * batch..(b + 1) * batch];
            model.zero_grads();
            let mut batch_loss = 0.0;
            // Fixed index order inside the batch keeps gradient accumulation
            // deterministic.
            for &i in idxs {
                let ex = &data[i];
                let pred = model.forward(&ex.seq, ex.ctx.as_ref())?;
                let residual = pred - ex.label;
                batch_loss += residual * residual;
                model.backward(2.0 * residual / batch as f64)?;
            }
            batch_loss /= batch as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    message: format!("batch loss {batch_loss}"),
                });
            }
            model.sgd_step(cfg.learning_rate, cfg.l2);
            epoch_loss += batch_loss;
        }
        let train_mse = if n_batches > 0 { epoch_loss / n_batches as f64 } else { f64::NAN };
        if !train_mse.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, message: "epoch produced no full batch".into() });
        }

        let val_report = match val {
            Some(v) if !v.is_empty() => {
                let pairs = evaluate_pairs(model, v)?;
                Some(MetricsReport::compute(&pairs)?)
            }
            _ => None,
        };
        trace.rows.push(TraceRow { epoch: epoch + 1, train_mse, val: val_report });
    }
    Ok(trace)
}

/// Score a dataset with the model; gold labels binarized at 0.5.
pub fn evaluate_pairs(model: &mut MemberModel, data: &[TrainExample]) -> Result<Vec<EvalPair>> {
    data.iter()
        .map(|ex| Ok(EvalPair::new(model.forward(&ex.seq, ex.ctx.as_ref())?, ex.label >= 0.5)))
        .collect()
}

/// Per-parameter worst relative error between analytic gradients and
/// central finite differences of the single-example MSE loss.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn covered_params(&self) -> usize {
        self.per_param.len()
    }
}

const FD_STEP: f64 = 1e-5;

// Denominator floor for the relative error. Entries whose gradient sits
// below this are beneath the cancellation noise of a 64-bit central
// difference at h = 1e-5 (loss scale ~1e-1), so they are effectively
// compared absolutely at 1e-4 * 1e-6 = 1e-10.
const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compare analytic gradients of the Eq.-style squared-error loss against
/// central differences (h = 1e-5) for every parameter tensor.
pub fn grad_check(model: &mut MemberModel, example: &TrainExample) -> Result<GradCheckReport> {
    // Analytic pass.
    model.zero_grads();
    let pred = model.forward(&example.seq, example.ctx.as_ref())?;
    model.backward(2.0 * (pred - example.label))?;
    let analytic: Vec<(String, crate::numerics::Tensor)> = {
        let mut grads = Vec::new();
        model.visit_params(&mut |n, p| grads.push((n.to_string(), p.grad().clone())));
        grads
    };

    let mut per_param = Vec::with_capacity(analytic.len());
    let mut max_rel = 0.0f64;
    for (p_idx, (name, grad)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..grad.data().len() {
            perturb(model, p_idx, j, FD_STEP);
            let up = loss_of(model, example)?;
            perturb(model, p_idx, j, -2.0 * FD_STEP);
            let down = loss_of(model, example)?;
            perturb(model, p_idx, j, FD_STEP);
            let fd = (up - down) / (2.0 * FD_STEP);
            let an = grad.data()[j];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(REL_ERROR_FLOOR);
            worst = worst.max(rel);
        }
        max_rel = max_rel.max(worst);
        per_param.push((name.clone(), worst));
    }
    Ok(GradCheckReport { per_param, max_rel_error: max_rel })
}

fn perturb(model: &mut MemberModel, p_idx: usize, entry: usize, delta: f64) {
    let mut k = 0usize;
    model.visit_params(&mut |_, p| {
        if k == p_idx {
            p.value_mut().data_mut()[entry] += delta;
        }
        k += 1;
    });
}

fn loss_of(model: &mut MemberModel, example: &TrainExample) -> Result<f64> {
    let pred = model.forward(&example.seq, example.ctx.as_ref())?;
    let r = pred - example.label;
    Ok(r * r)
}
