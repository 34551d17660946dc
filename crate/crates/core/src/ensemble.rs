//! Ridge-regression stacking over member model predictions: weights solve
//! min_w ||y - F w||^2 + lambda ||w||^2 in closed form.

use crate::error::{Error, Result};
use crate::numerics::{matmul, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Member predictions (n_samples x n_models) with ground truth.
#[derive(Clone, Debug)]
pub struct PredictionMatrix {
    pub f: Tensor,
    pub y: Vec<f64>,
}

impl PredictionMatrix {
    pub fn new(f: Tensor, y: Vec<f64>) -> Result<Self> {
        if f.rows() != y.len() {
            return Err(Error::Dimension(format!(
                "prediction matrix {}x{} vs {} targets",
                f.rows(),
                f.cols(),
                y.len()
            )));
        }
        if !f.is_finite() || !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("prediction matrix contains non-finite entries".into()));
        }
        if f.rows() < f.cols() {
            log::warn!(
                "ridge fit with fewer samples ({}) than models ({})",
                f.rows(),
                f.cols()
            );
        }
        Ok(Self { f, y })
    }
}

/// w = (F^T F + lambda I)^{-1} F^T y via Cholesky on the normal equations.
/// At lambda = 0 the Gram matrix must be positive definite; a failed pivot
/// reports a numerical error advising lambda > 0.
pub fn fit_ridge(pm: &PredictionMatrix, lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let m = pm.f.cols();
    let ft = pm.f.transpose();
    let mut gram = matmul(&ft, &pm.f)?;
    for i in 0..m {
        gram.set(i, i, gram.get(i, i) + lambda);
    }
    let y = Tensor::from_vec(pm.y.len(), 1, pm.y.clone())?;
    let rhs = matmul(&ft, &y)?;

    let w = cholesky_solve(&gram, rhs.data()).map_err(|e| match e {
        Error::Numerical(msg) => Error::Numerical(format!(
            "{msg}; the Gram matrix is not positive definite — use lambda > 0"
        )),
        other => other,
    })?;

    // Stationarity guard: the normal-equations residual must be tiny
    // relative to the right-hand side.
    let wt = Tensor::from_vec(m, 1, w.clone())?;
    let residual = matmul(&gram, &wt)?.sub(&rhs)?.norm();
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    if residual > 1e-8 * scale {
        return Err(Error::Numerical(format!(
            "ridge solve residual {residual:.3e} exceeds 1e-8 x ||F^T y|| ({scale:.3e})"
        )));
    }
    Ok(w)
}

/// Cholesky factorization + two triangular solves for a symmetric
/// positive-definite system.
fn cholesky_solve(a: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 1e-12 {
                    return Err(Error::Numerical(format!(
                        "Cholesky pivot {sum:.3e} at row {i}"
                    )));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // Forward solve L z = b.
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * z[k];
        }
        z[i] = sum / l[i * n + i];
    }
    // Back solve L^T w = z.
    let mut w = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = z[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * w[k];
        }
        w[i] = sum / l[i * n + i];
    }
    Ok(w)
}

/// Fitted stacking model: ordered member references, their weights, and the
/// regularization strength.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<String>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub calibration_hash: String,
}

impl EnsembleModel {
    pub fn validate(&self) -> Result<()> {
        if self.members.len() != self.weights.len() {
            return Err(Error::Data(format!(
                "{} members but {} weights",
                self.members.len(),
                self.weights.len()
            )));
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::Numerical("ensemble weights contain non-finite values".into()));
        }
        Ok(())
    }

    /// Weighted sum of member scores, clamped into [0,1] for metric
    /// consumption. Clamping is logged.
    pub fn combine(&self, member_scores: &[f64]) -> Result<f64> {
        if member_scores.len() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "{} member scores for {} weights",
                member_scores.len(),
                self.weights.len()
            )));
        }
        let raw: f64 = self
            .weights
            .iter()
            .zip(member_scores)
            .map(|(w, s)| w * s)
            .sum();
        let clamped = raw.clamp(0.0, 1.0);
        if clamped != raw {
            log::debug!("ensemble output {raw:.6} clamped to {clamped}");
        }
        Ok(clamped)
    }

    /// Combine without clamping; the regression-space prediction.
    pub fn combine_raw(&self, member_scores: &[f64]) -> Result<f64> {
        if member_scores.len() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "{} member scores for {} weights",
                member_scores.len(),
                self.weights.len()
            )));
        }
        Ok(self.weights.iter().zip(member_scores).map(|(w, s)| w * s).sum())
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let model: EnsembleModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }
}

pub use crate::rng::fnv1a64;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    // Independent oracle: form the normal equations and solve by
    // Gauss-Jordan elimination with partial pivoting.
    fn ridge_oracle(f: &Tensor, y: &[f64], lambda: f64) -> Vec<f64> {
        let m = f.cols();
        let n = f.rows();
        let mut a = vec![vec![0.0f64; m + 1]; m];
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for r in 0..n {
                    s += f.get(r, i) * f.get(r, j);
                }
                a[i][j] = s + if i == j { lambda } else { 0.0 };
            }
            let mut s = 0.0;
            for r in 0..n {
                s += f.get(r, i) * y[r];
            }
            a[i][m] = s;
        }
        for col in 0..m {
            let pivot = (col..m).max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap()).unwrap();
            a.swap(col, pivot);
            let pv = a[col][col];
            for j in col..=m {
                a[col][j] /= pv;
            }
            for row in 0..m {
                if row != col {
                    let factor = a[row][col];
                    for j in col..=m {
                        a[row][j] -= factor * a[col][j];
                    }
                }
            }
        }
        (0..m).map(|i| a[i][m]).collect()
    }

    #[test]
    fn identity_design_recovers_targets() {
        let n = 4;
        let y = vec![0.3, -0.2, 0.9, 0.5];
        let pm = PredictionMatrix::new(Tensor::identity(n), y.clone()).unwrap();
        let w = fit_ridge(&pm, 0.0).unwrap();
        for i in 0..n {
            assert!((w[i] - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn huge_lambda_shrinks_weights_toward_zero() {
        let mut rng = SplitMix64::new(1);
        let f = Tensor::random_uniform(20, 3, -1.0, 1.0, &mut rng);
        let y: Vec<f64> = (0..20).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let pm = PredictionMatrix::new(f.clone(), y.clone()).unwrap();
        let lambda = 1e6;
        let w = fit_ridge(&pm, lambda).unwrap();
        let ft = f.transpose();
        let yt = Tensor::from_vec(20, 1, y).unwrap();
        let fty_norm = matmul(&ft, &yt).unwrap().norm();
        let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        // ||w|| <= ||F^T y|| / lambda, far below 1e-3 of the lambda-free scale.
        assert!(w_norm <= fty_norm / lambda * (1.0 + 1e-9));
        assert!(w_norm < 1e-3 * fty_norm);
    }

    #[test]
    fn random_systems_match_elimination_oracle() {
        let mut rng = SplitMix64::new(2);
        for &lambda in &[0.0, 0.1, 1.0, 10.0] {
            for _ in 0..25 {
                let f = Tensor::random_uniform(20, 3, -1.0, 1.0, &mut rng);
                let y: Vec<f64> = (0..20).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let pm = PredictionMatrix::new(f.clone(), y.clone()).unwrap();
                let got = fit_ridge(&pm, lambda).unwrap();
                let want = ridge_oracle(&f, &y, lambda);
                for i in 0..3 {
                    assert!((got[i] - want[i]).abs() < 1e-8, "lambda={lambda}: {got:?} vs {want:?}");
                }
            }
        }
    }

    #[test]
    fn stationarity_of_the_objective() {
        // 2 F^T (F w - y) + 2 lambda w ~ 0 at the fitted weights.
        let mut rng = SplitMix64::new(3);
        let f = Tensor::random_uniform(30, 4, -1.0, 1.0, &mut rng);
        let y: Vec<f64> = (0..30).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let pm = PredictionMatrix::new(f.clone(), y.clone()).unwrap();
        for &lambda in &[0.0, 0.5, 2.0] {
            let w = fit_ridge(&pm, lambda).unwrap();
            let wt = Tensor::from_vec(4, 1, w.clone()).unwrap();
            let yt = Tensor::from_vec(30, 1, y.clone()).unwrap();
            let fw = matmul(&f, &wt).unwrap();
            let grad = matmul(&f.transpose(), &fw.sub(&yt).unwrap())
                .unwrap()
                .add(&wt.scale(lambda))
                .unwrap()
                .scale(2.0);
            assert!(grad.norm() < 1e-6, "lambda={lambda}: {}", grad.norm());
        }
    }

    #[test]
    fn singular_system_at_lambda_zero_advises_regularization() {
        // Two identical columns: F^T F singular.
        let f = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let pm = PredictionMatrix::new(f, vec![1.0, 2.0, 3.0]).unwrap();
        match fit_ridge(&pm, 0.0) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("lambda > 0"), "{msg}"),
            other => panic!("expected numerical error, got {other:?}"),
        }
        // The same system is fine with regularization.
        let f = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let pm = PredictionMatrix::new(f, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(fit_ridge(&pm, 0.5).is_ok());
    }

    #[test]
    fn fit_invariant_to_row_permutation() {
        let mut rng = SplitMix64::new(4);
        let f = Tensor::random_uniform(12, 3, -1.0, 1.0, &mut rng);
        let y: Vec<f64> = (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w1 = fit_ridge(&PredictionMatrix::new(f.clone(), y.clone()).unwrap(), 0.7).unwrap();

        let mut perm: Vec<usize> = (0..12).collect();
        rng.shuffle(&mut perm);
        let mut rows = Vec::new();
        let mut y2 = Vec::new();
        for &p in &perm {
            rows.push(f.row(p).to_vec());
            y2.push(y[p]);
        }
        let f2 = Tensor::from_rows(&rows).unwrap();
        let w2 = fit_ridge(&PredictionMatrix::new(f2, y2).unwrap(), 0.7).unwrap();
        for i in 0..3 {
            assert!((w1[i] - w2[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn ensemble_least_squares_dominates_members_at_lambda_zero() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let f = Tensor::random_uniform(25, 3, 0.0, 1.0, &mut rng);
            let y: Vec<f64> = (0..25).map(|_| rng.next_f64()).collect();
            let pm = PredictionMatrix::new(f.clone(), y.clone()).unwrap();
            let w = fit_ridge(&pm, 0.0).unwrap();
            let mse = |scores: &dyn Fn(usize) -> f64| -> f64 {
                (0..25).map(|r| (scores(r) - y[r]) * (scores(r) - y[r])).sum::<f64>() / 25.0
            };
            let wt = w.clone();
            let fit_mse = mse(&|r| (0..3).map(|c| wt[c] * f.get(r, c)).sum());
            for member in 0..3 {
                let member_mse = mse(&|r| f.get(r, member));
                assert!(fit_mse <= member_mse + 1e-10);
            }
        }
    }

    #[test]
    fn single_member_identity_weight_passes_scores_through() {
        let ens = EnsembleModel {
            members: vec!["m0".into()],
            weights: vec![1.0],
            lambda: 0.0,
            calibration_hash: "0".into(),
        };
        assert_eq!(ens.combine(&[0.37]).unwrap(), 0.37);
    }

    #[test]
    fn combine_is_a_weighted_sum() {
        let ens = EnsembleModel {
            members: vec!["a".into(), "b".into()],
            weights: vec![0.5, 0.5],
            lambda: 1.0,
            calibration_hash: "0".into(),
        };
        assert!((ens.combine_raw(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn batch_combine_matches_matrix_product_oracle() {
        let mut rng = SplitMix64::new(6);
        let weights = vec![0.2, -0.4, 0.9];
        let ens = EnsembleModel {
            members: vec!["a".into(), "b".into(), "c".into()],
            weights: weights.clone(),
            lambda: 1.0,
            calibration_hash: "0".into(),
        };
        let f = Tensor::random_uniform(10, 3, 0.0, 1.0, &mut rng);
        let wt = Tensor::from_vec(3, 1, weights).unwrap();
        let expect = matmul(&f, &wt).unwrap();
        for r in 0..10 {
            let got = ens.combine_raw(f.row(r)).unwrap();
            assert!((got - expect.get(r, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble.json");
        let ens = EnsembleModel {
            members: vec!["a.ckpt".into(), "b.ckpt".into()],
            weights: vec![0.25, 0.75],
            lambda: 1.5,
            calibration_hash: format!("{:016x}", fnv1a64(b"calib")),
        };
        ens.write_manifest(&path).unwrap();
        let back = EnsembleModel::read_manifest(&path).unwrap();
        assert_eq!(back.members, ens.members);
        assert_eq!(back.weights, ens.weights);
        assert_eq!(back.lambda, ens.lambda);
        assert_eq!(back.calibration_hash, ens.calibration_hash);
    }
}
