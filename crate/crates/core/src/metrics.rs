//! Ground-truth-aware evaluation of learner runs.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment;
use crate::error::{check_dim, Error, Result};
use crate::types::{AffineClassifier, AffineMap, Dataset};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// `π(i) = argmin_j ‖Θ̂_i − Θ*_j‖_F`, smallest `j` on ties. Not necessarily
/// a bijection.
pub fn match_greedy(estimated: &[AffineMap], truth: &[AffineMap]) -> Vec<usize> {
    estimated
        .iter()
        .map(|e| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, t) in truth.iter().enumerate() {
                let d = e.frobenius_distance(t);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Bijection minimizing `Σ_i ‖Θ̂_i − Θ*_{π(i)}‖_F²`.
pub fn match_optimal(estimated: &[AffineMap], truth: &[AffineMap]) -> Result<Vec<usize>> {
    check_dim(truth.len(), estimated.len(), "match_optimal")?;
    let n = truth.len();
    let mut cost = Vec::with_capacity(n * n);
    for e in estimated {
        for t in truth {
            cost.push(e.frobenius_distance(t).powi(2));
        }
    }
    Ok(assignment::solve(&cost, n)?.row_to_col)
}

pub fn matched_errors(estimated: &[AffineMap], truth: &[AffineMap], pi: &[usize]) -> Vec<f64> {
    estimated
        .iter()
        .zip(pi)
        .map(|(e, &j)| e.frobenius_distance(&truth[j]).powi(2))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSpectrum {
    pub estimated: usize,
    pub truth: usize,
    pub count: usize,
    pub min_eig: f64,
    pub max_eig: f64,
}

/// Extreme eigenvalues of `Σ_ij = Σ_{t ∈ I_ij} x̄_t x̄_tᵀ` with
/// `I_ij = {t : ĝ_t = i, g*_t = j}`, for every pair in row-major order.
pub fn covariance_spectrum(data: &Dataset, estimated: &[usize], truth: &[usize], k: usize) -> Result<Vec<PairSpectrum>> {
    check_dim(data.len(), estimated.len(), "estimated labels")?;
    check_dim(data.len(), truth.len(), "true labels")?;
    let p = data.lifted_dim();
    let mut grams = vec![DMatrix::<f64>::zeros(p, p); k * k];
    let mut counts = vec![0usize; k * k];
    for t in 0..data.len() {
        let (i, j) = (estimated[t], truth[t]);
        if i >= k || j >= k {
            return Err(Error::LabelOutOfRange { label: i.max(j), k });
        }
        let x = data.x(t);
        let g = &mut grams[i * k + j];
        for a in 0..p {
            for b in 0..p {
                g[(a, b)] += x[a] * x[b];
            }
        }
        counts[i * k + j] += 1;
    }
    Ok((0..k * k)
        .map(|idx| {
            let count = counts[idx];
            let (min_eig, max_eig) = if count == 0 {
                (0.0, 0.0)
            } else {
                let eig = SymmetricEigen::new(grams[idx].clone()).eigenvalues;
                let lmin = if count < p { 0.0 } else { eig.min().max(0.0) };
                (lmin, eig.max())
            };
            PairSpectrum {
                estimated: idx / k,
                truth: idx % k,
                count,
                min_eig,
                max_eig,
            }
        })
        .collect())
}

pub fn covariance_spectrum_for(data: &Dataset, estimated: &AffineClassifier, truth: &AffineClassifier) -> Result<Vec<PairSpectrum>> {
    let k = estimated.k().max(truth.k());
    let e: Vec<usize> = (0..data.len()).map(|t| estimated.classify_lifted(data.x(t))).collect();
    let g: Vec<usize> = (0..data.len()).map(|t| truth.classify_lifted(data.x(t))).collect();
    covariance_spectrum(data, &e, &g, k)
}

/// Diagnostics of the model fitted at an epoch boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    pub data_rows: usize,
    pub erm_objective: f64,
    pub erm_iterations: usize,
    pub erm_best_restart: usize,
    pub erm_trace: Vec<f64>,
    /// ERM objective minus `Σ‖e_t + δ_t‖²` on the same rows.
    pub realizability_gap: f64,
    pub merges: Vec<(usize, usize)>,
    pub permutation: Vec<usize>,
    pub greedy_match: Vec<usize>,
    pub optimal_match: Vec<usize>,
    /// `‖Θ̂_i − Θ*_{π(i)}‖_F²` under the greedy match.
    pub matched_errors: Vec<f64>,
    pub optimal_matched_errors: Vec<f64>,
    /// `spectra[i·K + j]` describes `I_ij(ĝ)` over all rows seen so far.
    pub spectra: Vec<PairSpectrum>,
}

/// One prediction epoch `[start, end)`, predicted with the model fitted at
/// its start (`model` is `None` for the initial all-zero model).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub tau: usize,
    pub start: usize,
    pub end: usize,
    pub model: Option<ModelDiagnostics>,
    /// Greedy match used for the mistake flags of this epoch.
    pub match_used: Vec<usize>,
    /// `counts[i·K + j]` = rounds with `g̃ = i` and `g* = j`.
    pub prediction_pair_counts: Vec<usize>,
    pub mistakes: usize,
    pub regret: f64,
    pub regret_on_mistakes: f64,
    pub regret_on_matched: f64,
}

impl EpochRecord {
    /// `mistakes = Σ_{π(i) ≠ j} counts[i·K + j]`.
    pub fn mistake_identity_holds(&self) -> bool {
        let k = self.match_used.len();
        let recomputed: usize = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .filter(|&(i, j)| self.match_used[i] != j)
            .map(|(i, j)| self.prediction_pair_counts[i * k + j])
            .sum();
        recomputed == self.mistakes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    pub horizon: usize,
    pub k: usize,
    pub lifted_dim: usize,
    pub config: serde_json::Value,
    pub regret_increments: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub mistakes: Vec<bool>,
    pub epoch_of_round: Vec<usize>,
    pub epochs: Vec<EpochRecord>,
    pub erm_objective_trace: Vec<f64>,
    pub clip_rate: f64,
    /// `Σ‖e_t + δ_t‖²`, the irreducible part of the prediction loss.
    pub noise_energy: f64,
    /// `Σ‖ŷ_t − y_t‖²`.
    pub prediction_loss: f64,
    pub covariate_smoothness: Option<f64>,
}

impl RunReport {
    pub fn total_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    /// Cumulative regret after the first `t` rounds.
    pub fn regret_at(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        self.cumulative_regret[t.min(self.cumulative_regret.len()) - 1]
    }

    pub fn total_mistakes(&self) -> usize {
        self.mistakes.iter().filter(|&&m| m).count()
    }

    pub fn to_json(&self) -> Result<String> {
        if self.cumulative_regret.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cumulative regret"));
        }
        serde_json::to_string_pretty(self).map_err(|e| Error::Unsupported(format!("json: {e}")))
    }

    /// Hex SHA-256 of the JSON serialization.
    pub fn deterministic_hash(&self) -> Result<String> {
        Ok(hash_bytes(self.to_json()?.as_bytes()))
    }

    /// `t, regret_increment, cumulative_regret, mistake, epoch` per round.
    pub fn write_series_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,regret_increment,cumulative_regret,mistake,epoch")?;
        for t in 0..self.regret_increments.len() {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{},{}",
                t,
                self.regret_increments[t],
                self.cumulative_regret[t],
                u8::from(self.mistakes[t]),
                self.epoch_of_round[t]
            )?;
        }
        Ok(())
    }

    /// `(|I_ij|, ‖Θ̂_i − Θ*_j‖²)` for greedily matched pairs over all epochs,
    /// keeping pairs with at least `4(d+1)` rows and positive error.
    pub fn recovery_points(&self) -> Vec<(f64, f64)> {
        let min_count = 4 * self.lifted_dim;
        let mut out = Vec::new();
        for rec in &self.epochs {
            let Some(model) = &rec.model else { continue };
            for (i, &j) in model.greedy_match.iter().enumerate() {
                let count = model.spectra[i * self.k + j].count;
                let err = model.matched_errors[i];
                if count >= min_count && err > 0.0 && err.is_finite() {
                    out.push((count as f64, err));
                }
            }
        }
        out
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares fit of `log y = a + b log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, have: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData { needed: 2, have: 1 });
    }
    let slope = sxy / sxx;
    Ok(LogLogFit {
        slope,
        intercept: my - slope * mx,
        points: pts.len(),
    })
}

/// Slope of `log(error²)` against `log |I_ij|` over a report's checkpoints.
pub fn recovery_curve(report: &RunReport) -> Result<LogLogFit> {
    loglog_slope(&report.recovery_points())
}

/// Linear-interpolated quantile of a sample (`q ∈ [0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}
