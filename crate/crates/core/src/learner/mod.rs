//! The epoch learner: at every epoch boundary call the ERM oracle on all
//! past data, reorder labels, run one lazy OGD pass over the finished epoch,
//! then predict the next epoch with the frozen maps and the OGD classifier.

pub mod hinge;
pub mod reorder;
pub mod threshold;

use serde::{Deserialize, Serialize};

use crate::erm::{classify_all, fit_heuristic, ErmFit, ErmSettings};
use crate::error::{check_dim, invalid, Error, Result};
use crate::generators::GroundTruth;
use crate::metrics::{
    covariance_spectrum, match_greedy, match_optimal, matched_errors, EpochRecord, ModelDiagnostics, RunReport,
    REPORT_SCHEMA_VERSION,
};
use crate::rng::SeededRng;
use crate::types::{AffineClassifier, AffineMap, Dataset, Observation};

use hinge::{ogd_epoch, OgdWeights};
use reorder::{reorder, ReorderOutcome};

/// `2^{log2(t)·num/den}`, exact when `t` is a power of two and the exponent
/// is an integer.
pub fn horizon_power(t: usize, num: i64, den: i64) -> f64 {
    let e = (t as f64).log2() * num as f64 / den as f64;
    2f64.powf(e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub epoch_len: usize,
    pub gamma: f64,
    pub eta: f64,
    /// Cluster-size threshold `A`.
    pub cluster_threshold: f64,
    /// Merge gap `Δ_sep`.
    pub merge_gap: f64,
}

impl Schedule {
    /// `E = T^{17/18}`, `γ = T^{−1/36}`, `η = T^{−19/36}` and
    /// `A = max(10(d+1)m, E/(4K))`.
    pub fn from_horizon(horizon: usize, d: usize, m: usize, k: usize, merge_gap: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("horizon", "must be >= 1"));
        }
        let epoch_len = (horizon_power(horizon, 17, 18).round() as usize).clamp(1, horizon);
        let s = Self {
            epoch_len,
            gamma: horizon_power(horizon, -1, 36),
            eta: horizon_power(horizon, -19, 36),
            cluster_threshold: ((10 * (d + 1) * m) as f64).max(epoch_len as f64 / (4 * k) as f64),
            merge_gap,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epoch_len == 0 {
            return Err(invalid("epoch_len", "must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", "must be positive"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be positive"));
        }
        if !(self.cluster_threshold >= 0.0) {
            return Err(invalid("cluster_threshold", "must be >= 0"));
        }
        if !(self.merge_gap > 0.0) {
            return Err(invalid("merge_gap", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub k: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub erm: ErmSettings,
    /// Start one ERM restart from the previous epoch's labels.
    #[serde(default = "default_true")]
    pub warm_start: bool,
}

fn default_true() -> bool {
    true
}

/// What happened at one epoch boundary.
#[derive(Clone, Debug)]
pub struct EpochUpdate {
    pub tau: usize,
    pub fit: ErmFit,
    pub reorder: ReorderOutcome,
    /// Final-slot `ĝ` labels of every row seen so far.
    pub labels: Vec<usize>,
}

pub struct EpochLearner {
    config: LearnerConfig,
    data: Dataset,
    epoch_start: usize,
    tau: usize,
    maps: Vec<AffineMap>,
    weights: OgdWeights,
    erm_classifier: Option<(AffineClassifier, Vec<usize>)>,
    rng: SeededRng,
}

impl EpochLearner {
    pub fn new(config: LearnerConfig, lifted_dim: usize, response_dim: usize, rng: SeededRng) -> Result<Self> {
        if config.k == 0 {
            return Err(invalid("k", "must be >= 1"));
        }
        if lifted_dim < 2 || response_dim == 0 {
            return Err(invalid("dims", "need lifted_dim >= 2 and response_dim >= 1"));
        }
        config.schedule.validate()?;
        let maps = vec![AffineMap::zeros(response_dim, lifted_dim - 1, config.erm.map_bound); config.k];
        Ok(Self {
            weights: OgdWeights::zeros(config.k, lifted_dim),
            data: Dataset::new(lifted_dim, response_dim),
            config,
            epoch_start: 0,
            tau: 0,
            maps,
            erm_classifier: None,
            rng,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn rows(&self) -> usize {
        self.data.len()
    }

    pub fn maps(&self) -> &[AffineMap] {
        &self.maps
    }

    pub fn weights(&self) -> &OgdWeights {
        &self.weights
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// `g̃(x̄)`.
    pub fn predict_mode(&self, x_lift: &[f64]) -> usize {
        self.weights.predict(x_lift)
    }

    /// `ŷ = Θ̂_{g̃(x̄)} x̄`.
    pub fn predict(&self, x_lift: &[f64]) -> (Vec<f64>, usize) {
        let i = self.predict_mode(x_lift);
        let mut out = vec![0.0; self.data.response_dim()];
        self.maps[i].apply_slice(x_lift, &mut out);
        (out, i)
    }

    /// Records `(x̄, y)`; runs the epoch update when the epoch is full.
    pub fn observe(&mut self, x_lift: &[f64], y: &[f64]) -> Result<Option<EpochUpdate>> {
        self.data.push(x_lift, y)?;
        if self.data.len() - self.epoch_start >= self.config.schedule.epoch_len {
            return self.update().map(Some);
        }
        Ok(None)
    }

    /// ERM on all rows, reorder, OGD over the just-finished epoch.
    pub fn update(&mut self) -> Result<EpochUpdate> {
        let k = self.config.k;
        if self.data.len() < k {
            return Err(Error::InsufficientData {
                needed: k,
                have: self.data.len(),
            });
        }
        let warm = match (&self.erm_classifier, self.config.warm_start) {
            (Some((g, relabel)), true) => Some(classify_all(g, &self.data).into_iter().map(|l| relabel[l]).collect::<Vec<_>>()),
            _ => None,
        };
        let fit = fit_heuristic(&self.data, k, &self.config.erm, warm.as_deref(), &self.rng.fork(self.tau as u64))?;
        let mut counts = vec![0usize; k];
        fit.labels.iter().for_each(|&l| counts[l] += 1);
        let previous = (self.tau > 0).then_some(self.maps.as_slice());
        let s = &self.config.schedule;
        let outcome = reorder(&fit.maps, &counts, previous, s.cluster_threshold, s.merge_gap);
        self.maps = outcome.apply_to_maps(&fit.maps);
        let mut labels = fit.labels.clone();
        outcome.apply_to_labels(&mut labels);
        let rows = self.epoch_start..self.data.len();
        self.weights = ogd_epoch(
            &self.weights,
            rows.clone().map(|t| self.data.x(t)),
            &labels[rows],
            s.gamma,
            s.eta,
        )?;
        self.erm_classifier = Some((fit.classifier.clone(), outcome.relabel.clone()));
        self.tau += 1;
        self.epoch_start = self.data.len();
        Ok(EpochUpdate {
            tau: self.tau,
            fit,
            reorder: outcome,
            labels,
        })
    }
}

/// Runs the learner online for `horizon` rounds and scores it against the
/// ground truth. Hidden modes, noise and corruption reach only the report.
pub fn run<I>(
    stream: I,
    horizon: usize,
    config: &LearnerConfig,
    truth: &GroundTruth,
    seed: u64,
    rng: SeededRng,
) -> Result<RunReport>
where
    I: IntoIterator<Item = Observation>,
{
    let k = config.k;
    check_dim(k, truth.maps.len(), "ground-truth maps")?;
    let mut stream = stream.into_iter().take(horizon).peekable();
    let first = stream.peek().ok_or(Error::InsufficientData { needed: 1, have: 0 })?;
    let lifted_dim = first.x_lift.len();
    let response_dim = first.y.len();
    let mut learner = EpochLearner::new(config.clone(), lifted_dim, response_dim, rng)?;

    let mut report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed,
        horizon,
        k,
        lifted_dim,
        config: serde_json::to_value(config).map_err(|e| Error::Unsupported(e.to_string()))?,
        regret_increments: Vec::with_capacity(horizon),
        cumulative_regret: Vec::with_capacity(horizon),
        mistakes: Vec::with_capacity(horizon),
        epoch_of_round: Vec::with_capacity(horizon),
        epochs: Vec::new(),
        erm_objective_trace: Vec::new(),
        clip_rate: 0.0,
        noise_energy: 0.0,
        prediction_loss: 0.0,
        covariate_smoothness: None,
    };
    let mut true_modes: Vec<usize> = Vec::with_capacity(horizon);
    let mut noise_prefix = 0.0;
    let mut clipped = 0usize;
    let mut cumulative = 0.0;
    let mut current = new_record(0, 0, None, match_greedy(learner.maps(), &truth.maps), k);
    let mut target = vec![0.0; response_dim];

    for obs in stream {
        let x = obs.x_lift.as_slice();
        let (y_hat, i_hat) = learner.predict(x);
        let j = truth.mean_response(x, &mut target);
        let inc: f64 = y_hat.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
        let loss: f64 = y_hat.iter().zip(obs.y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let noise: f64 = obs.noise.iter().zip(obs.corruption.iter()).map(|(e, d)| (e + d) * (e + d)).sum();
        let mistake = current.match_used[i_hat] != j;
        cumulative += inc;
        report.regret_increments.push(inc);
        report.cumulative_regret.push(cumulative);
        report.mistakes.push(mistake);
        report.epoch_of_round.push(current.tau);
        report.prediction_loss += loss;
        noise_prefix += noise;
        clipped += usize::from(obs.clipped);
        true_modes.push(obs.hidden_mode);
        current.prediction_pair_counts[i_hat * k + j] += 1;
        current.regret += inc;
        if mistake {
            current.mistakes += 1;
            current.regret_on_mistakes += inc;
        } else {
            current.regret_on_matched += inc;
        }
        current.end += 1;

        if let Some(update) = learner.observe(x, obs.y.as_slice())? {
            let rows = learner.rows();
            let greedy = match_greedy(learner.maps(), &truth.maps);
            let optimal = match_optimal(learner.maps(), &truth.maps)?;
            let diag = ModelDiagnostics {
                data_rows: rows,
                erm_objective: update.fit.objective,
                erm_iterations: update.fit.iterations,
                erm_best_restart: update.fit.best_restart,
                erm_trace: update.fit.objective_trace.clone(),
                realizability_gap: update.fit.objective - noise_prefix,
                merges: update.reorder.merges.clone(),
                permutation: update.reorder.permutation.clone(),
                matched_errors: matched_errors(learner.maps(), &truth.maps, &greedy),
                optimal_matched_errors: matched_errors(learner.maps(), &truth.maps, &optimal),
                greedy_match: greedy.clone(),
                optimal_match: optimal,
                spectra: covariance_spectrum(learner.data(), &update.labels, &true_modes, k)?,
            };
            report.erm_objective_trace.push(update.fit.objective);
            let end = current.end;
            report.epochs.push(std::mem::replace(&mut current, new_record(update.tau, end, Some(diag), greedy, k)));
        }
    }
    if current.end > current.start {
        report.epochs.push(current);
    }
    let t = report.regret_increments.len();
    report.clip_rate = if t == 0 { 0.0 } else { clipped as f64 / t as f64 };
    report.noise_energy = noise_prefix;
    if report.cumulative_regret.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regret"));
    }
    Ok(report)
}

fn new_record(tau: usize, start: usize, model: Option<ModelDiagnostics>, match_used: Vec<usize>, k: usize) -> EpochRecord {
    EpochRecord {
        tau,
        start,
        end: start,
        model,
        match_used,
        prediction_pair_counts: vec![0; k * k],
        mistakes: 0,
        regret: 0.0,
        regret_on_mistakes: 0.0,
        regret_on_matched: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{CovariatePolicy, PwaRegressionModel, RegressionStream};
    use crate::smoothing::NoiseChannel;
    use crate::types::Dimensions;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn schedule_at_two_to_the_36() {
        let s = Schedule::from_horizon(1usize << 36, 1, 1, 2, 1.0).unwrap();
        assert_eq!(s.epoch_len, 1usize << 34);
        assert_eq!(s.gamma, 0.5);
        assert_eq!(s.eta, 2f64.powi(-19));
        assert_eq!(s.cluster_threshold, (1u64 << 34) as f64 / 8.0);
    }

    #[test]
    fn schedule_threshold_floor() {
        let s = Schedule::from_horizon(100, 2, 3, 4, 1.0).unwrap();
        assert_eq!(s.cluster_threshold, 90.0);
        assert!(s.epoch_len <= 100);
    }

    fn model(k: usize, noise: f64) -> PwaRegressionModel {
        let maps = if k == 1 {
            vec![AffineMap::new(DMatrix::from_row_slice(1, 2, &[1.5, -0.5]), 10.0).unwrap()]
        } else {
            vec![
                AffineMap::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), 10.0).unwrap(),
                AffineMap::new(DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]), 10.0).unwrap(),
            ]
        };
        let classifier = if k == 1 {
            AffineClassifier::new(vec![DVector::zeros(1)], vec![0.0], 1.0).unwrap()
        } else {
            AffineClassifier::new(vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)], vec![0.0, 0.0], 1.0).unwrap()
        };
        PwaRegressionModel {
            dims: Dimensions::new(1, 1, k).unwrap(),
            maps,
            classifier,
            response_noise: noise,
            noise_truncation: None,
            channel: NoiseChannel::gaussian(1, 0.3).unwrap(),
            corruption_budget: 0.0,
            covariate_bound: 3.0,
            separation: 1.0,
        }
    }

    fn config(k: usize, epoch_len: usize) -> LearnerConfig {
        LearnerConfig {
            k,
            schedule: Schedule {
                epoch_len,
                gamma: 0.1,
                eta: 0.01,
                cluster_threshold: 20.0,
                merge_gap: 0.5,
            },
            erm: ErmSettings {
                restarts: 4,
                ..ErmSettings::default()
            },
            warm_start: true,
        }
    }

    fn run_model(m: PwaRegressionModel, k: usize, horizon: usize, epoch_len: usize, seed: u64) -> RunReport {
        let truth = m.truth();
        let stream =
            RegressionStream::with_policy(m, CovariatePolicy::UniformBox { low: -1.0, high: 1.0 }, SeededRng::new(seed, 0)).unwrap();
        run(stream, horizon, &config(k, epoch_len), &truth, seed, SeededRng::new(seed, 1)).unwrap()
    }

    #[test]
    fn single_mode_noiseless_has_no_regret_after_first_epoch() {
        let r = run_model(model(1, 0.0), 1, 600, 100, 1);
        let after: f64 = r.regret_increments[100..].iter().sum();
        assert!(after <= 1e-6, "regret after first epoch {after}");
        assert!(r.regret_increments[..100].iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn report_invariants() {
        let r = run_model(model(2, 0.1), 2, 1500, 250, 2);
        assert_eq!(r.cumulative_regret.len(), 1500);
        assert!(r.cumulative_regret.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(r.epochs.len(), 6);
        assert_eq!(r.epochs.iter().map(|e| e.mistakes).sum::<usize>(), r.total_mistakes());
        for e in &r.epochs {
            assert!(e.mistake_identity_holds());
            assert!((e.regret - e.regret_on_matched - e.regret_on_mistakes).abs() < 1e-9);
            if let Some(m) = &e.model {
                assert_eq!(m.spectra.iter().map(|s| s.count).sum::<usize>(), m.data_rows);
                assert!(m.erm_trace.windows(2).all(|w| w[1] <= w[0]));
            }
        }
        let total: f64 = r.epochs.iter().map(|e| e.regret).sum();
        assert!((total - r.total_regret()).abs() < 1e-6 * total.max(1.0));
        // learned maps approach the truth
        let last = r.epochs.last().unwrap().model.as_ref().unwrap();
        assert!(last.optimal_matched_errors.iter().all(|&e| e < 0.01), "{:?}", last.optimal_matched_errors);
    }

    #[test]
    fn run_is_deterministic() {
        let a = run_model(model(2, 0.1), 2, 800, 200, 3);
        let b = run_model(model(2, 0.1), 2, 800, 200, 3);
        assert_eq!(a.deterministic_hash().unwrap(), b.deterministic_hash().unwrap());
        let c = run_model(model(2, 0.1), 2, 800, 200, 4);
        assert_ne!(a.deterministic_hash().unwrap(), c.deterministic_hash().unwrap());
    }

    #[test]
    fn first_epoch_predicts_zero_through_mode_zero() {
        let learner = EpochLearner::new(config(2, 10), 2, 1, SeededRng::new(0, 0)).unwrap();
        assert_eq!(learner.predict(&[0.7, 1.0]), (vec![0.0], 0));
    }
}
