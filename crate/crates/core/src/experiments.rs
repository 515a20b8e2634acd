//! Named instances and experiment drivers shared by the command-line runner
//! and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{InputPolicy, ModeDynamics, PwaDynamics};
use crate::erm::{brute_force_erm, fit_heuristic, ErmSettings};
use crate::error::{invalid, Result};
use crate::generators::{
    adversarial_threshold_stream, hard_identification_instance, sample_separated_parameters, CovariatePolicy,
    PwaRegressionModel, RegressionStream,
};
use crate::learner::hinge::{hinge_loss, hinge_subgradient, ogd_epoch, ogd_regret_bound, OgdWeights};
use crate::learner::threshold::{learner_by_name, play};
use crate::learner::{self, LearnerConfig, Schedule};
use crate::metrics::RunReport;
use crate::rng::SeededRng;
use crate::simulation::SimRegConfig;
use crate::smoothing::NoiseChannel;
use crate::types::{AffineClassifier, AffineMap, Dataset, Dimensions};

pub const TWO_MODE_SIGMA_DIR: f64 = 0.2;
pub const TWO_MODE_NOISE: f64 = 0.1;
pub const TWO_MODE_SEPARATION: f64 = 1.0;

/// One-dimensional regression with two modes split at `x = 0.1`. The maps
/// `[0.6, 0.4]` and `[−0.2, −0.2]` are exactly `Δ_sep = 1` apart.
pub fn two_mode_1d() -> PwaRegressionModel {
    let sigma = TWO_MODE_SIGMA_DIR / (2.0 * std::f64::consts::PI).sqrt();
    PwaRegressionModel {
        dims: Dimensions { d: 1, m: 1, k: 2 },
        maps: vec![
            AffineMap::projected(DMatrix::from_row_slice(1, 2, &[0.6, 0.4]), 10.0),
            AffineMap::projected(DMatrix::from_row_slice(1, 2, &[-0.2, -0.2]), 10.0),
        ],
        classifier: AffineClassifier::new(
            vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)],
            vec![0.1, -0.1],
            1.0,
        )
        .expect("valid classifier"),
        response_noise: TWO_MODE_NOISE,
        noise_truncation: None,
        channel: NoiseChannel::gaussian(1, sigma).expect("positive sigma"),
        corruption_budget: 0.0,
        covariate_bound: 2.0,
        separation: TWO_MODE_SEPARATION,
    }
}

pub fn two_mode_policy() -> CovariatePolicy {
    CovariatePolicy::UniformBox { low: -1.0, high: 1.0 }
}

/// Desk-scale schedule: fixed epoch length and step sizes, `A` from the
/// usual formula, merge gap half the separation.
pub fn scaled_schedule(epoch_len: usize, gamma: f64, eta: f64, dims: Dimensions, separation: f64) -> Schedule {
    Schedule {
        epoch_len,
        gamma,
        eta,
        cluster_threshold: ((10 * (dims.d + 1) * dims.m) as f64).max(epoch_len as f64 / (4 * dims.k) as f64),
        merge_gap: 0.5 * separation,
    }
}

pub fn two_mode_learner() -> LearnerConfig {
    let model = two_mode_1d();
    LearnerConfig {
        k: 2,
        schedule: scaled_schedule(1000, 0.1, 0.0005, model.dims, model.separation),
        erm: ErmSettings {
            restarts: 4,
            max_iter: 30,
            ..ErmSettings::default()
        },
        warm_start: true,
    }
}

/// One online regression run of `horizon` rounds.
pub fn regression_run(
    model: &PwaRegressionModel,
    policy: &CovariatePolicy,
    horizon: usize,
    config: &LearnerConfig,
    seed: u64,
) -> Result<RunReport> {
    let root = SeededRng::new(seed, 0);
    let mut stream = RegressionStream::with_policy(model.clone(), policy.clone(), root.fork(1))?;
    let truth = model.truth();
    let mut report = learner::run(stream.by_ref(), horizon, config, &truth, seed, root.fork(2))?;
    report.clip_rate = stream.clip_rate();
    report.covariate_smoothness = Some(model.channel.claimed_sigma_dir());
    Ok(report)
}

/// Stable two-mode system on a scalar state and input with `P = I` and
/// `|A_i| ≤ 0.9`; the mode switches at `z = 0`.
pub fn stable_two_mode_system() -> PwaDynamics {
    let classifier = AffineClassifier::new(
        vec![DVector::from_vec(vec![-1.0, 0.0]), DVector::from_vec(vec![1.0, 0.0])],
        vec![0.0, 0.0],
        1.0,
    )
    .expect("valid classifier");
    let modes = vec![
        ModeDynamics {
            a: DMatrix::from_element(1, 1, 0.5),
            b: DMatrix::from_element(1, 1, 1.0),
            offset: DVector::from_element(1, 0.5),
        },
        ModeDynamics {
            a: DMatrix::from_element(1, 1, -0.4),
            b: DMatrix::from_element(1, 1, 0.5),
            offset: DVector::from_element(1, -0.5),
        },
    ];
    let noise = NoiseChannel::gaussian(1, 0.1).expect("positive sigma");
    PwaDynamics::new(modes, classifier, noise, None, Some(DMatrix::identity(1, 1))).expect("valid system")
}

pub fn stable_policy() -> InputPolicy {
    InputPolicy::OpenLoop {
        nominal: DVector::zeros(1),
        exploration: NoiseChannel::gaussian(1, 0.5).expect("positive sigma"),
    }
}

pub fn stable_learner(epoch_rows: usize) -> LearnerConfig {
    LearnerConfig {
        k: 2,
        schedule: scaled_schedule(epoch_rows, 0.1, 0.0005, Dimensions { d: 2, m: 1, k: 2 }, 1.0),
        erm: ErmSettings {
            restarts: 4,
            max_iter: 30,
            ..ErmSettings::default()
        },
        warm_start: true,
    }
}

pub fn stable_simulation_config(episodes: usize, h: usize, n_rollouts: usize) -> SimRegConfig {
    SimRegConfig {
        episodes,
        h,
        n_rollouts,
        initial_state: NoiseChannel::gaussian(1, 0.5).expect("positive sigma"),
        learner: stable_learner((episodes * h / 10).max(h)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarySummary {
    pub learner: String,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub mistake_rates: Vec<f64>,
    pub mean_rate: f64,
}

/// Plays a deterministic threshold learner against the binary-expansion
/// stream once per seed.
pub fn adversary_experiment(learner: &str, horizon: usize, seeds: &[u64]) -> Result<AdversarySummary> {
    let mut rates = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let stream = adversarial_threshold_stream(horizon, &mut SeededRng::new(seed, 0))?;
        let mut l = learner_by_name(learner).ok_or_else(|| invalid("learner", format!("unknown learner `{learner}`")))?;
        let flags = play(&stream, l.as_mut())?;
        rates.push(flags.iter().filter(|&&m| m).count() as f64 / horizon as f64);
    }
    let mean_rate = if rates.is_empty() { f64::NAN } else { rates.iter().sum::<f64>() / rates.len() as f64 };
    Ok(AdversarySummary {
        learner: learner.to_string(),
        horizon,
        seeds: seeds.to_vec(),
        mistake_rates: rates,
        mean_rate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardIdTrial {
    pub j: usize,
    pub iota: i8,
    pub hidden_offset: f64,
    pub estimate: f64,
    pub hits: usize,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardIdSummary {
    pub n: usize,
    pub horizon: usize,
    pub magnitude: f64,
    pub trials: Vec<HardIdTrial>,
    pub failure_rate: f64,
}

/// Random-input exploration of the three-mode instance: `u_t ~ U[0.5, 3.5]`,
/// and `m̂` is the mean of residuals `x_{t+1} − u_t` exceeding `m/2` in
/// magnitude (zero if none does). A trial fails when `|m̂ − m_3| ≥ m`.
pub fn hard_id_trial(n: usize, horizon: usize, magnitude: f64, noise_sigma: f64, rng: &mut SeededRng) -> Result<HardIdTrial> {
    let j = rng.random_range(1..=2 * n);
    let iota: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let inst = hard_identification_instance(n, j, iota, magnitude, NoiseChannel::gaussian(1, noise_sigma)?)?;
    let mut z = DVector::from_element(1, rng.random_range(0.5..3.5));
    let (mut sum, mut hits) = (0.0, 0usize);
    for _ in 0..horizon {
        let u = DVector::from_element(1, rng.random_range(0.5..3.5));
        let (next, _) = inst.dynamics.step(&z, &u, rng)?;
        let r = next[0] - u[0];
        if r.abs() > magnitude / 2.0 {
            sum += r;
            hits += 1;
        }
        z = next;
    }
    let estimate = if hits == 0 { 0.0 } else { sum / hits as f64 };
    Ok(HardIdTrial {
        j,
        iota,
        hidden_offset: inst.hidden_offset,
        estimate,
        hits,
        failed: (estimate - inst.hidden_offset).abs() >= magnitude,
    })
}

pub fn hard_id_experiment(n: usize, horizon: usize, magnitude: f64, runs: usize, seed: u64) -> Result<HardIdSummary> {
    let mut rng = SeededRng::new(seed, 0);
    let trials = (0..runs)
        .map(|_| hard_id_trial(n, horizon, magnitude, 0.1 * magnitude, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let failure_rate = trials.iter().filter(|t| t.failed).count() as f64 / runs.max(1) as f64;
    Ok(HardIdSummary {
        n,
        horizon,
        magnitude,
        trials,
        failure_rate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmCheckSummary {
    pub instances: usize,
    pub restarts: usize,
    pub matched: usize,
    /// Largest `exact − heuristic` (positive means the heuristic won).
    pub max_heuristic_advantage: f64,
    pub gaps: Vec<f64>,
}

/// Random one-dimensional two-piece data set of `n` rows.
pub fn random_erm_instance(n: usize, rng: &mut SeededRng) -> Dataset {
    let slope = |rng: &mut SeededRng| rng.random_range(-2.0..2.0);
    let (a0, b0, a1, b1) = (slope(rng), slope(rng), slope(rng), slope(rng));
    let cut: f64 = rng.random_range(-0.5..0.5);
    let noise: f64 = rng.random_range(0.0..0.3);
    let mut d = Dataset::new(2, 1);
    for _ in 0..n {
        let x: f64 = rng.random_range(-1.0..1.0);
        let e: f64 = StandardNormal.sample(rng);
        let y = if x > cut { a1 * x + b1 } else { a0 * x + b0 } + noise * e;
        d.push(&[x, 1.0], &[y]).expect("consistent dimensions");
    }
    d
}

/// Compares the heuristic against exhaustive search on random small
/// instances with `K = 2`.
pub fn erm_check(instances: usize, max_rows: usize, restarts: usize, seed: u64) -> Result<ErmCheckSummary> {
    if max_rows < 2 {
        return Err(invalid("max_rows", "must be >= 2"));
    }
    let mut rng = SeededRng::new(seed, 0);
    let settings = ErmSettings {
        restarts,
        ..ErmSettings::default()
    };
    let mut gaps = Vec::with_capacity(instances);
    for i in 0..instances {
        let n = rng.random_range(2..=max_rows);
        let data = random_erm_instance(n, &mut rng);
        let exact = brute_force_erm(&data, 2, settings.map_bound)?;
        let heur = fit_heuristic(&data, 2, &settings, None, &SeededRng::new(seed, 1 + i as u64))?;
        gaps.push(heur.objective - exact.objective);
    }
    Ok(ErmCheckSummary {
        instances,
        restarts,
        matched: gaps.iter().filter(|g| g.abs() <= 1e-6).count(),
        max_heuristic_advantage: gaps.iter().fold(f64::NEG_INFINITY, |m, g| m.max(-g)),
        gaps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationSummary {
    pub resamples: usize,
    pub predicted_bound: f64,
    pub below_bound: usize,
    pub frequency: f64,
}

/// Resamples `K = 2` maps of shape `1 × 2` from a Gaussian channel and
/// counts how often the achieved gap falls below the predicted bound.
pub fn separation_experiment(resamples: usize, delta: f64, sigma: f64, seed: u64) -> Result<SeparationSummary> {
    let mut rng = SeededRng::new(seed, 0);
    let channel = NoiseChannel::gaussian(2, sigma)?;
    let mut below = 0;
    let mut predicted = f64::NAN;
    for _ in 0..resamples {
        let s = sample_separated_parameters(2, 1, 1, 100.0 * sigma, &channel, delta, &mut rng)?;
        predicted = s.predicted_bound;
        below += usize::from(s.achieved_gap < s.predicted_bound);
    }
    Ok(SeparationSummary {
        resamples,
        predicted_bound: predicted,
        below_bound: below,
        frequency: below as f64 / resamples.max(1) as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OgdRegretSummary {
    pub k: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub eta: f64,
    pub online_loss: f64,
    pub comparator_loss: f64,
    pub regret: f64,
    pub bound: f64,
}

fn unit_ball_point(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| -> f64 { StandardNormal.sample(rng) }).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    let r: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
    v.iter().map(|a| a * r / n).collect()
}

/// Labelled points in the unit ball of `R^dim`: a random linear multi-class
/// rule with 20% uniform label noise. Depends only on `(k, dim, horizon, seed)`.
pub fn hinge_sequence(k: usize, dim: usize, horizon: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = SeededRng::new(seed, 0);
    let comps: Vec<Vec<f64>> = (0..k).map(|_| unit_ball_point(dim, &mut rng)).collect();
    let rule = OgdWeights::from_components(&comps).expect("k >= 1");
    let mut xs = Vec::with_capacity(horizon);
    let mut labels = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let x = unit_ball_point(dim, &mut rng);
        let label = if rng.random::<f64>() < 0.2 { rng.random_range(0..k) } else { rule.predict(&x) };
        xs.push(x);
        labels.push(label);
    }
    (xs, labels)
}

/// Online hinge loss of projected OGD minus that of the best fixed weights
/// found offline by projected subgradient descent.
pub fn ogd_regret_experiment(k: usize, dim: usize, horizon: usize, gamma: f64, eta: f64, seed: u64) -> Result<OgdRegretSummary> {
    if k < 2 || dim == 0 || horizon == 0 {
        return Err(invalid("ogd", "need K >= 2, dim >= 1 and T >= 1"));
    }
    let (xs, labels) = hinge_sequence(k, dim, horizon, seed);
    let mut w = OgdWeights::zeros(k, dim);
    let mut online = 0.0;
    for (x, &l) in xs.iter().zip(&labels) {
        online += hinge_loss(&w, x, l, gamma)?;
        w = ogd_epoch(&w, std::iter::once(x.as_slice()), &[l], gamma, eta)?;
    }
    let total = |w: &OgdWeights| -> Result<f64> {
        xs.iter().zip(&labels).map(|(x, &l)| hinge_loss(w, x, l, gamma)).sum()
    };
    let mut v = OgdWeights::zeros(k, dim);
    let mut best = total(&v)?;
    for s in 1..=1000 {
        let mut grad = OgdWeights::zeros(k, dim);
        for (x, &l) in xs.iter().zip(&labels) {
            grad.axpy(1.0, &hinge_subgradient(&v, x, l, gamma)?);
        }
        let gn = grad.norm();
        if gn == 0.0 {
            break;
        }
        v.axpy(-1.0 / (gn * (s as f64).sqrt()), &grad);
        v.project();
        best = best.min(total(&v)?);
    }
    Ok(OgdRegretSummary {
        k,
        horizon,
        gamma,
        eta,
        online_loss: online,
        comparator_loss: best,
        regret: online - best,
        bound: ogd_regret_bound(k, eta, horizon, gamma),
    })
}
