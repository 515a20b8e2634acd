//! `H`-step rollouts of true and learned PWA systems, empirical squared
//! Wasserstein-2 distances between trajectory samples, and the episodic
//! simulation-regret loop.
//!
//! True and simulated rollouts of an episode share every random draw
//! (initial state, open-loop inputs, process noise). The coupled estimate
//! pairs rollout `r` with rollout `r`; the assignment estimate solves the
//! optimal matching on the same two samples, so it never exceeds the coupled
//! one. Inputs are shared, so they contribute nothing to the coupled
//! distance but are part of the trajectory vector `(z_{1..H}, u_{1..H})`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::dynamics::{project_to_lyapunov_cone, InputPolicy, ModeDynamics, PwaDynamics};
use crate::error::{check_dim, invalid, Error, Result};
use crate::learner::hinge::OgdWeights;
use crate::learner::{EpochLearner, LearnerConfig};
use crate::rng::SeededRng;
use crate::smoothing::NoiseChannel;
use crate::types::AffineMap;

pub const MAX_ASSIGNMENT_SAMPLES: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: usize,
    /// `z_1 … z_{H+1}`.
    pub states: Vec<DVector<f64>>,
    /// `u_1 … u_H`.
    pub inputs: Vec<DVector<f64>>,
    pub modes: Vec<usize>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// `(z_1, …, z_H, u_1, …, u_H)` concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        let h = self.horizon();
        self.states[..h]
            .iter()
            .flat_map(|z| z.iter().copied())
            .chain(self.inputs.iter().flat_map(|u| u.iter().copied()))
            .collect()
    }
}

/// Anything that maps `(z, u, e)` to the next state and a mode.
pub trait TransitionModel {
    fn transition(&self, z: &DVector<f64>, u: &DVector<f64>, e: &DVector<f64>) -> (DVector<f64>, usize);
}

impl TransitionModel for PwaDynamics {
    fn transition(&self, z: &DVector<f64>, u: &DVector<f64>, e: &DVector<f64>) -> (DVector<f64>, usize) {
        self.step_with_noise(z, u, e)
    }
}

/// A learned model: per-mode `[Â | B̂ | m̂]` and the OGD classifier on
/// `[z; u; 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedModel {
    pub modes: Vec<ModeDynamics>,
    pub weights: OgdWeights,
}

impl LearnedModel {
    /// Splits stacked maps and, when `lyapunov` is given, projects each state
    /// block onto its cone.
    pub fn from_maps(maps: &[AffineMap], weights: OgdWeights, state_dim: usize, lyapunov: Option<&DMatrix<f64>>) -> Result<Self> {
        let modes = maps
            .iter()
            .map(|m| {
                let m = match lyapunov {
                    Some(p) => project_to_lyapunov_cone(m, state_dim, p)?,
                    None => m.clone(),
                };
                ModeDynamics::from_stacked(m.matrix(), state_dim)
            })
            .collect::<Result<Vec<_>>>()?;
        check_dim(modes.len(), weights.k(), "learned classifier modes")?;
        Ok(Self { modes, weights })
    }
}

impl TransitionModel for LearnedModel {
    fn transition(&self, z: &DVector<f64>, u: &DVector<f64>, e: &DVector<f64>) -> (DVector<f64>, usize) {
        let x: Vec<f64> = z.iter().chain(u.iter()).copied().chain(std::iter::once(1.0)).collect();
        let i = self.weights.predict(&x);
        (self.modes[i].apply(z, u) + e, i)
    }
}

/// Random draws for `n` rollouts of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeDraws {
    pub initial: Vec<DVector<f64>>,
    pub inputs: Vec<Vec<DVector<f64>>>,
    pub noise: Vec<Vec<DVector<f64>>>,
}

impl EpisodeDraws {
    pub fn sample(
        dynamics: &PwaDynamics,
        policy: &InputPolicy,
        initial: &NoiseChannel,
        h: usize,
        n: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if !policy.is_open_loop() {
            return Err(invalid("policy", "episodic rollouts need a state-independent policy"));
        }
        check_dim(dynamics.state_dim(), initial.dim, "initial-state channel")?;
        let zero = DVector::zeros(dynamics.state_dim());
        let mut out = Self {
            initial: Vec::with_capacity(n),
            inputs: Vec::with_capacity(n),
            noise: Vec::with_capacity(n),
        };
        for _ in 0..n {
            out.initial.push(initial.sample(rng));
            out.inputs.push((0..h).map(|_| policy.input(&zero, rng)).collect());
            out.noise.push((0..h).map(|_| dynamics.sample_noise(rng)).collect());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty()
    }
}

/// Rolls `model` forward once per draw.
pub fn simulate_episode<M: TransitionModel + ?Sized>(model: &M, draws: &EpisodeDraws, episode: usize) -> Vec<Trajectory> {
    (0..draws.len())
        .map(|r| {
            let mut z = draws.initial[r].clone();
            let h = draws.inputs[r].len();
            let mut states = Vec::with_capacity(h + 1);
            let mut modes = Vec::with_capacity(h);
            states.push(z.clone());
            for s in 0..h {
                let (next, i) = model.transition(&z, &draws.inputs[r][s], &draws.noise[r][s]);
                modes.push(i);
                z = next;
                states.push(z.clone());
            }
            Trajectory {
                episode,
                states,
                inputs: draws.inputs[r].clone(),
                modes,
            }
        })
        .collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_samples(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    check_dim(a.len(), b.len(), "sample counts")?;
    if let Some(first) = a.first() {
        let q = first.len();
        for s in a.iter().chain(b) {
            check_dim(q, s.len(), "sample dimension")?;
        }
    }
    Ok(())
}

/// Exact squared `W2` between two uniform empirical measures of equal size.
pub fn wasserstein2_empirical(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_samples(a, b)?;
    let n = a.len();
    if n > MAX_ASSIGNMENT_SAMPLES {
        return Err(invalid("samples", format!("at most {MAX_ASSIGNMENT_SAMPLES} per side")));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut cost = Vec::with_capacity(n * n);
    for x in a {
        for y in b {
            cost.push(squared_distance(x, y));
        }
    }
    let sol = assignment::solve(&cost, n)?;
    Ok((sol.cost / n as f64).max(0.0))
}

/// Mean squared distance under the identity pairing (an upper bound on the
/// empirical `W2²`).
pub fn coupled_w2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_samples(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| squared_distance(x, y)).sum::<f64>() / a.len() as f64)
}

/// Empirical `W2²` between two independent batches of true rollouts: the
/// estimator's sampling floor.
pub fn sampling_floor(
    dynamics: &PwaDynamics,
    policy: &InputPolicy,
    initial: &NoiseChannel,
    h: usize,
    n: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    let a = EpisodeDraws::sample(dynamics, policy, initial, h, n, rng)?;
    let b = EpisodeDraws::sample(dynamics, policy, initial, h, n, rng)?;
    let fa: Vec<Vec<f64>> = simulate_episode(dynamics, &a, 0).iter().map(Trajectory::flatten).collect();
    let fb: Vec<Vec<f64>> = simulate_episode(dynamics, &b, 0).iter().map(Trajectory::flatten).collect();
    wasserstein2_empirical(&fa, &fb)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRegConfig {
    pub episodes: usize,
    pub h: usize,
    pub n_rollouts: usize,
    pub initial_state: NoiseChannel,
    pub learner: LearnerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEstimate {
    pub episode: usize,
    pub w2_assign: f64,
    pub w2_coupled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRegReport {
    pub seed: u64,
    pub episodes: Vec<EpisodeEstimate>,
    pub cumulative_assign: f64,
    pub cumulative_coupled: f64,
    pub learner_epochs: usize,
}

impl SimRegReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "episode,w2_assign,w2_coupled,cumulative_assign,cumulative_coupled")?;
        let (mut ca, mut cc) = (0.0, 0.0);
        for e in &self.episodes {
            ca += e.w2_assign;
            cc += e.w2_coupled;
            writeln!(out, "{},{:.17e},{:.17e},{:.17e},{:.17e}", e.episode, e.w2_assign, e.w2_coupled, ca, cc)?;
        }
        Ok(())
    }

    /// Median of an estimator over the episode index range `[lo, hi)`.
    pub fn median_over(&self, lo: usize, hi: usize, coupled: bool) -> f64 {
        let vals: Vec<f64> = self.episodes[lo.min(self.episodes.len())..hi.min(self.episodes.len())]
            .iter()
            .map(|e| if coupled { e.w2_coupled } else { e.w2_assign })
            .collect();
        crate::metrics::median(&vals)
    }
}

/// Episodic loop: estimate the episode's `W2²` between the true system and
/// the current learned model (cone-projected maps, OGD classifier), then
/// realize one true rollout and feed its `H` transitions to the learner.
pub fn simulation_regret(dynamics: &PwaDynamics, policy: &InputPolicy, config: &SimRegConfig, seed: u64) -> Result<SimRegReport> {
    dynamics.validate()?;
    policy.validate(dynamics.state_dim())?;
    if config.h == 0 || config.episodes == 0 {
        return Err(invalid("episodes", "need H >= 1 and at least one episode"));
    }
    if config.n_rollouts == 0 || config.n_rollouts > MAX_ASSIGNMENT_SAMPLES {
        return Err(invalid("n_rollouts", format!("must lie in 1..={MAX_ASSIGNMENT_SAMPLES}")));
    }
    let dz = dynamics.state_dim();
    let du = dynamics.input_dim();
    let root = SeededRng::new(seed, 0);
    let mut learner = EpochLearner::new(config.learner.clone(), dz + du + 1, dz, root.fork(1))?;
    let mut draw_rng = root.fork(2);
    let mut real_rng = root.fork(3);
    let lyapunov = dynamics.lyapunov.clone().unwrap_or_else(|| DMatrix::identity(dz, dz));
    let mut model = LearnedModel::from_maps(learner.maps(), learner.weights().clone(), dz, Some(&lyapunov))?;
    let mut episodes = Vec::with_capacity(config.episodes);
    let (mut ca, mut cc) = (0.0, 0.0);
    for t in 0..config.episodes {
        let draws = EpisodeDraws::sample(dynamics, policy, &config.initial_state, config.h, config.n_rollouts, &mut draw_rng)?;
        let truth: Vec<Vec<f64>> = simulate_episode(dynamics, &draws, t).iter().map(Trajectory::flatten).collect();
        let sim: Vec<Vec<f64>> = simulate_episode(&model, &draws, t).iter().map(Trajectory::flatten).collect();
        let w2_assign = wasserstein2_empirical(&truth, &sim)?;
        let w2_coupled = coupled_w2(&truth, &sim)?;
        if !(w2_assign.is_finite() && w2_coupled.is_finite()) {
            return Err(Error::NonFinite("episode W2 estimate"));
        }
        ca += w2_assign;
        cc += w2_coupled;
        episodes.push(EpisodeEstimate {
            episode: t,
            w2_assign,
            w2_coupled,
        });

        let real = EpisodeDraws::sample(dynamics, policy, &config.initial_state, config.h, 1, &mut real_rng)?;
        let traj = &simulate_episode(dynamics, &real, t)[0];
        let mut updated = false;
        for s in 0..config.h {
            let x: Vec<f64> = traj.states[s].iter().chain(traj.inputs[s].iter()).copied().chain(std::iter::once(1.0)).collect();
            updated |= learner.observe(&x, traj.states[s + 1].as_slice())?.is_some();
        }
        if updated {
            model = LearnedModel::from_maps(learner.maps(), learner.weights().clone(), dz, Some(&lyapunov))?;
        }
    }
    Ok(SimRegReport {
        seed,
        episodes,
        cumulative_assign: ca,
        cumulative_coupled: cc,
        learner_epochs: learner.tau(),
    })
}

/// `t, h, z…, u…, mode` rows; the final state has empty input and mode.
pub fn write_trajectories_csv<W: Write>(mut out: W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    let Some(first) = trajectories.first() else {
        return writeln!(out, "t,h,mode");
    };
    let dz = first.states[0].len();
    let du = first.inputs.first().map_or(0, |u| u.len());
    let mut header = vec!["t".to_string(), "h".to_string()];
    header.extend((0..dz).map(|i| format!("z{i}")));
    header.extend((0..du).map(|i| format!("u{i}")));
    header.push("mode".into());
    writeln!(out, "{}", header.join(","))?;
    for tr in trajectories {
        for (h, z) in tr.states.iter().enumerate() {
            let mut row = vec![tr.episode.to_string(), h.to_string()];
            row.extend(z.iter().map(|v| format!("{v:.17e}")));
            match tr.inputs.get(h) {
                Some(u) => {
                    row.extend(u.iter().map(|v| format!("{v:.17e}")));
                    row.push(tr.modes[h].to_string());
                }
                None => {
                    row.extend((0..du + 1).map(|_| String::new()));
                }
            }
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}
