//! PWA dynamical systems `z' = A_i z + B_i u + m_i + e` with `i = g*(z, u)`,
//! input policies and the Lyapunov-cone projection of learned state matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::generators::GroundTruth;
use crate::learner::{self, LearnerConfig};
use crate::metrics::RunReport;
use crate::rng::SeededRng;
use crate::smoothing::{concatenated_smoothness_bound, NoiseChannel};
use crate::types::{lift, AffineClassifier, AffineMap, Observation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl ModeDynamics {
    /// `[A | B | m]`, the regression parameter acting on `[z; u; 1]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let dz = self.a.nrows();
        let du = self.b.ncols();
        let mut out = DMatrix::zeros(dz, dz + du + 1);
        out.view_mut((0, 0), (dz, dz)).copy_from(&self.a);
        out.view_mut((0, dz), (dz, du)).copy_from(&self.b);
        out.set_column(dz + du, &self.offset);
        out
    }

    pub fn from_stacked(theta: &DMatrix<f64>, state_dim: usize) -> Result<Self> {
        check_dim(state_dim, theta.nrows(), "stacked map rows")?;
        if theta.ncols() < state_dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: state_dim + 1,
                got: theta.ncols(),
                context: "stacked map columns",
            });
        }
        let du = theta.ncols() - state_dim - 1;
        Ok(Self {
            a: theta.columns(0, state_dim).into_owned(),
            b: theta.columns(state_dim, du).into_owned(),
            offset: theta.column(state_dim + du).into_owned(),
        })
    }

    pub fn apply(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * z + &self.b * u + &self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwaDynamics {
    pub modes: Vec<ModeDynamics>,
    /// Region classifier on the concatenation `[z; u]`.
    pub classifier: AffineClassifier,
    pub noise: NoiseChannel,
    /// Norm bound on process noise; draws beyond it are rejected.
    #[serde(default)]
    pub noise_bound: Option<f64>,
    #[serde(default)]
    pub lyapunov: Option<DMatrix<f64>>,
}

impl PwaDynamics {
    pub fn new(
        modes: Vec<ModeDynamics>,
        classifier: AffineClassifier,
        noise: NoiseChannel,
        noise_bound: Option<f64>,
        lyapunov: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let dynamics = Self {
            modes,
            classifier,
            noise,
            noise_bound,
            lyapunov,
        };
        dynamics.validate()?;
        Ok(dynamics)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.modes.first().ok_or_else(|| invalid("modes", "need at least one mode"))?;
        let dz = first.a.nrows();
        let du = first.b.ncols();
        if dz == 0 {
            return Err(invalid("modes", "state dimension must be >= 1"));
        }
        for mode in &self.modes {
            check_dim(dz, mode.a.nrows(), "A rows")?;
            check_dim(dz, mode.a.ncols(), "A columns")?;
            check_dim(dz, mode.b.nrows(), "B rows")?;
            check_dim(du, mode.b.ncols(), "B columns")?;
            check_dim(dz, mode.offset.len(), "offset length")?;
        }
        check_dim(self.modes.len(), self.classifier.k(), "classifier modes")?;
        check_dim(dz + du, self.classifier.dim(), "classifier dimension")?;
        check_dim(dz, self.noise.dim, "process noise dimension")?;
        self.noise.validate()?;
        if let Some(bound) = self.noise_bound {
            if !(bound > 0.0) {
                return Err(invalid("noise_bound", "must be > 0"));
            }
        }
        if let Some(p) = &self.lyapunov {
            check_dim(dz, p.nrows(), "Lyapunov matrix rows")?;
            check_dim(dz, p.ncols(), "Lyapunov matrix columns")?;
            sqrt_and_inv_sqrt(p)?;
            for (i, mode) in self.modes.iter().enumerate() {
                if cone_violation(&mode.a, p)? > 1e-9 {
                    return Err(invalid("lyapunov", format!("mode {i} violates AᵀPA ⪯ P")));
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.modes[0].b.ncols()
    }

    pub fn k(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, z: &DVector<f64>, u: &DVector<f64>) -> usize {
        let zu: Vec<f64> = z.iter().chain(u.iter()).copied().collect();
        self.classifier.classify_slice(&zu)
    }

    pub fn sample_noise(&self, rng: &mut SeededRng) -> DVector<f64> {
        match self.noise_bound {
            Some(bound) => self.noise.sample_truncated(bound, rng),
            None => self.noise.sample(rng),
        }
    }

    /// Noise-free transition plus an explicit noise vector.
    pub fn step_with_noise(&self, z: &DVector<f64>, u: &DVector<f64>, e: &DVector<f64>) -> (DVector<f64>, usize) {
        let i = self.mode(z, u);
        (self.modes[i].apply(z, u) + e, i)
    }

    pub fn step(&self, z: &DVector<f64>, u: &DVector<f64>, rng: &mut SeededRng) -> Result<(DVector<f64>, usize)> {
        check_dim(self.state_dim(), z.len(), "step state")?;
        check_dim(self.input_dim(), u.len(), "step input")?;
        let e = self.sample_noise(rng);
        Ok(self.step_with_noise(z, u, &e))
    }

    /// Stacked `[A_i | B_i | m_i]` maps, bounded by their own norm or `bound`,
    /// whichever is larger.
    pub fn stacked_maps(&self, bound: f64) -> Vec<AffineMap> {
        self.modes
            .iter()
            .map(|mode| {
                let mat = mode.stacked();
                let r = bound.max(mat.norm());
                AffineMap::projected(mat, r)
            })
            .collect()
    }
}

/// How inputs are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum InputPolicy {
    /// `u = K̄ z + ū + ē` with a fixed gain and smooth exploration `ē`.
    Feedback {
        gain: DMatrix<f64>,
        nominal: DVector<f64>,
        exploration: NoiseChannel,
    },
    /// State-independent `u = ū + ē`.
    OpenLoop {
        nominal: DVector<f64>,
        exploration: NoiseChannel,
    },
    /// State-independent `u` uniform on `[low, high]^dim`.
    UniformBox { low: f64, high: f64, dim: usize },
}

impl InputPolicy {
    pub fn input_dim(&self) -> usize {
        match self {
            InputPolicy::Feedback { nominal, .. } | InputPolicy::OpenLoop { nominal, .. } => nominal.len(),
            InputPolicy::UniformBox { dim, .. } => *dim,
        }
    }

    pub fn is_open_loop(&self) -> bool {
        !matches!(self, InputPolicy::Feedback { .. })
    }

    pub fn gain_op_norm(&self) -> f64 {
        match self {
            InputPolicy::Feedback { gain, .. } => op_norm(gain),
            _ => 0.0,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        match self {
            InputPolicy::Feedback {
                gain,
                nominal,
                exploration,
            } => {
                check_dim(nominal.len(), gain.nrows(), "gain rows")?;
                check_dim(state_dim, gain.ncols(), "gain columns")?;
                check_dim(nominal.len(), exploration.dim, "exploration dimension")?;
                exploration.validate()
            }
            InputPolicy::OpenLoop { nominal, exploration } => {
                check_dim(nominal.len(), exploration.dim, "exploration dimension")?;
                exploration.validate()
            }
            InputPolicy::UniformBox { low, high, dim } => {
                if *dim == 0 || !(low <= high) {
                    return Err(invalid("uniform_box", "need dim >= 1 and low <= high"));
                }
                Ok(())
            }
        }
    }

    pub fn input(&self, z: &DVector<f64>, rng: &mut SeededRng) -> DVector<f64> {
        match self {
            InputPolicy::Feedback {
                gain,
                nominal,
                exploration,
            } => gain * z + nominal + exploration.sample(rng),
            InputPolicy::OpenLoop { nominal, exploration } => nominal + exploration.sample(rng),
            InputPolicy::UniformBox { low, high, dim } => {
                DVector::from_fn(*dim, |_, _| low + (high - low) * rng.random::<f64>())
            }
        }
    }

    /// Smoothness of the covariate `[z; u]` when `z` is `sigma_dir`-smooth
    /// and the exploration shares that level.
    pub fn covariate_smoothness(&self, sigma_dir: f64) -> Result<f64> {
        concatenated_smoothness_bound(sigma_dir, self.gain_op_norm())
    }
}

pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Whitened spectral norms within this of 1 count as feasible, so that a
/// projected matrix is a fixed point despite rounding.
const FEASIBILITY_TOL: f64 = 1e-10;

/// `(P^{1/2}, P^{-1/2})` for symmetric positive definite `P`.
pub fn sqrt_and_inv_sqrt(p: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !p.is_square() || p.nrows() == 0 {
        return Err(Error::NotPositiveDefinite);
    }
    let scale = p.amax().max(1.0);
    if (p - p.transpose()).amax() > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite);
    }
    let sym = (p + p.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmin = eig.eigenvalues.min();
    if !(lmin > 1e-14 * scale) {
        return Err(Error::NotPositiveDefinite);
    }
    let sqrt = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.sqrt()));
    let inv = sqrt.map(|s| 1.0 / s);
    let v = &eig.eigenvectors;
    let half = v * DMatrix::from_diagonal(&sqrt) * v.transpose();
    let inv_half = v * DMatrix::from_diagonal(&inv) * v.transpose();
    Ok((half, inv_half))
}

/// `−λ_min(P − AᵀPA)`; nonpositive exactly when `A` lies in the cone.
pub fn cone_violation(a: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    check_dim(p.nrows(), a.nrows(), "cone check")?;
    let gap = p - a.transpose() * p * a;
    let sym = (&gap + gap.transpose()) * 0.5;
    Ok(-SymmetricEigen::new(sym).eigenvalues.min())
}

fn clip_singular_values(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values.map(|s| s.min(1.0));
    u * DMatrix::from_diagonal(&s) * vt
}

/// Projects a square state matrix onto `{A : AᵀPA ⪯ P}` in the
/// `P`-weighted Frobenius norm: whiten, clip singular values at 1, unwhiten.
/// Feasible inputs are returned unchanged.
pub fn project_state_matrix(a: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(p.nrows(), a.nrows(), "state matrix rows")?;
    check_dim(p.nrows(), a.ncols(), "state matrix columns")?;
    let (half, inv_half) = sqrt_and_inv_sqrt(p)?;
    let white = &half * a * &inv_half;
    if op_norm(&white) <= 1.0 + FEASIBILITY_TOL {
        return Ok(a.clone());
    }
    Ok(&inv_half * clip_singular_values(&white) * &half)
}

/// Plain-Frobenius variant: projected gradient on
/// `‖P^{-1/2} X P^{1/2} − A‖_F²` over whitened `X` with `‖X‖_op ≤ 1`,
/// started from the weighted projection. Every iterate is feasible.
pub fn project_state_matrix_frobenius(a: &DMatrix<f64>, p: &DMatrix<f64>, iterations: usize) -> Result<DMatrix<f64>> {
    let start = project_state_matrix(a, p)?;
    if &start == a {
        return Ok(start);
    }
    let (half, inv_half) = sqrt_and_inv_sqrt(p)?;
    let lmax = |m: &DMatrix<f64>| SymmetricEigen::new(m.clone()).eigenvalues.max();
    let lipschitz = 2.0 * lmax(&(&inv_half * &inv_half)) * lmax(&(&half * &half));
    let step = 1.0 / lipschitz;
    let mut x = &half * &start * &inv_half;
    let mut best = start.clone();
    let mut best_cost = (&start - a).norm_squared();
    for _ in 0..iterations {
        let current = &inv_half * &x * &half;
        let grad = &inv_half * (&current - a) * &half * 2.0;
        x = clip_singular_values(&(&x - grad * step));
        let candidate = &inv_half * &x * &half;
        let cost = (&candidate - a).norm_squared();
        if cost < best_cost {
            best_cost = cost;
            best = candidate;
        }
    }
    Ok(best)
}

/// Projects the `A`-block (first `state_dim` columns) of a stacked
/// `[A | B | m]` map; the other blocks pass through.
pub fn project_to_lyapunov_cone(theta: &AffineMap, state_dim: usize, p: &DMatrix<f64>) -> Result<AffineMap> {
    let mat = theta.matrix();
    check_dim(state_dim, mat.nrows(), "stacked map rows")?;
    if mat.ncols() < state_dim + 1 {
        return Err(invalid("theta", "fewer columns than the state block"));
    }
    let a = mat.columns(0, state_dim).into_owned();
    let projected = project_state_matrix(&a, p)?;
    if projected == a {
        return Ok(theta.clone());
    }
    let mut out = mat.clone();
    out.columns_mut(0, state_dim).copy_from(&projected);
    let bound = theta.bound().max(out.norm());
    AffineMap::new(out, bound)
}

/// Transitions `([z; u], z')` of a single trajectory driven by a policy,
/// presented as regression observations.
pub struct DynamicsStream {
    dynamics: PwaDynamics,
    policy: InputPolicy,
    state: DVector<f64>,
    rng: SeededRng,
}

impl DynamicsStream {
    pub fn new(dynamics: PwaDynamics, policy: InputPolicy, initial: DVector<f64>, rng: SeededRng) -> Result<Self> {
        dynamics.validate()?;
        policy.validate(dynamics.state_dim())?;
        check_dim(dynamics.input_dim(), policy.input_dim(), "policy input dimension")?;
        check_dim(dynamics.state_dim(), initial.len(), "initial state")?;
        Ok(Self {
            dynamics,
            policy,
            state: initial,
            rng,
        })
    }
}

impl Iterator for DynamicsStream {
    type Item = Observation;

    fn next(&mut self) -> Option<Observation> {
        let u = self.policy.input(&self.state, &mut self.rng);
        let e = self.dynamics.sample_noise(&mut self.rng);
        let (next, mode) = self.dynamics.step_with_noise(&self.state, &u, &e);
        let x = DVector::from_iterator(self.state.len() + u.len(), self.state.iter().chain(u.iter()).copied());
        let obs = Observation {
            x_lift: lift(&x),
            x,
            y: next.clone(),
            hidden_mode: mode,
            corruption: DVector::zeros(e.len()),
            noise: e,
            clipped: false,
        };
        self.state = next;
        Some(obs)
    }
}

/// Ground truth of the one-step regression: `Θ*_i = [A_i | B_i | m_i]` and
/// the classifier on `[z; u]`.
pub fn one_step_truth(dynamics: &PwaDynamics, map_bound: f64) -> GroundTruth {
    GroundTruth {
        maps: dynamics.stacked_maps(map_bound),
        classifier: dynamics.classifier.clone(),
    }
}

/// Runs the epoch learner on `x = [z; u]`, `y = z'` and reports regret
/// against `Θ*_{g*(x)} x̄`. The report's `noise_energy` is the irreducible
/// floor and `regret` the excess.
pub fn one_step_prediction_run(
    dynamics: &PwaDynamics,
    policy: &InputPolicy,
    initial: DVector<f64>,
    horizon: usize,
    config: &LearnerConfig,
    seed: u64,
) -> Result<RunReport> {
    let root = SeededRng::new(seed, 0);
    let stream = DynamicsStream::new(dynamics.clone(), policy.clone(), initial, root.fork(1))?;
    let truth = one_step_truth(dynamics, config.erm.map_bound);
    let mut report = learner::run(stream, horizon, config, &truth, seed, root.fork(2))?;
    report.covariate_smoothness = Some(policy.covariate_smoothness(dynamics.noise.claimed_sigma_dir())?);
    Ok(report)
}
