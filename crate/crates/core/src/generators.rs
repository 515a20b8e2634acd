//! Ground-truth instance construction.
//!
//! * [`PwaRegressionModel`] + [`RegressionStream`]: smoothed PWA regression
//!   rounds `y = Θ*_{g*(x)} x̄ + e + δ`.
//! * [`adversarial_threshold_stream`]: the binary-expansion threshold
//!   sequence on which every online learner errs half the time.
//! * [`hard_identification_instance`]: a 1-D, 3-mode system whose third mode
//!   lives on a segment of length `1/N`.
//! * [`sample_separated_parameters`]: smoothly drawn mode parameters together
//!   with the separation they are guaranteed with probability `1 − δ`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::ToPrimitive;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModeDynamics, PwaDynamics};
use crate::error::{check_dim, invalid, Result};
use crate::rng::SeededRng;
use crate::smoothing::NoiseChannel;
use crate::types::{lift, AffineClassifier, AffineMap, Dimensions, Observation};

/// Minimum pairwise Frobenius gap; `+∞` when there are fewer than two maps.
pub fn min_pairwise_gap(maps: &[AffineMap]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..maps.len() {
        for j in i + 1..maps.len() {
            gap = gap.min(maps[i].frobenius_distance(&maps[j]));
        }
    }
    gap
}

/// Ground truth the harness scores against: the true maps and the true
/// classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub maps: Vec<AffineMap>,
    pub classifier: AffineClassifier,
}

impl GroundTruth {
    pub fn mode(&self, x_lift: &[f64]) -> usize {
        self.classifier.classify_lifted(x_lift)
    }

    pub fn mean_response(&self, x_lift: &[f64], out: &mut [f64]) -> usize {
        let i = self.mode(x_lift);
        self.maps[i].apply_slice(x_lift, out);
        i
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwaRegressionModel {
    pub dims: Dimensions,
    pub maps: Vec<AffineMap>,
    pub classifier: AffineClassifier,
    /// Scale ν of the Gaussian response noise.
    pub response_noise: f64,
    /// Optional truncation of the response noise at `multiple · ν` in norm.
    #[serde(default)]
    pub noise_truncation: Option<f64>,
    pub channel: NoiseChannel,
    #[serde(default)]
    pub corruption_budget: f64,
    /// Bound `B` on `‖x̄‖`.
    pub covariate_bound: f64,
    /// Required minimum pairwise gap `Δ_sep`.
    pub separation: f64,
}

impl PwaRegressionModel {
    pub fn validate(&self) -> Result<()> {
        let Dimensions { d, m, k } = self.dims;
        Dimensions::new(d, m, k)?;
        check_dim(k, self.maps.len(), "number of maps")?;
        check_dim(k, self.classifier.k(), "classifier modes")?;
        check_dim(d, self.classifier.dim(), "classifier dimension")?;
        check_dim(d, self.channel.dim, "channel dimension")?;
        self.channel.validate()?;
        for map in &self.maps {
            check_dim(m, map.response_dim(), "map rows")?;
            check_dim(d, map.covariate_dim(), "map columns")?;
            AffineMap::new(map.matrix().clone(), map.bound())?;
        }
        if !(self.response_noise >= 0.0) {
            return Err(invalid("response_noise", "must be >= 0"));
        }
        if !(self.corruption_budget >= 0.0) {
            return Err(invalid("corruption_budget", "must be >= 0"));
        }
        if !(self.covariate_bound > 1.0) {
            return Err(invalid("covariate_bound", "must exceed 1 (the lifted coordinate)"));
        }
        let gap = min_pairwise_gap(&self.maps);
        if gap + crate::types::NORM_TOL < self.separation {
            return Err(invalid(
                "separation",
                format!("maps have minimum gap {gap} < required {}", self.separation),
            ));
        }
        Ok(())
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            maps: self.maps.clone(),
            classifier: self.classifier.clone(),
        }
    }

    fn response_noise_draw(&self, rng: &mut SeededRng) -> DVector<f64> {
        let m = self.dims.m;
        if self.response_noise == 0.0 {
            return DVector::zeros(m);
        }
        let draw = |rng: &mut SeededRng| {
            DVector::from_fn(m, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                self.response_noise * z
            })
        };
        match self.noise_truncation {
            Some(mult) => {
                let cap = mult * self.response_noise;
                loop {
                    let e = draw(rng);
                    if e.norm() <= cap {
                        return e;
                    }
                }
            }
            None => draw(rng),
        }
    }

    fn corruption_draw(&self, rng: &mut SeededRng) -> DVector<f64> {
        let m = self.dims.m;
        if self.corruption_budget == 0.0 {
            return DVector::zeros(m);
        }
        let mut dir = DVector::from_fn(m, |_, _| -> f64 { StandardNormal.sample(rng) });
        let n = dir.norm().max(1e-300);
        let u: f64 = rng.random();
        dir *= self.corruption_budget * u.powf(1.0 / m as f64) / n;
        dir
    }

    /// One round: smooth `z`, clip to the covariate bound, label with `g*`
    /// and respond through the active map.
    pub fn emit_observation(&self, z: &DVector<f64>, rng: &mut SeededRng) -> Result<Observation> {
        check_dim(self.dims.d, z.len(), "emit_observation center")?;
        let mut x = z + self.channel.sample(rng);
        let max_x = (self.covariate_bound * self.covariate_bound - 1.0).sqrt();
        let norm = x.norm();
        let clipped = norm > max_x;
        if clipped {
            x *= max_x / norm;
        }
        let x_lift = lift(&x);
        let hidden_mode = self.classifier.classify(&x)?;
        let noise = self.response_noise_draw(rng);
        let corruption = self.corruption_draw(rng);
        let y = self.maps[hidden_mode].apply(&x_lift)? + &noise + &corruption;
        Ok(Observation {
            x,
            x_lift,
            y,
            hidden_mode,
            noise,
            corruption,
            clipped,
        })
    }
}

/// Chooses the pre-noise center `z_t` of each round.
pub trait CovariateAdversary: Send {
    fn center(&mut self, t: usize, last: Option<&Observation>, rng: &mut SeededRng) -> DVector<f64>;
}

/// Wraps a closure as a [`CovariateAdversary`] (the user-supplied hook).
pub struct FnAdversary<F>(pub F);

impl<F> CovariateAdversary for FnAdversary<F>
where
    F: FnMut(usize, Option<&Observation>, &mut SeededRng) -> DVector<f64> + Send,
{
    fn center(&mut self, t: usize, last: Option<&Observation>, rng: &mut SeededRng) -> DVector<f64> {
        (self.0)(t, last, rng)
    }
}

/// Built-in `z_t` presets. None of them is claimed to be worst case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum CovariatePolicy {
    Fixed { z: Vec<f64> },
    /// Independent uniform draws from `[low, high]^d`.
    UniformBox { low: f64, high: f64 },
    /// Gaussian random walk reflected into the ball of the given radius.
    RandomWalk { step: f64, radius: f64 },
    /// Points on the decision boundary between two random modes of `g*`.
    BoundaryHugging { spread: f64 },
}

pub struct PolicyAdversary {
    policy: CovariatePolicy,
    classifier: AffineClassifier,
    state: DVector<f64>,
}

impl PolicyAdversary {
    pub fn new(policy: CovariatePolicy, classifier: AffineClassifier) -> Result<Self> {
        let d = classifier.dim();
        match &policy {
            CovariatePolicy::Fixed { z } => check_dim(d, z.len(), "fixed covariate center")?,
            CovariatePolicy::UniformBox { low, high } if !(low <= high) => {
                return Err(invalid("uniform_box", "low must be <= high"))
            }
            CovariatePolicy::RandomWalk { step, radius } if !(*step >= 0.0 && *radius > 0.0) => {
                return Err(invalid("random_walk", "step >= 0 and radius > 0 required"))
            }
            _ => {}
        }
        Ok(Self {
            policy,
            classifier,
            state: DVector::zeros(d),
        })
    }
}

impl CovariateAdversary for PolicyAdversary {
    fn center(&mut self, _t: usize, _last: Option<&Observation>, rng: &mut SeededRng) -> DVector<f64> {
        let d = self.classifier.dim();
        match &self.policy {
            CovariatePolicy::Fixed { z } => DVector::from_column_slice(z),
            CovariatePolicy::UniformBox { low, high } => {
                DVector::from_fn(d, |_, _| low + (high - low) * rng.random::<f64>())
            }
            CovariatePolicy::RandomWalk { step, radius } => {
                let kick = DVector::from_fn(d, |_, _| -> f64 { StandardNormal.sample(rng) }) * *step;
                let mut next = &self.state + kick;
                let n = next.norm();
                if n > *radius {
                    // reflect back inside the ball
                    next *= (2.0 * radius - n).max(0.0) / n;
                }
                self.state = next.clone();
                next
            }
            CovariatePolicy::BoundaryHugging { spread } => {
                let p = DVector::from_fn(d, |_, _| spread * (2.0 * rng.random::<f64>() - 1.0));
                let k = self.classifier.k();
                if k < 2 {
                    return p;
                }
                let i = rng.random_range(0..k);
                let mut j = rng.random_range(0..k - 1);
                if j >= i {
                    j += 1;
                }
                let dirs = self.classifier.directions();
                let offs = self.classifier.offsets();
                let normal = &dirs[i] - &dirs[j];
                let nn = normal.norm_squared();
                if nn < 1e-14 {
                    return p;
                }
                let level = normal.dot(&p) + offs[i] - offs[j];
                p - normal * (level / nn)
            }
        }
    }
}

/// Infinite stream of observations from a model and a covariate adversary.
pub struct RegressionStream {
    model: PwaRegressionModel,
    adversary: Box<dyn CovariateAdversary>,
    rng: SeededRng,
    t: usize,
    last: Option<Observation>,
    clipped: usize,
}

impl RegressionStream {
    pub fn new(model: PwaRegressionModel, adversary: Box<dyn CovariateAdversary>, rng: SeededRng) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            adversary,
            rng,
            t: 0,
            last: None,
            clipped: 0,
        })
    }

    pub fn with_policy(model: PwaRegressionModel, policy: CovariatePolicy, rng: SeededRng) -> Result<Self> {
        let adv = PolicyAdversary::new(policy, model.classifier.clone())?;
        Self::new(model, Box::new(adv), rng)
    }

    pub fn model(&self) -> &PwaRegressionModel {
        &self.model
    }

    pub fn emitted(&self) -> usize {
        self.t
    }

    pub fn clipped(&self) -> usize {
        self.clipped
    }

    pub fn clip_rate(&self) -> f64 {
        if self.t == 0 {
            0.0
        } else {
            self.clipped as f64 / self.t as f64
        }
    }

    pub fn next_observation(&mut self) -> Result<Observation> {
        let z = self.adversary.center(self.t, self.last.as_ref(), &mut self.rng);
        let obs = self.model.emit_observation(&z, &mut self.rng)?;
        self.t += 1;
        if obs.clipped {
            self.clipped += 1;
        }
        self.last = Some(obs.clone());
        Ok(obs)
    }
}

impl Iterator for RegressionStream {
    type Item = Observation;

    fn next(&mut self) -> Option<Observation> {
        self.next_observation().ok()
    }
}

/// Writes `t, x…, y…, hidden_mode` rows.
pub fn write_observations_csv<W: Write>(mut out: W, obs: &[Observation]) -> std::io::Result<()> {
    let Some(first) = obs.first() else {
        return writeln!(out, "t,hidden_mode");
    };
    let mut header = vec!["t".to_string()];
    header.extend((0..first.x.len()).map(|i| format!("x{i}")));
    header.extend((0..first.y.len()).map(|i| format!("y{i}")));
    header.push("hidden_mode".into());
    writeln!(out, "{}", header.join(","))?;
    for (t, o) in obs.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(o.x.iter().map(|v| format!("{v:.17e}")));
        row.extend(o.y.iter().map(|v| format!("{v:.17e}")));
        row.push(o.hidden_mode.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// The binary-expansion threshold sequence `x_t = 1/2 + Σ_{s<t} ε_s 2^{−s−1}`
/// with threshold `θ* = x_{T+1}`.
///
/// Points are kept as exact dyadic rationals `numerator / 2^{T+1}`, so label
/// consistency holds for any `T`; learners only ever see the `f64` rounding.
#[derive(Clone, Debug)]
pub struct ThresholdStream {
    pub signs: Vec<i8>,
    numerators: Vec<BigInt>,
    theta_numerator: BigInt,
    pub points: Vec<f64>,
    /// Mode of each round: 1 when `x_t > θ*`, else 0.
    pub labels: Vec<usize>,
    pub theta: f64,
}

fn dyadic_to_f64(num: &BigInt, exp: usize) -> f64 {
    // keep the leading 64 bits, then rescale by the dropped power of two
    let bits = num.bits() as usize;
    let drop = bits.saturating_sub(64);
    let head = (num >> drop).to_f64().unwrap_or(f64::NAN);
    head * 2f64.powi(drop as i32 - exp as i32)
}

impl ThresholdStream {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact comparison `x_t < θ*`.
    pub fn below_threshold(&self, t: usize) -> bool {
        self.numerators[t] < self.theta_numerator
    }

    /// Responses under the two-mode model: mode 0 (`x ≤ θ*`) answers 1,
    /// mode 1 answers 0.
    pub fn responses(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| if l == 0 { 1.0 } else { 0.0 }).collect()
    }

    /// The two-mode regression model realized by the stream: `Θ*_0 = [0 | 1]`,
    /// `Θ*_1 = [0 | 0]`, mode 1 iff `x > θ*`.
    pub fn truth(&self) -> GroundTruth {
        threshold_truth(self.theta)
    }
}

pub fn threshold_truth(theta: f64) -> GroundTruth {
    let maps = vec![
        AffineMap::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), 1.0).expect("valid map"),
        AffineMap::new(DMatrix::from_row_slice(1, 2, &[0.0, 0.0]), 1.0).expect("valid map"),
    ];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let classifier = AffineClassifier::new(
        vec![DVector::from_vec(vec![-s]), DVector::from_vec(vec![0.0])],
        vec![s * theta, 0.0],
        1.0,
    )
    .expect("valid classifier");
    GroundTruth { maps, classifier }
}

pub fn adversarial_threshold_stream(horizon: usize, rng: &mut SeededRng) -> Result<ThresholdStream> {
    if horizon == 0 {
        return Err(invalid("horizon", "must be >= 1"));
    }
    let exp = horizon + 1;
    let signs: Vec<i8> = (0..horizon).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    // x_1 = 1/2 = 2^T / 2^{T+1}; the s-th sign (1-based) adds ε_s 2^{T-s}.
    let mut current = BigInt::from(1) << horizon;
    let mut numerators = Vec::with_capacity(horizon);
    for (s0, &eps) in signs.iter().enumerate() {
        numerators.push(current.clone());
        let step = BigInt::from(1) << (horizon - (s0 + 1));
        if eps > 0 {
            current += step;
        } else {
            current -= step;
        }
    }
    let theta_numerator = current;
    let points: Vec<f64> = numerators.iter().map(|n| dyadic_to_f64(n, exp)).collect();
    let labels = numerators
        .iter()
        .map(|n| usize::from(n > &theta_numerator))
        .collect();
    Ok(ThresholdStream {
        signs,
        theta: dyadic_to_f64(&theta_numerator, exp),
        numerators,
        theta_numerator,
        points,
        labels,
    })
}

/// A 3-mode, 1-D instance `x_{t+1} = u_t + m_{i_t} + w_t` whose third mode
/// occupies the segment `(1+α, 1+α+β)`, `α = j/N`, `β = 1/N`.
#[derive(Clone, Debug)]
pub struct HardInstance {
    pub dynamics: PwaDynamics,
    pub alpha: f64,
    pub beta: f64,
    /// Offset of the hidden third mode, `ι m`.
    pub hidden_offset: f64,
}

impl HardInstance {
    pub fn segment(&self) -> (f64, f64) {
        (1.0 + self.alpha, 1.0 + self.alpha + self.beta)
    }
}

pub fn hard_identification_instance(
    n: usize,
    j: usize,
    sign: i8,
    magnitude: f64,
    noise: NoiseChannel,
) -> Result<HardInstance> {
    if n == 0 {
        return Err(invalid("N", "must be >= 1"));
    }
    if j == 0 || j > 2 * n {
        return Err(invalid("j", format!("must lie in 1..={}", 2 * n)));
    }
    if sign != 1 && sign != -1 {
        return Err(invalid("iota", "must be +1 or -1"));
    }
    check_dim(1, noise.dim, "hard instance noise")?;
    let alpha = j as f64 / n as f64;
    let beta = 1.0 / n as f64;
    let edge = 1.0 + alpha;
    // Region functions g_1 = 0, g_2 = 2(x − edge) − β, g_3 = x − edge, halved so
    // that directions are unit-norm (argmax is scale invariant).
    let dirs = vec![
        DVector::from_vec(vec![0.0, 0.0]),
        DVector::from_vec(vec![1.0, 0.0]),
        DVector::from_vec(vec![0.5, 0.0]),
    ];
    let offsets = vec![0.0, -edge - beta / 2.0, -edge / 2.0];
    let bound = offsets.iter().fold(1.0f64, |m, b| m.max(b.abs()));
    let classifier = AffineClassifier::new(dirs, offsets, bound)?;
    let hidden_offset = sign as f64 * magnitude;
    let modes = [0.0, 0.0, hidden_offset]
        .iter()
        .map(|&m| ModeDynamics {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, 1.0),
            offset: DVector::from_element(1, m),
        })
        .collect();
    let dynamics = PwaDynamics::new(modes, classifier, noise, None, None)?;
    Ok(HardInstance {
        dynamics,
        alpha,
        beta,
        hidden_offset,
    })
}

/// `p/(4√π) · (σ_dir δ / K²)^{1/p}` for parameters living in `R^p`.
pub fn separation_lower_bound(param_dim: usize, sigma_dir: f64, delta: f64, k: usize) -> f64 {
    let p = param_dim as f64;
    let kk = (k * k) as f64;
    p / (4.0 * std::f64::consts::PI.sqrt()) * (sigma_dir * delta / kk).powf(1.0 / p)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeparatedParameters {
    pub maps: Vec<AffineMap>,
    pub achieved_gap: f64,
    pub predicted_bound: f64,
}

/// Draws `K` maps of shape `m × (d+1)` independently from `channel` (whose
/// dimension must be `m(d+1)`), conditioned on the Frobenius ball of radius
/// `R`.
pub fn sample_separated_parameters(
    k: usize,
    m: usize,
    d: usize,
    radius: f64,
    channel: &NoiseChannel,
    delta_fail: f64,
    rng: &mut SeededRng,
) -> Result<SeparatedParameters> {
    Dimensions::new(d, m, k)?;
    let p = m * (d + 1);
    check_dim(p, channel.dim, "parameter channel dimension")?;
    channel.validate()?;
    if !(radius > 0.0) {
        return Err(invalid("radius", "must be > 0"));
    }
    if !(delta_fail > 0.0 && delta_fail < 1.0) {
        return Err(invalid("delta_fail", "must lie in (0, 1)"));
    }
    let mut maps = Vec::with_capacity(k);
    for _ in 0..k {
        let v = channel.sample_truncated(radius, rng);
        // column-major fill of an m × (d+1) matrix
        let mat = DMatrix::from_column_slice(m, d + 1, v.as_slice());
        maps.push(AffineMap::projected(mat, radius));
    }
    let achieved_gap = min_pairwise_gap(&maps);
    Ok(SeparatedParameters {
        maps,
        achieved_gap,
        predicted_bound: separation_lower_bound(p, channel.claimed_sigma_dir(), delta_fail, k),
    })
}
