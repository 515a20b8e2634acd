//! Directionally smooth noise channels and an interval-mass certificate for
//! directional smoothness.
//!
//! A random vector `x` is `σ_dir`-directionally smooth when every unit
//! projection satisfies `P(|⟨u, x⟩ − c| ≤ δ) ≤ δ / σ_dir`. Two density
//! normalizations follow from that bound and both are reported:
//!
//! * the interval-mass form, read as a density over the window `[c−δ, c+δ]`,
//!   caps `mass / (2δ)` at `1 / σ_dir` for the constants the channels claim;
//! * the equivalent Lebesgue-density ceiling is `2 / σ_dir`.
//!
//! [`SmoothnessReport::pass`] tests the tighter `1 / σ_dir` level.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelKind {
    /// Isotropic `N(0, σ² I)`; claims `σ_dir = √(2π) σ`.
    Gaussian { sigma: f64 },
    /// Uniform on the centred ball of the given radius; claims `σ_dir = radius / 2`.
    UniformBall { radius: f64 },
    /// Degenerate channel with a user-supplied claim. It is never smooth and
    /// exists so the certificate has a failing reference case.
    PointMass { claimed_sigma_dir: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseChannel {
    pub kind: ChannelKind,
    pub dim: usize,
}

impl NoiseChannel {
    pub fn gaussian(dim: usize, sigma: f64) -> Result<Self> {
        Self::new(ChannelKind::Gaussian { sigma }, dim)
    }

    pub fn uniform_ball(dim: usize, radius: f64) -> Result<Self> {
        Self::new(ChannelKind::UniformBall { radius }, dim)
    }

    pub fn point_mass(dim: usize, claimed_sigma_dir: f64) -> Result<Self> {
        Self::new(ChannelKind::PointMass { claimed_sigma_dir }, dim)
    }

    pub fn new(kind: ChannelKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "channel dimension must be >= 1"));
        }
        let scale = match kind {
            ChannelKind::Gaussian { sigma } => sigma,
            ChannelKind::UniformBall { radius } => radius,
            ChannelKind::PointMass { claimed_sigma_dir } => claimed_sigma_dir,
        };
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(invalid("sigma", "must be > 0 for a smoothing channel"));
        }
        Ok(Self { kind, dim })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.kind.clone(), self.dim).map(|_| ())
    }

    pub fn claimed_sigma_dir(&self) -> f64 {
        match self.kind {
            ChannelKind::Gaussian { sigma } => (2.0 * std::f64::consts::PI).sqrt() * sigma,
            ChannelKind::UniformBall { radius } => radius / 2.0,
            ChannelKind::PointMass { claimed_sigma_dir } => claimed_sigma_dir,
        }
    }

    /// Scale of the per-coordinate spread; used to size truncation and
    /// clipping thresholds.
    pub fn scale(&self) -> f64 {
        match self.kind {
            ChannelKind::Gaussian { sigma } => sigma,
            ChannelKind::UniformBall { radius } => radius,
            ChannelKind::PointMass { .. } => 0.0,
        }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> DVector<f64> {
        match self.kind {
            ChannelKind::Gaussian { sigma } => DVector::from_fn(self.dim, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }),
            ChannelKind::UniformBall { radius } => {
                let mut dir = DVector::from_fn(self.dim, |_, _| -> f64 { StandardNormal.sample(rng) });
                let mut n = dir.norm();
                while n == 0.0 {
                    dir = DVector::from_fn(self.dim, |_, _| -> f64 { StandardNormal.sample(rng) });
                    n = dir.norm();
                }
                let u: f64 = rng.random();
                dir * (radius * u.powf(1.0 / self.dim as f64) / n)
            }
            ChannelKind::PointMass { .. } => DVector::zeros(self.dim),
        }
    }

    /// Draw conditioned on `‖w‖ ≤ bound` (rejection sampling).
    pub fn sample_truncated(&self, bound: f64, rng: &mut SeededRng) -> DVector<f64> {
        for _ in 0..10_000 {
            let w = self.sample(rng);
            if w.norm() <= bound {
                return w;
            }
        }
        // Only reachable with a bound far inside the bulk; fall back to clipping.
        let w = self.sample(rng);
        let n = w.norm();
        w * (bound / n)
    }
}

/// `z + w` with `w` drawn from `channel`.
pub fn sample_smoothed(z: &DVector<f64>, channel: &NoiseChannel, rng: &mut SeededRng) -> Result<DVector<f64>> {
    channel.validate()?;
    check_dim(channel.dim, z.len(), "sample_smoothed")?;
    Ok(z + channel.sample(rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessCheck {
    pub n_samples: usize,
    pub n_directions: usize,
    pub n_centers: usize,
    /// Half-widths as multiples of the claimed `σ_dir`.
    pub width_factors: Vec<f64>,
    pub tolerance: f64,
}

impl Default for SmoothnessCheck {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            n_directions: 16,
            n_centers: 64,
            width_factors: vec![0.01, 0.05, 0.1],
            tolerance: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub directions_tested: usize,
    pub sample_size: usize,
    pub claimed_sigma_dir: f64,
    /// Largest `mass / (2δ)` over directions, centers and widths.
    pub worst_density: f64,
    pub worst_half_width: f64,
    pub worst_center: f64,
    /// `1 / σ_dir`: the level `pass` is judged against.
    pub density_bound: f64,
    /// `2 / σ_dir`: the equivalent Lebesgue-density ceiling.
    pub lebesgue_density_ceiling: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub normalization: String,
}

fn random_unit(dim: usize, rng: &mut SeededRng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| -> f64 { StandardNormal.sample(rng) });
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub fn estimate_directional_smoothness(
    channel: &NoiseChannel,
    z: &DVector<f64>,
    check: &SmoothnessCheck,
    rng: &mut SeededRng,
) -> Result<SmoothnessReport> {
    channel.validate()?;
    check_dim(channel.dim, z.len(), "estimate_directional_smoothness")?;
    if check.n_samples < 1000 {
        return Err(invalid("n_samples", "need at least 1000 samples"));
    }
    if check.n_directions == 0 || check.n_centers == 0 || check.width_factors.is_empty() {
        return Err(invalid("check", "directions, centers and widths must be non-empty"));
    }
    let sigma_dir = channel.claimed_sigma_dir();
    let samples: Vec<DVector<f64>> = (0..check.n_samples).map(|_| z + channel.sample(rng)).collect();
    let n = samples.len() as f64;

    let mut worst = (0.0f64, 0.0, 0.0);
    let mut proj = vec![0.0; samples.len()];
    for _ in 0..check.n_directions {
        let u = random_unit(channel.dim, rng);
        for (p, x) in proj.iter_mut().zip(&samples) {
            *p = u.dot(x);
        }
        proj.sort_by(|a, b| a.total_cmp(b));
        for c_idx in 0..check.n_centers {
            let q = (c_idx as f64 + 0.5) / check.n_centers as f64;
            let center = proj[((q * n) as usize).min(proj.len() - 1)];
            for &factor in &check.width_factors {
                let half = factor * sigma_dir;
                let lo = proj.partition_point(|v| *v < center - half);
                let hi = proj.partition_point(|v| *v <= center + half);
                let density = (hi - lo) as f64 / (n * 2.0 * half);
                if density > worst.0 {
                    worst = (density, half, center);
                }
            }
        }
    }

    let density_bound = 1.0 / sigma_dir;
    Ok(SmoothnessReport {
        directions_tested: check.n_directions,
        sample_size: check.n_samples,
        claimed_sigma_dir: sigma_dir,
        worst_density: worst.0,
        worst_half_width: worst.1,
        worst_center: worst.2,
        density_bound,
        lebesgue_density_ceiling: 2.0 / sigma_dir,
        tolerance: check.tolerance,
        pass: worst.0 <= (1.0 + check.tolerance) * density_bound,
        normalization: "worst_density = count(|<u,x>-c| <= delta) / (n * 2 * delta); pass iff worst_density <= (1 + tolerance) / sigma_dir; lebesgue_density_ceiling = 2 / sigma_dir".into(),
    })
}

/// Smoothness of `[z | K z + v]` when `z` and `v` are each `σ_dir`-smooth
/// given the other: `σ_dir / √((1 + ‖K‖_op)² + 1)`.
pub fn concatenated_smoothness_bound(sigma_dir: f64, gain_op_norm: f64) -> Result<f64> {
    if !(sigma_dir > 0.0) {
        return Err(invalid("sigma_dir", "must be > 0"));
    }
    if !(gain_op_norm >= 0.0) {
        return Err(invalid("gain_op_norm", "must be >= 0"));
    }
    let s = 1.0 + gain_op_norm;
    Ok(sigma_dir / (s * s + 1.0).sqrt())
}
