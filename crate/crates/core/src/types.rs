//! Shared domain types: dimensions, affine maps, affine argmax classifiers,
//! observations and the flat dataset the learners consume.
//!
//! Mode indices are zero-based throughout the crate. Covariates are lifted as
//! `x̄ = [x | 1]`, so an [`AffineMap`] of shape `m × (d+1)` carries its offset
//! in the last column.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};

/// Absolute slack used by every norm-bound invariant check.
pub const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// Covariate dimension.
    pub d: usize,
    /// Response dimension.
    pub m: usize,
    /// Number of modes.
    pub k: usize,
}

impl Dimensions {
    pub fn new(d: usize, m: usize, k: usize) -> Result<Self> {
        if d == 0 || m == 0 || k == 0 {
            return Err(invalid("dimensions", format!("d={d}, m={m}, k={k} must all be >= 1")));
        }
        Ok(Self { d, m, k })
    }

    pub fn lifted(&self) -> usize {
        self.d + 1
    }
}

pub fn lift(x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len() + 1);
    out.rows_mut(0, x.len()).copy_from(x);
    out[x.len()] = 1.0;
    out
}

pub fn lift_slice(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + 1);
    out.extend_from_slice(x);
    out.push(1.0);
    out
}

/// Index of the largest score; ties go to the smallest index.
pub fn argmax_lowest<I: IntoIterator<Item = f64>>(scores: I) -> usize {
    let mut it = scores.into_iter();
    let Some(mut best_val) = it.next() else {
        return 0;
    };
    let mut best = 0;
    for (i, s) in it.enumerate() {
        if s > best_val {
            best = i + 1;
            best_val = s;
        }
    }
    best
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One mode's regression parameter: an `m × (d+1)` matrix inside the
/// Frobenius ball of radius `bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    matrix: DMatrix<f64>,
    bound: f64,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, bound: f64) -> Result<Self> {
        if !(bound >= 0.0) {
            return Err(invalid("frobenius_bound", "must be nonnegative"));
        }
        if matrix.ncols() < 2 {
            return Err(invalid("matrix", "needs at least one covariate column plus the offset"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix", "entries must be finite"));
        }
        let norm = matrix.norm();
        if norm > bound + NORM_TOL {
            return Err(invalid(
                "matrix",
                format!("Frobenius norm {norm} exceeds bound {bound}"),
            ));
        }
        Ok(Self { matrix, bound })
    }

    /// Radially shrinks `matrix` into the ball of radius `bound` if needed.
    pub fn projected(mut matrix: DMatrix<f64>, bound: f64) -> Self {
        let norm = matrix.norm();
        if norm > bound {
            matrix *= bound / norm;
        }
        Self { matrix, bound }
    }

    pub fn zeros(m: usize, d: usize, bound: f64) -> Self {
        Self {
            matrix: DMatrix::zeros(m, d + 1),
            bound,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn response_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn covariate_dim(&self) -> usize {
        self.matrix.ncols() - 1
    }

    pub fn apply(&self, x_lift: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.matrix.ncols(), x_lift.len(), "AffineMap::apply")?;
        Ok(&self.matrix * x_lift)
    }

    /// `Θ x̄` into `out`, for slices (hot path of the learners).
    pub fn apply_slice(&self, x_lift: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x_lift.len(), self.matrix.ncols());
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, xv) in x_lift.iter().enumerate() {
                acc += self.matrix[(r, c)] * xv;
            }
            *o = acc;
        }
    }

    /// `‖Θ x̄ − y‖²`.
    pub fn squared_residual(&self, x_lift: &[f64], y: &[f64]) -> f64 {
        let mut total = 0.0;
        for (r, yv) in y.iter().enumerate() {
            let mut acc = -yv;
            for (c, xv) in x_lift.iter().enumerate() {
                acc += self.matrix[(r, c)] * xv;
            }
            total += acc * acc;
        }
        total
    }

    pub fn frobenius_distance(&self, other: &AffineMap) -> f64 {
        (&self.matrix - &other.matrix).norm()
    }
}

/// `x ↦ argmax_i ⟨w_i, x⟩ + b_i` with ‖w_i‖ ≤ 1 and |b_i| ≤ C; ties resolve to
/// the lowest index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineClassifier {
    directions: Vec<DVector<f64>>,
    offsets: Vec<f64>,
    offset_bound: f64,
}

impl AffineClassifier {
    pub fn new(directions: Vec<DVector<f64>>, offsets: Vec<f64>, offset_bound: f64) -> Result<Self> {
        if directions.is_empty() {
            return Err(invalid("directions", "need at least one mode"));
        }
        check_dim(directions.len(), offsets.len(), "AffineClassifier offsets")?;
        let d = directions[0].len();
        for (i, w) in directions.iter().enumerate() {
            check_dim(d, w.len(), "AffineClassifier direction")?;
            if w.norm() > 1.0 + 1e-12 {
                return Err(invalid(
                    "directions",
                    format!("direction {i} has norm {} > 1", w.norm()),
                ));
            }
        }
        for (i, b) in offsets.iter().enumerate() {
            if !b.is_finite() || b.abs() > offset_bound + NORM_TOL {
                return Err(invalid(
                    "offsets",
                    format!("offset {i} = {b} outside [-{offset_bound}, {offset_bound}]"),
                ));
            }
        }
        Ok(Self {
            directions,
            offsets,
            offset_bound,
        })
    }

    /// Builds a classifier from weights acting on lifted covariates, i.e.
    /// `w_i = [direction | offset]`.
    pub fn from_lifted_weights(weights: &[Vec<f64>], offset_bound: f64) -> Result<Self> {
        let dirs = weights
            .iter()
            .map(|w| DVector::from_column_slice(&w[..w.len() - 1]))
            .collect();
        let offs = weights.iter().map(|w| w[w.len() - 1]).collect();
        Self::new(dirs, offs, offset_bound)
    }

    pub fn k(&self) -> usize {
        self.directions.len()
    }

    pub fn dim(&self) -> usize {
        self.directions[0].len()
    }

    pub fn directions(&self) -> &[DVector<f64>] {
        &self.directions
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn offset_bound(&self) -> f64 {
        self.offset_bound
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.directions
            .iter()
            .zip(&self.offsets)
            .map(|(w, b)| dot(w.as_slice(), x) + b)
            .collect()
    }

    pub fn classify(&self, x: &DVector<f64>) -> Result<usize> {
        check_dim(self.dim(), x.len(), "AffineClassifier::classify")?;
        Ok(self.classify_slice(x.as_slice()))
    }

    pub fn classify_slice(&self, x: &[f64]) -> usize {
        argmax_lowest(
            self.directions
                .iter()
                .zip(&self.offsets)
                .map(|(w, b)| dot(w.as_slice(), x) + b),
        )
    }

    /// Classifies a lifted covariate (the trailing 1 is ignored).
    pub fn classify_lifted(&self, x_lift: &[f64]) -> usize {
        self.classify_slice(&x_lift[..x_lift.len() - 1])
    }

    /// Same classifier with every offset shifted by `c` (argmax-invariant).
    pub fn shifted(&self, c: f64) -> Self {
        let offsets: Vec<f64> = self.offsets.iter().map(|b| b + c).collect();
        let bound = offsets.iter().fold(self.offset_bound, |m, b| m.max(b.abs()));
        Self {
            directions: self.directions.clone(),
            offsets,
            offset_bound: bound,
        }
    }
}

/// One emitted round of the regression stream. `hidden_mode`, `noise` and
/// `corruption` are generator-side ground truth and never reach a learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: DVector<f64>,
    pub x_lift: DVector<f64>,
    pub y: DVector<f64>,
    pub hidden_mode: usize,
    pub noise: DVector<f64>,
    pub corruption: DVector<f64>,
    /// True when the smoothed covariate was radially clipped to the bound.
    pub clipped: bool,
}

/// Lifted covariates and responses stored row-major in flat buffers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    lifted_dim: usize,
    response_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(lifted_dim: usize, response_dim: usize) -> Self {
        Self {
            lifted_dim,
            response_dim,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, x_lift: &[f64], y: &[f64]) -> Result<()> {
        check_dim(self.lifted_dim, x_lift.len(), "Dataset::push covariate")?;
        check_dim(self.response_dim, y.len(), "Dataset::push response")?;
        self.x.extend_from_slice(x_lift);
        self.y.extend_from_slice(y);
        Ok(())
    }

    pub fn from_pairs<'a, I>(lifted_dim: usize, response_dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        let mut ds = Self::new(lifted_dim, response_dim);
        for (x, y) in pairs {
            ds.push(x, y)?;
        }
        Ok(ds)
    }

    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        let first = obs.first().ok_or(crate::Error::InsufficientData { needed: 1, have: 0 })?;
        let mut ds = Self::new(first.x_lift.len(), first.y.len());
        for o in obs {
            ds.push(o.x_lift.as_slice(), o.y.as_slice())?;
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        if self.lifted_dim == 0 {
            0
        } else {
            self.x.len() / self.lifted_dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lifted_dim(&self) -> usize {
        self.lifted_dim
    }

    pub fn response_dim(&self) -> usize {
        self.response_dim
    }

    pub fn x(&self, t: usize) -> &[f64] {
        &self.x[t * self.lifted_dim..(t + 1) * self.lifted_dim]
    }

    pub fn y(&self, t: usize) -> &[f64] {
        &self.y[t * self.response_dim..(t + 1) * self.response_dim]
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            lifted_dim: self.lifted_dim,
            response_dim: self.response_dim,
            x: self.x[range.start * self.lifted_dim..range.end * self.lifted_dim].to_vec(),
            y: self.y[range.start * self.response_dim..range.end * self.response_dim].to_vec(),
        }
    }

    pub fn max_covariate_norm(&self) -> f64 {
        (0..self.len())
            .map(|t| dot(self.x(t), self.x(t)).sqrt())
            .fold(0.0, f64::max)
    }
}
