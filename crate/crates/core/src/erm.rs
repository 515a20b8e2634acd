//! Joint fitting of `K` affine maps and an affine classifier to a batch:
//! an alternating-minimization heuristic and an exact enumerator for tiny
//! one-dimensional instances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::learner::hinge::fit_weighted_hinge_classifier;
use crate::rng::SeededRng;
use crate::types::{dot, AffineClassifier, AffineMap, Dataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErmSettings {
    pub restarts: usize,
    pub max_iter: usize,
    /// Frobenius bound `R` on every fitted map.
    pub map_bound: f64,
    /// Offset bound `C` of the returned classifier (at least 1).
    pub offset_bound: f64,
    pub hinge_steps: usize,
    pub hinge_margin: f64,
}

impl Default for ErmSettings {
    fn default() -> Self {
        Self {
            restarts: 16,
            max_iter: 50,
            map_bound: 10.0,
            offset_bound: 1.0,
            hinge_steps: 200,
            hinge_margin: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmFit {
    pub maps: Vec<AffineMap>,
    pub classifier: AffineClassifier,
    /// `Σ_t ‖Θ̂_{ĝ(x_t)} x̄_t − y_t‖²`.
    pub objective: f64,
    pub restarts_used: usize,
    /// Index of the restart that produced this fit.
    pub best_restart: usize,
    pub iterations: usize,
    /// Accepted objective values of the winning restart, in order.
    pub objective_trace: Vec<f64>,
    /// `ĝ(x̄_t)` for every input row.
    pub labels: Vec<usize>,
    /// Objective minus a known lower bound; NaN when none is known.
    pub eps_orac_estimate: f64,
}

impl ErmFit {
    pub fn with_lower_bound(mut self, lower_bound: f64) -> Self {
        self.eps_orac_estimate = self.objective - lower_bound;
        self
    }
}

/// Per-label sufficient statistics `Σ x̄x̄ᵀ`, `Σ x̄yᵀ`.
struct Moments {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    count: usize,
}

impl Moments {
    fn new(p: usize, m: usize) -> Self {
        Self {
            gram: DMatrix::zeros(p, p),
            cross: DMatrix::zeros(p, m),
            count: 0,
        }
    }

    fn add(&mut self, x: &[f64], y: &[f64]) {
        let p = x.len();
        for a in 0..p {
            for b in 0..p {
                self.gram[(a, b)] += x[a] * x[b];
            }
            for (c, yc) in y.iter().enumerate() {
                self.cross[(a, c)] += x[a] * yc;
            }
        }
        self.count += 1;
    }

    fn solve(&self, bound: f64) -> AffineMap {
        let eig = SymmetricEigen::new(self.gram.clone());
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        let singular = lmin <= 1e-12 * lmax;
        let jitter = if singular { 1e-10 * lmax.max(1.0) } else { 0.0 };
        // null directions carry no signal in exact arithmetic; dropping them
        // is the zero-jitter limit and avoids amplifying roundoff
        let v = &eig.eigenvectors;
        let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| {
            if singular && l <= 1e-12 * lmax {
                0.0
            } else {
                1.0 / (l + jitter)
            }
        }));
        let theta_t = v * inv * v.transpose() * &self.cross;
        AffineMap::projected(theta_t.transpose(), bound)
    }
}

/// Least squares of `y` on `x̄` over the selected rows (all rows when
/// `rows` is `None`), then radial projection onto the Frobenius ball.
/// Singular Gram matrices get a `1e-10` Tikhonov jitter on their range and
/// zero weight on their null space, which gives the minimum-norm solution.
pub fn least_squares_mode(data: &Dataset, rows: Option<&[usize]>, bound: f64) -> Result<AffineMap> {
    let mut mom = Moments::new(data.lifted_dim(), data.response_dim());
    match rows {
        Some(rows) => rows.iter().for_each(|&t| mom.add(data.x(t), data.y(t))),
        None => (0..data.len()).for_each(|t| mom.add(data.x(t), data.y(t))),
    }
    if mom.count == 0 {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    Ok(mom.solve(bound))
}

/// `Σ_t ‖Θ_{label_t} x̄_t − y_t‖²`.
pub fn objective_for_labels(maps: &[AffineMap], data: &Dataset, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(t, &l)| maps[l].squared_residual(data.x(t), data.y(t)))
        .sum()
}

/// `Σ_t ‖Θ_{g(x_t)} x̄_t − y_t‖²`.
pub fn objective(maps: &[AffineMap], classifier: &AffineClassifier, data: &Dataset) -> f64 {
    let labels = classify_all(classifier, data);
    objective_for_labels(maps, data, &labels)
}

pub fn classify_all(classifier: &AffineClassifier, data: &Dataset) -> Vec<usize> {
    (0..data.len()).map(|t| classifier.classify_lifted(data.x(t))).collect()
}

fn fit_maps(data: &Dataset, labels: &[usize], k: usize, bound: f64, fallback: Option<&[AffineMap]>) -> Vec<AffineMap> {
    let mut moms: Vec<Moments> = (0..k).map(|_| Moments::new(data.lifted_dim(), data.response_dim())).collect();
    for (t, &l) in labels.iter().enumerate() {
        moms[l].add(data.x(t), data.y(t));
    }
    let mut maps: Vec<Option<AffineMap>> = moms.iter().map(|m| (m.count > 0).then(|| m.solve(bound))).collect();
    for i in 0..k {
        if maps[i].is_some() {
            continue;
        }
        if let Some(prev) = fallback {
            maps[i] = Some(prev[i].clone());
            continue;
        }
        // reseed an empty cluster through the worst-fit point
        let worst = (0..data.len())
            .max_by(|&a, &b| {
                let ra = maps[labels[a]].as_ref().map_or(0.0, |m| m.squared_residual(data.x(a), data.y(a)));
                let rb = maps[labels[b]].as_ref().map_or(0.0, |m| m.squared_residual(data.x(b), data.y(b)));
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .unwrap_or(0);
        let mut mom = Moments::new(data.lifted_dim(), data.response_dim());
        mom.add(data.x(worst), data.y(worst));
        maps[i] = Some(mom.solve(bound));
    }
    maps.into_iter().map(|m| m.expect("filled")).collect()
}

/// Best map per row and the residual gap to the runner-up, which is what
/// misclassifying that row costs.
fn assign_by_residual(maps: &[AffineMap], data: &Dataset) -> (Vec<usize>, Vec<f64>) {
    (0..data.len())
        .map(|t| {
            let mut best = 0;
            let (mut best_r, mut second_r) = (f64::INFINITY, f64::INFINITY);
            for (i, m) in maps.iter().enumerate() {
                let r = m.squared_residual(data.x(t), data.y(t));
                if r < best_r {
                    second_r = best_r;
                    best_r = r;
                    best = i;
                } else if r < second_r {
                    second_r = r;
                }
            }
            let gap = if second_r.is_finite() { second_r - best_r } else { 0.0 };
            (best, gap)
        })
        .unzip()
}

/// Coordinate descent on the offsets of `classifier` against the exact
/// objective of `maps`: each pass sweeps one offset over the sorted
/// breakpoints where rows change mode and keeps the cheapest interval
/// midpoint inside `[−C, C]`.
fn refine_offsets(classifier: &AffineClassifier, maps: &[AffineMap], data: &Dataset, passes: usize) -> Result<AffineClassifier> {
    let k = classifier.k();
    let n = data.len();
    if k < 2 || n == 0 {
        return Ok(classifier.clone());
    }
    let bound = classifier.offset_bound();
    let mut offsets = classifier.offsets().to_vec();
    let base: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let x = &data.x(t)[..data.lifted_dim() - 1];
            classifier.directions().iter().map(|w| dot(w.as_slice(), x)).collect()
        })
        .collect();
    let residuals: Vec<Vec<f64>> = (0..n)
        .map(|t| maps.iter().map(|m| m.squared_residual(data.x(t), data.y(t))).collect())
        .collect();
    for _ in 0..passes {
        let mut moved = false;
        for i in 0..k {
            // (breakpoint, cost if assigned to i, cost otherwise)
            let mut events: Vec<(f64, f64, f64)> = (0..n)
                .map(|t| {
                    let (mut other, mut top) = (usize::MAX, f64::NEG_INFINITY);
                    for j in (0..k).filter(|&j| j != i) {
                        let s = base[t][j] + offsets[j];
                        if s > top {
                            top = s;
                            other = j;
                        }
                    }
                    (top - base[t][i], residuals[t][i], residuals[t][other])
                })
                .collect();
            events.sort_by(|a, b| a.0.total_cmp(&b.0));
            // offset b assigns row t to i iff b > breakpoint_t
            let mut cost: f64 = events.iter().map(|e| e.2).sum();
            let current = offsets[i];
            let mut best = (f64::INFINITY, current);
            let consider = |b: f64, c: f64, best: &mut (f64, f64)| {
                let b = b.clamp(-bound, bound);
                if c < best.0 - 1e-12 * (1.0 + c.abs()) || (c <= best.0 && (b - current).abs() < (best.1 - current).abs()) {
                    *best = (c, b);
                }
            };
            let lowest = events.first().map_or(-bound, |e| e.0);
            if lowest > -bound {
                consider(0.5 * (lowest - bound), cost, &mut best);
            }
            for (idx, e) in events.iter().enumerate() {
                cost += e.1 - e.2;
                let next = events.get(idx + 1).map_or(bound, |f| f.0);
                if next > e.0 && e.0 < bound {
                    let hi = next.min(bound);
                    let mid = if next > bound { 0.5 * (e.0 + bound) } else { 0.5 * (e.0 + hi) };
                    consider(mid, cost, &mut best);
                }
            }
            if best.0.is_finite() && best.1 != current {
                let before = objective_for_offsets(&base, &residuals, &offsets);
                let old = offsets[i];
                offsets[i] = best.1;
                if objective_for_offsets(&base, &residuals, &offsets) < before {
                    moved = true;
                } else {
                    offsets[i] = old;
                }
            }
        }
        if !moved {
            break;
        }
    }
    AffineClassifier::new(classifier.directions().to_vec(), offsets, bound)
}

fn objective_for_offsets(base: &[Vec<f64>], residuals: &[Vec<f64>], offsets: &[f64]) -> f64 {
    base.iter()
        .zip(residuals)
        .map(|(s, r)| r[crate::types::argmax_lowest(s.iter().zip(offsets).map(|(a, b)| a + b))])
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Warm,
    RandomPartition,
    KMeans,
    RandomLabels,
}

fn init_labels(init: Init, data: &Dataset, k: usize, warm: Option<&[usize]>, rng: &mut SeededRng) -> Vec<usize> {
    let n = data.len();
    match init {
        Init::Warm => warm.expect("warm labels").to_vec(),
        Init::RandomLabels => {
            let mut labels: Vec<usize> = (0..n).map(|t| t % k).collect();
            labels.shuffle(rng);
            labels
        }
        Init::RandomPartition => {
            let p = data.lifted_dim();
            let mut weights = Vec::with_capacity(k);
            for _ in 0..k {
                let mut w: Vec<f64> = (0..p - 1).map(|_| StandardNormal.sample(rng)).collect();
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                w.iter_mut().for_each(|v| *v /= norm);
                let anchor = data.x(rng.random_range(0..n));
                let b = -dot(&w, &anchor[..p - 1]);
                w.push(b);
                weights.push(w);
            }
            (0..n)
                .map(|t| crate::types::argmax_lowest(weights.iter().map(|w| dot(w, data.x(t)))))
                .collect()
        }
        Init::KMeans => kmeans_joint(data, k, 10, rng),
    }
}

/// Lloyd iterations on `[x̄; y]` with k-means++ seeding.
fn kmeans_joint(data: &Dataset, k: usize, iters: usize, rng: &mut SeededRng) -> Vec<usize> {
    let n = data.len();
    let feat = |t: usize| data.x(t).iter().chain(data.y(t)).copied().collect::<Vec<f64>>();
    let feats: Vec<Vec<f64>> = (0..n).map(feat).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![feats[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = feats
            .iter()
            .map(|f| centers.iter().map(|c| dist(f, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (t, v) in d2.iter().enumerate() {
                if u < *v {
                    pick = t;
                    break;
                }
                u -= v;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(feats[next].clone());
    }
    let mut labels = vec![0; n];
    for _ in 0..iters {
        for (t, f) in feats.iter().enumerate() {
            labels[t] = crate::types::argmax_lowest(centers.iter().map(|c| -dist(f, c)));
        }
        let dim = feats[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (t, f) in feats.iter().enumerate() {
            counts[labels[t]] += 1;
            sums[labels[t]].iter_mut().zip(f).for_each(|(s, v)| *s += v);
        }
        for i in 0..k {
            if counts[i] > 0 {
                centers[i] = sums[i].iter().map(|s| s / counts[i] as f64).collect();
            }
        }
    }
    labels
}

struct RestartResult {
    maps: Vec<AffineMap>,
    classifier: AffineClassifier,
    labels: Vec<usize>,
    objective: f64,
    trace: Vec<f64>,
    iterations: usize,
}

fn run_restart(data: &Dataset, k: usize, settings: &ErmSettings, init: Init, warm: Option<&[usize]>, mut rng: SeededRng) -> Result<RestartResult> {
    let mut labels = init_labels(init, data, k, warm, &mut rng);
    let mut maps = fit_maps(data, &labels, k, settings.map_bound, None);
    let mut best: Option<RestartResult> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..settings.max_iter.max(1) {
        iterations += 1;
        let (assigned, mut costs) = assign_by_residual(&maps, data);
        let fitted = fit_maps(data, &assigned, k, settings.map_bound, Some(&maps));
        if costs.iter().all(|&c| c == 0.0) {
            costs.iter_mut().for_each(|c| *c = 1.0);
        }
        let weights = fit_weighted_hinge_classifier(data, &assigned, &costs, k, settings.hinge_margin, settings.hinge_steps)?;
        let classifier = refine_offsets(&weights.to_classifier(settings.offset_bound)?, &fitted, data, 3)?;
        let g_labels = classify_all(&classifier, data);
        let refit = fit_maps(data, &g_labels, k, settings.map_bound, Some(&fitted));
        // keep, per label, whichever map fits the ĝ-cluster better
        let mut new_maps = Vec::with_capacity(k);
        for i in 0..k {
            let rows: Vec<usize> = (0..data.len()).filter(|&t| g_labels[t] == i).collect();
            let cost = |m: &AffineMap| rows.iter().map(|&t| m.squared_residual(data.x(t), data.y(t))).sum::<f64>();
            new_maps.push(if cost(&refit[i]) <= cost(&fitted[i]) { refit[i].clone() } else { fitted[i].clone() });
        }
        let obj = objective_for_labels(&new_maps, data, &g_labels);
        let improved = best.as_ref().is_none_or(|b| obj < b.objective);
        if !improved {
            break;
        }
        let stable = g_labels == labels;
        trace.push(obj);
        labels = g_labels.clone();
        maps = new_maps.clone();
        best = Some(RestartResult {
            maps: new_maps,
            classifier,
            labels: g_labels,
            objective: obj,
            trace: Vec::new(),
            iterations,
        });
        if stable || obj == 0.0 {
            break;
        }
    }
    let mut out = best.expect("at least one accepted iteration");
    out.trace = trace;
    out.iterations = iterations;
    Ok(out)
}

/// Best-of-restarts alternating minimization. Restart `r` uses, in turn, a
/// random affine partition, k-means on `[x̄; y]` and random labels; with
/// `warm_start` the first restart instead begins from the given labels.
/// Restarts run in parallel; the winner is the lowest objective, ties to the
/// lowest restart index.
pub fn fit_heuristic(data: &Dataset, k: usize, settings: &ErmSettings, warm_start: Option<&[usize]>, rng: &SeededRng) -> Result<ErmFit> {
    if k == 0 {
        return Err(invalid("k", "must be >= 1"));
    }
    if data.len() < k {
        return Err(Error::InsufficientData {
            needed: k,
            have: data.len(),
        });
    }
    if let Some(w) = warm_start {
        if w.len() != data.len() {
            return Err(invalid("warm_start", "length must equal the number of rows"));
        }
        if let Some(&bad) = w.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, k });
        }
    }
    let restarts = settings.restarts.max(1);
    let plan: Vec<Init> = (0..restarts)
        .map(|r| match (r, warm_start) {
            (0, Some(_)) => Init::Warm,
            _ => match r % 3 {
                0 => Init::RandomPartition,
                1 => Init::KMeans,
                _ => Init::RandomLabels,
            },
        })
        .collect();
    let results: Vec<Result<RestartResult>> = plan
        .par_iter()
        .enumerate()
        .map(|(r, &init)| run_restart(data, k, settings, init, warm_start, rng.fork(r as u64)))
        .collect();
    let mut best: Option<(usize, RestartResult)> = None;
    for (r, res) in results.into_iter().enumerate() {
        let res = res?;
        if best.as_ref().is_none_or(|(_, b)| res.objective < b.objective) {
            best = Some((r, res));
        }
    }
    let (r, res) = best.expect("restarts >= 1");
    Ok(ErmFit {
        maps: res.maps,
        classifier: res.classifier,
        objective: res.objective,
        restarts_used: restarts,
        best_restart: r,
        iterations: res.iterations,
        objective_trace: res.trace,
        labels: res.labels,
        eps_orac_estimate: f64::NAN,
    })
}

/// Exact ERM for `d = 1`, `n ≤ 24`, `K ≤ 3` by dynamic programming over
/// splits of the sorted distinct covariate values into at most `K`
/// intervals. Points with equal `x` always share an interval.
pub fn brute_force_erm(data: &Dataset, k: usize, bound: f64) -> Result<ErmFit> {
    if data.lifted_dim() != 2 {
        return Err(Error::Unsupported(format!("brute force needs d = 1, got d = {}", data.lifted_dim() - 1)));
    }
    if data.len() > 24 || k == 0 || k > 3 {
        return Err(Error::Unsupported(format!("brute force needs n <= 24 and 1 <= K <= 3 (n = {}, K = {k})", data.len())));
    }
    if data.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.x(a)[0].total_cmp(&data.x(b)[0]).then(a.cmp(&b)));
    // groups of equal x
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &t in &order {
        match groups.last_mut() {
            Some(g) if data.x(g[0])[0] == data.x(t)[0] => g.push(t),
            _ => groups.push(vec![t]),
        }
    }
    let ng = groups.len();
    // cost[a][b]: fit on groups a..b (exclusive end)
    let mut seg_map = vec![vec![None; ng + 1]; ng + 1];
    let mut seg_cost = vec![vec![f64::INFINITY; ng + 1]; ng + 1];
    for a in 0..ng {
        for b in a + 1..=ng {
            let rows: Vec<usize> = groups[a..b].iter().flatten().copied().collect();
            let map = least_squares_mode(data, Some(&rows), bound)?;
            seg_cost[a][b] = rows.iter().map(|&t| map.squared_residual(data.x(t), data.y(t))).sum();
            seg_map[a][b] = Some(map);
        }
    }
    // best[s][b]: best cost covering groups 0..b with s intervals
    let mut best = vec![vec![f64::INFINITY; ng + 1]; k + 1];
    let mut back = vec![vec![0usize; ng + 1]; k + 1];
    best[0][0] = 0.0;
    for s in 1..=k {
        for b in 1..=ng {
            for a in 0..b {
                let c = best[s - 1][a] + seg_cost[a][b];
                if c < best[s][b] {
                    best[s][b] = c;
                    back[s][b] = a;
                }
            }
        }
    }
    let mut s_best = 1;
    for s in 1..=k {
        if best[s][ng] < best[s_best][ng] {
            s_best = s;
        }
    }
    let mut bounds = Vec::new();
    let mut b = ng;
    for s in (1..=s_best).rev() {
        let a = back[s][b];
        bounds.push((a, b));
        b = a;
    }
    bounds.reverse();

    let m = data.response_dim();
    let mut maps: Vec<AffineMap> = bounds.iter().map(|&(a, b)| seg_map[a][b].clone().expect("computed")).collect();
    while maps.len() < k {
        maps.push(AffineMap::zeros(m, 1, bound));
    }
    let cuts: Vec<f64> = bounds[1..]
        .iter()
        .map(|&(a, _)| 0.5 * (data.x(groups[a - 1][0])[0] + data.x(groups[a][0])[0]))
        .collect();
    let classifier = interval_classifier(&cuts, k)?;
    let labels = classify_all(&classifier, data);
    let obj = objective_for_labels(&maps, data, &labels);
    Ok(ErmFit {
        maps,
        classifier,
        objective: obj,
        restarts_used: 0,
        best_restart: 0,
        iterations: 0,
        objective_trace: vec![obj],
        labels,
        eps_orac_estimate: 0.0,
    })
}

/// Classifier on the line whose regions are the intervals between sorted
/// `cuts`, numbered from the left; modes beyond `cuts.len() + 1` copy mode 0
/// and therefore never win.
fn interval_classifier(cuts: &[f64], k: usize) -> Result<AffineClassifier> {
    let s = cuts.len() + 1;
    let scale = (s - 1).max(1) as f64;
    let mut dirs = Vec::with_capacity(k);
    let mut offs = Vec::with_capacity(k);
    let mut b = 0.0;
    for i in 0..s {
        if i > 0 {
            b -= cuts[i - 1];
        }
        dirs.push(DVector::from_element(1, i as f64 / scale));
        offs.push(b / scale);
    }
    while dirs.len() < k {
        dirs.push(dirs[0].clone());
        offs.push(offs[0]);
    }
    let c = offs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    AffineClassifier::new(dirs, offs, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(points: &[(f64, f64)]) -> Dataset {
        let mut d = Dataset::new(2, 1);
        for &(x, y) in points {
            d.push(&[x, 1.0], &[y]).unwrap();
        }
        d
    }

    fn piecewise(n: usize, noise: f64, rng: &mut SeededRng) -> Dataset {
        let mut d = Dataset::new(2, 1);
        for _ in 0..n {
            let x: f64 = rng.random_range(-1.0..1.0);
            let e: f64 = StandardNormal.sample(rng);
            let y = if x > 0.1 { 2.0 * x - 1.0 } else { -x + 0.5 } + noise * e;
            d.push(&[x, 1.0], &[y]).unwrap();
        }
        d
    }

    #[test]
    fn least_squares_recovers_exact_map() {
        let mut rng = SeededRng::new(1, 0);
        let theta = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.7, -1.0]);
        let mut d = Dataset::new(3, 2);
        for _ in 0..50 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0];
            let y = &theta * DVector::from_column_slice(&x);
            d.push(&x, y.as_slice()).unwrap();
        }
        let fit = least_squares_mode(&d, None, 100.0).unwrap();
        assert!((fit.matrix() - theta).amax() < 1e-8);
    }

    #[test]
    fn single_point_gives_minimum_norm_interpolant() {
        let d = dataset(&[(2.0, 3.0)]);
        let fit = least_squares_mode(&d, None, 100.0).unwrap();
        // y x̄ᵀ / ‖x̄‖² = 3 [2, 1] / 5
        assert!((fit.matrix()[(0, 0)] - 1.2).abs() < 1e-8);
        assert!((fit.matrix()[(0, 1)] - 0.6).abs() < 1e-8);
    }

    #[test]
    fn singular_gram_matches_pseudoinverse() {
        // duplicated covariate column: x̄ = [x, x, 1]
        let mut rng = SeededRng::new(2, 0);
        let mut d = Dataset::new(3, 1);
        for _ in 0..30 {
            let x: f64 = rng.random_range(-1.0..1.0);
            d.push(&[x, x, 1.0], &[3.0 * x + rng.random_range(-0.1..0.1)]).unwrap();
        }
        let fit = least_squares_mode(&d, None, 100.0).unwrap();
        let xs = DMatrix::from_fn(d.len(), 3, |r, c| d.x(r)[c]);
        let ys = DMatrix::from_fn(d.len(), 1, |r, _| d.y(r)[0]);
        let pinv = xs.clone().pseudo_inverse(1e-12).unwrap();
        let opt = (&xs * (&pinv * &ys) - &ys).norm_squared();
        let ours = (0..d.len()).map(|t| fit.squared_residual(d.x(t), d.y(t))).sum::<f64>();
        assert!(ours <= opt + 1e-6);
    }

    #[test]
    fn projection_enforces_bound() {
        let d = dataset(&[(0.0, 100.0), (1.0, 100.0)]);
        let fit = least_squares_mode(&d, None, 2.0).unwrap();
        assert!(fit.matrix().norm() <= 2.0 + 1e-12);
    }

    #[test]
    fn single_mode_heuristic_is_least_squares() {
        let mut rng = SeededRng::new(3, 0);
        let d = piecewise(80, 0.1, &mut rng);
        let fit = fit_heuristic(&d, 1, &ErmSettings::default(), None, &SeededRng::new(3, 1)).unwrap();
        let ls = least_squares_mode(&d, None, 10.0).unwrap();
        assert!((fit.maps[0].matrix() - ls.matrix()).amax() < 1e-12);
    }

    #[test]
    fn realizable_instance_reaches_zero() {
        let mut rng = SeededRng::new(4, 0);
        let d = piecewise(200, 0.0, &mut rng);
        let fit = fit_heuristic(&d, 2, &ErmSettings::default(), None, &SeededRng::new(4, 1)).unwrap();
        assert!(fit.objective <= 1e-12 * d.len() as f64, "objective {}", fit.objective);
        assert!(fit.maps.iter().all(|m| m.matrix().norm() <= 10.0 + 1e-9));
    }

    #[test]
    fn trace_is_monotone_and_labels_consistent() {
        let mut rng = SeededRng::new(5, 0);
        let d = piecewise(150, 0.3, &mut rng);
        let fit = fit_heuristic(&d, 3, &ErmSettings::default(), None, &SeededRng::new(5, 1)).unwrap();
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*fit.objective_trace.last().unwrap(), fit.objective);
        assert_eq!(classify_all(&fit.classifier, &d), fit.labels);
        assert!((objective(&fit.maps, &fit.classifier, &d) - fit.objective).abs() < 1e-9);
    }

    #[test]
    fn heuristic_is_deterministic() {
        let mut rng = SeededRng::new(6, 0);
        let d = piecewise(100, 0.1, &mut rng);
        let s = ErmSettings { restarts: 5, ..ErmSettings::default() };
        let a = fit_heuristic(&d, 2, &s, None, &SeededRng::new(6, 1)).unwrap();
        let b = fit_heuristic(&d, 2, &s, None, &SeededRng::new(6, 1)).unwrap();
        assert_eq!(a.maps, b.maps);
        assert_eq!(a.classifier, b.classifier);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(a.best_restart, b.best_restart);
    }

    #[test]
    fn errors() {
        let d = dataset(&[(0.0, 1.0)]);
        assert!(matches!(
            fit_heuristic(&d, 2, &ErmSettings::default(), None, &SeededRng::new(0, 0)),
            Err(Error::InsufficientData { .. })
        ));
        let mut d3 = Dataset::new(3, 1);
        d3.push(&[0.0, 0.0, 1.0], &[0.0]).unwrap();
        assert!(matches!(brute_force_erm(&d3, 2, 10.0), Err(Error::Unsupported(_))));
        assert!(matches!(brute_force_erm(&d, 4, 10.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn brute_force_two_points_interpolate() {
        let d = dataset(&[(0.0, 1.0), (1.0, -5.0)]);
        let fit = brute_force_erm(&d, 2, 100.0).unwrap();
        assert!(fit.objective < 1e-12);
    }

    #[test]
    fn brute_force_equal_x_is_variance_fit() {
        let d = dataset(&[(0.5, 1.0), (0.5, 2.0), (0.5, 6.0)]);
        let fit = brute_force_erm(&d, 3, 100.0).unwrap();
        let mean = 3.0;
        let var: f64 = [1.0, 2.0, 6.0].iter().map(|y: &f64| (y - mean).powi(2)).sum();
        assert!((fit.objective - var).abs() < 1e-8);
    }

    #[test]
    fn brute_force_matches_enumeration_over_cuts() {
        let mut rng = SeededRng::new(7, 0);
        for _ in 0..20 {
            let d = piecewise(10, 0.2, &mut rng);
            let fit = brute_force_erm(&d, 2, 10.0).unwrap();
            // independent enumeration: every single cut between sorted points
            let mut xs: Vec<(f64, usize)> = (0..d.len()).map(|t| (d.x(t)[0], t)).collect();
            xs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut best = f64::INFINITY;
            for cut in 0..=xs.len() {
                let left: Vec<usize> = xs[..cut].iter().map(|p| p.1).collect();
                let right: Vec<usize> = xs[cut..].iter().map(|p| p.1).collect();
                let cost = |rows: &[usize]| {
                    if rows.is_empty() {
                        return 0.0;
                    }
                    let m = least_squares_mode(&d, Some(rows), 10.0).unwrap();
                    rows.iter().map(|&t| m.squared_residual(d.x(t), d.y(t))).sum::<f64>()
                };
                best = best.min(cost(&left) + cost(&right));
            }
            assert!((fit.objective - best).abs() < 1e-9);
            assert!((objective(&fit.maps, &fit.classifier, &d) - fit.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn brute_force_lower_bounds_heuristic() {
        let mut rng = SeededRng::new(8, 0);
        for i in 0..10 {
            let d = piecewise(10, 0.2, &mut rng);
            let exact = brute_force_erm(&d, 2, 10.0).unwrap();
            let heur = fit_heuristic(&d, 2, &ErmSettings { restarts: 8, ..ErmSettings::default() }, None, &SeededRng::new(i, 1)).unwrap();
            assert!(exact.objective <= heur.objective + 1e-9);
        }
    }

    #[test]
    fn interval_classifier_regions() {
        let g = interval_classifier(&[-0.5, 0.25], 3).unwrap();
        assert_eq!(g.classify_slice(&[-1.0]), 0);
        assert_eq!(g.classify_slice(&[0.0]), 1);
        assert_eq!(g.classify_slice(&[0.9]), 2);
        let g = interval_classifier(&[0.0], 3).unwrap();
        assert_eq!(g.classify_slice(&[-5.0]), 0);
        assert_eq!(g.classify_slice(&[5.0]), 1);
    }
}
