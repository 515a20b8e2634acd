//! Multi-class hinge loss on lifted covariates and projected online
//! gradient descent over `K` weight vectors in the unit ball.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::types::{argmax_lowest, dot, AffineClassifier, Dataset};

/// `K` weight vectors in `R^{d+1}`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OgdWeights {
    k: usize,
    dim: usize,
    data: Vec<f64>,
}

impl OgdWeights {
    pub fn zeros(k: usize, dim: usize) -> Self {
        Self {
            k,
            dim,
            data: vec![0.0; k * dim],
        }
    }

    pub fn from_components(components: &[Vec<f64>]) -> Result<Self> {
        let k = components.len();
        if k == 0 {
            return Err(invalid("components", "need at least one"));
        }
        let dim = components[0].len();
        let mut data = Vec::with_capacity(k * dim);
        for c in components {
            check_dim(dim, c.len(), "weight component")?;
            data.extend_from_slice(c);
        }
        Ok(Self { k, dim, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_component_norm(&self) -> f64 {
        (0..self.k)
            .map(|i| self.component(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Projection onto the product of unit balls.
    pub fn project(&mut self) {
        for i in 0..self.k {
            let c = self.component_mut(i);
            let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1.0 {
                c.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &OgdWeights) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scores(&self, x_lift: &[f64]) -> Vec<f64> {
        (0..self.k).map(|i| dot(self.component(i), x_lift)).collect()
    }

    /// `argmax_i ⟨w_i, x̄⟩`, lowest index on ties.
    pub fn predict(&self, x_lift: &[f64]) -> usize {
        argmax_lowest((0..self.k).map(|i| dot(self.component(i), x_lift)))
    }

    /// The same rule as an [`AffineClassifier`] on unlifted covariates.
    pub fn to_classifier(&self, offset_bound: f64) -> Result<AffineClassifier> {
        let comps: Vec<Vec<f64>> = (0..self.k).map(|i| self.component(i).to_vec()).collect();
        AffineClassifier::from_lifted_weights(&comps, offset_bound.max(1.0))
    }
}

fn check_inputs(w: &OgdWeights, x_lift: &[f64], label: usize, gamma: f64) -> Result<()> {
    check_dim(w.dim, x_lift.len(), "hinge covariate")?;
    if label >= w.k {
        return Err(Error::LabelOutOfRange { label, k: w.k });
    }
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "must be > 0"));
    }
    Ok(())
}

/// `(loss, j*)` with `j*` the maximizing competitor, smallest index on ties.
fn loss_and_competitor(w: &OgdWeights, x_lift: &[f64], label: usize, gamma: f64) -> (f64, Option<usize>) {
    if w.k < 2 {
        return (0.0, None);
    }
    let own = dot(w.component(label), x_lift);
    let mut best: Option<(usize, f64)> = None;
    for j in (0..w.k).filter(|&j| j != label) {
        let s = dot(w.component(j), x_lift);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    let (j, s) = best.expect("k >= 2");
    let raw = 1.0 - (own - s) / gamma;
    if raw > 0.0 {
        (raw, Some(j))
    } else {
        (0.0, None)
    }
}

/// `max(0, max_{j≠label} 1 − ⟨w_label − w_j, x̄⟩/γ)`.
pub fn hinge_loss(w: &OgdWeights, x_lift: &[f64], label: usize, gamma: f64) -> Result<f64> {
    check_inputs(w, x_lift, label, gamma)?;
    Ok(loss_and_competitor(w, x_lift, label, gamma).0)
}

/// Subgradient: `−x̄/γ` on the label component and `+x̄/γ` on `j*` when the
/// loss is positive, zero otherwise.
pub fn hinge_subgradient(w: &OgdWeights, x_lift: &[f64], label: usize, gamma: f64) -> Result<OgdWeights> {
    check_inputs(w, x_lift, label, gamma)?;
    let mut g = OgdWeights::zeros(w.k, w.dim);
    if let (_, Some(j)) = loss_and_competitor(w, x_lift, label, gamma) {
        accumulate_subgradient(&mut g, x_lift, label, j, 1.0 / gamma);
    }
    Ok(g)
}

fn accumulate_subgradient(g: &mut OgdWeights, x_lift: &[f64], label: usize, j: usize, scale: f64) {
    for (gi, xi) in g.component_mut(label).iter_mut().zip(x_lift) {
        *gi -= scale * xi;
    }
    for (gj, xj) in g.component_mut(j).iter_mut().zip(x_lift) {
        *gj += scale * xj;
    }
}

/// Whether `x̄` lies in the ambiguity set `{∃ i≠j : |⟨w_i − w_j, x̄⟩| ≤ γ}`.
pub fn in_ambiguity_set(w: &OgdWeights, x_lift: &[f64], gamma: f64) -> bool {
    let s = w.scores(x_lift);
    (0..s.len()).any(|i| (i + 1..s.len()).any(|j| (s[i] - s[j]).abs() <= gamma))
}

/// Right-hand side `1[D_γ] + (1 + 2‖x̄‖/γ)·1[argmax ≠ label]` of the soft-margin
/// domination; with `‖x̄‖ ≤ 1` this is the unit-norm form `1 + 2/γ`.
pub fn soft_margin_bound(w: &OgdWeights, x_lift: &[f64], label: usize, gamma: f64) -> f64 {
    let norm = x_lift.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ambiguous = f64::from(u8::from(in_ambiguity_set(w, x_lift, gamma)));
    let wrong = f64::from(u8::from(w.predict(x_lift) != label));
    ambiguous + (1.0 + 2.0 * norm / gamma) * wrong
}

/// Sequential projected steps `w ← Π(w − η ∇ℓ)` over a batch, in order.
pub fn ogd_epoch<'a, I>(weights: &OgdWeights, batch: I, labels: &[usize], gamma: f64, eta: f64) -> Result<OgdWeights>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    if !(eta >= 0.0) {
        return Err(invalid("eta", "must be >= 0"));
    }
    let mut w = weights.clone();
    let mut count = 0;
    for (x, &label) in batch.into_iter().zip(labels) {
        check_inputs(&w, x, label, gamma)?;
        count += 1;
        if eta == 0.0 {
            continue;
        }
        if let (_, Some(j)) = loss_and_competitor(&w, x, label, gamma) {
            let scale = eta / gamma;
            for (wi, xi) in w.component_mut(label).iter_mut().zip(x) {
                *wi += scale * xi;
            }
            for (wj, xj) in w.component_mut(j).iter_mut().zip(x) {
                *wj -= scale * xj;
            }
            w.project();
        }
    }
    check_dim(labels.len(), count, "ogd labels")?;
    Ok(w)
}

/// `4K/η + ηT/γ²`.
pub fn ogd_regret_bound(k: usize, eta: f64, horizon: usize, gamma: f64) -> f64 {
    4.0 * k as f64 / eta + eta * horizon as f64 / (gamma * gamma)
}

/// Average hinge loss and 0/1 mistakes of `w` on labelled data.
pub fn batch_loss(w: &OgdWeights, data: &Dataset, labels: &[usize], gamma: f64) -> (f64, usize) {
    let mut loss = 0.0;
    let mut mistakes = 0;
    for (t, &label) in labels.iter().enumerate() {
        let x = data.x(t);
        loss += loss_and_competitor(w, x, label, gamma).0;
        mistakes += usize::from(w.predict(x) != label);
    }
    (loss / labels.len().max(1) as f64, mistakes)
}

/// Full-batch projected subgradient descent on the average hinge loss,
/// initialized from projected class means. Returns the iterate with the
/// fewest 0/1 mistakes, then the smallest loss.
pub fn fit_hinge_classifier(data: &Dataset, labels: &[usize], k: usize, gamma: f64, steps: usize) -> Result<OgdWeights> {
    fit_weighted_hinge_classifier(data, labels, &vec![1.0; labels.len()], k, gamma, steps)
}

/// Weighted variant: row `t` contributes `weights[t]` to the loss, the class
/// means and the mistake count. Rows of weight zero are ignored.
pub fn fit_weighted_hinge_classifier(
    data: &Dataset,
    labels: &[usize],
    weights: &[f64],
    k: usize,
    gamma: f64,
    steps: usize,
) -> Result<OgdWeights> {
    check_dim(data.len(), labels.len(), "hinge fit labels")?;
    check_dim(data.len(), weights.len(), "hinge fit weights")?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, k });
    }
    if weights.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(invalid("weights", "must be finite and >= 0"));
    }
    let dim = data.lifted_dim();
    let mut w = OgdWeights::zeros(k, dim);
    let total: f64 = weights.iter().sum();
    if k < 2 || data.is_empty() || total <= 0.0 {
        return Ok(w);
    }
    let mut mass = vec![0.0; k];
    for (t, (&l, &c)) in labels.iter().zip(weights).enumerate() {
        mass[l] += c;
        for (wi, xi) in w.component_mut(l).iter_mut().zip(data.x(t)) {
            *wi += c * xi;
        }
    }
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            w.component_mut(i).iter_mut().for_each(|v| *v /= m);
        }
    }
    // class means share the lifted 1; centre them so the offsets separate
    let mean: Vec<f64> = (0..dim)
        .map(|c| (0..k).map(|i| w.component(i)[c]).sum::<f64>() / k as f64)
        .collect();
    for i in 0..k {
        for (v, m) in w.component_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    w.project();
    let radius = data.max_covariate_norm().max(1e-12);
    let score = |w: &OgdWeights| {
        let (mut loss, mut wrong) = (0.0, 0.0);
        for (t, (&label, &c)) in labels.iter().zip(weights).enumerate() {
            if c == 0.0 {
                continue;
            }
            let x = data.x(t);
            loss += c * loss_and_competitor(w, x, label, gamma).0;
            if w.predict(x) != label {
                wrong += c;
            }
        }
        (wrong, loss)
    };
    let mut best_score = score(&w);
    let mut best = w.clone();
    let mut grad = OgdWeights::zeros(k, dim);
    for step in 1..=steps {
        grad.data.iter_mut().for_each(|g| *g = 0.0);
        for (t, (&label, &c)) in labels.iter().zip(weights).enumerate() {
            if c == 0.0 {
                continue;
            }
            let x = data.x(t);
            if let (_, Some(j)) = loss_and_competitor(&w, x, label, gamma) {
                accumulate_subgradient(&mut grad, x, label, j, c / (gamma * total));
            }
        }
        if grad.data.iter().all(|&g| g == 0.0) {
            break;
        }
        let eta = gamma / (radius * (step as f64).sqrt());
        w.axpy(-eta, &grad);
        w.project();
        let s = score(&w);
        if s.0 < best_score.0 || (s.0 == best_score.0 && s.1 < best_score.1) {
            best_score = s;
            best = w.clone();
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_weights(k: usize, dim: usize, rng: &mut SeededRng) -> OgdWeights {
        let mut w = OgdWeights::zeros(k, dim);
        w.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        w.project();
        w
    }

    #[test]
    fn zero_weights_give_unit_loss() {
        let w = OgdWeights::zeros(3, 2);
        assert_eq!(hinge_loss(&w, &[0.3, 1.0], 1, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn satisfied_margin_gives_zero() {
        let w = OgdWeights::from_components(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(hinge_loss(&w, &[0.5, 1.0], 0, 1.0).unwrap(), 0.0);
        let g = hinge_subgradient(&w, &[0.5, 1.0], 0, 1.0).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direct_evaluation_example() {
        // ⟨w_1 − w_2, x̄⟩ = −0.5 with label = first mode, γ = 1
        let w = OgdWeights::from_components(&[vec![0.0, 0.0], vec![0.5, 0.0]]).unwrap();
        assert!((hinge_loss(&w, &[1.0, 0.0], 0, 1.0).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn single_mode_is_lossless() {
        let w = OgdWeights::zeros(1, 2);
        assert_eq!(hinge_loss(&w, &[1.0, 1.0], 0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let w = OgdWeights::zeros(2, 2);
        assert_eq!(hinge_loss(&w, &[1.0, 1.0], 2, 0.1), Err(Error::LabelOutOfRange { label: 2, k: 2 }));
        assert!(hinge_loss(&w, &[1.0], 0, 0.1).is_err());
        assert!(hinge_loss(&w, &[1.0, 1.0], 0, 0.0).is_err());
    }

    #[test]
    fn active_gradient_norm() {
        let w = OgdWeights::zeros(3, 3);
        let x = [0.6, -0.8, 1.0];
        let g = hinge_subgradient(&w, &x, 2, 0.25).unwrap();
        let xn = 2f64.sqrt();
        assert!((g.norm() - 2f64.sqrt() * xn / 0.25).abs() < 1e-12);
        // ties among competitors go to the smallest index
        assert!(g.component(0).iter().any(|&v| v != 0.0));
        assert!(g.component(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_differences_match() {
        let mut rng = SeededRng::new(1, 0);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 500 {
            let k = rng.random_range(2..5);
            let dim = rng.random_range(1..4);
            let w = random_weights(k, dim, &mut rng);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let label = rng.random_range(0..k);
            let gamma = rng.random_range(0.05..1.0);
            let f0 = hinge_loss(&w, &x, label, gamma).unwrap();
            let mut dir = OgdWeights::zeros(k, dim);
            dir.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            let mut w1 = w.clone();
            w1.axpy(h, &dir);
            let f1 = hinge_loss(&w1, &x, label, gamma).unwrap();
            // skip kinks: the active set must be the same at both points
            let g0 = hinge_subgradient(&w, &x, label, gamma).unwrap();
            let g1 = hinge_subgradient(&w1, &x, label, gamma).unwrap();
            let same = g0.as_slice().iter().zip(g1.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12);
            if !same || (f0 == 0.0) != (f1 == 0.0) {
                continue;
            }
            let fd = (f1 - f0) / h;
            let analytic = dot(g0.as_slice(), dir.as_slice());
            assert!((fd - analytic).abs() < 1e-4, "fd={fd} analytic={analytic}");
            checked += 1;
        }
    }

    #[test]
    fn ogd_zero_step_and_flat_point() {
        let mut rng = SeededRng::new(2, 0);
        let w = random_weights(3, 2, &mut rng);
        let xs = [vec![0.2, 1.0], vec![-0.4, 1.0]];
        let out = ogd_epoch(&w, xs.iter().map(|v| v.as_slice()), &[0, 1], 0.1, 0.0).unwrap();
        assert_eq!(out, w);
        let sep = OgdWeights::from_components(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let out = ogd_epoch(&sep, [[0.9, 1.0].as_slice()], &[0], 0.1, 0.5).unwrap();
        assert_eq!(out, sep);
    }

    #[test]
    fn ogd_stays_in_balls() {
        let mut rng = SeededRng::new(3, 0);
        let w = OgdWeights::zeros(3, 3);
        let xs: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0]).collect();
        let labels: Vec<usize> = (0..500).map(|_| rng.random_range(0..3)).collect();
        let out = ogd_epoch(&w, xs.iter().map(|v| v.as_slice()), &labels, 0.1, 0.3).unwrap();
        assert!(out.max_component_norm() <= 1.0 + 1e-12);
        let mut again = out.clone();
        again.project();
        assert_eq!(again, out);
    }

    #[test]
    fn classifier_fit_separates_clean_labels() {
        let mut rng = SeededRng::new(4, 0);
        let mut data = Dataset::new(2, 1);
        let mut labels = Vec::new();
        for _ in 0..400 {
            let x: f64 = rng.random_range(-1.0..1.0);
            data.push(&[x, 1.0], &[0.0]).unwrap();
            labels.push(usize::from(x > 0.3));
        }
        let w = fit_hinge_classifier(&data, &labels, 2, 0.1, 200).unwrap();
        let (_, mistakes) = batch_loss(&w, &data, &labels, 0.1);
        assert!(mistakes <= 4, "mistakes = {mistakes}");
        let g = w.to_classifier(1.0).unwrap();
        assert_eq!(g.classify_slice(&[0.9]), 1);
        assert_eq!(g.classify_slice(&[-0.9]), 0);
    }

    #[test]
    fn regret_bound_formula() {
        assert_eq!(ogd_regret_bound(2, 0.5, 100, 0.5), 16.0 + 200.0);
    }

    proptest! {
        #[test]
        fn hinge_dominates_zero_one_and_soft_margin(
            seed in 0u64..10_000,
            k in 2usize..5,
            dim in 1usize..4,
            gamma in 0.01f64..2.0,
        ) {
            let mut rng = SeededRng::new(seed, 9);
            let w = random_weights(k, dim, &mut rng);
            let mut x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1.0 { x.iter_mut().for_each(|v| *v /= n); }
            let label = rng.random_range(0..k);
            let loss = hinge_loss(&w, &x, label, gamma).unwrap();
            let wrong = f64::from(u8::from(w.predict(&x) != label));
            prop_assert!(loss >= wrong - 1e-12);
            let ambiguous = f64::from(u8::from(in_ambiguity_set(&w, &x, gamma)));
            prop_assert!(loss <= ambiguous + (1.0 + 2.0 / gamma) * wrong + 1e-12);
            prop_assert!(loss <= soft_margin_bound(&w, &x, label, gamma) + 1e-12);
        }
    }
}
