use nalgebra::DMatrix;
use proptest::prelude::*;
use smoothpwa::assignment;
use smoothpwa::dynamics::{cone_violation, project_state_matrix};
use smoothpwa::erm::{brute_force_erm, fit_heuristic, objective, ErmSettings};
use smoothpwa::learner::hinge::{hinge_loss, OgdWeights};
use smoothpwa::simulation::{coupled_w2, wasserstein2_empirical};
use smoothpwa::types::argmax_lowest;
use smoothpwa::{AffineMap, Dataset, SeededRng};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

fn square(n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=n).prop_flat_map(|n| (Just(n), prop::collection::vec(-5.0..5.0f64, n * n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hungarian_matches_enumeration((n, cost) in square(5)) {
        let sol = assignment::solve(&cost, n).unwrap();
        let best = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((sol.cost - best).abs() < 1e-9);
        let mut cols = sol.row_to_col.clone();
        cols.sort_unstable();
        prop_assert_eq!(cols, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn argmax_prefers_lowest_tied_index(scores in prop::collection::vec(-3i32..3, 1..8)) {
        let i = argmax_lowest(scores.iter().map(|&s| f64::from(s)));
        let top = *scores.iter().max().unwrap();
        prop_assert_eq!(i, scores.iter().position(|&s| s == top).unwrap());
    }

    #[test]
    fn projected_maps_respect_bound(entries in prop::collection::vec(-50.0..50.0f64, 6), bound in 0.1..20.0f64) {
        let m = AffineMap::projected(DMatrix::from_vec(2, 3, entries), bound);
        prop_assert!(m.matrix().norm() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn cone_projection_is_feasible_and_idempotent(entries in prop::collection::vec(-3.0..3.0f64, 4), s in 0.2..4.0f64) {
        let a = DMatrix::from_vec(2, 2, entries);
        let p = DMatrix::from_row_slice(2, 2, &[s, 0.3, 0.3, 1.0]);
        let once = project_state_matrix(&a, &p).unwrap();
        prop_assert!(cone_violation(&once, &p).unwrap() <= 1e-8);
        let twice = project_state_matrix(&once, &p).unwrap();
        prop_assert!((&twice - &once).norm() <= 1e-9 * (1.0 + once.norm()));
    }

    #[test]
    fn hinge_dominates_zero_one(
        w in prop::collection::vec(-1.0..1.0f64, 6),
        x in prop::collection::vec(-1.0..1.0f64, 2),
        label in 0usize..3,
        gamma in 0.05..1.0f64,
    ) {
        let weights = OgdWeights::from_components(&[w[0..2].to_vec(), w[2..4].to_vec(), w[4..6].to_vec()]).unwrap();
        let x_lift = [x[0], x[1]];
        let loss = hinge_loss(&weights, &x_lift, label, gamma).unwrap();
        prop_assert!(loss >= 0.0);
        if weights.predict(&x_lift) != label {
            prop_assert!(loss >= 1.0);
        }
    }

    #[test]
    fn empirical_w2_is_below_coupling(
        a in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 1..12),
        shift in -1.0..1.0f64,
    ) {
        let b: Vec<Vec<f64>> = a.iter().rev().map(|v| v.iter().map(|x| x + shift).collect()).collect();
        let w = wasserstein2_empirical(&a, &b).unwrap();
        prop_assert!(w <= coupled_w2(&a, &b).unwrap() + 1e-12);
        prop_assert!((w - wasserstein2_empirical(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!(wasserstein2_empirical(&a, &a).unwrap() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn heuristic_never_beats_exact_erm(seed in 0u64..10_000, n in 4usize..9) {
        let mut rng = SeededRng::new(seed, 0);
        let data: Dataset = smoothpwa::experiments::random_erm_instance(n, &mut rng);
        let settings = ErmSettings { restarts: 8, ..ErmSettings::default() };
        let exact = brute_force_erm(&data, 2, settings.map_bound).unwrap();
        let fit = fit_heuristic(&data, 2, &settings, None, &SeededRng::new(seed, 1)).unwrap();
        prop_assert!(fit.objective >= exact.objective - 1e-9);
        let recomputed = objective(&fit.maps, &fit.classifier, &data);
        prop_assert!((recomputed - fit.objective).abs() <= 1e-9 * (1.0 + fit.objective));
    }
}
