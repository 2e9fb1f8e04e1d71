//! Success-probability properties checked against independent oracles.

use proptest::prelude::*;
use tailsearch::analysis::{
    brute_force_best_selection, sp_by_counts, sp_closed_form, sp_monte_carlo, sp_of_selection, sp_repartition_exact,
};
use tailsearch::partition::DeploymentKind;
use tailsearch::selection::{select_nored, select_psmartred, select_rfullred, select_rsmartred, ReplicaLevels, Selection};
use tailsearch::shard_index::SuccessDistribution;

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..7).prop_filter("some mass", |w| w.iter().any(|&x| x > 1e-6))
}

/// Success probability by enumerating every miss pattern of the selected
/// replicas.
fn sp_by_enumeration(p: &[f64], counts: &[usize], f: f64) -> f64 {
    let cells: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(j, &c)| std::iter::repeat_n(j, c))
        .collect();
    let mut total = 0.0;
    for mask in 0u32..(1 << cells.len()) {
        let mut prob = 1.0;
        let mut alive = vec![false; p.len()];
        for (b, &j) in cells.iter().enumerate() {
            if mask & (1 << b) != 0 {
                prob *= 1.0 - f;
                alive[j] = true;
            } else {
                prob *= f;
            }
        }
        let mass: f64 = p.iter().zip(&alive).filter(|(_, &a)| a).map(|(x, _)| x).sum();
        total += prob * mass;
    }
    total
}

#[test]
fn worked_example() {
    let d = SuccessDistribution::new(vec![0.8, 0.1, 0.05, 0.03, 0.02]).unwrap();
    let sp = |counts: &[usize], f: f64| sp_of_selection(&d, &Selection::from_counts(counts, 2).unwrap(), f).unwrap().value;
    let twice = [2, 0, 0, 0, 0];
    let both = [1, 1, 0, 0, 0];
    for (value, expected, rounded) in [
        (sp(&twice, 0.05), 0.798, "0.80"),
        (sp(&both, 0.05), 0.855, "0.85"),
        (sp(&twice, 0.2), 0.768, "0.77"),
        (sp(&both, 0.2), 0.72, "0.72"),
    ] {
        assert!((value - expected).abs() < 1e-12);
        assert_eq!(format!("{value:.2}"), rounded);
    }
}

#[test]
fn levels_are_top_ranked_shards() {
    let d = SuccessDistribution::new(vec![0.05, 0.4, 0.1, 0.3, 0.15]).unwrap();
    let ranked = d.ranked();
    for f in [0.1, 0.3, 0.6, 0.9] {
        for budget in 1..=10 {
            let sel = select_rsmartred(&d, f, 2, budget).unwrap();
            for level in sel.levels().levels() {
                let top: std::collections::BTreeSet<usize> = ranked[..level.len()].iter().copied().collect();
                assert_eq!(level, &top);
            }
        }
    }
    for t in 1..=5 {
        let sel = select_rfullred(&d, t, 2).unwrap();
        assert_eq!(sel.levels().levels()[0], ranked[..t].iter().copied().collect());
    }
    let sel = select_nored(&d, 2, 4).unwrap();
    assert_eq!(sel.levels().levels()[0], ranked[..4].iter().copied().collect());
}

proptest! {
    #[test]
    fn closed_form_matches_enumeration(w in weights(), f in 0.0f64..=1.0, seed in any::<u64>()) {
        let d = SuccessDistribution::normalized(&w).unwrap();
        let r = 1 + (seed % 3) as usize;
        let counts: Vec<usize> = (0..d.n()).map(|j| ((seed >> (2 * j)) % (r as u64 + 1)) as usize).collect();
        prop_assume!(counts.iter().sum::<usize>() <= 12);
        let levels = ReplicaLevels::from_counts(&counts, r);
        let closed = sp_closed_form(&d, &levels, f).unwrap().value;
        prop_assert!((closed - sp_by_enumeration(d.p(), &counts, f)).abs() < 1e-12);
        prop_assert!((closed - sp_by_counts(&d, &counts, f)).abs() < 1e-12);
    }

    #[test]
    fn sp_is_monotone(w in weights(), f in 0.0f64..0.99, df in 0.0f64..0.01, seed in any::<u64>()) {
        let d = SuccessDistribution::normalized(&w).unwrap();
        let r = 3;
        let counts: Vec<usize> = (0..d.n()).map(|j| ((seed >> (2 * j)) % 4) as usize).collect();
        let levels = ReplicaLevels::from_counts(&counts, r);
        let a = sp_closed_form(&d, &levels, f).unwrap().value;
        let b = sp_closed_form(&d, &levels, f + df).unwrap().value;
        prop_assert!(b <= a + 1e-15);
        if let Some(j) = counts.iter().position(|&c| c < r) {
            let mut more = counts.clone();
            more[j] += 1;
            let c = sp_closed_form(&d, &ReplicaLevels::from_counts(&more, r), f).unwrap().value;
            prop_assert!(c >= a - 1e-15);
        }
    }

    #[test]
    fn rsmartred_matches_exhaustive_search(w in weights(), f in 0.0f64..=1.0, r in 1usize..=3, b in 1usize..=18) {
        let d = SuccessDistribution::normalized(&w).unwrap();
        prop_assume!(b <= d.n() * r);
        let sel = select_rsmartred(&d, f, r, b).unwrap();
        let (_, best) = brute_force_best_selection(&d, f, r, b).unwrap();
        prop_assert!((sp_of_selection(&d, &sel, f).unwrap().value - best.value).abs() < 1e-12);
    }
}

#[test]
fn repartition_monte_carlo_tracks_exact_value() {
    let d = SuccessDistribution::new(vec![0.5, 0.25, 0.125, 0.0625, 0.0625]).unwrap();
    let dists = vec![d.clone(); 3];
    for (budget, f) in [(3, 0.1), (6, 0.3), (9, 0.5)] {
        let sel = select_psmartred(&dists, f, 3, budget).unwrap();
        let exact = sp_repartition_exact(&dists, &sel, f);
        let mc = sp_monte_carlo(&dists, &sel, f, DeploymentKind::Repartition, 100_000, budget as u64).unwrap();
        assert!((mc.value - exact).abs() <= 4.0 * mc.std_error().max(1e-9), "{} vs {exact}", mc.value);
    }
}
