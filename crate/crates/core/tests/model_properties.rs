mod common;

use choicealloc::experiments::{paris_scenario, two_location_scenario};
use choicealloc::model::{log_surrogate, product_form_surrogate};
use choicealloc::{
    deterministic_utility, evaluate, gradient_surrogate, surrogate, Allocation64, Location,
    ModelError, Resource, Scenario64,
};
use common::{random_scenario, rel_diff, surrogate_by_definition, term_by_definition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random allocation spending `fill` of the budget.
fn random_allocation(s: &Scenario64, seed: u64, fill: f64) -> Allocation64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let w: Vec<f64> = (0..s.dimension())
        .map(|_| rng.random_range(0.05..1.0))
        .collect();
    let total: f64 = w.iter().sum();
    Allocation64::new(s, w.iter().map(|v| v / total * fill * s.budget()).collect()).unwrap()
}

fn paris_plan(s: &Scenario64) -> Allocation64 {
    Allocation64::from_keyed(
        s,
        [
            ("1", "4", 3.0),
            ("1", "5", 6.0),
            ("2", "4", 2.0),
            ("2", "5", 4.0),
        ],
        [("3", 15.0)],
    )
    .unwrap()
}

#[test]
fn paris_plan_utility_is_ln_005() {
    let s = paris_scenario::<f64>();
    let x = paris_plan(&s);
    let v = deterministic_utility(&s, &x, "1").unwrap();
    assert!((v - 0.05f64.ln()).abs() < 1e-12);
    assert_eq!(
        deterministic_utility(&s, &x, "9"),
        Err(ModelError::UnknownLocation("9".into()))
    );
}

#[test]
fn zero_attractiveness_at_unit_entries_has_zero_utility() {
    let s = Scenario64::new(
        vec![Location::new("a", 0.0), Location::new("b", 2.0)],
        vec![Resource::new("l", 2.5)],
        vec![Resource::new("c", 0.7)],
        10.0,
    )
    .unwrap();
    let x = Allocation64::new(&s, vec![1.0, 4.0, 1.0]).unwrap();
    assert_eq!(deterministic_utility(&s, &x, "a").unwrap(), 0.0);
}

#[test]
fn utility_matches_direct_sum_on_random_scenario() {
    let s = Scenario64::new(
        (0..3)
            .map(|i| Location::new(format!("n{i}"), 1.3 * i as f64 + 0.4))
            .collect(),
        vec![Resource::new("l", 1.7)],
        vec![Resource::new("c", 2.2)],
        20.0,
    )
    .unwrap();
    let x = random_allocation(&s, 7, 0.9);
    for i in 0..3 {
        let direct = s.locations()[i].alpha - 1.7 * x.local(i, 0).ln() - 2.2 * x.central(0).ln();
        let got = deterministic_utility(&s, &x, &format!("n{i}")).unwrap();
        assert!((got - direct).abs() < 1e-12);
    }
}

#[test]
fn paris_plan_surrogate_and_overall() {
    let s = paris_scenario::<f64>();
    let x = paris_plan(&s);
    let b = surrogate(&s, &x).unwrap();
    assert!(rel_diff(b, 729.0 / 14580.0 + 64.0 / 1920.0) < 1e-12);
    assert!(rel_diff(b, 1.0 / 12.0) < 1e-12);
    let e = evaluate(&s, &x).unwrap();
    assert!(rel_diff(e.overall, 1.0 / 13.0) < 1e-12);
}

#[test]
fn two_location_probability_rows() {
    let s = two_location_scenario::<f64>();
    let e = evaluate(&s, &Allocation64::new(&s, vec![1.0, 1.0]).unwrap()).unwrap();
    for p in e.per_location.iter().chain([&e.opt_out]) {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(e.surrogate, 2.0);
    let e = evaluate(&s, &Allocation64::new(&s, vec![2.0, 1.0]).unwrap()).unwrap();
    assert!((e.per_location[0] - 1.0 / 33.0).abs() < 1e-12);
    assert!((e.per_location[1] - 16.0 / 33.0).abs() < 1e-12);
    assert!((e.opt_out - 16.0 / 33.0).abs() < 1e-12);
}

#[test]
fn two_location_gradient_at_unit_allocation() {
    let s = two_location_scenario::<f64>();
    let g = gradient_surrogate(&s, &Allocation64::new(&s, vec![1.0, 1.0]).unwrap()).unwrap();
    assert_eq!(g, vec![-4.0, -4.0]);
}

#[test]
fn infeasible_and_nonpositive_allocations_rejected() {
    let s = two_location_scenario::<f64>();
    let over = Allocation64::new(&s, vec![2.0, 2.0]).unwrap();
    assert!(matches!(
        evaluate(&s, &over),
        Err(ModelError::Infeasible { .. })
    ));
    assert!(matches!(
        Allocation64::new(&s, vec![1.0, 0.0]),
        Err(ModelError::NonPositiveEntry { .. })
    ));
    assert!(matches!(
        Allocation64::new(&s, vec![1.0, 1e-13]),
        Err(ModelError::NonPositiveEntry { .. })
    ));
    assert!(matches!(
        Allocation64::new(&s, vec![1.0]),
        Err(ModelError::ShapeMismatch { .. })
    ));
}

#[test]
fn huge_attractiveness_stays_finite() {
    let s = Scenario64::new(
        vec![Location::new("a", 900.0), Location::new("b", 899.0)],
        vec![Resource::new("l", 1.0)],
        vec![],
        2.0,
    )
    .unwrap();
    let x = Allocation64::new(&s, vec![1.0, 1.0]).unwrap();
    let e = evaluate(&s, &x).unwrap();
    assert!(e.log_surrogate.is_finite());
    assert!((e.log_surrogate - (900.0 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-12);
    assert!(e.opt_out >= 0.0 && e.overall <= 1.0);
    assert!(product_form_surrogate(&s, &x).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn probabilities_sum_to_one(seed in any::<u64>(), fill in 0.05f64..1.0) {
        let s = random_scenario(seed);
        let e = evaluate(&s, &random_allocation(&s, seed, fill)).unwrap();
        let total: f64 = e.per_location.iter().sum::<f64>() + e.opt_out;
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(e.per_location.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn logit_route_equals_surrogate_route(seed in any::<u64>(), fill in 0.05f64..1.0) {
        let s = random_scenario(seed);
        let x = random_allocation(&s, seed, fill);
        let e = evaluate(&s, &x).unwrap();
        prop_assert!(rel_diff(e.overall, e.surrogate / (1.0 + e.surrogate)) < 1e-12);
        let logit_sum: f64 = e.per_location.iter().sum();
        prop_assert!(rel_diff(logit_sum, e.overall) < 1e-12);
        let exp_utilities: f64 = e.utilities.iter().map(|v| v.exp()).sum();
        prop_assert!(rel_diff(e.surrogate, exp_utilities) < 1e-12);
    }

    #[test]
    fn surrogate_matches_term_by_term_definition(seed in any::<u64>(), fill in 0.05f64..1.0) {
        let s = random_scenario(seed);
        let x = random_allocation(&s, seed, fill);
        let direct = surrogate_by_definition(&s, x.values());
        prop_assert!(rel_diff(surrogate(&s, &x).unwrap(), direct) < 1e-12);
        if let Some(product) = product_form_surrogate(&s, &x) {
            prop_assert!(rel_diff(product, direct) < 1e-12);
        }
    }

    #[test]
    fn surrogate_is_homogeneous(seed in any::<u64>(), t in 0.1f64..10.0) {
        let s = random_scenario(seed);
        let x = random_allocation(&s, seed, 0.5);
        let b = surrogate(&s, &x).unwrap();
        let bt = surrogate(&s, &x.scaled(t)).unwrap();
        let want = t.powf(-s.beta_sum()) * b;
        prop_assert!(rel_diff(bt, want) < 1e-10);
        let lb = log_surrogate(&s, &x.scaled(t)).unwrap();
        prop_assert!((lb - (b.ln() - s.beta_sum() * t.ln())).abs() < 1e-10 * lb.abs().max(1.0));
    }

    #[test]
    fn adding_to_any_entry_lowers_b_and_p(seed in any::<u64>(), eps_frac in 1e-6f64..0.1, pick in any::<prop::sample::Index>()) {
        let s = random_scenario(seed);
        let x = random_allocation(&s, seed, 0.8);
        let k = pick.index(s.dimension());
        let mut bumped = x.values().to_vec();
        bumped[k] += eps_frac * s.budget();
        let y = Allocation64::new(&s, bumped).unwrap();
        let (ex, ey) = (evaluate(&s, &x).unwrap(), evaluate(&s, &y).unwrap());
        prop_assert!(ey.surrogate < ex.surrogate);
        prop_assert!(ey.overall < ex.overall);
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), fill in 0.1f64..1.0) {
        let s = random_scenario(seed);
        let x = random_allocation(&s, seed, fill);
        let g = gradient_surrogate(&s, &x).unwrap();
        for k in 0..s.dimension() {
            let h = 1e-6 * x.values()[k];
            let mut plus = x.values().to_vec();
            let mut minus = x.values().to_vec();
            plus[k] += h;
            minus[k] -= h;
            // differenced per location term, then summed
            let fd: f64 = (0..s.locations().len())
                .map(|i| (term_by_definition(&s, &plus, i) - term_by_definition(&s, &minus, i)) / (2.0 * h))
                .sum();
            prop_assert!(rel_diff(g[k], fd) < 1e-5, "k={} analytic={} fd={}", k, g[k], fd);
        }
    }

    #[test]
    fn ordering_by_b_equals_ordering_by_p(seed in any::<u64>(), f1 in 0.05f64..1.0, f2 in 0.05f64..1.0) {
        let s = random_scenario(seed);
        let a = evaluate(&s, &random_allocation(&s, seed, f1)).unwrap();
        let b = evaluate(&s, &random_allocation(&s, seed.wrapping_add(1), f2)).unwrap();
        prop_assert_eq!(a.surrogate < b.surrogate, a.overall < b.overall);
        prop_assert_eq!(a.surrogate > b.surrogate, a.overall > b.overall);
    }
}
