mod common;

use choicealloc::experiments::{paris_scenario, two_location_scenario};
use choicealloc::solver::{solve_numerical_observed, StopReason};
use choicealloc::{
    cle_rule, gradient_surrogate, kkt_residual, solve_closed_form, solve_numerical, surrogate,
    Allocation64, HeuristicParams, InitialPoint, OracleConfig, Scenario64, SolverError,
};
use common::{random_scenario, rel_diff};

#[test]
fn paris_closed_form_is_5_9_6_6_4() {
    let s = paris_scenario::<f64>();
    let r = solve_closed_form(&s).unwrap();
    let want = [9.0, 6.0, 6.0, 4.0, 5.0]; // flat order: 1/4, 1/5, 2/4, 2/5, 3
    for (got, want) in r.allocation.values().iter().zip(want) {
        assert!(rel_diff(*got, want) < 1e-12, "{got} vs {want}");
    }
    assert!(rel_diff(r.evaluation.overall, 1.0 / 109.0) < 1e-12);
    // 5/545 as printed
    assert!(rel_diff(r.evaluation.overall, 5.0 / 545.0) < 1e-12);
}

#[test]
fn paris_multiplier_matches_proof_display() {
    let s = paris_scenario::<f64>();
    let r = solve_closed_form(&s).unwrap();
    let z = (6.0 * 3f64.ln() / 6.0).exp() + (6.0 * 2f64.ln() / 6.0).exp();
    let lambda = -(z.powi(6)) * 6f64.powi(7) / (30f64.powi(7) * 1.0 * 27.0 * 4.0);
    assert!(rel_diff(r.multiplier, lambda) < 1e-12);
    for g in gradient_surrogate(&s, &r.allocation).unwrap() {
        assert!(rel_diff(g, lambda) < 1e-12);
    }
    assert!(r.stationarity_residual <= 1e-8 * r.multiplier.abs());
}

#[test]
fn symmetric_closed_form_splits_evenly() {
    let r = solve_closed_form(&two_location_scenario::<f64>()).unwrap();
    assert_eq!(r.allocation.values(), &[1.5, 1.5]);
}

#[test]
fn f32_closed_form_on_paris() {
    let s = paris_scenario::<f32>();
    let r = solve_closed_form(&s).unwrap();
    for (got, want) in r
        .allocation
        .values()
        .iter()
        .zip([9.0f32, 6.0, 6.0, 4.0, 5.0])
    {
        assert!((got - want).abs() < 1e-4 * want);
    }
    assert!((r.evaluation.overall - 1.0 / 109.0).abs() < 1e-6);
}

#[test]
fn closed_form_invariants_on_random_scenarios() {
    for seed in 0..200 {
        let s = random_scenario(seed);
        let r = solve_closed_form(&s).unwrap();
        assert!(
            rel_diff(r.allocation.total(), s.budget()) < 1e-12,
            "seed {seed}"
        );
        assert!(
            r.stationarity_residual <= 1e-8 * r.multiplier.abs(),
            "seed {seed}"
        );
        assert!(
            kkt_residual(&s, &r.allocation).unwrap() <= 1e-10,
            "seed {seed}"
        );

        // beta proportionality within each location
        let nl = s.local_resources().len();
        for i in 0..s.locations().len() {
            for j in 0..nl {
                for k in 0..nl {
                    let ratio = r.allocation.local(i, j) / r.allocation.local(i, k);
                    let want = s.local_resources()[j].beta / s.local_resources()[k].beta;
                    assert!(rel_diff(ratio, want) < 1e-12);
                }
            }
        }

        // common alpha shift leaves the allocation unchanged
        let shifted: Vec<f64> = s.alphas().iter().map(|a| a + 1.75).collect();
        let r2 = solve_closed_form(&s.with_alphas(&shifted).unwrap()).unwrap();
        for (a, b) in r.allocation.values().iter().zip(r2.allocation.values()) {
            assert!(rel_diff(*b, *a) < 1e-12);
        }
        assert!(r2.evaluation.overall > r.evaluation.overall);
    }
}

#[test]
fn kkt_residual_examples() {
    let s = paris_scenario::<f64>();
    let opt = solve_closed_form(&s).unwrap();
    assert!(kkt_residual(&s, &opt.allocation).unwrap() <= 1e-10);
    let cle = cle_rule(&s, HeuristicParams::new(0.25).unwrap()).unwrap();
    assert!(kkt_residual(&s, &cle).unwrap() > 1e-3);
}

#[test]
fn oracle_reaches_paris_optimum() {
    let s = paris_scenario::<f64>();
    let r = solve_numerical(&s, &OracleConfig::default()).unwrap();
    for (got, want) in r.allocation.values().iter().zip([9.0, 6.0, 6.0, 4.0, 5.0]) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    assert!(r.iterations > 0);
    assert!(r.stationarity_residual <= 1e-8 * r.multiplier.abs());
}

#[test]
fn oracle_reaches_symmetric_optimum() {
    let r = solve_numerical(&two_location_scenario::<f64>(), &OracleConfig::default()).unwrap();
    for v in r.allocation.values() {
        assert!((v - 1.5).abs() < 1e-9);
    }
}

#[test]
fn oracle_matches_closed_form_on_random_scenarios() {
    for seed in 1000..1020 {
        let s = random_scenario(seed);
        let exact = solve_closed_form(&s).unwrap();
        let oracle = solve_numerical(&s, &OracleConfig::default())
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        for (a, b) in oracle
            .allocation
            .values()
            .iter()
            .zip(exact.allocation.values())
        {
            assert!(rel_diff(*a, *b) < 1e-6, "seed {seed}: {a} vs {b}");
        }
        assert!(exact.evaluation.surrogate <= oracle.evaluation.surrogate * (1.0 + 1e-12));
        assert!(rel_diff(oracle.evaluation.surrogate, exact.evaluation.surrogate) < 1e-9);
    }
}

#[test]
fn oracle_iterates_stay_feasible_and_descend() {
    for seed in 2000..2010 {
        let s = random_scenario(seed);
        let budget = s.budget();
        let mut last_b = f64::INFINITY;
        let mut steps = 0;
        solve_numerical_observed(&s, &OracleConfig::default(), |_, x, rel_change| {
            steps += 1;
            let total: f64 = x.iter().sum();
            assert!(rel_diff(total, budget) < 1e-10);
            assert!(x.iter().all(|&v| v > 0.0));
            assert!(rel_change <= 0.0);
            let b = surrogate(&s, &Allocation64::new(&s, x.to_vec()).unwrap()).unwrap();
            // exact descent; the recomputed B may differ from it by rounding
            assert!(
                b <= last_b * (1.0 + 1e-14),
                "seed {seed}: {b} after {last_b}"
            );
            last_b = b;
        })
        .unwrap();
        assert!(steps > 0 || s.dimension() == 1);
    }
}

#[test]
fn oracle_from_custom_start() {
    let s = paris_scenario::<f64>();
    let start = Allocation64::new(&s, vec![0.01, 0.01, 0.01, 0.01, 1.0]).unwrap();
    let cfg = OracleConfig {
        initial_point: InitialPoint::Custom(start),
        ..OracleConfig::default()
    };
    let r = solve_numerical(&s, &cfg).unwrap();
    assert!((r.allocation.values()[4] - 5.0).abs() < 1e-6);
}

#[test]
fn oracle_reports_last_iterate_when_out_of_iterations() {
    let s: Scenario64 = paris_scenario();
    let cfg = OracleConfig {
        max_iterations: 3,
        ..OracleConfig::default()
    };
    match solve_numerical(&s, &cfg) {
        Err(SolverError::NotConverged { reason, report }) => {
            assert_eq!(reason, StopReason::IterationLimit);
            assert_eq!(report.iterations, 3);
            assert!(report.stationarity_residual > 0.0);
        }
        other => panic!("{other:?}"),
    }
}
