//! Reproducible experiment tables: the two-location city example, rule
//! comparisons, attractiveness sweeps, uniform attractiveness scaling and
//! the budget needed to hold a target crime probability.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::allocator::{
    best_gamma, default_gamma_grid, solve_closed_form, HeuristicParams, Rule, RuleError,
};
use crate::model::{
    evaluate, Allocation, AllocationKey, Evaluation, Location, ModelError, Resource, Scenario,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("sweep needs at least one point")]
    EmptySweep,
    #[error("expected {expected} sweep points, got the other kind")]
    WrongSpecKind { expected: &'static str },
    #[error("attractiveness pair ({0}, {1}) does not sum to 10")]
    PairSum(f64, f64),
    #[error("scale factor must be finite and >= 0, got {0}")]
    InvalidScale(f64),
    #[error("attractiveness sweep needs exactly two locations, scenario has {0}")]
    NeedsTwoLocations(usize),
    #[error("target probability must lie strictly between 0 and 1, got {0}")]
    InvalidTarget(f64),
    #[error("budget {budget} reaches overall probability {achieved}, target was {target}")]
    TargetMissed {
        budget: f64,
        achieved: f64,
        target: f64,
    },
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Sum of the attractiveness pair in the two-location sweep.
pub const PAIR_TOTAL: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow<T> {
    pub label: String,
    pub values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentTable<T> {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow<T>>,
}

impl<T: Scalar> ExperimentTable<T> {
    pub fn new(name: impl Into<String>, columns: Vec<String>) -> Self {
        ExperimentTable {
            name: name.into(),
            columns,
            rows: Vec::new(),
        }
    }

    /// Appends a row. Panics if the width does not match the columns.
    pub fn push(&mut self, label: impl Into<String>, values: Vec<T>) {
        assert_eq!(
            values.len(),
            self.columns.len(),
            "row width must match columns"
        );
        self.rows.push(TableRow {
            label: label.into(),
            values,
        });
    }

    pub fn row(&self, label: &str) -> Option<&TableRow<T>> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn column_index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    /// Value at (row label, column name).
    pub fn get(&self, label: &str, column: &str) -> Option<T> {
        Some(self.row(label)?.values[self.column_index(column)?])
    }

    /// RFC 4180 CSV with a leading `label` column. Numbers use the shortest
    /// representation that parses back to the same value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(out);
        w.write_record(std::iter::once("label").chain(self.columns.iter().map(String::as_str)))?;
        for row in &self.rows {
            let mut record = vec![row.label.clone()];
            record.extend(row.values.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Two locations, one central and two local resources, budget 30.
pub fn paris_scenario<T: Scalar>() -> Scenario<T> {
    let six = T::lit(6.0);
    Scenario::new(
        vec![
            Location::new("1", six * T::lit(3.0).ln()),
            Location::new("2", six * T::lit(2.0).ln()),
        ],
        vec![
            Resource::new("4", T::lit(3.0)),
            Resource::new("5", T::lit(2.0)),
        ],
        vec![Resource::new("3", T::one())],
        T::lit(30.0),
    )
    .expect("built-in scenario is valid")
}

/// Two identical locations sharing one local resource with beta 4, budget 3.
pub fn two_location_scenario<T: Scalar>() -> Scenario<T> {
    Scenario::new(
        vec![Location::new("1", T::zero()), Location::new("2", T::zero())],
        vec![Resource::new("3", T::lit(4.0))],
        vec![],
        T::lit(3.0),
    )
    .expect("built-in scenario is valid")
}

/// Allocation keys in display order: central resources first, then each
/// local resource across all locations.
pub fn display_keys<T: Scalar>(scenario: &Scenario<T>) -> Vec<AllocationKey> {
    let mut keys: Vec<AllocationKey> = (0..scenario.central_resources().len())
        .map(|resource| AllocationKey::Central { resource })
        .collect();
    for resource in 0..scenario.local_resources().len() {
        for location in 0..scenario.locations().len() {
            keys.push(AllocationKey::Local { location, resource });
        }
    }
    keys
}

pub fn allocation_columns<T: Scalar>(scenario: &Scenario<T>) -> Vec<String> {
    display_keys(scenario)
        .into_iter()
        .map(|k| match k {
            AllocationKey::Central { resource } => {
                format!("x_{}", scenario.central_resources()[resource].id)
            }
            AllocationKey::Local { location, resource } => format!(
                "x_{}_{}",
                scenario.locations()[location].id,
                scenario.local_resources()[resource].id
            ),
        })
        .collect()
}

pub fn allocation_in_display_order<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
) -> Vec<T> {
    display_keys(scenario)
        .into_iter()
        .map(|k| allocation.values()[scenario.flat_index(k)])
        .collect()
}

pub fn probability_columns<T: Scalar>(scenario: &Scenario<T>) -> Vec<String> {
    scenario
        .locations()
        .iter()
        .map(|l| format!("p_{}", l.id))
        .chain(std::iter::once("p_overall".to_string()))
        .collect()
}

fn probability_values<T: Scalar>(evaluation: &Evaluation<T>) -> Vec<T> {
    let mut v = evaluation.per_location.clone();
    v.push(evaluation.overall);
    v
}

/// Columns: allocation in display order, per-location probabilities, overall.
pub fn allocation_table_columns<T: Scalar>(scenario: &Scenario<T>) -> Vec<String> {
    let mut c = allocation_columns(scenario);
    c.extend(probability_columns(scenario));
    c
}

pub fn allocation_row<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
    evaluation: &Evaluation<T>,
) -> Vec<T> {
    let mut v = allocation_in_display_order(scenario, allocation);
    v.extend(probability_values(evaluation));
    v
}

/// Probabilities of both locations and of opting out for the allocations
/// (1, 1) and (2, 1) in the two-identical-locations example.
pub fn reproduce_table1<T: Scalar>() -> Result<ExperimentTable<T>, ExperimentError> {
    let s = two_location_scenario::<T>();
    let mut table = ExperimentTable::new(
        "table1",
        vec!["p_1".into(), "p_2".into(), "p_opt_out".into()],
    );
    for (label, x) in [("(1,1)", [1.0, 1.0]), ("(2,1)", [2.0, 1.0])] {
        let allocation = Allocation::new(&s, x.iter().map(|&v| T::lit(v)).collect())?;
        let e = evaluate(&s, &allocation)?;
        table.push(label, vec![e.per_location[0], e.per_location[1], e.opt_out]);
    }
    Ok(table)
}

/// Optimal row followed by one row per (rule, gamma).
pub fn comparison_table<T: Scalar>(
    name: &str,
    scenario: &Scenario<T>,
    include_optimal: bool,
    rules: &[Rule],
    gammas: &[T],
) -> Result<ExperimentTable<T>, ExperimentError> {
    let mut table = ExperimentTable::new(name, allocation_table_columns(scenario));
    if include_optimal {
        let opt = solve_closed_form(scenario)?;
        table.push(
            "OPTIMAL",
            allocation_row(scenario, &opt.allocation, &opt.evaluation),
        );
    }
    for &rule in rules {
        for &gamma in gammas {
            let allocation = rule.apply(scenario, HeuristicParams::new(gamma)?)?;
            let evaluation = evaluate(scenario, &allocation)?;
            table.push(
                format!("{}({})", rule.name(), gamma),
                allocation_row(scenario, &allocation, &evaluation),
            );
        }
    }
    Ok(table)
}

/// Optimal allocation against CLE and CELP at gamma 0.25, 0.5 and 0.75 for
/// the built-in two-location city.
pub fn reproduce_table2<T: Scalar>() -> Result<ExperimentTable<T>, ExperimentError> {
    let gammas = [0.25, 0.5, 0.75].map(T::lit);
    comparison_table(
        "table2",
        &paris_scenario(),
        true,
        &[Rule::Cle, Rule::Celp],
        &gammas,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepSpec<T> {
    /// Attractiveness pairs `(a1, a2)` with `a1 + a2 = 10`.
    AlphaPairs(Vec<(T, T)>),
    /// Uniform scale factors `k` applied to every attractiveness.
    ScaleFactors(Vec<T>),
}

impl<T: Scalar> SweepSpec<T> {
    pub fn alpha_pairs(pairs: Vec<(T, T)>) -> Result<Self, ExperimentError> {
        if pairs.is_empty() {
            return Err(ExperimentError::EmptySweep);
        }
        let total = T::lit(PAIR_TOTAL);
        for &(a, b) in &pairs {
            let sums_to_total = (a + b - total).abs() <= T::lit(1e-9) * total;
            if !sums_to_total {
                return Err(ExperimentError::PairSum(a.to_f64_lossy(), b.to_f64_lossy()));
            }
        }
        Ok(SweepSpec::AlphaPairs(pairs))
    }

    /// Pairs `(a1, 10 - a1)`.
    pub fn from_first_alphas(first: &[T]) -> Result<Self, ExperimentError> {
        Self::alpha_pairs(first.iter().map(|&a| (a, T::lit(PAIR_TOTAL) - a)).collect())
    }

    pub fn scale_factors(factors: Vec<T>) -> Result<Self, ExperimentError> {
        if factors.is_empty() {
            return Err(ExperimentError::EmptySweep);
        }
        if let Some(&k) = factors.iter().find(|k| !k.is_finite() || **k < T::zero()) {
            return Err(ExperimentError::InvalidScale(k.to_f64_lossy()));
        }
        Ok(SweepSpec::ScaleFactors(factors))
    }

    /// `a1` in `{1, 1.5, ..., 9}`.
    pub fn default_pairs() -> Self {
        let first: Vec<T> = (0..17).map(|k| T::lit(1.0 + 0.5 * k as f64)).collect();
        Self::from_first_alphas(&first).expect("default pairs are valid")
    }

    /// `k` in `{1, 1.1, 1.2, 1.3, 1.4}`.
    pub fn default_scales() -> Self {
        SweepSpec::ScaleFactors((0..5).map(|k| T::lit(1.0 + 0.1 * k as f64)).collect())
    }
}

/// For each attractiveness pair: optimal overall probability and the best
/// CLE and CELP probabilities over the gamma grid.
pub fn attractiveness_sweep<T: Scalar>(
    base: &Scenario<T>,
    spec: &SweepSpec<T>,
    grid: &[T],
) -> Result<ExperimentTable<T>, ExperimentError> {
    let SweepSpec::AlphaPairs(pairs) = spec else {
        return Err(ExperimentError::WrongSpecKind {
            expected: "attractiveness pair",
        });
    };
    if base.locations().len() != 2 {
        return Err(ExperimentError::NeedsTwoLocations(base.locations().len()));
    }
    let columns = [
        "a1",
        "a2",
        "optimal",
        "cle",
        "celp",
        "cle_gamma",
        "celp_gamma",
    ];
    let rows = pairs
        .par_iter()
        .map(|&(a1, a2)| {
            let s = base.with_alphas(&[a1, a2])?;
            let opt = solve_closed_form(&s)?;
            let cle = best_gamma(&s, Rule::Cle, grid)?;
            let celp = best_gamma(&s, Rule::Celp, grid)?;
            Ok((
                format!("a1={a1}"),
                vec![
                    a1,
                    a2,
                    opt.evaluation.overall,
                    cle.evaluation.overall,
                    celp.evaluation.overall,
                    cle.gamma,
                    celp.gamma,
                ],
            ))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let mut table = ExperimentTable::new(
        "attractiveness_sweep",
        columns.iter().map(|c| c.to_string()).collect(),
    );
    for (label, values) in rows {
        table.push(label, values);
    }
    Ok(table)
}

/// Same as [`attractiveness_sweep`] over the default pairs and gamma grid.
pub fn reproduce_figure3<T: Scalar>() -> Result<ExperimentTable<T>, ExperimentError> {
    attractiveness_sweep(
        &paris_scenario(),
        &SweepSpec::default_pairs(),
        &default_gamma_grid(),
    )
}

/// Optimal allocations when every attractiveness is multiplied by `k`.
///
/// Besides the allocation and overall probability, each row carries block
/// totals: central, local, per local resource and per location.
pub fn scaling_table<T: Scalar>(
    base: &Scenario<T>,
    spec: &SweepSpec<T>,
) -> Result<ExperimentTable<T>, ExperimentError> {
    let SweepSpec::ScaleFactors(factors) = spec else {
        return Err(ExperimentError::WrongSpecKind {
            expected: "scale factor",
        });
    };
    let mut columns = vec!["k".to_string()];
    columns.extend(allocation_columns(base));
    columns.push("p_overall".into());
    columns.push("central_total".into());
    columns.push("local_total".into());
    columns.extend(
        base.local_resources()
            .iter()
            .map(|r| format!("resource_total_{}", r.id)),
    );
    columns.extend(
        base.locations()
            .iter()
            .map(|l| format!("location_total_{}", l.id)),
    );

    let rows = factors
        .par_iter()
        .map(|&k| {
            let alphas: Vec<T> = base.alphas().iter().map(|&a| a * k).collect();
            let s = base.with_alphas(&alphas)?;
            let opt = solve_closed_form(&s)?;
            let x = &opt.allocation;
            let n_local = s.local_resources().len();
            let n_loc = s.locations().len();
            let central: T = (0..s.central_resources().len()).map(|j| x.central(j)).sum();
            let per_resource: Vec<T> = (0..n_local)
                .map(|j| (0..n_loc).map(|i| x.local(i, j)).sum())
                .collect();
            let per_location: Vec<T> = (0..n_loc)
                .map(|i| (0..n_local).map(|j| x.local(i, j)).sum())
                .collect();
            let mut values = vec![k];
            values.extend(allocation_in_display_order(&s, x));
            values.push(opt.evaluation.overall);
            values.push(central);
            values.push(per_resource.iter().copied().sum());
            values.extend(per_resource);
            values.extend(per_location);
            Ok((format!("k={k}"), values))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let mut table = ExperimentTable::new("scaling", columns);
    for (label, values) in rows {
        table.push(label, values);
    }
    Ok(table)
}

/// Budget at which the optimal allocation reaches `target` overall probability.
///
/// The optimal surrogate scales as `R^(-sum beta)`, so the budget follows in
/// closed form; the result is then re-solved and checked to within `1e-9`.
pub fn budget_for_target<T: Scalar>(
    scenario: &Scenario<T>,
    target: T,
) -> Result<T, ExperimentError> {
    if !(target > T::zero() && target < T::one()) {
        return Err(ExperimentError::InvalidTarget(target.to_f64_lossy()));
    }
    let current = solve_closed_form(scenario)?;
    // ln B_target = ln(target / (1 - target))
    let log_b_target = target.ln() - (-target).ln_1p();
    let log_budget = scenario.budget().ln()
        + (current.evaluation.log_surrogate - log_b_target) / scenario.beta_sum();
    let budget = log_budget.exp();
    let check = solve_closed_form(&scenario.with_budget(budget)?)?;
    let achieved = check.evaluation.overall;
    if (achieved - target).abs() > T::lit(1e-9).max(T::ROUTE_TOLERANCE * T::lit(10.0)) {
        return Err(ExperimentError::TargetMissed {
            budget: budget.to_f64_lossy(),
            achieved: achieved.to_f64_lossy(),
            target: target.to_f64_lossy(),
        });
    }
    Ok(budget)
}

/// Budget needed at each attractiveness scale factor to hold `target`.
pub fn budget_table<T: Scalar>(
    base: &Scenario<T>,
    spec: &SweepSpec<T>,
    target: T,
) -> Result<ExperimentTable<T>, ExperimentError> {
    let SweepSpec::ScaleFactors(factors) = spec else {
        return Err(ExperimentError::WrongSpecKind {
            expected: "scale factor",
        });
    };
    let rows = factors
        .par_iter()
        .map(|&k| {
            let alphas: Vec<T> = base.alphas().iter().map(|&a| a * k).collect();
            let s = base.with_alphas(&alphas)?;
            let budget = budget_for_target(&s, target)?;
            let overall = solve_closed_form(&s.with_budget(budget)?)?
                .evaluation
                .overall;
            Ok((format!("k={k}"), vec![k, budget, overall]))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let mut table = ExperimentTable::new(
        "budget_for_target",
        vec!["k".into(), "budget".into(), "p_overall".into()],
    );
    for (label, values) in rows {
        table.push(label, values);
    }
    Ok(table)
}

/// Budgets that keep the built-in city at its own optimal overall
/// probability while attractiveness grows by `k = 1, 1.1, ..., 1.4`.
pub fn reproduce_figure5<T: Scalar>() -> Result<ExperimentTable<T>, ExperimentError> {
    let base = paris_scenario::<T>();
    let target = solve_closed_form(&base)?.evaluation.overall;
    budget_table(&base, &SweepSpec::default_scales(), target)
}
