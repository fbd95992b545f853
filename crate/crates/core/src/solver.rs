//! Numerical oracle for minimizing the surrogate `B` on the budget simplex.
//!
//! This is deliberately independent of the closed form: it only uses `B`,
//! its gradient and a first-order descent scheme. Iterates are kept in log
//! coordinates and updated multiplicatively (entropic mirror descent), which
//! keeps every entry positive and the total equal to the budget.

use std::fmt;

use crate::allocator::SolveReport;
use crate::model::{
    evaluate, gradient_surrogate, normalized_gradient, utilities, Allocation, AllocationKey,
    ModelError, Scenario,
};
use crate::scalar::{softmax_tempered, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum InitialPoint<T> {
    /// Budget split evenly over all entries.
    Uniform,
    /// Any positive allocation; it is rescaled to spend the full budget.
    Custom(Allocation<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig<T> {
    pub max_iterations: usize,
    /// The run ends as stalled after a long streak of accepted steps that
    /// each lower `B` by less than this fraction without reaching a new best
    /// stationarity residual.
    pub objective_tolerance: T,
    /// Converged once `max_k |g_k - mean(g)| <= tol * |mean(g)|`.
    pub stationarity_tolerance: T,
    pub initial_point: InitialPoint<T>,
}

impl<T: Scalar> Default for OracleConfig<T> {
    fn default() -> Self {
        OracleConfig {
            max_iterations: 100_000,
            objective_tolerance: T::lit(1e-14),
            stationarity_tolerance: T::lit(1e-9),
            initial_point: InitialPoint::Uniform,
        }
    }
}

const STALL_STREAK: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    IterationLimit,
    /// No step size down to the minimum produced a non-increasing objective.
    LineSearchFailed,
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverError<T> {
    InvalidConfig(&'static str),
    /// The last iterate is kept in the report.
    NotConverged {
        reason: StopReason,
        report: Box<SolveReport<T>>,
    },
    Model(ModelError),
}

impl<T> From<ModelError> for SolverError<T> {
    fn from(e: ModelError) -> Self {
        SolverError::Model(e)
    }
}

impl<T: Scalar> fmt::Display for SolverError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::InvalidConfig(msg) => write!(f, "oracle configuration invalid: {msg}"),
            SolverError::NotConverged { reason, report } => write!(
                f,
                "oracle did not converge ({reason:?}): stationarity residual {} after {} iterations",
                report.stationarity_residual, report.iterations
            ),
            SolverError::Model(e) => e.fmt(f),
        }
    }
}

impl<T: Scalar> std::error::Error for SolverError<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            SolverError::Model(e) => Some(e),
            _ => None,
        }
    }
}

/// Relative stationarity residual `max_k |g_k - mean(g)| / |mean(g)|` of the
/// surrogate gradient `g`.
///
/// At a full-budget allocation this is zero exactly when the KKT conditions
/// of the budget-constrained problem hold.
pub fn kkt_residual<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
) -> Result<T, ModelError> {
    // validates shape and positivity
    utilities(scenario, allocation)?;
    let logs: Vec<T> = allocation.values().iter().map(|v| v.ln()).collect();
    Ok(relative_spread(&normalized_gradient(scenario, &logs)))
}

fn relative_spread<T: Scalar>(g: &[T]) -> T {
    let n = T::from_usize(g.len()).unwrap_or_else(T::one);
    let mean = g.iter().copied().sum::<T>() / n;
    g.iter().map(|&v| (v - mean).abs()).fold(T::zero(), T::max) / mean.abs()
}

/// Runs the oracle; see [`solve_numerical_observed`].
pub fn solve_numerical<T: Scalar>(
    scenario: &Scenario<T>,
    config: &OracleConfig<T>,
) -> Result<SolveReport<T>, SolverError<T>> {
    solve_numerical_observed(scenario, config, |_, _, _| {})
}

/// Runs the oracle and calls `observer(iteration, x, relative_change_in_B)`
/// after every accepted iterate.
pub fn solve_numerical_observed<T, F>(
    scenario: &Scenario<T>,
    config: &OracleConfig<T>,
    mut observer: F,
) -> Result<SolveReport<T>, SolverError<T>>
where
    T: Scalar,
    F: FnMut(usize, &[T], T),
{
    if config.objective_tolerance <= T::zero() || config.stationarity_tolerance <= T::zero() {
        return Err(SolverError::InvalidConfig("tolerances must be positive"));
    }
    let budget = scenario.budget();
    let n = scenario.dimension();
    let mut y: Vec<T> = match &config.initial_point {
        InitialPoint::Uniform => {
            let each = budget / T::from_usize(n).unwrap_or_else(T::one);
            vec![each.ln(); n]
        }
        InitialPoint::Custom(x) => {
            utilities(scenario, x)?;
            let scale = (budget / x.total()).ln();
            x.values().iter().map(|v| v.ln() + scale).collect()
        }
    };

    // beta of each entry and the location whose term it enters
    let betas = scenario.flat_betas();
    let owners: Vec<Option<usize>> = scenario
        .keys()
        .into_iter()
        .map(|k| match k {
            AllocationKey::Local { location, .. } => Some(location),
            AllocationKey::Central { .. } => None,
        })
        .collect();
    let n_locations = scenario.locations().len();
    let min_step = T::lit(1e-30);
    let max_step = T::lit(1e6);
    let two = T::one() + T::one();
    let noise_factor = T::epsilon() * T::lit(8.0);
    let floor_log = T::POSITIVITY_FLOOR.ln();

    let mut direction = normalized_gradient(scenario, &y);
    let mut residual = relative_spread(&direction);
    let mut best_residual = residual;
    let mut idle = 0;
    let mut step = T::one();
    let mut iterations = 0;
    let mut stop = None;
    let mut delta = vec![T::zero(); n];

    while residual > config.stationarity_tolerance {
        if iterations >= config.max_iterations {
            stop = Some(StopReason::IterationLimit);
            break;
        }
        let x: Vec<T> = y.iter().map(|v| v.exp()).collect();
        let total: T = x.iter().copied().sum();
        let mean = direction.iter().copied().sum::<T>() / T::from_usize(n).unwrap_or_else(T::one);
        let centered: Vec<T> = direction.iter().map(|&d| d - mean).collect();
        let logs = utilities_from_logs(scenario, &y, &betas, &owners);
        let weights = softmax_tempered(&logs, T::one());

        step = (step * two).min(max_step);
        let accepted = loop {
            if step < min_step {
                break None;
            }
            // multiplicative update renormalized to the current total
            let s = x
                .iter()
                .zip(&centered)
                .map(|(&xk, &c)| xk * (-step * c).exp_m1())
                .sum::<T>()
                / total;
            let shift = s.ln_1p();
            let mut ok = s.is_finite() && s > -T::one();
            for k in 0..n {
                delta[k] = -step * centered[k] - shift;
                ok &= (y[k] + delta[k]) >= floor_log && delta[k].is_finite();
            }
            if !ok {
                step = step / two;
                continue;
            }
            // exact relative change of B from the per-term log changes
            let mut term_change = vec![T::zero(); n_locations];
            let mut central_change = T::zero();
            let mut magnitude = T::zero();
            for k in 0..n {
                let d = -betas[k] * delta[k];
                magnitude = magnitude + d.abs();
                match owners[k] {
                    Some(i) => term_change[i] = term_change[i] + d,
                    None => central_change = central_change + d,
                }
            }
            let rel_change: T = weights
                .iter()
                .zip(&term_change)
                .map(|(&w, &d)| w * (d + central_change).exp_m1())
                .sum();
            // a decrease within rounding of the log changes is not a decrease
            if rel_change < -noise_factor * magnitude {
                break Some(rel_change);
            }
            step = step / two;
        };
        let Some(rel_change) = accepted else {
            stop = Some(StopReason::LineSearchFailed);
            break;
        };
        for k in 0..n {
            y[k] = y[k] + delta[k];
        }
        iterations += 1;
        let x_new: Vec<T> = y.iter().map(|v| v.exp()).collect();
        observer(iterations, &x_new, rel_change);

        direction = normalized_gradient(scenario, &y);
        let new_residual = relative_spread(&direction);
        residual = new_residual;
        if residual < best_residual {
            best_residual = residual;
            idle = 0;
        } else if -rel_change < config.objective_tolerance {
            idle += 1;
        }
        if idle >= STALL_STREAK && residual > config.stationarity_tolerance {
            stop = Some(StopReason::Stalled);
            break;
        }
    }

    let allocation = Allocation::new(scenario, y.iter().map(|v| v.exp()).collect())?;
    let report = build_report(scenario, allocation, iterations)?;
    match stop {
        None => Ok(report),
        Some(reason) => Err(SolverError::NotConverged {
            reason,
            report: Box::new(report),
        }),
    }
}

fn utilities_from_logs<T: Scalar>(
    scenario: &Scenario<T>,
    y: &[T],
    betas: &[T],
    owners: &[Option<usize>],
) -> Vec<T> {
    let mut logs = scenario.alphas();
    let mut central = T::zero();
    for ((&yk, &b), owner) in y.iter().zip(betas).zip(owners) {
        match owner {
            Some(i) => logs[*i] = logs[*i] - b * yk,
            None => central = central + b * yk,
        }
    }
    logs.iter().map(|&l| l - central).collect()
}

fn build_report<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: Allocation<T>,
    iterations: usize,
) -> Result<SolveReport<T>, ModelError> {
    let gradient = gradient_surrogate(scenario, &allocation)?;
    let multiplier =
        gradient.iter().copied().sum::<T>() / T::from_usize(gradient.len()).unwrap_or_else(T::one);
    let stationarity_residual = gradient
        .iter()
        .map(|&g| (g - multiplier).abs())
        .fold(T::zero(), T::max);
    let evaluation = evaluate(scenario, &allocation)?;
    Ok(SolveReport {
        allocation,
        evaluation,
        multiplier,
        stationarity_residual,
        iterations,
    })
}
