//! Closed-form optimal allocation and the two rule-of-thumb heuristics.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{evaluate, gradient_surrogate, Allocation, Evaluation, ModelError, Scenario};
use crate::scalar::{log_sum_exp, softmax_tempered, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("gamma must lie strictly between 0 and 1, got {0}")]
    InvalidGamma(f64),
    #[error("rule needs at least one central resource")]
    NoCentralResources,
    #[error("rule needs at least one local resource")]
    NoLocalResources,
    #[error("proportional rule needs a positive total attractiveness")]
    ZeroAttractiveness,
    #[error("gamma grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Result of an optimal solve, closed form or numerical.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    pub allocation: Allocation<T>,
    pub evaluation: Evaluation<T>,
    /// KKT multiplier of the budget constraint (negative).
    pub multiplier: T,
    /// `max_k |dB/dx_k - multiplier|`.
    pub stationarity_residual: T,
    /// Descent iterations used; zero for the closed form.
    pub iterations: usize,
}

/// Optimal allocation.
///
/// The budget is split over resources proportionally to `beta`, and each
/// local resource's share is spread over locations with a softmax of
/// `alpha / (1 + sum of local betas)`.
pub fn solve_closed_form<T: Scalar>(scenario: &Scenario<T>) -> Result<SolveReport<T>, ModelError> {
    let budget = scenario.budget();
    let beta_sum = scenario.beta_sum();
    let temperature = T::one() + scenario.local_beta_sum();
    let alphas = scenario.alphas();
    let shares = softmax_tempered(&alphas, temperature);

    let mut values = Vec::with_capacity(scenario.dimension());
    for share in &shares {
        for r in scenario.local_resources() {
            values.push(r.beta / beta_sum * budget * *share);
        }
    }
    for r in scenario.central_resources() {
        values.push(r.beta / beta_sum * budget);
    }
    let allocation = Allocation::new(scenario, values)?;

    // ln|lambda| = T ln Z + (1 + S) ln S - (1 + S) ln R - sum beta ln beta
    let scaled: Vec<T> = alphas.iter().map(|&a| a / temperature).collect();
    let log_z = log_sum_exp(&scaled);
    let beta_entropy: T = scenario
        .local_resources()
        .iter()
        .chain(scenario.central_resources())
        .map(|r| r.beta * r.beta.ln())
        .sum();
    let one_plus_s = T::one() + beta_sum;
    let log_multiplier =
        temperature * log_z + one_plus_s * beta_sum.ln() - one_plus_s * budget.ln() - beta_entropy;
    let multiplier = -log_multiplier.exp();

    let gradient = gradient_surrogate(scenario, &allocation)?;
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
        iterations: 0,
    })
}

/// Fraction of the budget spent on central resources by a heuristic rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicParams<T> {
    gamma: T,
}

impl<T: Scalar> HeuristicParams<T> {
    pub fn new(gamma: T) -> Result<Self, RuleError> {
        if gamma > T::zero() && gamma < T::one() {
            Ok(HeuristicParams { gamma })
        } else {
            Err(RuleError::InvalidGamma(gamma.to_f64_lossy()))
        }
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// Central and location-equal.
    Cle,
    /// Central-equal and location-proportional.
    Celp,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Cle => "CLE",
            Rule::Celp => "CELP",
        }
    }

    pub fn apply<T: Scalar>(
        self,
        scenario: &Scenario<T>,
        params: HeuristicParams<T>,
    ) -> Result<Allocation<T>, RuleError> {
        match self {
            Rule::Cle => cle_rule(scenario, params),
            Rule::Celp => celp_rule(scenario, params),
        }
    }
}

impl std::str::FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cle" => Ok(Rule::Cle),
            "celp" => Ok(Rule::Celp),
            other => Err(format!("unknown rule `{other}` (expected cle or celp)")),
        }
    }
}

fn count<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count fits in scalar")
}

fn rule_allocation<T: Scalar>(
    scenario: &Scenario<T>,
    params: HeuristicParams<T>,
    location_weights: &[T],
) -> Result<Allocation<T>, RuleError> {
    let n_central = scenario.central_resources().len();
    let n_local = scenario.local_resources().len();
    if n_central == 0 {
        return Err(RuleError::NoCentralResources);
    }
    if n_local == 0 {
        return Err(RuleError::NoLocalResources);
    }
    let budget = scenario.budget();
    let gamma = params.gamma();
    let local_block = (T::one() - gamma) * budget / count(n_local);
    let mut values = Vec::with_capacity(scenario.dimension());
    for &w in location_weights {
        values.extend(std::iter::repeat_n(local_block * w, n_local));
    }
    values.extend(std::iter::repeat_n(
        gamma * budget / count(n_central),
        n_central,
    ));
    Ok(Allocation::new(scenario, values)?)
}

/// CLE: `gamma R / |C|` per central resource, `(1 - gamma) R / (|L| |N|)`
/// per local entry.
pub fn cle_rule<T: Scalar>(
    scenario: &Scenario<T>,
    params: HeuristicParams<T>,
) -> Result<Allocation<T>, RuleError> {
    let n = scenario.locations().len();
    let weights = vec![T::one() / count(n); n];
    rule_allocation(scenario, params, &weights)
}

/// CELP: like CLE, but the local budget of each resource is split over
/// locations in proportion to `alpha`.
pub fn celp_rule<T: Scalar>(
    scenario: &Scenario<T>,
    params: HeuristicParams<T>,
) -> Result<Allocation<T>, RuleError> {
    let alphas = scenario.alphas();
    let total: T = alphas.iter().copied().sum();
    if total <= T::zero() {
        return Err(RuleError::ZeroAttractiveness);
    }
    let weights: Vec<T> = alphas.iter().map(|&a| a / total).collect();
    rule_allocation(scenario, params, &weights)
}

/// `{0.01, 0.02, ..., 0.99}`.
pub fn default_gamma_grid<T: Scalar>() -> Vec<T> {
    (1..100).map(|k| T::lit(k as f64 / 100.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaChoice<T> {
    pub gamma: T,
    pub allocation: Allocation<T>,
    pub evaluation: Evaluation<T>,
}

/// Grid point with the lowest overall probability; ties go to the smaller gamma.
pub fn best_gamma<T: Scalar>(
    scenario: &Scenario<T>,
    rule: Rule,
    grid: &[T],
) -> Result<GammaChoice<T>, RuleError> {
    if grid.is_empty() {
        return Err(RuleError::EmptyGrid);
    }
    let candidates = grid
        .par_iter()
        .map(|&gamma| {
            let allocation = rule.apply(scenario, HeuristicParams::new(gamma)?)?;
            let evaluation = evaluate(scenario, &allocation)?;
            Ok(GammaChoice {
                gamma,
                allocation,
                evaluation,
            })
        })
        .collect::<Result<Vec<_>, RuleError>>()?;
    let best = candidates
        .into_iter()
        .reduce(|best, c| {
            let better = c.evaluation.overall < best.evaluation.overall
                || (c.evaluation.overall == best.evaluation.overall && c.gamma < best.gamma);
            if better {
                c
            } else {
                best
            }
        })
        .expect("grid is nonempty");
    Ok(best)
}
