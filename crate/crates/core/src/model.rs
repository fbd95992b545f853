//! Scenario data model and the multinomial-logit choice probabilities.
//!
//! A thief picks one of the protected locations or the opt-out alternative
//! (utility fixed at zero). Location `i` has deterministic utility
//!
//! ```text
//! V_i(x) = alpha_i - sum_{j in L} beta_j ln x_ij - sum_{j in C} beta_j ln x_j
//! ```
//!
//! and the surrogate objective `B(x) = sum_i exp(V_i(x))` maps onto the
//! overall crime probability through `P = B / (1 + B)`. Everything here
//! works on `ln exp(V_i)` so large attractiveness values never overflow;
//! the linear product form is only evaluated as a cross-check.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::scalar::{log_sum_exp, logistic, softplus, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("scenario has no locations")]
    NoLocations,
    #[error("scenario has neither local nor central resources")]
    NoResources,
    #[error("identifier `{0}` is used more than once")]
    DuplicateId(String),
    #[error("identifier must be nonempty")]
    EmptyId,
    #[error("location `{id}`: alpha must be finite and >= 0, got {value}")]
    InvalidAlpha { id: String, value: f64 },
    #[error("resource `{id}`: beta must be finite and > 0, got {value}")]
    InvalidBeta { id: String, value: f64 },
    #[error("budget must be finite and > 0, got {0}")]
    InvalidBudget(f64),
    #[error("allocation has {found} entries, scenario expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("allocation entry {key} must be >= positivity floor, got {value}")]
    NonPositiveEntry { key: String, value: f64 },
    #[error("unknown location `{0}`")]
    UnknownLocation(String),
    #[error("allocation key {0} does not belong to the scenario")]
    UnknownKey(String),
    #[error("allocation key {0} is missing")]
    MissingKey(String),
    #[error("allocation spends {total}, exceeding the budget {budget}")]
    Infeasible { total: f64, budget: f64 },
    #[error("logit route gives P = {logit}, product route gives P = {product}")]
    RouteMismatch { logit: f64, product: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Location<T> {
    pub id: String,
    /// Initial attractiveness.
    pub alpha: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resource<T> {
    pub id: String,
    /// Sensitivity of the thief towards this resource.
    pub beta: T,
}

impl<T> Location<T> {
    pub fn new(id: impl Into<String>, alpha: T) -> Self {
        Location {
            id: id.into(),
            alpha,
        }
    }
}

impl<T> Resource<T> {
    pub fn new(id: impl Into<String>, beta: T) -> Self {
        Resource {
            id: id.into(),
            beta,
        }
    }
}

/// Locations, protective resources and the total budget.
///
/// Construction validates every invariant, so a `Scenario` value is always
/// well formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    locations: Vec<Location<T>>,
    local_resources: Vec<Resource<T>>,
    central_resources: Vec<Resource<T>>,
    budget: T,
}

/// Position of one allocation entry, by index into the scenario lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocationKey {
    Local { location: usize, resource: usize },
    Central { resource: usize },
}

impl<T: Scalar> Scenario<T> {
    pub fn new(
        locations: Vec<Location<T>>,
        local_resources: Vec<Resource<T>>,
        central_resources: Vec<Resource<T>>,
        budget: T,
    ) -> Result<Self, ModelError> {
        if locations.is_empty() {
            return Err(ModelError::NoLocations);
        }
        if local_resources.is_empty() && central_resources.is_empty() {
            return Err(ModelError::NoResources);
        }
        let mut seen = HashSet::new();
        let ids = locations
            .iter()
            .map(|l| &l.id)
            .chain(local_resources.iter().map(|r| &r.id))
            .chain(central_resources.iter().map(|r| &r.id));
        for id in ids {
            if id.is_empty() {
                return Err(ModelError::EmptyId);
            }
            if !seen.insert(id.as_str()) {
                return Err(ModelError::DuplicateId(id.clone()));
            }
        }
        for l in &locations {
            if !l.alpha.is_finite() || l.alpha < T::zero() {
                return Err(ModelError::InvalidAlpha {
                    id: l.id.clone(),
                    value: l.alpha.to_f64_lossy(),
                });
            }
        }
        for r in local_resources.iter().chain(&central_resources) {
            if !r.beta.is_finite() || r.beta <= T::zero() {
                return Err(ModelError::InvalidBeta {
                    id: r.id.clone(),
                    value: r.beta.to_f64_lossy(),
                });
            }
        }
        if !budget.is_finite() || budget <= T::zero() {
            return Err(ModelError::InvalidBudget(budget.to_f64_lossy()));
        }
        Ok(Scenario {
            locations,
            local_resources,
            central_resources,
            budget,
        })
    }

    pub fn locations(&self) -> &[Location<T>] {
        &self.locations
    }

    pub fn local_resources(&self) -> &[Resource<T>] {
        &self.local_resources
    }

    pub fn central_resources(&self) -> &[Resource<T>] {
        &self.central_resources
    }

    pub fn budget(&self) -> T {
        self.budget
    }

    pub fn alphas(&self) -> Vec<T> {
        self.locations.iter().map(|l| l.alpha).collect()
    }

    /// Number of allocation entries: `|N| * |L| + |C|`.
    pub fn dimension(&self) -> usize {
        self.locations.len() * self.local_resources.len() + self.central_resources.len()
    }

    /// Sum of beta over local and central resources.
    pub fn beta_sum(&self) -> T {
        self.local_beta_sum() + self.central_resources.iter().map(|r| r.beta).sum()
    }

    pub fn local_beta_sum(&self) -> T {
        self.local_resources.iter().map(|r| r.beta).sum()
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.id == id)
    }

    pub fn local_index(&self, id: &str) -> Option<usize> {
        self.local_resources.iter().position(|r| r.id == id)
    }

    pub fn central_index(&self, id: &str) -> Option<usize> {
        self.central_resources.iter().position(|r| r.id == id)
    }

    /// Allocation keys in flat order: every local resource of the first
    /// location, then of the second, ..., then the central resources.
    pub fn keys(&self) -> Vec<AllocationKey> {
        let mut keys = Vec::with_capacity(self.dimension());
        for location in 0..self.locations.len() {
            for resource in 0..self.local_resources.len() {
                keys.push(AllocationKey::Local { location, resource });
            }
        }
        keys.extend(
            (0..self.central_resources.len()).map(|resource| AllocationKey::Central { resource }),
        );
        keys
    }

    /// Flat index of a key.
    pub fn flat_index(&self, key: AllocationKey) -> usize {
        match key {
            AllocationKey::Local { location, resource } => {
                location * self.local_resources.len() + resource
            }
            AllocationKey::Central { resource } => {
                self.locations.len() * self.local_resources.len() + resource
            }
        }
    }

    /// Human readable key: `location/resource` for local entries, the
    /// resource id for central ones.
    pub fn key_label(&self, key: AllocationKey) -> String {
        match key {
            AllocationKey::Local { location, resource } => format!(
                "{}/{}",
                self.locations[location].id, self.local_resources[resource].id
            ),
            AllocationKey::Central { resource } => self.central_resources[resource].id.clone(),
        }
    }

    /// Beta of the resource behind every flat entry.
    pub fn flat_betas(&self) -> Vec<T> {
        self.keys()
            .into_iter()
            .map(|k| match k {
                AllocationKey::Local { resource, .. } => self.local_resources[resource].beta,
                AllocationKey::Central { resource } => self.central_resources[resource].beta,
            })
            .collect()
    }

    /// Same resources and budget with new attractiveness values.
    pub fn with_alphas(&self, alphas: &[T]) -> Result<Self, ModelError> {
        if alphas.len() != self.locations.len() {
            return Err(ModelError::ShapeMismatch {
                expected: self.locations.len(),
                found: alphas.len(),
            });
        }
        let locations = self
            .locations
            .iter()
            .zip(alphas)
            .map(|(l, &alpha)| Location::new(l.id.clone(), alpha))
            .collect();
        Scenario::new(
            locations,
            self.local_resources.clone(),
            self.central_resources.clone(),
            self.budget,
        )
    }

    pub fn with_budget(&self, budget: T) -> Result<Self, ModelError> {
        Scenario::new(
            self.locations.clone(),
            self.local_resources.clone(),
            self.central_resources.clone(),
            budget,
        )
    }
}

/// A strictly positive budget vector, stored in the scenario's flat order.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T> {
    locations: usize,
    local: usize,
    central: usize,
    values: Vec<T>,
}

impl<T: Scalar> Allocation<T> {
    /// Wraps a flat vector. Entries must clear the positivity floor.
    pub fn new(scenario: &Scenario<T>, values: Vec<T>) -> Result<Self, ModelError> {
        if values.len() != scenario.dimension() {
            return Err(ModelError::ShapeMismatch {
                expected: scenario.dimension(),
                found: values.len(),
            });
        }
        for (key, &v) in scenario.keys().into_iter().zip(&values) {
            if !v.is_finite() || v < T::POSITIVITY_FLOOR {
                return Err(ModelError::NonPositiveEntry {
                    key: scenario.key_label(key),
                    value: v.to_f64_lossy(),
                });
            }
        }
        Ok(Allocation {
            locations: scenario.locations.len(),
            local: scenario.local_resources.len(),
            central: scenario.central_resources.len(),
            values,
        })
    }

    /// Builds an allocation from id-keyed entries. The key set must match
    /// the scenario exactly.
    pub fn from_keyed<'a>(
        scenario: &Scenario<T>,
        local: impl IntoIterator<Item = (&'a str, &'a str, T)>,
        central: impl IntoIterator<Item = (&'a str, T)>,
    ) -> Result<Self, ModelError> {
        let mut slots: Vec<Option<T>> = vec![None; scenario.dimension()];
        let mut place =
            |key: Option<AllocationKey>, label: String, v: T| -> Result<(), ModelError> {
                let key = key.ok_or_else(|| ModelError::UnknownKey(label.clone()))?;
                let slot = &mut slots[scenario.flat_index(key)];
                if slot.is_some() {
                    return Err(ModelError::DuplicateId(label));
                }
                *slot = Some(v);
                Ok(())
            };
        for (loc, res, v) in local {
            let key = scenario
                .location_index(loc)
                .zip(scenario.local_index(res))
                .map(|(location, resource)| AllocationKey::Local { location, resource });
            place(key, format!("{loc}/{res}"), v)?;
        }
        for (res, v) in central {
            let key = scenario
                .central_index(res)
                .map(|resource| AllocationKey::Central { resource });
            place(key, res.to_string(), v)?;
        }
        let mut values = Vec::with_capacity(slots.len());
        for (key, slot) in scenario.keys().into_iter().zip(slots) {
            values.push(slot.ok_or_else(|| ModelError::MissingKey(scenario.key_label(key)))?);
        }
        Allocation::new(scenario, values)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn local(&self, location: usize, resource: usize) -> T {
        self.values[location * self.local + resource]
    }

    pub fn central(&self, resource: usize) -> T {
        self.values[self.locations * self.local + resource]
    }

    pub fn total(&self) -> T {
        self.values.iter().copied().sum()
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Allocation {
            values: self.values.iter().map(|&v| v * factor).collect(),
            ..*self
        }
    }

    fn matches(&self, scenario: &Scenario<T>) -> Result<(), ModelError> {
        let same = self.locations == scenario.locations.len()
            && self.local == scenario.local_resources.len()
            && self.central == scenario.central_resources.len();
        if same {
            Ok(())
        } else {
            Err(ModelError::ShapeMismatch {
                expected: scenario.dimension(),
                found: self.values.len(),
            })
        }
    }

    /// Fails unless the allocation fits the scenario and spends at most the
    /// budget (with a relative round-off slack).
    pub fn check_feasible(&self, scenario: &Scenario<T>) -> Result<(), ModelError> {
        self.matches(scenario)?;
        let total = self.total();
        let budget = scenario.budget();
        if total > budget + T::FEASIBILITY_SLACK * budget {
            return Err(ModelError::Infeasible {
                total: total.to_f64_lossy(),
                budget: budget.to_f64_lossy(),
            });
        }
        Ok(())
    }
}

impl<T: Scalar> fmt::Display for Allocation<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, v) in self.values.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Choice probabilities and objective values at one allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    /// Probability that each location (scenario order) is chosen.
    pub per_location: Vec<T>,
    /// Probability of the opt-out alternative.
    pub opt_out: T,
    /// Overall crime probability `P(x)`.
    pub overall: T,
    /// Surrogate objective `B(x)`; infinite if it exceeds the type's range.
    pub surrogate: T,
    /// `ln B(x)`, always finite.
    pub log_surrogate: T,
    /// Deterministic utilities `V_i(x)`.
    pub utilities: Vec<T>,
}

/// `V_i(x)` for every location. Each value is also `ln` of the location's
/// summand in `B(x)`.
pub fn utilities<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
) -> Result<Vec<T>, ModelError> {
    allocation.matches(scenario)?;
    let central: T = scenario
        .central_resources()
        .iter()
        .enumerate()
        .map(|(j, r)| r.beta * allocation.central(j).ln())
        .sum();
    let out = scenario
        .locations()
        .iter()
        .enumerate()
        .map(|(i, loc)| {
            let local: T = scenario
                .local_resources()
                .iter()
                .enumerate()
                .map(|(j, r)| r.beta * allocation.local(i, j).ln())
                .sum();
            loc.alpha - local - central
        })
        .collect();
    Ok(out)
}

pub fn deterministic_utility<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
    location: &str,
) -> Result<T, ModelError> {
    let i = scenario
        .location_index(location)
        .ok_or_else(|| ModelError::UnknownLocation(location.to_string()))?;
    Ok(utilities(scenario, allocation)?[i])
}

pub fn log_surrogate<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
) -> Result<T, ModelError> {
    Ok(log_sum_exp(&utilities(scenario, allocation)?))
}

/// `B(x) = sum_i exp(alpha_i) / (prod_C x_j^beta_j * prod_L x_ij^beta_j)`.
pub fn surrogate<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
) -> Result<T, ModelError> {
    Ok(log_surrogate(scenario, allocation)?.exp())
}

/// The surrogate computed literally as a sum of `exp(alpha) / prod x^beta`
/// quotients. Returns `None` whenever a log-term exceeds the linear-domain
/// limit or an intermediate product leaves the finite positive range.
pub fn product_form_surrogate<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
) -> Option<T> {
    let logs = utilities(scenario, allocation).ok()?;
    if logs.iter().any(|&l| l >= T::LINEAR_LOG_LIMIT) {
        return None;
    }
    let usable = |v: T| v.is_finite() && v > T::zero();
    let mut central = T::one();
    for (j, r) in scenario.central_resources().iter().enumerate() {
        central = central * allocation.central(j).powf(r.beta);
    }
    if !usable(central) {
        return None;
    }
    let mut total = T::zero();
    for (i, loc) in scenario.locations().iter().enumerate() {
        let mut denom = central;
        for (j, r) in scenario.local_resources().iter().enumerate() {
            denom = denom * allocation.local(i, j).powf(r.beta);
        }
        let numer = loc.alpha.exp();
        if !usable(denom) || !numer.is_finite() {
            return None;
        }
        total = total + numer / denom;
    }
    usable(total).then_some(total)
}

/// Full evaluation at a feasible allocation.
///
/// The overall probability is computed twice: as the sum of the logit
/// probabilities and as `B / (1 + B)` from the product form. A mismatch
/// beyond the type's route tolerance is reported as an error.
pub fn evaluate<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
) -> Result<Evaluation<T>, ModelError> {
    allocation.check_feasible(scenario)?;
    let utilities = utilities(scenario, allocation)?;
    let log_b = log_sum_exp(&utilities);
    // ln(1 + sum_m exp(V_m)), the log of the logit denominator
    let log_denominator = softplus(log_b);
    let per_location: Vec<T> = utilities
        .iter()
        .map(|&v| (v - log_denominator).exp())
        .collect();
    let opt_out = (-log_denominator).exp();
    let overall = logistic(log_b);

    let logit_overall: T = per_location.iter().copied().sum();
    let product_b = product_form_surrogate(scenario, allocation);
    let product_overall = product_b.map_or(overall, |b| b / (T::one() + b));
    for candidate in [logit_overall, product_overall] {
        if (candidate - overall).abs() > T::ROUTE_TOLERANCE * overall {
            return Err(ModelError::RouteMismatch {
                logit: logit_overall.to_f64_lossy(),
                product: product_overall.to_f64_lossy(),
            });
        }
    }

    Ok(Evaluation {
        per_location,
        opt_out,
        overall,
        surrogate: log_b.exp(),
        log_surrogate: log_b,
        utilities,
    })
}

/// Partial derivatives of `B` in flat key order.
///
/// For a local entry `dB/dx_ij = -beta_j * term_i / x_ij`; for a central
/// entry `dB/dx_j = -beta_j * B / x_j`.
pub fn gradient_surrogate<T: Scalar>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
) -> Result<Vec<T>, ModelError> {
    let logs = utilities(scenario, allocation)?;
    let log_b = log_sum_exp(&logs);
    let betas = scenario.flat_betas();
    let grad = scenario
        .keys()
        .into_iter()
        .zip(allocation.values())
        .zip(betas)
        .map(|((key, &x), beta)| {
            let log_share = match key {
                AllocationKey::Local { location, .. } => logs[location],
                AllocationKey::Central { .. } => log_b,
            };
            -beta * (log_share - x.ln()).exp()
        })
        .collect();
    Ok(grad)
}

/// Gradient of `B` divided by `|mean gradient|`, computed without forming
/// `B` itself so it stays finite when `B` overflows.
pub(crate) fn normalized_gradient<T: Scalar>(scenario: &Scenario<T>, log_values: &[T]) -> Vec<T> {
    let betas = scenario.flat_betas();
    let central: T = scenario
        .central_resources()
        .iter()
        .enumerate()
        .map(|(j, r)| {
            r.beta * log_values[scenario.flat_index(AllocationKey::Central { resource: j })]
        })
        .sum();
    let logs: Vec<T> = scenario
        .locations()
        .iter()
        .enumerate()
        .map(|(i, loc)| {
            let local: T = scenario
                .local_resources()
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    r.beta
                        * log_values[scenario.flat_index(AllocationKey::Local {
                            location: i,
                            resource: j,
                        })]
                })
                .sum();
            loc.alpha - local - central
        })
        .collect();
    let log_b = log_sum_exp(&logs);
    let log_mags: Vec<T> = scenario
        .keys()
        .into_iter()
        .zip(log_values)
        .zip(&betas)
        .map(|((key, &y), &beta)| {
            let log_share = match key {
                AllocationKey::Local { location, .. } => logs[location] - log_b,
                AllocationKey::Central { .. } => T::zero(),
            };
            beta.ln() + log_share - y
        })
        .collect();
    let n = T::from_usize(log_mags.len()).unwrap_or_else(T::one);
    let log_mean = log_sum_exp(&log_mags) - n.ln();
    log_mags.iter().map(|&m| -(m - log_mean).exp()).collect()
}
