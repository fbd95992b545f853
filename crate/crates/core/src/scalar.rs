//! Floating point scalar abstraction shared by every solver routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// A real scalar the model can be evaluated in: `f32` or `f64`.
///
/// The associated constants carry the numerical thresholds that depend on
/// the precision of the type.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Relative slack allowed on `sum(x) <= R`.
    const FEASIBILITY_SLACK: Self;
    /// Allocation entries below this value are rejected as nonpositive.
    const POSITIVITY_FLOOR: Self;
    /// Relative agreement required between the logit and product-form routes.
    const ROUTE_TOLERANCE: Self;
    /// Largest log-term for which the linear-domain product form is used.
    const LINEAR_LOG_LIMIT: Self;

    /// Converts an `f64` literal. Panics only for values the type cannot hold at all (NaN input is kept).
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const FEASIBILITY_SLACK: Self = 1e-9;
    const POSITIVITY_FLOOR: Self = 1e-12;
    const ROUTE_TOLERANCE: Self = 1e-12;
    const LINEAR_LOG_LIMIT: Self = 300.0;
}

impl Scalar for f32 {
    const FEASIBILITY_SLACK: Self = 1e-5;
    const POSITIVITY_FLOOR: Self = 1e-12;
    const ROUTE_TOLERANCE: Self = 1e-4;
    const LINEAR_LOG_LIMIT: Self = 80.0;
}

/// `ln(sum(exp(v)))`, stable for large and very negative inputs.
///
/// Returns negative infinity for an empty slice.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `ln(1 + exp(v))` without overflow.
pub fn softplus<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// `exp(v) / (1 + exp(v))` without overflow.
pub fn logistic<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Softmax of `values / temperature`, computed with max-subtraction.
pub fn softmax_tempered<T: Scalar>(values: &[T], temperature: T) -> Vec<T> {
    let scaled: Vec<T> = values.iter().map(|&v| v / temperature).collect();
    let lse = log_sum_exp(&scaled);
    scaled.iter().map(|&v| (v - lse).exp()).collect()
}
