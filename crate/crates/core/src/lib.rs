//! Budget allocation over central and local protective resources when
//! offenders choose a location by a multinomial logit model.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below name the concrete instantiations. The CLI and
//! the scenario file format work in `f64`.

pub mod allocator;
pub mod cli;
pub mod experiments;
pub mod model;
pub mod scalar;
pub mod scenario_file;
pub mod simulate;
pub mod solver;

pub use allocator::{
    best_gamma, celp_rule, cle_rule, default_gamma_grid, solve_closed_form, GammaChoice,
    HeuristicParams, Rule, RuleError, SolveReport,
};
pub use model::{
    deterministic_utility, evaluate, gradient_surrogate, surrogate, Allocation, AllocationKey,
    Evaluation, Location, ModelError, Resource, Scenario,
};
pub use scalar::Scalar;
pub use simulate::{sample_choices, ChoiceSample};
pub use solver::{kkt_residual, solve_numerical, InitialPoint, OracleConfig, SolverError};

pub type Scenario64 = Scenario<f64>;
pub type Allocation64 = Allocation<f64>;
pub type Evaluation64 = Evaluation<f64>;
pub type SolveReport64 = SolveReport<f64>;
pub type OracleConfig64 = OracleConfig<f64>;

pub type Scenario32 = Scenario<f32>;
pub type Allocation32 = Allocation<f32>;
pub type Evaluation32 = Evaluation<f32>;
pub type SolveReport32 = SolveReport<f32>;
pub type OracleConfig32 = OracleConfig<f32>;
