//! Regression-based backward solver for BSDEs driven by Wiener–Poisson noise.

pub mod regression;
mod scenario;
mod solver;

pub use regression::{regress, ConditionalExpectation, RegressionBasis, RegressionDiagnostics};
pub use scenario::{Driver, Scenario, Terminal};
pub(crate) use solver::resolvent_in_place;
pub use solver::{
    backward_pass, backward_solve_unconstrained, backward_step, BackwardSolution, StepOutput,
    StepView,
};
