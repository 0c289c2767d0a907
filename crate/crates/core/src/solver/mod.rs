//! Damped Newton–Krylov solve of the split equation.

pub mod krylov;
pub mod newton;
pub mod problem;

pub use krylov::{bicgstab, KrylovOptions, KrylovOutcome};
pub use newton::{newton_run, newton_solve, FieldSolution, SolveStatus, SolverOptions, StepKind, StepLog};
pub use problem::{
    energy, energy_change, jacobian_apply, linear_coefficient, residual, Problem, ProblemOptions, SourceMode,
};
