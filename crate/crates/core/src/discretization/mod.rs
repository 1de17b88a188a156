//! P1 finite-element assembly of the Poisson equation, EAFE assembly of the
//! carrier continuity equations and the sparse linear-solve layer.

mod assembly;
pub mod bernoulli;
pub mod solve;
pub mod sparse;

pub use assembly::Discretization;
pub use bernoulli::{bernoulli, bernoulli_checked};
pub use solve::{solve, LinearSolveReport, SolverKind, SolverOptions};
pub use sparse::{CsrMatrix, SparseSystem};
