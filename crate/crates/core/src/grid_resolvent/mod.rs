//! Monotone finite-difference solves of `lambda u - A u = h` with oblique
//! boundary rows, and structural checks on the discrete operator.

pub mod assemble;
pub mod checks;
pub mod grid;
pub mod solve;

pub use assemble::{assemble, AssembleOptions, DiscreteOperator, MMatrixFlags, RowKind};
pub use checks::{discrete_dissipativity_test, mmatrix_check, DissipativityReport, DissipativitySample, MMatrixReport};
pub use grid::{build_grid, Domain, Grid, GridFunction, NodeClass, NodeCounts, Resolution, Stencil};
pub use solve::{solve_resolvent, solve_resolvent_with, SolveSummary, Solution, SolverOptions};
