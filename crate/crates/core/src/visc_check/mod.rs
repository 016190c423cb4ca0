//! Discrete viscosity sub/supersolution checks, comparison verdicts and
//! range residuals.

pub mod bank;
pub mod checks;

pub use bank::{default_slack, TestBank};
pub use checks::{
    boundary_viscosity_check, comparison_check, range_residual_check, sequential_viscosity_check,
    subsolution_check, supersolution_check, ComparisonReport, RangeResidual, Verdict, Violation,
    ViscosityReport,
};
