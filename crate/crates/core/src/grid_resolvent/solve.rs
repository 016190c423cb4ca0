use serde::Serialize;

use super::assemble::DiscreteOperator;
use super::grid::GridFunction;
use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Target: residual max-norm `<= tol * lambda * |h|`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Relaxation factor; 1 is Gauss-Seidel. `None` picks
    /// `2 / (1 + sin(pi / n))` from the largest axis node count and falls back
    /// to 1 if the residual stalls.
    pub omega: Option<f64>,
    /// Sweeps between residual evaluations.
    pub check_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_sweeps: 5_000_000,
            omega: None,
            check_every: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: GridFunction,
    pub residual: f64,
    pub sweeps: usize,
    /// Residual max-norm at every check.
    pub history: Vec<f64>,
    /// The operator passed the M-matrix scan.
    pub certified: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub residual: f64,
    pub sweeps: usize,
    pub certified: bool,
    pub warnings: Vec<String>,
}

impl Solution {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            residual: self.residual,
            sweeps: self.sweeps,
            certified: self.certified,
            warnings: self.warnings.clone(),
        }
    }
}

fn residual_norm(op: &DiscreteOperator, u: &[f64], rhs: &[f64]) -> f64 {
    op.apply(u)
        .iter()
        .zip(rhs)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

pub fn solve_resolvent(op: &DiscreteOperator, h: &GridFunction, tol: f64) -> Result<Solution> {
    solve_resolvent_with(op, h, &SolverOptions { tol, ..SolverOptions::default() })
}

/// Relaxation sweeps for `op u = h` until the residual target is met.
pub fn solve_resolvent_with(op: &DiscreteOperator, h: &GridFunction, opts: &SolverOptions) -> Result<Solution> {
    if h.values().len() != op.n_rows() {
        return Err(LabError::Precondition(format!(
            "right-hand side has {} values, operator has {} rows",
            h.values().len(),
            op.n_rows()
        )));
    }
    if !(opts.tol > 0.0) || opts.omega.is_some_and(|w| !(w > 0.0 && w < 2.0)) {
        return Err(LabError::Config("solver needs tol > 0 and 0 < omega < 2".into()));
    }
    let auto = opts.omega.is_none();
    let mut omega = opts.omega.unwrap_or_else(|| {
        let n = h.grid().nodes_per_axis().iter().copied().max().unwrap_or(1) as f64;
        (2.0 / (1.0 + (std::f64::consts::PI / n).sin())).clamp(1.0, 1.97)
    });
    let mut stalled = 0;
    let certified = op.flags().certified();
    let mut warnings = Vec::new();
    if !certified {
        warnings.push("operator failed the M-matrix scan; the solution is not certified".into());
    }
    let rhs = op.rhs(h);
    let target = opts.tol * op.lambda() * h.max_abs();
    let mut u = vec![0.0; op.n_rows()];
    let mut history = Vec::new();
    let mut residual = residual_norm(op, &u, &rhs);
    history.push(residual);
    let mut sweeps = 0;
    let every = opts.check_every.max(1);
    let initial = residual;
    let mut best = residual;
    while !(residual <= target) {
        if sweeps >= opts.max_sweeps || !residual.is_finite() {
            return Err(LabError::Solver {
                iterations: sweeps,
                residual,
                history,
            });
        }
        for _ in 0..every {
            op.sweep(&mut u, &rhs, omega);
        }
        sweeps += every;
        residual = residual_norm(op, &u, &rhs);
        history.push(residual);
        // Over-relaxation amplifies rounding, so near the floor the residual
        // oscillates instead of rising; count checks since the best one.
        if residual < 0.99 * best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
        }
        let blown = !residual.is_finite() || residual > 1e3 * initial.max(target);
        if auto && omega > 1.0 && (stalled >= 20 || blown) {
            warnings.push(format!("over-relaxation {omega:.3} stalled; continuing with Gauss-Seidel"));
            omega = 1.0;
            stalled = 0;
            best = f64::INFINITY;
            if blown {
                u.iter_mut().for_each(|v| *v = 0.0);
                residual = residual_norm(op, &u, &rhs);
            }
        }
    }
    Ok(Solution {
        u: GridFunction::new(h.grid().clone(), u)?,
        residual,
        sweeps,
        history,
        certified,
        warnings,
    })
}
