use rayon::prelude::*;
use serde::Serialize;

use super::bank::{default_slack, TestBank};
use crate::error::{LabError, Result};
use crate::grid_resolvent::{GridFunction, NodeClass};
use crate::numerics::dot;
use crate::operator_core::generator::{generator_apply, GeneratorSpec};
use crate::operator_core::test_function::{ScalarField, TestFunction};
use crate::operator_core::BoundarySpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// A test function touching `u` at `node` where the defining inequality
/// fails by more than the slack.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    /// Active-node slot.
    pub node: usize,
    pub f: String,
    /// `lambda u(x0) - Af(x0) - h(x0)`.
    pub lhs: f64,
    /// Amount by which the inequality misses the slack.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViscosityReport {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
    #[serde(skip)]
    pub checked_count: usize,
    pub slack: f64,
    pub bank_size: usize,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl ViscosityReport {
    fn from_parts(violations: Vec<Violation>, checked_count: usize, slack: f64, bank_size: usize) -> Self {
        ViscosityReport {
            verdict: if violations.is_empty() { Verdict::Pass } else { Verdict::Fail },
            violations,
            checked_count,
            slack,
            bank_size,
            warnings: Vec::new(),
        }
    }

    pub fn pass(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Nodes with at least one violation, sorted and deduplicated.
    pub fn violating_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.violations.iter().map(|v| v.node).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Sub,
    Super,
}

impl Side {
    /// `+1` for maxima of `u - f`, `-1` for minima.
    fn sign(self) -> f64 {
        match self {
            Side::Sub => 1.0,
            Side::Super => -1.0,
        }
    }
}

fn check_inputs(u: &GridFunction, spec: &GeneratorSpec, lambda: f64, bank: &TestBank) -> Result<()> {
    if bank.is_empty() {
        return Err(LabError::Precondition("empty test-function bank".into()));
    }
    if !(lambda > 0.0) {
        return Err(LabError::Precondition(format!("lambda must be positive, got {lambda}")));
    }
    if spec.dim() != u.grid().dim() {
        return Err(LabError::Precondition("generator and grid dimensions differ".into()));
    }
    Ok(())
}

fn resolve_slack(u: &GridFunction, bank: &TestBank, slack: Option<f64>) -> Result<f64> {
    match slack {
        Some(s) if s >= 0.0 => Ok(s),
        Some(s) => Err(LabError::Precondition(format!("negative slack {s}"))),
        None => default_slack(u.grid(), bank),
    }
}

/// The `n` active slots with the largest `sign (u - f)`, largest first.
fn ranked(u: &GridFunction, f: &TestFunction, side: Side, n: usize) -> Vec<(usize, f64)> {
    let grid = u.grid();
    let mut x = vec![0.0; grid.dim()];
    let mut r: Vec<(usize, f64)> = (0..grid.n_active())
        .map(|s| {
            grid.coords_into(grid.node_id(s), &mut x);
            (s, side.sign() * (u.values()[s] - f.value(&x)))
        })
        .collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if n < r.len() {
        r.select_nth_unstable_by(n - 1, order);
        r.truncate(n);
    }
    r.sort_by(order);
    r
}

fn extremum(u: &GridFunction, f: &TestFunction, side: Side) -> usize {
    let grid = u.grid();
    let mut x = vec![0.0; grid.dim()];
    let mut best = (0, f64::NEG_INFINITY);
    for s in 0..grid.n_active() {
        grid.coords_into(grid.node_id(s), &mut x);
        let v = side.sign() * (u.values()[s] - f.value(&x));
        if v > best.1 {
            best = (s, v);
        }
    }
    best.0
}

fn interior_lhs(u: &GridFunction, spec: &GeneratorSpec, lambda: f64, h: &ScalarField, f: &TestFunction, s: usize) -> Result<f64> {
    let x = u.grid().point(s);
    let af = generator_apply(spec, f, &x)?.value;
    Ok(lambda * u.values()[s] - af - h.eval(&x))
}

/// Sign-adjusted excess: positive when the inequality is violated beyond slack.
fn excess(side: Side, lhs: f64, slack: f64) -> f64 {
    side.sign() * lhs - slack
}

fn interior_check(
    side: Side,
    u: &GridFunction,
    spec: &GeneratorSpec,
    lambda: f64,
    h: &ScalarField,
    bank: &TestBank,
    slack: Option<f64>,
) -> Result<ViscosityReport> {
    check_inputs(u, spec, lambda, bank)?;
    let slack = resolve_slack(u, bank, slack)?;
    let grid = u.grid();
    // Interior inequalities are only required at nodes carrying the full
    // generator row; extrema on boundary or truncated box faces are skipped.
    let results: Vec<Option<Violation>> = bank
        .functions()
        .par_iter()
        .map(|f| -> Result<Option<Option<Violation>>> {
            let s = extremum(u, f, side);
            if grid.class(s) != NodeClass::Interior {
                return Ok(None);
            }
            let lhs = interior_lhs(u, spec, lambda, h, f, s)?;
            let m = excess(side, lhs, slack);
            Ok(Some((m > 0.0).then(|| Violation { node: s, f: f.descriptor(), lhs, margin: m })))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let checked = results.len();
    Ok(ViscosityReport::from_parts(results.into_iter().flatten().collect(), checked, slack, bank.len()))
}

/// Touches `u` from above at the grid maximum of `u - f` for each bank member
/// and requires `lambda u - Af <= h + slack` there. `slack = None` uses
/// `10 (dx + dx max|Q|)`.
pub fn subsolution_check(
    u: &GridFunction,
    spec: &GeneratorSpec,
    lambda: f64,
    h: &ScalarField,
    bank: &TestBank,
    slack: Option<f64>,
) -> Result<ViscosityReport> {
    interior_check(Side::Sub, u, spec, lambda, h, bank, slack)
}

/// Mirror image of [`subsolution_check`]: minima of `u - f` and
/// `lambda u - Af >= h - slack`.
pub fn supersolution_check(
    u: &GridFunction,
    spec: &GeneratorSpec,
    lambda: f64,
    h: &ScalarField,
    bank: &TestBank,
    slack: Option<f64>,
) -> Result<ViscosityReport> {
    interior_check(Side::Super, u, spec, lambda, h, bank, slack)
}

/// Relaxed boundary condition at extrema that fall on boundary nodes. For the
/// subsolution side `min(lambda u - Af - h, min_k -B_k f) <= slack`, for the
/// supersolution side `max(lambda u - Af - h, max_k -B_k f) >= -slack`, with
/// `f` and the fields evaluated at the node's boundary anchor.
pub fn boundary_viscosity_check(
    u: &GridFunction,
    spec: &GeneratorSpec,
    bspec: &BoundarySpec,
    lambda: f64,
    h: &ScalarField,
    bank: &TestBank,
    slack: Option<f64>,
) -> Result<(ViscosityReport, ViscosityReport)> {
    check_inputs(u, spec, lambda, bank)?;
    let slack = resolve_slack(u, bank, slack)?;
    let grid = u.grid();
    if grid.counts().boundary == 0 {
        return Err(LabError::Precondition("grid has no boundary nodes".into()));
    }
    let d = grid.dim();
    let run = |side: Side| -> Result<ViscosityReport> {
        let results: Vec<Option<Violation>> = bank
            .functions()
            .par_iter()
            .map(|f| -> Result<Option<Option<Violation>>> {
                let s = extremum(u, f, side);
                if !matches!(grid.class(s), NodeClass::Boundary(_)) {
                    return Ok(None);
                }
                let a = grid.anchor(s).ok_or(LabError::Classification(s))?;
                let pieces = bspec.pieces_at(a);
                if pieces.is_empty() {
                    return Err(LabError::Classification(s));
                }
                let af = generator_apply(spec, f, a)?.value;
                let interior = lambda * u.values()[s] - af - h.eval(a);
                let mut g = vec![0.0; d];
                f.gradient(a, &mut g);
                let b_terms = pieces.iter().map(|&k| -dot(&g, &bspec.ell(k, a)));
                // The relaxed disjunction, oriented so that `> slack` is a failure.
                let worst = match side {
                    Side::Sub => b_terms.fold(interior, f64::min),
                    Side::Super => -b_terms.fold(interior, f64::max),
                };
                let m = worst - slack;
                Ok(Some((m > 0.0).then(|| Violation {
                    node: s,
                    f: f.descriptor(),
                    lhs: interior,
                    margin: m,
                })))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let checked = results.len();
        Ok(ViscosityReport::from_parts(results.into_iter().flatten().collect(), checked, slack, bank.len()))
    };
    Ok((run(Side::Sub)?, run(Side::Super)?))
}

/// Sequential form of the subsolution check. For each `f`, the discrete
/// maximizing sequence is the `n_top` nodes ranked by `u - f` that lie
/// within `slack` of the maximum; the check requires the smallest
/// `lambda u - Af - h` over those interior nodes to be at most `slack`.
/// Functions whose maximum falls off the interior are skipped, as in the
/// plain check.
pub fn sequential_viscosity_check(
    u: &GridFunction,
    spec: &GeneratorSpec,
    lambda: f64,
    h: &ScalarField,
    bank: &TestBank,
    n_top: usize,
    slack: Option<f64>,
) -> Result<ViscosityReport> {
    check_inputs(u, spec, lambda, bank)?;
    if n_top == 0 {
        return Err(LabError::Precondition("n_top must be at least 1".into()));
    }
    let slack = resolve_slack(u, bank, slack)?;
    let grid = u.grid();
    let mut warnings = Vec::new();
    let n = if n_top > grid.n_active() {
        warnings.push(format!("n_top {n_top} clipped to {} active nodes", grid.n_active()));
        grid.n_active()
    } else {
        n_top
    };
    let results: Vec<Option<Violation>> = bank
        .functions()
        .par_iter()
        .map(|f| -> Result<Option<Option<Violation>>> {
            let r = ranked(u, f, Side::Sub, n);
            if grid.class(r[0].0) != NodeClass::Interior {
                return Ok(None);
            }
            let top = r[0].1;
            let mut best: Option<(usize, f64)> = None;
            for &(s, v) in &r {
                if top - v > slack {
                    break;
                }
                if grid.class(s) != NodeClass::Interior {
                    continue;
                }
                let lhs = interior_lhs(u, spec, lambda, h, f, s)?;
                if best.is_none_or(|b| lhs < b.1) {
                    best = Some((s, lhs));
                }
            }
            let (s, lhs) = best.expect("top node is interior");
            let m = lhs - slack;
            Ok(Some((m > 0.0).then(|| Violation { node: s, f: f.descriptor(), lhs, margin: m })))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let checked = results.len();
    let mut report = ViscosityReport::from_parts(results.into_iter().flatten().collect(), checked, slack, bank.len());
    report.warnings = warnings;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub verdict: Verdict,
    /// `max (u_sub - u_super)` over active nodes.
    pub gap: f64,
    pub node: usize,
    pub point: Vec<f64>,
    pub tolerance: f64,
}

impl ComparisonReport {
    pub fn pass(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Passes iff `max (u_sub - u_super) <= tolerance`.
pub fn comparison_check(u_sub: &GridFunction, u_super: &GridFunction, tolerance: f64) -> Result<ComparisonReport> {
    if !u_sub.same_grid(u_super) {
        return Err(LabError::Precondition("comparison needs functions on a common grid".into()));
    }
    let (node, gap) = u_sub
        .values()
        .iter()
        .zip(u_super.values())
        .map(|(a, b)| a - b)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
    Ok(ComparisonReport {
        verdict: if gap <= tolerance { Verdict::Pass } else { Verdict::Fail },
        gap,
        node,
        point: u_sub.grid().point(node),
        tolerance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RangeResidual {
    /// `min_f max_x |lambda f - Af - h|`.
    pub residual: f64,
    pub best: Option<String>,
    /// Per-member residuals in bank order.
    pub per_function: Vec<f64>,
    pub points: usize,
}

/// How close `h` comes to the range of `lambda - A` over the bank, measured
/// in the max norm over `points`.
pub fn range_residual_check(
    bank: &TestBank,
    spec: &GeneratorSpec,
    lambda: f64,
    h: &ScalarField,
    points: &[Vec<f64>],
) -> Result<RangeResidual> {
    let per_function: Vec<f64> = bank
        .functions()
        .par_iter()
        .map(|f| {
            points.iter().try_fold(0.0f64, |acc, x| {
                let af = generator_apply(spec, f, x)?.value;
                Ok(acc.max((lambda * f.value(x) - af - h.eval(x)).abs()))
            })
        })
        .collect::<Result<_>>()?;
    let best = per_function
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, &r)| (i, r));
    Ok(RangeResidual {
        residual: best.map_or(f64::INFINITY, |b| b.1),
        best: best.map(|(i, _)| bank.functions()[i].descriptor()),
        per_function,
        points: points.len(),
    })
}
