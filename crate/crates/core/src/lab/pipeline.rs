use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Resolved, ScenarioConfig};
use super::registry::{Payoff, Registry};
use crate::error::{LabError, Result};
use crate::grid_resolvent::{
    assemble, build_grid, mmatrix_check, solve_resolvent_with, AssembleOptions, Grid, GridFunction, Resolution,
    SolverOptions,
};
use crate::mc_verify::{
    discounted_payoffs, extended_pair_test, laplace_match_test, payoff_horizon, BiasModel, McEstimate, PayoffOptions,
};
use crate::operator_core::test_function::ScalarField;
use crate::operator_core::{validate_jump_conditions, validate_reflection_geometry};
use crate::path_sim::{write_paths_csv, Ensemble, InitialLaw, SimConfig, Simulator};
use crate::visc_check::{
    boundary_viscosity_check, sequential_viscosity_check, subsolution_check, supersolution_check, TestBank,
};

/// A pipeline failure together with the stage that raised it.
#[derive(Debug, Clone, PartialEq)]
pub struct StageError {
    pub stage: &'static str,
    pub error: LabError,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage '{}': {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    /// 2 for configuration problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        if self.stage == "validate" || matches!(self.error, LabError::Config(_)) {
            2
        } else {
            3
        }
    }
}

trait Staged<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Staged<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Outcome of one enabled check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub lambda: Option<f64>,
    pub pass: bool,
    pub statistic: f64,
    pub tolerance: f64,
    pub detail: Value,
}

impl CheckOutcome {
    /// `|statistic| / tolerance`, used to rank failures.
    pub fn severity(&self) -> f64 {
        if self.tolerance > 0.0 {
            self.statistic.abs() / self.tolerance
        } else if self.pass {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// One `(lambda, starting point)` row of the sweep table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub x: Vec<f64>,
    pub u_grid: f64,
    pub u_error: f64,
    pub exact: Option<f64>,
    pub mc: Option<McEstimate>,
    pub pass: Option<bool>,
    pub laplace: Option<(f64, f64, bool)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Holds,
    Violated,
}

/// The three-way agreement between grid solve, Monte Carlo payoff and the
/// extended-pair martingale statistic, plus the Laplace matches.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Roundtrip {
    pub verdict: Mechanism,
    pub worst: Option<CheckOutcome>,
    pub components: usize,
}

impl Roundtrip {
    pub fn message(&self) -> &'static str {
        match self.verdict {
            Mechanism::Holds => "mechanism holds",
            Mechanism::Violated => "mechanism violated",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub scenario: String,
    pub validation: Value,
    pub checks: Vec<CheckOutcome>,
    pub sweep: Vec<SweepRow>,
    pub roundtrip: Roundtrip,
    pub dim: usize,
    u_grid_csv: String,
    paths_csv: Option<String>,
    inputs: Value,
}

impl RunReport {
    /// True iff every enabled check passed.
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass() {
            0
        } else {
            1
        }
    }

    pub fn check(&self, name: &str) -> impl Iterator<Item = &CheckOutcome> {
        let name = name.to_string();
        self.checks.iter().filter(move |c| c.name == name)
    }

    pub fn summary(&self, timestamp: u64) -> Value {
        json!({
            "scenario": self.scenario,
            "timestamp": timestamp,
            "inputs": self.inputs,
            "validation": self.validation,
            "checks": self.checks,
            "pde_vs_mc": self.sweep.iter().filter_map(|r| r.mc.as_ref().map(|m| json!({
                "lambda": r.lambda,
                "x": r.x,
                "gap": m.value - r.u_grid,
                "tolerance": m.tolerance() + r.u_error,
                "pass": r.pass,
            }))).collect::<Vec<_>>(),
            "roundtrip": {
                "verdict": self.roundtrip.message(),
                "worst": self.roundtrip.worst,
            },
            "pass": self.pass(),
        })
    }

    pub fn lambda_sweep_csv(&self) -> String {
        let mut s = String::from("lambda");
        for i in 1..=self.dim {
            let _ = write!(s, ",x{i}");
        }
        s.push_str(",u_grid,u_error,exact,mc_value,mc_stderr,mc_tolerance,pde_vs_mc_pass,laplace_dt,laplace_half_dt,laplace_pass\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.sweep {
            let _ = write!(s, "{}", r.lambda);
            for v in &r.x {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(
                s,
                ",{},{},{},{},{},{},{},{},{},{}",
                r.u_grid,
                r.u_error,
                opt(r.exact),
                opt(r.mc.as_ref().map(|m| m.value)),
                opt(r.mc.as_ref().map(|m| m.stderr)),
                opt(r.mc.as_ref().map(|m| m.tolerance() + r.u_error)),
                r.pass.map(|p| p.to_string()).unwrap_or_default(),
                opt(r.laplace.map(|l| l.0)),
                opt(r.laplace.map(|l| l.1)),
                r.laplace.map(|l| l.2.to_string()).unwrap_or_default(),
            );
        }
        s
    }

    pub fn u_grid_csv(&self) -> &str {
        &self.u_grid_csv
    }

    pub fn paths_csv(&self) -> Option<&str> {
        self.paths_csv.as_deref()
    }

    /// Writes `summary.json`, `lambda_sweep.csv`, `u_grid.csv` and, when
    /// requested, `paths.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let summary = serde_json::to_string_pretty(&self.summary(ts)).expect("summary serializes");
        std::fs::write(dir.join("summary.json"), summary + "\n")?;
        std::fs::write(dir.join("lambda_sweep.csv"), self.lambda_sweep_csv())?;
        std::fs::write(dir.join("u_grid.csv"), &self.u_grid_csv)?;
        if let Some(p) = &self.paths_csv {
            std::fs::write(dir.join("paths.csv"), p)?;
        }
        Ok(())
    }
}

struct GridStage {
    u: GridFunction,
    u_error: f64,
    h: ScalarField,
}

/// Sup of `|h|` for horizon planning: the declared bound, else twice the
/// largest value on the grid.
fn sup_for_planning(h: &ScalarField, grid: &Grid) -> f64 {
    h.sup_bound()
        .unwrap_or_else(|| 2.0 * grid.points().map(|x| h.eval(&x).abs()).fold(0.0, f64::max))
}

fn solve_on(r: &Resolved, spacing: f64, lambda: f64, h: &ScalarField) -> Result<(GridFunction, Vec<CheckOutcome>)> {
    let sc = &r.scenario;
    let grid = Arc::new(build_grid(&sc.domain, Resolution::Spacing(spacing))?);
    let op = assemble(&sc.spec, grid.clone(), lambda, sc.boundary.as_ref(), &AssembleOptions::default())?;
    let hg = GridFunction::from_fn(grid, |x| h.eval(x))?;
    let sol = solve_resolvent_with(&op, &hg, &SolverOptions { tol: r.tolerances.solver, ..SolverOptions::default() })?;
    let mm = mmatrix_check(&op);
    let bound = hg.max_abs() / lambda;
    let excess = sol.u.max_abs() - bound;
    let checks = vec![
        CheckOutcome {
            name: "mmatrix".into(),
            lambda: Some(lambda),
            pass: mm.pass,
            statistic: (mm.sign_violations.len() + mm.dominance_violations.len()) as f64,
            tolerance: 0.0,
            detail: json!({ "rows": mm.rows_checked }),
        },
        CheckOutcome {
            name: "resolvent_bound".into(),
            lambda: Some(lambda),
            pass: excess <= 1e-8 * bound.max(1.0),
            statistic: sol.u.max_abs(),
            tolerance: bound,
            detail: json!({ "residual": sol.residual, "sweeps": sol.sweeps, "warnings": sol.warnings }),
        },
    ];
    Ok((sol.u, checks))
}

fn grid_stage(r: &Resolved, lambda: f64, checks: &mut Vec<CheckOutcome>) -> Result<GridStage> {
    let h = r.payoff.field(&r.scenario.spec, lambda)?;
    let (u, c) = solve_on(r, r.spacing, lambda, &h)?;
    checks.extend(c);
    // Error estimate from one coarsening: for a first-order scheme the
    // fine-coarse difference is about the fine error; doubled for safety.
    let (coarse, _) = solve_on(r, 2.0 * r.spacing, lambda, &h)?;
    let cg = coarse.grid().clone();
    let mut diff: f64 = 0.0;
    for (s, x) in cg.points().enumerate() {
        if let Ok(v) = u.interpolate(&x) {
            diff = diff.max((v - coarse.values()[s]).abs());
        }
    }
    Ok(GridStage { u, u_error: 2.0 * diff, h })
}

fn simulator(r: &Resolved, dt: f64, horizon: f64) -> Result<Arc<Simulator>> {
    let sc = &r.scenario;
    let cfg = SimConfig::new(horizon, dt).with_eps_cut(sc.eps_cut);
    Ok(Arc::new(Simulator::new(sc.spec.clone(), sc.boundary.clone(), cfg)?))
}

/// Horizon long enough for every `(h, lambda)` at step `dt`.
fn plan_horizon(r: &Resolved, dt: f64, fields: &[(f64, ScalarField)], grid: &Grid) -> Result<f64> {
    let probe = simulator(r, dt, 0.0)?;
    let opts = PayoffOptions::default();
    Ok(fields
        .iter()
        .map(|(l, h)| {
            payoff_horizon(dt, probe.is_reflected(), probe.small_jump_variance(), sup_for_planning(h, grid), *l, &opts)
        })
        .fold(0.0, f64::max))
}

/// Discounted payoffs for every lambda on one ensemble; `lambda`-dependent
/// payoffs are estimated one lambda at a time on the same paths.
fn payoffs(ens: &Ensemble, fields: &[(f64, ScalarField)], shared: bool) -> Result<Vec<McEstimate>> {
    let opts = PayoffOptions::default();
    if shared {
        let lambdas: Vec<f64> = fields.iter().map(|f| f.0).collect();
        let mut v = discounted_payoffs(ens, std::slice::from_ref(&fields[0].1), &lambdas, &opts)?;
        Ok(v.remove(0))
    } else {
        fields
            .iter()
            .map(|(l, h)| Ok(discounted_payoffs(ens, std::slice::from_ref(h), &[*l], &opts)?.remove(0).remove(0)))
            .collect()
    }
}

fn mc_fields(r: &Resolved) -> Result<Vec<(f64, ScalarField)>> {
    r.lambdas.iter().map(|&l| Ok((l, r.payoff_mc.field(&r.scenario.spec, l)?))).collect()
}

fn probe_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1))
}

/// Runs validate, simulate, discounted payoff, assemble and solve, viscosity
/// checks, the extended-pair test and Laplace matching at `dt` vs `dt/2`.
pub fn run_scenario(cfg: &ScenarioConfig, registry: &Registry) -> std::result::Result<RunReport, StageError> {
    let r = cfg.resolve(registry).stage("validate")?;
    run_resolved(&r).map(|mut rep| {
        rep.inputs = serde_json::to_value(cfg).unwrap_or(Value::Null);
        rep
    })
}

pub fn run_resolved(r: &Resolved) -> std::result::Result<RunReport, StageError> {
    let sc = &r.scenario;
    let d = sc.dim();
    let (lo, hi) = match &sc.domain {
        crate::grid_resolvent::Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
        crate::grid_resolvent::Domain::Region(b) => (b.bbox().0.to_vec(), b.bbox().1.to_vec()),
    };

    // validate
    let gen = sc.spec.validate(&lo, &hi, 200, r.seed);
    if !gen.psd_pass {
        return Err(StageError {
            stage: "validate",
            error: LabError::Config(format!("diffusion matrix is not PSD (min eigenvalue {})", gen.min_eigenvalue)),
        });
    }
    let mut validation = json!({ "generator": gen });
    if let Some(b) = &sc.boundary {
        let g = validate_reflection_geometry(b, 400).stage("validate")?;
        if !g.pass {
            return Err(StageError {
                stage: "validate",
                error: LabError::Geometry("reflection geometry check failed".into()),
            });
        }
        validation["geometry"] = serde_json::to_value(&g).unwrap_or(Value::Null);
    }
    if let Some(j) = sc.spec.jump() {
        let jr = validate_jump_conditions(j).stage("validate")?;
        if !jr.pass {
            return Err(StageError {
                stage: "validate",
                error: LabError::Integrability(jr.diagnostic.clone().unwrap_or_default()),
            });
        }
        validation["jump"] = serde_json::to_value(&jr).unwrap_or(Value::Null);
    }

    let mut checks = Vec::new();

    // assemble + solve
    let mut solved = Vec::with_capacity(r.lambdas.len());
    let mut u_csv = String::from("lambda");
    for i in 1..=d {
        let _ = write!(u_csv, ",i{i}");
    }
    for i in 1..=d {
        let _ = write!(u_csv, ",x{i}");
    }
    u_csv.push_str(",u\n");
    for &lambda in &r.lambdas {
        let gs = grid_stage(r, lambda, &mut checks).stage("solve")?;
        let grid = gs.u.grid();
        for s in 0..grid.n_active() {
            let id = grid.node_id(s);
            let _ = write!(u_csv, "{lambda}");
            for i in grid.multi_index(id) {
                let _ = write!(u_csv, ",{i}");
            }
            for v in grid.point(s) {
                let _ = write!(u_csv, ",{v}");
            }
            let _ = writeln!(u_csv, ",{}", gs.u.values()[s]);
        }
        solved.push(gs);
    }
    let grid = solved[0].u.grid().clone();

    let mut sweep = Vec::new();
    for (gs, &lambda) in solved.iter().zip(&r.lambdas) {
        for x in &r.probes {
            let u_grid = gs.u.interpolate(x).stage("solve")?;
            sweep.push(SweepRow {
                lambda,
                x: x.clone(),
                u_grid,
                u_error: gs.u_error,
                exact: sc.oracle.as_ref().map(|o| o(x, lambda)),
                mc: None,
                pass: None,
                laplace: None,
            });
        }
    }

    let fields = mc_fields(r).stage("simulate")?;
    let shared = matches!(r.payoff_mc, Payoff::Field(_));
    let mut paths_csv = None;

    // simulate + discounted payoff
    if r.checks.mc {
        let horizon = plan_horizon(r, r.dt, &fields, &grid).stage("simulate")?;
        let sim = simulator(r, r.dt, horizon).stage("simulate")?;
        let np = r.probes.len();
        for (k, x) in r.probes.iter().enumerate() {
            let ens = Ensemble::new(sim.clone(), InitialLaw::Point(x.clone()), probe_seed(r.seed, k), r.n_paths)
                .stage("simulate")?
                .with_label(&sc.id);
            if k == 0 && r.export_paths > 0 {
                let paths = ens.take(r.export_paths.min(r.n_paths)).stage("simulate")?;
                let mut buf = Vec::new();
                write_paths_csv(&mut buf, &paths).map_err(LabError::from).stage("simulate")?;
                paths_csv = Some(String::from_utf8(buf).expect("csv is utf-8"));
            }
            let est = payoffs(&ens, &fields, shared).stage("discounted_payoff")?;
            for (j, e) in est.into_iter().enumerate() {
                let row = &mut sweep[j * np + k];
                let gap = e.value - row.u_grid;
                let tol = e.tolerance() + row.u_error;
                let pass = gap.abs() <= tol;
                checks.push(CheckOutcome {
                    name: "pde_vs_mc".into(),
                    lambda: Some(row.lambda),
                    pass,
                    statistic: gap,
                    tolerance: tol,
                    detail: json!({ "x": x, "mc": e.value, "stderr": e.stderr, "u_grid": row.u_grid }),
                });
                row.pass = Some(pass);
                row.mc = Some(e);
            }
        }
    }

    // viscosity checks
    if r.checks.viscosity {
        for (gs, &lambda) in solved.iter().zip(&r.lambdas) {
            let bank = TestBank::touching(&gs.u, 1.0, 1, 0.05, r.seed);
            let slack = r.tolerances.viscosity_slack;
            let mut push = |name: &str, rep: crate::visc_check::ViscosityReport| {
                let worst = rep.violations.iter().map(|v| v.margin).fold(0.0, f64::max);
                checks.push(CheckOutcome {
                    name: name.into(),
                    lambda: Some(lambda),
                    pass: rep.pass(),
                    statistic: worst + rep.slack,
                    tolerance: rep.slack,
                    detail: json!({
                        "checked": rep.checked_count,
                        "bank_size": rep.bank_size,
                        "violations": rep.violations.len(),
                        "nodes": rep.violating_nodes(),
                    }),
                });
            };
            let stage = "viscosity";
            push("subsolution", subsolution_check(&gs.u, &sc.spec, lambda, &gs.h, &bank, slack).stage(stage)?);
            push("supersolution", supersolution_check(&gs.u, &sc.spec, lambda, &gs.h, &bank, slack).stage(stage)?);
            push("sequential", sequential_viscosity_check(&gs.u, &sc.spec, lambda, &gs.h, &bank, 5, slack).stage(stage)?);
            if let Some(b) = &sc.boundary {
                let (bs, bp) = boundary_viscosity_check(&gs.u, &sc.spec, b, lambda, &gs.h, &bank, slack).stage(stage)?;
                push("boundary_sub", bs);
                push("boundary_super", bp);
            }
        }
    }

    // extended pair
    if r.checks.extended_pair {
        let (t, dr) = (0.5, 0.5);
        let sim = simulator(r, r.dt, t + dr).stage("extended_pair")?;
        let ens = Ensemble::new(sim, InitialLaw::Cycle(r.probes.clone()), probe_seed(r.seed, 1000), r.n_paths)
            .stage("extended_pair")?
            .with_label(&sc.id);
        for ((gs, &lambda), (_, h_mc)) in solved.iter().zip(&r.lambdas).zip(&fields) {
            let rep = extended_pair_test(&ens, &gs.u, h_mc, lambda, t, dr, gs.u_error, &BiasModel::default())
                .stage("extended_pair")?;
            checks.push(CheckOutcome {
                name: "extended_pair".into(),
                lambda: Some(lambda),
                pass: rep.pass,
                statistic: rep.statistic,
                tolerance: 3.0 * rep.stderr + rep.bias_budget,
                detail: json!({ "stderr": rep.stderr, "bias_budget": rep.bias_budget }),
            });
        }
    }

    // Laplace matching, dt vs dt/2
    if r.checks.laplace {
        let stage = "laplace";
        let half = 0.5 * r.dt;
        let make = |dt: f64, salt: usize| -> Result<Ensemble> {
            let horizon = plan_horizon(r, dt, &fields, &grid)?;
            let sim = simulator(r, dt, horizon)?;
            Ok(Ensemble::new(sim, InitialLaw::Cycle(r.probes.clone()), probe_seed(r.seed, salt), r.n_paths)?
                .with_label(format!("{} dt={dt}", sc.id)))
        };
        let a = make(r.dt, 2000).stage(stage)?;
        let b = make(half, 3000).stage(stage)?;
        let opts = PayoffOptions::default();
        let rows = if shared {
            laplace_match_test(&a, &b, std::slice::from_ref(&fields[0].1), &r.lambdas, &opts).stage(stage)?.rows
        } else {
            let mut rows = Vec::new();
            for (l, h) in &fields {
                rows.extend(laplace_match_test(&a, &b, std::slice::from_ref(h), &[*l], &opts).stage(stage)?.rows);
            }
            rows
        };
        for row in rows {
            for sr in sweep.iter_mut().filter(|s| s.lambda == row.lambda) {
                sr.laplace = Some((row.value_a, row.value_b, row.pass));
            }
            checks.push(CheckOutcome {
                name: "laplace".into(),
                lambda: Some(row.lambda),
                pass: row.pass,
                statistic: row.value_a - row.value_b,
                tolerance: row.tolerance,
                detail: json!({ "h": row.h, "stderr_a": row.stderr_a, "stderr_b": row.stderr_b }),
            });
        }
    }

    let roundtrip = roundtrip_report(&checks);
    Ok(RunReport {
        scenario: sc.id.clone(),
        validation,
        checks,
        sweep,
        roundtrip,
        dim: d,
        u_grid_csv: u_csv,
        paths_csv,
        inputs: Value::Null,
    })
}

/// Consolidates the grid/Monte Carlo, extended-pair and Laplace checks into
/// one verdict naming the worst failing component.
pub fn roundtrip_report(checks: &[CheckOutcome]) -> Roundtrip {
    let parts: Vec<&CheckOutcome> = checks
        .iter()
        .filter(|c| matches!(c.name.as_str(), "pde_vs_mc" | "extended_pair" | "laplace"))
        .collect();
    let worst = parts
        .iter()
        .filter(|c| !c.pass)
        .max_by(|a, b| a.severity().total_cmp(&b.severity()))
        .map(|c| (*c).clone());
    Roundtrip {
        verdict: if worst.is_none() { Mechanism::Holds } else { Mechanism::Violated },
        worst,
        components: parts.len(),
    }
}
