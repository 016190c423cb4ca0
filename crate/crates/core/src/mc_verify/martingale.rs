use serde_json::json;

use super::estimate::{mean_stderr, tail_bound, BiasModel, TestReport};
use super::payoff::{Discounter, PayoffOptions};
use crate::error::{LabError, Result};
use crate::grid_resolvent::GridFunction;
use crate::numerics::dot;
use crate::operator_core::generator::generator_apply;
use crate::operator_core::test_function::{ScalarField, TestFunction};
use crate::path_sim::{Ensemble, LocalTimeIncrement, PathObserver};

/// Grid index of time `t`, rejecting times past the horizon.
fn grid_index(ens: &Ensemble, t: f64, what: &str) -> Result<usize> {
    let dt = ens.dt();
    if !(t >= 0.0) || t > ens.horizon() + 1e-9 * dt {
        return Err(LabError::Precondition(format!(
            "{what} = {t} lies outside [0, {}]",
            ens.horizon()
        )));
    }
    Ok((t / dt).round() as usize)
}

struct IncrementObserver<'a> {
    f: &'a ScalarField,
    g: &'a ScalarField,
    weights: &'a [(usize, ScalarField)],
    start: usize,
    end: usize,
    dt: f64,
    f_start: f64,
    f_end: f64,
    integral: f64,
    g_prev: f64,
    weight: f64,
    weight_max: Vec<f64>,
}

impl IncrementObserver<'_> {
    fn visit(&mut self, index: usize, x: &[f64]) -> bool {
        for (k, (i, h)) in self.weights.iter().enumerate() {
            if *i == index {
                let v = h.eval(x);
                self.weight *= v;
                self.weight_max[k] = self.weight_max[k].max(v.abs());
            }
        }
        if index >= self.start {
            let gv = self.g.eval(x);
            if index == self.start {
                self.f_start = self.f.eval(x);
            } else {
                self.integral += 0.5 * (self.g_prev + gv) * self.dt;
            }
            self.g_prev = gv;
            if index == self.end {
                self.f_end = self.f.eval(x);
                return false;
            }
        }
        true
    }
}

impl PathObserver for IncrementObserver<'_> {
    fn start(&mut self, x0: &[f64]) {
        self.visit(0, x0);
    }

    fn step(&mut self, i: usize, x: &[f64], _gamma: &[f64], _touched: bool) -> bool {
        self.visit(i + 1, x)
    }
}

/// Tests `E[(f(X_{t+r}) - f(X_t) - int_t^{t+r} g(X_s) ds) prod_i h_i(X_{t_i})] = 0`,
/// the martingale property of `f(X) - int g(X)` against past-measurable weights.
/// The time integral is a trapezoid sum on the path grid.
pub fn martingale_increment_test(
    ens: &Ensemble,
    f: &ScalarField,
    g: &ScalarField,
    t: f64,
    r: f64,
    weights: &[(f64, ScalarField)],
    bias: &BiasModel,
) -> Result<TestReport> {
    if ens.n_paths() == 0 {
        return Err(LabError::Precondition("empty ensemble".into()));
    }
    if !(r >= 0.0) {
        return Err(LabError::Precondition(format!("increment length r = {r} must be >= 0")));
    }
    let start = grid_index(ens, t, "t")?;
    let end = grid_index(ens, t + r, "t + r")?;
    let mut w = Vec::with_capacity(weights.len());
    for (ti, h) in weights {
        if *ti > t + 1e-12 {
            return Err(LabError::Precondition(format!("weight time {ti} exceeds t = {t}")));
        }
        w.push((grid_index(ens, *ti, "weight time")?, h.clone()));
    }
    let dt = ens.dt();
    let per_path = ens.observe(
        |_| IncrementObserver {
            f,
            g,
            weights: &w,
            start,
            end,
            dt,
            f_start: 0.0,
            f_end: 0.0,
            integral: 0.0,
            g_prev: 0.0,
            weight: 1.0,
            weight_max: vec![0.0; w.len()],
        },
        |_, o| Ok(((o.f_end - o.f_start - o.integral) * o.weight, o.weight_max)),
    )?;
    let stats: Vec<f64> = per_path.iter().map(|(s, _)| *s).collect();
    let (statistic, stderr) = mean_stderr(&stats);
    let scale: f64 = w
        .iter()
        .enumerate()
        .map(|(k, (_, h))| {
            h.sup_bound()
                .unwrap_or_else(|| per_path.iter().map(|(_, m)| m[k]).fold(0.0, f64::max))
                .max(1.0)
        })
        .product();
    let bias_budget = bias.rate(ens.simulator()) * (1.0 + r) * scale;
    let inputs = json!({
        "f": f.descriptor(),
        "g": g.descriptor(),
        "t": t,
        "r": r,
        "weights": weights.iter().map(|(ti, h)| json!({"t": ti, "h": h.descriptor()})).collect::<Vec<_>>(),
        "n_paths": ens.n_paths(),
        "dt": dt,
    });
    Ok(TestReport::new(
        "martingale_increment_test",
        ens.label(),
        statistic,
        stderr,
        bias_budget,
        inputs,
    ))
}

/// Accumulates `int e^{-lambda s}(Af - lambda f)(X_s) ds` and the discounted
/// boundary sums `sum e^{-lambda s} B_k f(p) dgamma_k` along one path.
struct ConstrainedObserver<'a> {
    ens: &'a Ensemble,
    f: &'a TestFunction,
    lambda: f64,
    end: usize,
    dt: f64,
    f0: f64,
    f_end: f64,
    integral: f64,
    prev: f64,
    boundary: f64,
    quad_error: f64,
    fmax: f64,
    grad: Vec<f64>,
    ell: Vec<f64>,
    error: Option<LabError>,
}

impl ConstrainedObserver<'_> {
    fn integrand(&mut self, index: usize, x: &[f64]) -> f64 {
        let af = match generator_apply(self.ens.simulator().spec(), self.f, x) {
            Ok(e) => {
                self.quad_error = self.quad_error.max(e.error_bound);
                e.value
            }
            Err(e) => {
                self.error.get_or_insert(e);
                f64::NAN
            }
        };
        let fx = self.f.value(x);
        self.fmax = self.fmax.max(fx.abs());
        (-self.lambda * index as f64 * self.dt).exp() * (af - self.lambda * fx)
    }

    fn visit(&mut self, index: usize, x: &[f64]) -> bool {
        let v = self.integrand(index, x);
        if index == 0 {
            self.f0 = self.f.value(x);
        } else {
            self.integral += 0.5 * (self.prev + v) * self.dt;
        }
        self.prev = v;
        if index == self.end {
            self.f_end = (-self.lambda * index as f64 * self.dt).exp() * self.f.value(x);
            return false;
        }
        self.error.is_none()
    }
}

impl PathObserver for ConstrainedObserver<'_> {
    fn start(&mut self, x0: &[f64]) {
        self.visit(0, x0);
    }

    fn step(&mut self, i: usize, x: &[f64], _gamma: &[f64], _touched: bool) -> bool {
        self.visit(i + 1, x)
    }

    fn wants_events(&self) -> bool {
        true
    }

    fn increment(&mut self, inc: LocalTimeIncrement) {
        let Some(b) = self.ens.simulator().boundary() else {
            return;
        };
        if inc.step >= self.end {
            return;
        }
        self.f.gradient(&inc.point, &mut self.grad);
        b.ell_into(inc.piece, &inc.point, &mut self.ell);
        let disc = (-self.lambda * (inc.step + 1) as f64 * self.dt).exp();
        self.boundary += disc * dot(&self.grad, &self.ell) * inc.amount;
    }
}

/// Per-path values of
/// `e^{-lambda t} f(X_t) - f(X_0) - int_0^t e^{-lambda s}(Af - lambda f)(X_s) ds
///  - sum_k int_0^t e^{-lambda s} B_k f(X_{s-}) dgamma_k(s)`.
fn constrained_samples(ens: &Ensemble, f: &TestFunction, t: f64, lambda: f64) -> Result<(Vec<f64>, f64, f64)> {
    let end = grid_index(ens, t, "t")?;
    let d = ens.simulator().spec().dim();
    let dt = ens.dt();
    let per_path = ens.observe(
        |_| ConstrainedObserver {
            ens,
            f,
            lambda,
            end,
            dt,
            f0: 0.0,
            f_end: 0.0,
            integral: 0.0,
            prev: 0.0,
            boundary: 0.0,
            quad_error: 0.0,
            fmax: 0.0,
            grad: vec![0.0; d],
            ell: vec![0.0; d],
            error: None,
        },
        |_, o| match o.error {
            Some(e) => Err(e),
            None => Ok((o.f_end - o.f0 - o.integral - o.boundary, o.fmax, o.quad_error)),
        },
    )?;
    let fmax = per_path.iter().map(|p| p.1).fold(0.0, f64::max);
    let quad = per_path.iter().map(|p| p.2).fold(0.0, f64::max);
    Ok((per_path.into_iter().map(|p| p.0).collect(), fmax, quad))
}

/// Zero-mean test of the constrained martingale
/// `f(X_t) - f(X_0) - int_0^t Af ds - sum_k int_0^t B_k f dgamma_k`, or of its
/// discounted form when `lambda` is given. Local-time integrals are
/// Riemann-Stieltjes sums over the recorded pushes.
pub fn constrained_martingale_test(
    ens: &Ensemble,
    f: &TestFunction,
    t: f64,
    lambda: Option<f64>,
    bias: &BiasModel,
) -> Result<TestReport> {
    let sim = ens.simulator();
    if !sim.is_reflected() {
        return Err(LabError::Precondition(
            "paths carry no local times: the scenario has no reflecting boundary".into(),
        ));
    }
    let lam = lambda.unwrap_or(0.0);
    if !(lam >= 0.0) {
        return Err(LabError::Precondition(format!("lambda must be >= 0, got {lam}")));
    }
    let (samples, fmax, quad) = constrained_samples(ens, f, t, lam)?;
    let (statistic, stderr) = mean_stderr(&samples);
    let bias_budget = bias.rate(sim) * (1.0 + t) * fmax.max(1.0) + quad * t;
    let test = if lambda.is_some() {
        "constrained_martingale_test_discounted"
    } else {
        "constrained_martingale_test"
    };
    let inputs = json!({
        "f": f.descriptor(),
        "t": t,
        "lambda": lambda,
        "n_paths": ens.n_paths(),
        "dt": ens.dt(),
    });
    Ok(TestReport::new(test, ens.label(), statistic, stderr, bias_budget, inputs))
}

struct ResolventObserver<'a> {
    ens: &'a Ensemble,
    f: &'a TestFunction,
    lambda: f64,
    dt: f64,
    f0: f64,
    disc: Discounter,
    hmax: f64,
    quad_error: f64,
    boundary: f64,
    grad: Vec<f64>,
    ell: Vec<f64>,
    error: Option<LabError>,
}

impl ResolventObserver<'_> {
    fn visit(&mut self, x: &[f64]) -> bool {
        let af = match generator_apply(self.ens.simulator().spec(), self.f, x) {
            Ok(e) => {
                self.quad_error = self.quad_error.max(e.error_bound);
                e.value
            }
            Err(e) => {
                self.error.get_or_insert(e);
                return false;
            }
        };
        let h = self.lambda * self.f.value(x) - af;
        self.hmax = self.hmax.max(h.abs());
        self.disc.push(&[h]);
        true
    }
}

impl PathObserver for ResolventObserver<'_> {
    fn start(&mut self, x0: &[f64]) {
        self.f0 = self.f.value(x0);
        self.visit(x0);
    }

    fn step(&mut self, _i: usize, x: &[f64], _gamma: &[f64], _touched: bool) -> bool {
        self.visit(x)
    }

    fn wants_events(&self) -> bool {
        self.ens.simulator().is_reflected()
    }

    fn increment(&mut self, inc: LocalTimeIncrement) {
        let Some(b) = self.ens.simulator().boundary() else {
            return;
        };
        self.f.gradient(&inc.point, &mut self.grad);
        b.ell_into(inc.piece, &inc.point, &mut self.ell);
        let disc = (-self.lambda * (inc.step + 1) as f64 * self.dt).exp();
        self.boundary += disc * dot(&self.grad, &self.ell) * inc.amount;
    }
}

/// Checks `f(x0) = E[int_0^inf e^{-lambda s}(lambda f - Af)(X_s) ds]`, with the
/// discounted boundary sums subtracted on the right when the paths reflect.
/// The statistic is the mean discrepancy.
pub fn resolvent_identity_test(ens: &Ensemble, f: &TestFunction, lambda: f64, opts: &PayoffOptions) -> Result<TestReport> {
    if !(lambda > 0.0) {
        return Err(LabError::Precondition(format!("lambda must be positive, got {lambda}")));
    }
    let sim = ens.simulator();
    let d = sim.spec().dim();
    let dt = ens.dt();
    let per_path = ens.observe(
        |_| ResolventObserver {
            ens,
            f,
            lambda,
            dt,
            f0: 0.0,
            disc: Discounter::new(&[lambda], 1, dt),
            hmax: 0.0,
            quad_error: 0.0,
            boundary: 0.0,
            grad: vec![0.0; d],
            ell: vec![0.0; d],
            error: None,
        },
        |_, o| match o.error {
            Some(e) => Err(e),
            None => Ok((o.f0 - (o.disc.values()[0] - o.boundary), o.hmax, o.quad_error)),
        },
    )?;
    let samples: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let h_sup = per_path.iter().map(|p| p.1).fold(0.0, f64::max);
    let quad = per_path.iter().map(|p| p.2).fold(0.0, f64::max);
    let (statistic, stderr) = mean_stderr(&samples);
    let scheme = opts.bias.discounted(sim, h_sup, lambda);
    let tol = opts.tail_tol.unwrap_or(scheme);
    let need = super::estimate::required_horizon(lambda, h_sup, tol);
    if ens.horizon() + 1e-9 < need {
        return Err(LabError::Config(format!(
            "path horizon T = {} is too short for the resolvent identity: need T >= {need:.4} (lambda = {lambda}, sup|lambda f - Af| = {h_sup:.4})",
            ens.horizon()
        )));
    }
    let bias_budget = if statistic == 0.0 && stderr == 0.0 {
        0.0
    } else {
        scheme + tail_bound(lambda, ens.horizon(), h_sup) + quad / lambda
    };
    let inputs = json!({
        "f": f.descriptor(),
        "lambda": lambda,
        "n_paths": ens.n_paths(),
        "dt": dt,
        "horizon": ens.horizon(),
    });
    Ok(TestReport::new(
        "resolvent_identity_test",
        ens.label(),
        statistic,
        stderr,
        bias_budget,
        inputs,
    ))
}

struct PairObserver<'a> {
    u: &'a GridFunction,
    h: &'a ScalarField,
    lambda: f64,
    start: usize,
    end: usize,
    dt: f64,
    u_start: f64,
    u_end: f64,
    integral: f64,
    g_prev: f64,
    hmax: f64,
    error: Option<LabError>,
}

impl PairObserver<'_> {
    fn visit(&mut self, index: usize, x: &[f64]) -> bool {
        if index < self.start {
            return true;
        }
        let u = match self.u.interpolate(x) {
            Ok(v) => v,
            Err(e) => {
                self.error = Some(e);
                return false;
            }
        };
        let hv = self.h.eval(x);
        self.hmax = self.hmax.max(hv.abs());
        let g = self.lambda * u - hv;
        if index == self.start {
            self.u_start = u;
        } else {
            self.integral += 0.5 * (self.g_prev + g) * self.dt;
        }
        self.g_prev = g;
        if index == self.end {
            self.u_end = u;
            return false;
        }
        true
    }
}

impl PathObserver for PairObserver<'_> {
    fn start(&mut self, x0: &[f64]) {
        self.visit(0, x0);
    }

    fn step(&mut self, i: usize, x: &[f64], _gamma: &[f64], _touched: bool) -> bool {
        self.visit(i + 1, x)
    }
}

/// Martingale increment test for the pair `(u, lambda u - h)`, with `u` a grid
/// function interpolated along the paths. `u_error` bounds `|u - u_exact|` and
/// enters the bias budget as `u_error (2 + lambda r)`.
#[allow(clippy::too_many_arguments)]
pub fn extended_pair_test(
    ens: &Ensemble,
    u: &GridFunction,
    h: &ScalarField,
    lambda: f64,
    t: f64,
    r: f64,
    u_error: f64,
    bias: &BiasModel,
) -> Result<TestReport> {
    if !(lambda > 0.0) {
        return Err(LabError::Precondition(format!("lambda must be positive, got {lambda}")));
    }
    if !(r >= 0.0) {
        return Err(LabError::Precondition(format!("increment length r = {r} must be >= 0")));
    }
    let start = grid_index(ens, t, "t")?;
    let end = grid_index(ens, t + r, "t + r")?;
    let dt = ens.dt();
    let per_path = ens.observe(
        |_| PairObserver {
            u,
            h,
            lambda,
            start,
            end,
            dt,
            u_start: 0.0,
            u_end: 0.0,
            integral: 0.0,
            g_prev: 0.0,
            hmax: 0.0,
            error: None,
        },
        |_, o| match o.error {
            Some(e) => Err(e),
            None => Ok((o.u_end - o.u_start - o.integral, o.hmax)),
        },
    )?;
    let stats: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let (statistic, stderr) = mean_stderr(&stats);
    let h_sup = h.sup_bound().unwrap_or_else(|| per_path.iter().map(|p| p.1).fold(0.0, f64::max));
    let scale = (u.max_abs() * (2.0 + lambda * r) + h_sup * r).max(1.0);
    let bias_budget = if statistic == 0.0 && stderr == 0.0 {
        0.0
    } else {
        bias.rate(ens.simulator()) * (1.0 + r) * scale + u_error * (2.0 + lambda * r)
    };
    let inputs = json!({
        "u": "grid",
        "h": h.descriptor(),
        "lambda": lambda,
        "t": t,
        "r": r,
        "u_error": u_error,
        "n_paths": ens.n_paths(),
        "dt": dt,
    });
    Ok(TestReport::new(
        "extended_pair_test",
        ens.label(),
        statistic,
        stderr,
        bias_budget,
        inputs,
    ))
}
