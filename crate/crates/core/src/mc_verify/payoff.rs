use serde::Serialize;

use super::estimate::{mean_stderr, required_horizon, tail_bound, BiasModel, McEstimate};
use crate::error::{LabError, Result};
use crate::operator_core::test_function::ScalarField;
use crate::path_sim::{Ensemble, PathObserver};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[derive(Default)]
pub struct PayoffOptions {
    /// Tail-truncation tolerance; defaults to the scheme bias.
    pub tail_tol: Option<f64>,
    pub bias: BiasModel,
}


/// Running `int_0^inf e^{-lambda t} h_hat(t) dt` for the piecewise-linear
/// interpolant `h_hat` of the grid values, frozen after the last node.
/// Integrating by parts gives
/// `h_0 / lambda + kappa sum_i (h_{i+1} - h_i) E^i`
/// with `E = e^{-lambda dt}` and `kappa = (1 - E) / (lambda^2 dt)`, which is
/// exact for constant `h`.
#[derive(Clone, Debug)]
pub(crate) struct Discounter {
    lambdas: Vec<f64>,
    decay: Vec<f64>,
    kappa: Vec<f64>,
    epow: Vec<f64>,
    first: Vec<f64>,
    prev: Vec<f64>,
    /// `n_h x n_lambda`
    acc: Vec<f64>,
    started: bool,
}

impl Discounter {
    pub(crate) fn new(lambdas: &[f64], n_h: usize, dt: f64) -> Self {
        let decay: Vec<f64> = lambdas.iter().map(|l| (-l * dt).exp()).collect();
        let kappa = lambdas
            .iter()
            .map(|l| -(-l * dt).exp_m1() / (l * l * dt))
            .collect();
        Discounter {
            lambdas: lambdas.to_vec(),
            decay,
            kappa,
            epow: vec![1.0; lambdas.len()],
            first: vec![0.0; n_h],
            prev: vec![0.0; n_h],
            acc: vec![0.0; n_h * lambdas.len()],
            started: false,
        }
    }

    /// Feeds the values of every `h` at the next grid node.
    #[inline]
    pub(crate) fn push(&mut self, hv: &[f64]) {
        if let ([acc], [prev], [epow], [decay], [v], true) = (
            self.acc.as_mut_slice(),
            self.prev.as_mut_slice(),
            self.epow.as_mut_slice(),
            self.decay.as_slice(),
            hv,
            self.started,
        ) {
            *acc += (v - *prev) * *epow;
            *prev = *v;
            *epow *= decay;
            return;
        }
        self.push_general(hv);
    }

    #[inline(never)]
    fn push_general(&mut self, hv: &[f64]) {
        let nl = self.lambdas.len();
        if !self.started {
            self.first.copy_from_slice(hv);
            self.prev.copy_from_slice(hv);
            self.started = true;
            return;
        }
        for (j, &v) in hv.iter().enumerate() {
            let dh = v - self.prev[j];
            for k in 0..nl {
                self.acc[j * nl + k] += dh * self.epow[k];
            }
            self.prev[j] = v;
        }
        for k in 0..nl {
            self.epow[k] *= self.decay[k];
        }
    }

    /// Discounted integrals, `h`-major.
    pub(crate) fn values(&self) -> Vec<f64> {
        let nl = self.lambdas.len();
        let mut out = Vec::with_capacity(self.acc.len());
        for j in 0..self.first.len() {
            for k in 0..nl {
                out.push(self.first[j] / self.lambdas[k] + self.kappa[k] * self.acc[j * nl + k]);
            }
        }
        out
    }

    /// `E^n` after `n` increments, per lambda.
    pub(crate) fn discount(&self) -> &[f64] {
        &self.epow
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(LabError::Precondition(format!("lambda must be positive, got {lambda}")))
    }
}

/// Horizon that [`discounted_payoff_with`] accepts for a simulator with step
/// `dt`, before any stopping-time offset.
pub fn payoff_horizon(dt: f64, reflected: bool, small_jump_variance: f64, h_sup: f64, lambda: f64, opts: &PayoffOptions) -> f64 {
    let scheme = opts.bias.rate_for(dt, reflected, small_jump_variance) * h_sup.max(1.0) * (1.0 / lambda).max(1.0);
    required_horizon(lambda, h_sup, opts.tail_tol.unwrap_or(scheme))
}

/// Horizon and bias bookkeeping shared by the payoff estimators.
fn budget(ens: &Ensemble, h_sup: f64, lambda: f64, opts: &PayoffOptions, offset: f64) -> Result<(f64, f64)> {
    let sim = ens.simulator();
    let scheme = opts.bias.discounted(sim, h_sup, lambda);
    let tol = opts.tail_tol.unwrap_or(scheme);
    let need = offset + required_horizon(lambda, h_sup, tol);
    let horizon = ens.horizon();
    if horizon + 1e-9 * horizon.max(1.0) < need {
        return Err(LabError::Config(format!(
            "path horizon T = {horizon} is too short: lambda = {lambda}, sup|h| = {h_sup:.4} and tail tol = {tol:.3e} need T >= {need:.4}"
        )));
    }
    Ok((scheme, tail_bound(lambda, horizon - offset, h_sup)))
}

struct PayoffObserver<'a> {
    hs: &'a [ScalarField],
    hv: Vec<f64>,
    hmax: Vec<f64>,
    disc: Discounter,
}

impl<'a> PayoffObserver<'a> {
    fn new(hs: &'a [ScalarField], lambdas: &[f64], dt: f64) -> Self {
        PayoffObserver {
            hs,
            hv: vec![0.0; hs.len()],
            hmax: vec![0.0; hs.len()],
            disc: Discounter::new(lambdas, hs.len(), dt),
        }
    }

    #[inline]
    fn visit(&mut self, x: &[f64]) {
        for (j, h) in self.hs.iter().enumerate() {
            let v = h.eval(x);
            self.hv[j] = v;
            self.hmax[j] = self.hmax[j].max(v.abs());
        }
        self.disc.push(&self.hv);
    }
}

impl PathObserver for PayoffObserver<'_> {
    fn start(&mut self, x0: &[f64]) {
        self.visit(x0);
    }

    fn step(&mut self, _i: usize, x: &[f64], _gamma: &[f64], _touched: bool) -> bool {
        self.visit(x);
        true
    }
}

/// Discounted payoffs for every `(h, lambda)` pair on common paths.
/// `out[j][k]` belongs to `hs[j]` and `lambdas[k]`. A field without a declared
/// sup bound uses the largest `|h|` seen on the paths.
pub fn discounted_payoffs(
    ens: &Ensemble,
    hs: &[ScalarField],
    lambdas: &[f64],
    opts: &PayoffOptions,
) -> Result<Vec<Vec<McEstimate>>> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    let nl = lambdas.len();
    let labelled = |j: usize, e: LabError| match e {
        LabError::Config(m) => LabError::Config(format!("{m} (h = {})", hs[j].descriptor())),
        e => e,
    };
    // Fail before simulating when the bounds are declared.
    for (j, h) in hs.iter().enumerate() {
        if let Some(b) = h.sup_bound() {
            for &l in lambdas {
                budget(ens, b, l, opts, 0.0).map_err(|e| labelled(j, e))?;
            }
        }
    }
    let dt = ens.dt();
    let per_path = ens.observe(
        |_| PayoffObserver::new(hs, lambdas, dt),
        |_, obs| Ok((obs.disc.values(), obs.hmax)),
    )?;
    let n = per_path.len();
    let mut out = Vec::with_capacity(hs.len());
    for (j, h) in hs.iter().enumerate() {
        let h_sup = h
            .sup_bound()
            .unwrap_or_else(|| per_path.iter().map(|(_, m)| m[j]).fold(0.0, f64::max));
        let mut row = Vec::with_capacity(nl);
        for (k, &lambda) in lambdas.iter().enumerate() {
            let (scheme, tail) = budget(ens, h_sup, lambda, opts, 0.0).map_err(|e| labelled(j, e))?;
            let vals: Vec<f64> = per_path.iter().map(|(v, _)| v[j * nl + k]).collect();
            let (value, stderr) = mean_stderr(&vals);
            row.push(McEstimate {
                value,
                stderr,
                n_paths: n,
                bias_budget: scheme + tail,
                lambda,
                h: h.descriptor().to_string(),
                scenario: ens.label().to_string(),
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// `E[int_0^inf e^{-lambda t} h(X_t) dt]` by per-path quadrature of the
/// piecewise-linear interpolant of `h` along the path, frozen after the horizon.
pub fn discounted_payoff(ens: &Ensemble, h: &ScalarField, lambda: f64) -> Result<McEstimate> {
    discounted_payoff_with(ens, h, lambda, &PayoffOptions::default())
}

pub fn discounted_payoff_with(ens: &Ensemble, h: &ScalarField, lambda: f64, opts: &PayoffOptions) -> Result<McEstimate> {
    let mut v = discounted_payoffs(ens, std::slice::from_ref(h), &[lambda], opts)?;
    Ok(v.remove(0).remove(0))
}

/// Non-anticipating stopping rule evaluated on the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum StoppingRule {
    Zero,
    /// First grid time `>= t`.
    Fixed(f64),
    /// First grid time with `|X - X_0| >= eps`, capped at time `eps`.
    ExitBall { eps: f64 },
}

impl StoppingRule {
    /// Largest value the rule can take.
    pub fn cap(&self) -> f64 {
        match self {
            StoppingRule::Zero => 0.0,
            StoppingRule::Fixed(t) => *t,
            StoppingRule::ExitBall { eps } => *eps,
        }
    }

    fn stops(&self, t: f64, dt: f64, x: &[f64], x0: &[f64]) -> bool {
        let at = |s: f64| t >= s - 1e-9 * dt;
        match self {
            StoppingRule::Zero => true,
            StoppingRule::Fixed(s) => at(*s),
            StoppingRule::ExitBall { eps } => {
                at(*eps) || x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= *eps
            }
        }
    }
}

struct RestartObserver<'a> {
    h: &'a ScalarField,
    rule: &'a StoppingRule,
    lambda: f64,
    dt: f64,
    x0: Vec<f64>,
    whole: Discounter,
    after: Option<(usize, Discounter)>,
    pre: f64,
    hmax: f64,
}

impl RestartObserver<'_> {
    fn visit(&mut self, index: usize, x: &[f64]) {
        let hv = [self.h.eval(x)];
        self.hmax = self.hmax.max(hv[0].abs());
        self.whole.push(&hv);
        match &mut self.after {
            Some((_, d)) => d.push(&hv),
            None => {
                if self.rule.stops(index as f64 * self.dt, self.dt, x, &self.x0) {
                    // Integral of the interpolant up to t_k: the running value
                    // (frozen at h_k) minus the frozen tail.
                    self.pre = self.whole.values()[0] - self.whole.discount()[0] * hv[0] / self.lambda;
                    let mut d = Discounter::new(&[self.lambda], 1, self.dt);
                    d.push(&hv);
                    self.after = Some((index, d));
                }
            }
        }
    }
}

impl PathObserver for RestartObserver<'_> {
    fn start(&mut self, x0: &[f64]) {
        self.x0 = x0.to_vec();
        self.visit(0, x0);
    }

    fn step(&mut self, i: usize, x: &[f64], _gamma: &[f64], _touched: bool) -> bool {
        self.visit(i + 1, x);
        true
    }
}

/// Per-path pieces of the restart decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
struct RestartSample {
    whole: f64,
    pre: f64,
    weight: f64,
    post: f64,
    hmax: f64,
}

/// `E[H J] / E[H]` with its delta-method standard error.
fn ratio(samples: &[RestartSample]) -> Result<(f64, f64, f64)> {
    let n = samples.len() as f64;
    let mean_h = samples.iter().map(|s| s.weight).sum::<f64>() / n;
    if !(mean_h >= 1e-12) {
        return Err(LabError::DegenerateWeight(mean_h));
    }
    let r = samples.iter().map(|s| s.weight * s.post).sum::<f64>() / n / mean_h;
    let stderr = if samples.len() > 1 {
        let v = samples
            .iter()
            .map(|s| {
                let e = s.weight * (s.post - r);
                e * e
            })
            .sum::<f64>()
            / (n - 1.0);
        (v / n).sqrt() / mean_h
    } else {
        0.0
    };
    Ok((r, stderr, mean_h))
}

fn restart_samples(
    ens: &Ensemble,
    tau: &StoppingRule,
    lambda: f64,
    h: &ScalarField,
) -> Result<Vec<RestartSample>> {
    check_lambda(lambda)?;
    let dt = ens.dt();
    ens.observe(
        |_| RestartObserver {
            h,
            rule: tau,
            lambda,
            dt,
            x0: Vec::new(),
            whole: Discounter::new(&[lambda], 1, dt),
            after: None,
            pre: 0.0,
            hmax: 0.0,
        },
        |i, obs| {
            let Some((k, after)) = &obs.after else {
                return Err(LabError::Config(format!(
                    "stopping rule {tau:?} did not fire on path {i} within the horizon"
                )));
            };
            let whole = obs.whole.values()[0];
            let post = after.values()[0];
            let weight = (-lambda * *k as f64 * dt).exp();
            Ok(RestartSample {
                whole,
                pre: obs.pre,
                weight,
                post,
                hmax: obs.hmax,
            })
        },
    )
}

/// Discounted payoff of the restarted law `P^{tau,H}` with `H = e^{-lambda tau}`:
/// `E[H int_0^inf e^{-lambda t} h(X_{tau+t}) dt] / E[H]`.
pub fn restart_estimate(ens: &Ensemble, tau: &StoppingRule, lambda: f64, h: &ScalarField) -> Result<McEstimate> {
    restart_estimate_with(ens, tau, lambda, h, &PayoffOptions::default())
}

pub fn restart_estimate_with(
    ens: &Ensemble,
    tau: &StoppingRule,
    lambda: f64,
    h: &ScalarField,
    opts: &PayoffOptions,
) -> Result<McEstimate> {
    check_lambda(lambda)?;
    if let Some(b) = h.sup_bound() {
        budget(ens, b, lambda, opts, tau.cap())?;
    }
    let samples = restart_samples(ens, tau, lambda, h)?;
    let h_sup = h
        .sup_bound()
        .unwrap_or_else(|| samples.iter().map(|s| s.hmax).fold(0.0, f64::max));
    let (scheme, tail) = budget(ens, h_sup, lambda, opts, tau.cap())?;
    let (value, stderr, _) = ratio(&samples)?;
    Ok(McEstimate {
        value,
        stderr,
        n_paths: samples.len(),
        bias_budget: scheme + tail,
        lambda,
        h: h.descriptor().to_string(),
        scenario: ens.label().to_string(),
    })
}

/// The decomposition
/// `E[int_0^inf] = E[int_0^tau] + E[H] * restart` evaluated on one ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TowerCheck {
    pub payoff: f64,
    pub pre_tau: f64,
    pub mean_weight: f64,
    pub restart: f64,
    /// `payoff - (pre_tau + mean_weight * restart)`
    pub residual: f64,
}

pub fn tower_check(ens: &Ensemble, tau: &StoppingRule, lambda: f64, h: &ScalarField) -> Result<TowerCheck> {
    let samples = restart_samples(ens, tau, lambda, h)?;
    let n = samples.len() as f64;
    let payoff = samples.iter().map(|s| s.whole).sum::<f64>() / n;
    let pre_tau = samples.iter().map(|s| s.pre).sum::<f64>() / n;
    let (restart, _, mean_weight) = ratio(&samples)?;
    Ok(TowerCheck {
        payoff,
        pre_tau,
        mean_weight,
        restart,
        residual: payoff - (pre_tau + mean_weight * restart),
    })
}
