use serde::Serialize;
use serde_json::Value;

use crate::path_sim::Simulator;

/// A Monte Carlo estimate with its statistical and systematic error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    /// Sample standard deviation over `sqrt(n_paths)`.
    pub stderr: f64,
    pub n_paths: usize,
    /// Discretization plus tail-truncation bound.
    pub bias_budget: f64,
    pub lambda: f64,
    pub h: String,
    pub scenario: String,
}

impl McEstimate {
    /// `3 stderr + bias_budget`.
    pub fn tolerance(&self) -> f64 {
        3.0 * self.stderr + self.bias_budget
    }

    pub fn agrees_with(&self, exact: f64) -> bool {
        (self.value - exact).abs() <= self.tolerance()
    }
}

/// Machine-readable outcome of a statistical check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestReport {
    pub test: String,
    pub scenario: String,
    pub statistic: f64,
    pub stderr: f64,
    pub bias_budget: f64,
    pub pass: bool,
    pub inputs: Value,
}

impl TestReport {
    /// Passes iff `|statistic| <= 3 stderr + bias_budget`.
    pub fn new(test: &str, scenario: &str, statistic: f64, stderr: f64, bias_budget: f64, inputs: Value) -> Self {
        TestReport {
            test: test.into(),
            scenario: scenario.into(),
            statistic,
            stderr,
            bias_budget,
            pass: statistic.is_finite() && statistic.abs() <= 3.0 * stderr + bias_budget,
            inputs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Scheme bias constants: `c_smooth dt` for unconstrained Euler and
/// `c_reflected sqrt(dt)` once reflection is involved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BiasModel {
    pub c_smooth: f64,
    pub c_reflected: f64,
}

impl Default for BiasModel {
    fn default() -> Self {
        BiasModel {
            c_smooth: 10.0,
            c_reflected: 2.0,
        }
    }
}

impl BiasModel {
    /// Per-unit scheme bias of the simulator; the dropped small-jump variance
    /// enters through its square root.
    pub fn rate(&self, sim: &Simulator) -> f64 {
        self.rate_for(sim.config().dt, sim.is_reflected(), sim.small_jump_variance())
    }

    pub fn rate_for(&self, dt: f64, reflected: bool, small_jump_variance: f64) -> f64 {
        let base = if reflected {
            self.c_reflected * dt.sqrt()
        } else {
            self.c_smooth * dt
        };
        base + small_jump_variance.sqrt()
    }

    /// Scheme bias of a discounted payoff of `h` with `sup |h| <= h_sup`.
    pub fn discounted(&self, sim: &Simulator, h_sup: f64, lambda: f64) -> f64 {
        self.rate(sim) * h_sup.max(1.0) * (1.0 / lambda).max(1.0)
    }
}

/// `sup_{t >= T} |int_T^inf e^{-lambda t}(h(X_t) - h(X_T)) dt| <= 2 e^{-lambda T} |h| / lambda`.
pub fn tail_bound(lambda: f64, horizon: f64, h_sup: f64) -> f64 {
    2.0 * (-lambda * horizon).exp() * h_sup / lambda
}

/// Smallest horizon whose tail bound is at most `tol`.
pub fn required_horizon(lambda: f64, h_sup: f64, tol: f64) -> f64 {
    ((2.0 * h_sup / (lambda * tol)).ln() / lambda).max(0.0)
}

/// Sample mean and standard error (`n - 1` variance, summed in order).
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
