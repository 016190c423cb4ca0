use serde::Serialize;
use serde_json::json;

use super::estimate::{McEstimate, TestReport};
use super::payoff::{discounted_payoffs, PayoffOptions};
use crate::error::{LabError, Result};
use crate::operator_core::test_function::ScalarField;
use crate::path_sim::Ensemble;

/// One row of a lambda sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LaplaceRow {
    pub h: String,
    pub lambda: f64,
    pub value_a: f64,
    pub value_b: f64,
    pub stderr_a: f64,
    pub stderr_b: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LaplaceMatch {
    pub report: TestReport,
    pub rows: Vec<LaplaceRow>,
    /// Descriptors of the tested `h`; agreement is only claimed for these.
    pub tested: Vec<String>,
}

impl LaplaceMatch {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,valueA,valueB,stderrA,stderrB,pass\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.lambda, r.value_a, r.value_b, r.stderr_a, r.stderr_b, r.pass
            ));
        }
        s
    }
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Largest coordinate-wise KS distance between the initial points.
fn initial_distance(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    let da = a.simulator().spec().dim();
    if da != b.simulator().spec().dim() {
        return Err(LabError::Precondition("ensembles live in different dimensions".into()));
    }
    let mut worst = 0.0f64;
    for c in 0..da {
        let xa: Vec<f64> = (0..a.n_paths()).map(|i| a.initial_law().point(i)[c]).collect();
        let xb: Vec<f64> = (0..b.n_paths()).map(|i| b.initial_law().point(i)[c]).collect();
        worst = worst.max(ks_distance(&xa, &xb));
    }
    Ok(worst)
}

/// Compares discounted payoffs of two ensembles for every `h` and `lambda`.
/// A pair agrees when `|vA - vB| <= 3 sqrt(seA^2 + seB^2) + biasA + biasB`;
/// the test passes when every pair agrees.
pub fn laplace_match_test(
    a: &Ensemble,
    b: &Ensemble,
    hs: &[ScalarField],
    lambdas: &[f64],
    opts: &PayoffOptions,
) -> Result<LaplaceMatch> {
    if hs.is_empty() || lambdas.is_empty() {
        return Err(LabError::Precondition("need at least one h and one lambda".into()));
    }
    let ks = initial_distance(a, b)?;
    let (n, m) = (a.n_paths() as f64, b.n_paths() as f64);
    let threshold = 1.95 * ((n + m) / (n * m)).sqrt();
    if ks > threshold {
        return Err(LabError::Precondition(format!(
            "initial laws differ: KS distance {ks:.4} exceeds {threshold:.4}"
        )));
    }
    let ea = discounted_payoffs(a, hs, lambdas, opts)?;
    let eb = discounted_payoffs(b, hs, lambdas, opts)?;
    let mut rows = Vec::new();
    let mut worst: Option<(f64, f64, f64, f64)> = None;
    for (ra, rb) in ea.iter().zip(&eb) {
        for (x, y) in ra.iter().zip(rb) {
            let row = row(x, y);
            let se = x.stderr.hypot(y.stderr);
            let bias = x.bias_budget + y.bias_budget;
            let diff = x.value - y.value;
            // The reported statistic is the pair with the largest excess over its tolerance.
            let excess = diff.abs() - row.tolerance;
            if worst.is_none_or(|w| excess > w.0) {
                worst = Some((excess, diff, se, bias));
            }
            rows.push(row);
        }
    }
    let (_, statistic, stderr, bias_budget) = worst.expect("nonempty sweep");
    let tested: Vec<String> = hs.iter().map(|h| h.descriptor().to_string()).collect();
    let inputs = json!({
        "scenario_b": b.label(),
        "h": tested,
        "lambdas": lambdas,
        "n_paths_a": a.n_paths(),
        "n_paths_b": b.n_paths(),
        "ks_initial": ks,
    });
    let mut report = TestReport::new("laplace_match_test", a.label(), statistic, stderr, bias_budget, inputs);
    report.pass = rows.iter().all(|r| r.pass);
    Ok(LaplaceMatch { report, rows, tested })
}

fn row(x: &McEstimate, y: &McEstimate) -> LaplaceRow {
    let tolerance = 3.0 * x.stderr.hypot(y.stderr) + x.bias_budget + y.bias_budget;
    LaplaceRow {
        h: x.h.clone(),
        lambda: x.lambda,
        value_a: x.value,
        value_b: y.value,
        stderr_a: x.stderr,
        stderr_b: y.stderr,
        tolerance,
        pass: (x.value - y.value).abs() <= tolerance,
    }
}
