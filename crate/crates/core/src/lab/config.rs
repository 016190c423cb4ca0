use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::registry::{shear_disk, unit_interval, Payoff, Registry, Scenario};
use crate::error::{LabError, Result};
use crate::grid_resolvent::Domain;
use crate::operator_core::field::{PolyField, VectorField};
use crate::operator_core::generator::GeneratorSpec;
use crate::operator_core::jump::{JumpSpec, MarkMeasure, RhoBound};
use crate::operator_core::polynomial::Polynomial;
use crate::operator_core::test_function::{ScalarField, TestFunction};
use crate::operator_core::BoundarySpec;

/// One run: a scenario, a lambda list, a payoff, grid and Monte Carlo budgets.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioRef,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    /// Payoff override; the preset's payoff when absent.
    #[serde(default)]
    pub h: Option<PayoffSpec>,
    /// Payoff for the Monte Carlo stages only. Setting it to something other
    /// than `h` is a negative control.
    #[serde(default)]
    pub h_mc: Option<PayoffSpec>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub checks: Checks,
}

fn default_lambdas() -> Vec<f64> {
    vec![1.0]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Preset(String),
    Inline(Box<InlineScenario>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayoffSpec {
    /// `cos_pi`, `tanh`, `tanh_sq`, `one`, or `x2` (manufactured `u = |x|^2`).
    Named(String),
    Constant { constant: f64 },
}

impl PayoffSpec {
    pub fn resolve(&self, dim: usize) -> Result<Payoff> {
        Ok(match self {
            PayoffSpec::Named(n) => match n.as_str() {
                "cos_pi" => Payoff::Field(ScalarField::cos_pi(0)),
                "tanh" => Payoff::Field(ScalarField::tanh(0)),
                "tanh_sq" => Payoff::Field(ScalarField::tanh_sq(0)),
                "one" => Payoff::Field(ScalarField::constant(1.0)),
                "x2" => Payoff::Manufactured(TestFunction::squared_norm(dim)),
                other => return Err(LabError::Config(format!("unknown payoff '{other}'"))),
            },
            PayoffSpec::Constant { constant } => Payoff::Field(ScalarField::constant(*constant)),
        })
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub spacing: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    pub dt: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub probes: Option<Vec<Vec<f64>>>,
    /// Number of paths written to `paths.csv`; none when 0.
    #[serde(default)]
    pub export_paths: usize,
}

fn default_paths() -> usize {
    4000
}

fn default_seed() -> u64 {
    1
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_paths: default_paths(), dt: None, seed: default_seed(), probes: None, export_paths: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_solver_tol")]
    pub solver: f64,
    /// Viscosity slack; `10 (dx + dx max|Q|)` when absent.
    pub viscosity_slack: Option<f64>,
}

fn default_solver_tol() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { solver: default_solver_tol(), viscosity_slack: None }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(default = "yes")]
    pub mc: bool,
    #[serde(default = "yes")]
    pub viscosity: bool,
    #[serde(default = "yes")]
    pub extended_pair: bool,
    #[serde(default = "yes")]
    pub laplace: bool,
}

fn yes() -> bool {
    true
}

impl Default for Checks {
    fn default() -> Self {
        Checks { mc: true, viscosity: true, extended_pair: true, laplace: true }
    }
}

/// Polynomial as `[[coef, [e1, ..., ed]], ...]`.
pub type PolyTerms = Vec<(f64, Vec<u32>)>;

fn poly(terms: &PolyTerms) -> Polynomial {
    let t: Vec<(f64, &[u32])> = terms.iter().map(|(c, e)| (*c, e.as_slice())).collect();
    Polynomial::from_terms(&t)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineScenario {
    #[serde(default = "inline_id")]
    pub id: String,
    pub dim: usize,
    /// Constant `d x d` diffusion factor, row-major.
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub drift: Option<LinearDrift>,
    #[serde(default)]
    pub jump: Option<InlineJump>,
    pub domain: InlineDomain,
    pub spacing: f64,
    pub probes: Vec<Vec<f64>>,
    #[serde(default)]
    pub h: Option<PayoffSpec>,
}

fn inline_id() -> String {
    "inline".into()
}

/// `b(x) = M x + c`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearDrift {
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineJump {
    /// Amplitude components as polynomials in `(x_1, ..., x_d, z)`.
    pub eta: Vec<PolyTerms>,
    pub measure: MarkMeasure,
    pub rho: RhoBound,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// `unit_interval`, `unit_disk_shear`, or polynomial terms; a plain box when absent.
    #[serde(default)]
    pub psi: Option<PsiSpec>,
    /// Reflection field components as polynomials; required with polynomial `psi`.
    #[serde(default)]
    pub ell: Option<Vec<PolyTerms>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PsiSpec {
    Named(String),
    Terms(PolyTerms),
}

impl InlineScenario {
    fn build(&self) -> Result<Scenario> {
        let d = self.dim;
        if d == 0 || self.sigma.len() != d * d {
            return Err(LabError::Config("inline scenario: sigma must be d x d".into()));
        }
        let (m, c) = match &self.drift {
            Some(b) => (b.matrix.clone(), b.offset.clone()),
            None => (vec![0.0; d * d], vec![0.0; d]),
        };
        let mut spec = GeneratorSpec::linear(d, &self.sigma, &m, &c)?;
        if let Some(j) = &self.jump {
            let eta: Arc<dyn VectorField> = Arc::new(PolyField::new(j.eta.iter().map(poly).collect()));
            spec = spec.with_jump(JumpSpec::new(d, eta, j.measure.clone(), j.rho)?)?;
        }
        let dom = &self.domain;
        if dom.lo.len() != d || dom.hi.len() != d {
            return Err(LabError::Config("inline scenario: domain box has the wrong dimension".into()));
        }
        let boundary = match &dom.psi {
            None => None,
            Some(PsiSpec::Named(n)) => Some(match n.as_str() {
                "unit_interval" => unit_interval()?,
                "unit_disk_shear" => shear_disk()?,
                other => return Err(LabError::Config(format!("unknown domain '{other}'"))),
            }),
            Some(PsiSpec::Terms(t)) => {
                let ell = dom
                    .ell
                    .as_ref()
                    .ok_or_else(|| LabError::Config("inline domain: polynomial psi needs ell".into()))?;
                Some(BoundarySpec::new(
                    poly(t),
                    Arc::new(PolyField::new(ell.iter().map(poly).collect())),
                    dom.lo.clone(),
                    dom.hi.clone(),
                )?)
            }
        };
        if let Some(b) = &boundary {
            if b.dim() != d {
                return Err(LabError::Config("inline scenario: domain dimension differs from dim".into()));
            }
        }
        let domain = match &boundary {
            Some(b) => Domain::Region(b.clone()),
            None => Domain::Box { lo: dom.lo.clone(), hi: dom.hi.clone() },
        };
        let payoff = match &self.h {
            Some(h) => h.resolve(d)?,
            None => Payoff::Field(ScalarField::cos_pi(0)),
        };
        Ok(Scenario {
            id: self.id.clone(),
            summary: "inline".into(),
            spec,
            boundary,
            domain,
            spacing: self.spacing,
            probes: self.probes.clone(),
            payoff,
            oracle: None,
            eps_cut: 0.1,
            dt: 1e-3,
        })
    }
}

/// A validated configuration with its scenario built.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub lambdas: Vec<f64>,
    pub payoff: Payoff,
    pub payoff_mc: Payoff,
    pub spacing: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub probes: Vec<Vec<f64>>,
    pub export_paths: usize,
    pub tolerances: Tolerances,
    pub checks: Checks,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks the invariants (`lambda > 0`, `n_paths >= 1`, `dt > 0`, known
    /// preset, probes inside the domain) and builds the scenario.
    pub fn resolve(&self, registry: &Registry) -> Result<Resolved> {
        if self.lambdas.is_empty() {
            return Err(LabError::Config("lambda list is empty".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(LabError::Config(format!("lambda must be positive, got {l}")));
        }
        if self.mc.n_paths == 0 {
            return Err(LabError::Config("n_paths must be at least 1".into()));
        }
        if let Some(dt) = self.mc.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(LabError::Config(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.tolerances.solver > 0.0) {
            return Err(LabError::Config("solver tolerance must be positive".into()));
        }
        if self.tolerances.viscosity_slack.is_some_and(|s| !(s >= 0.0)) {
            return Err(LabError::Config("viscosity slack must be non-negative".into()));
        }
        let scenario = match &self.scenario {
            ScenarioRef::Preset(id) => registry.get(id)?,
            ScenarioRef::Inline(s) => s.build()?,
        };
        let spacing = self.grid.spacing.unwrap_or(scenario.spacing);
        if !(spacing > 0.0) {
            return Err(LabError::Config(format!("grid spacing must be positive, got {spacing}")));
        }
        let d = scenario.dim();
        let payoff = match &self.h {
            Some(h) => h.resolve(d)?,
            None => scenario.payoff.clone(),
        };
        let payoff_mc = match &self.h_mc {
            Some(h) => h.resolve(d)?,
            None => payoff.clone(),
        };
        let probes = self.mc.probes.clone().unwrap_or_else(|| scenario.probes.clone());
        if probes.is_empty() {
            return Err(LabError::Config("no Monte Carlo starting points".into()));
        }
        if let Some(p) = probes.iter().find(|p| !scenario.contains(p)) {
            return Err(LabError::Config(format!("starting point {p:?} is outside the domain")));
        }
        Ok(Resolved {
            lambdas: self.lambdas.clone(),
            payoff,
            payoff_mc,
            spacing,
            dt: self.mc.dt.unwrap_or(scenario.dt),
            n_paths: self.mc.n_paths,
            seed: self.mc.seed,
            probes,
            export_paths: self.mc.export_paths,
            tolerances: self.tolerances.clone(),
            checks: self.checks,
            scenario,
        })
    }
}
