use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::grid_resolvent::Domain;
use crate::operator_core::field::{PolyField, VectorField};
use crate::operator_core::generator::{manufacture_rhs, GeneratorSpec};
use crate::operator_core::jump::{Atom, JumpSpec, MarkMeasure, PowerLawSegment, RhoBound};
use crate::operator_core::polynomial::Polynomial;
use crate::operator_core::test_function::{ScalarField, TestFunction};
use crate::operator_core::BoundarySpec;

/// Exact resolvent `u(x; lambda)` when one is known.
pub type Oracle = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Payoff of a scenario: a fixed field, or `lambda u - Au` for a known `u`.
#[derive(Clone, Debug)]
pub enum Payoff {
    Field(ScalarField),
    Manufactured(TestFunction),
}

impl Payoff {
    pub fn field(&self, spec: &GeneratorSpec, lambda: f64) -> Result<ScalarField> {
        match self {
            Payoff::Field(h) => Ok(h.clone()),
            Payoff::Manufactured(u) => manufacture_rhs(spec, lambda, u),
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            Payoff::Field(h) => h.descriptor().to_string(),
            Payoff::Manufactured(u) => format!("manufactured({})", u.descriptor()),
        }
    }
}

/// Everything a pipeline run needs to know about a process.
#[derive(Clone)]
pub struct Scenario {
    pub id: String,
    pub summary: String,
    pub spec: GeneratorSpec,
    pub boundary: Option<BoundarySpec>,
    pub domain: Domain,
    pub spacing: f64,
    /// Default starting points for Monte Carlo estimates.
    pub probes: Vec<Vec<f64>>,
    pub payoff: Payoff,
    pub oracle: Option<Oracle>,
    pub eps_cut: f64,
    pub dt: f64,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("id", &self.id)
            .field("dim", &self.spec.dim())
            .field("constrained", &self.boundary.is_some())
            .field("payoff", &self.payoff.descriptor())
            .finish()
    }
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn is_constrained(&self) -> bool {
        self.boundary.is_some()
    }

    /// Points accepted as starting points: the closure of the domain inside
    /// the grid box.
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let (lo, hi) = match &self.domain {
            Domain::Box { lo, hi } => (lo.as_slice(), hi.as_slice()),
            Domain::Region(b) => b.bbox(),
        };
        let in_box = x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *l <= *v && *v <= *h);
        in_box && self.boundary.as_ref().is_none_or(|b| b.in_closure(x))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PresetInfo {
    pub id: String,
    pub summary: String,
}

type Builder = fn() -> Result<Scenario>;

/// Named scenario presets.
#[derive(Clone, Default)]
pub struct Registry {
    entries: Vec<(&'static str, &'static str, Builder)>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    pub fn builtin() -> Self {
        Registry {
            entries: vec![
                ("bm_1d", "Brownian motion on a wide box, h = cos(pi x); closed form cos(pi x)/(lambda + pi^2/2)", bm_1d),
                ("interval_rbm", "reflected Brownian motion on [0,1], h = cos(pi x); closed form cos(pi x)/(lambda + pi^2/2)", interval_rbm),
                ("halfline_rbm", "reflected Brownian motion on [0,inf), h = exp(-x); closed form, local time E[gamma(1)] = sqrt(2/pi)", halfline_rbm),
                ("ou_1d", "Ornstein-Uhlenbeck, manufactured u = x^2", ou_1d),
                ("disk_tangential", "unit disk, degenerate diffusion, oblique reflection tangential at (1,0); no closed form", disk_tangential),
                ("jump_alpha", "degenerate jump diffusion with symmetric 3/2-stable small jumps and mean reversion; no closed form", jump_alpha),
                ("poisson_jump", "unit jumps at rate 2, h = cos(pi x); closed form cos(pi x)/(lambda + 4)", poisson_jump),
            ],
        }
    }

    pub fn list(&self) -> Vec<PresetInfo> {
        self.entries
            .iter()
            .map(|(id, summary, _)| PresetInfo { id: id.to_string(), summary: summary.to_string() })
            .collect()
    }

    pub fn ids(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn get(&self, id: &str) -> Result<Scenario> {
        let (_, _, build) = self
            .entries
            .iter()
            .find(|e| e.0 == id)
            .ok_or_else(|| LabError::Config(format!("unknown scenario preset '{id}'")))?;
        build()
    }
}

fn bm() -> Result<GeneratorSpec> {
    GeneratorSpec::linear(1, &[1.0], &[0.0], &[0.0])
}

fn cos_oracle(shift: f64) -> Oracle {
    Arc::new(move |x: &[f64], lambda: f64| (PI * x[0]).cos() / (lambda + shift))
}

/// `psi = x (1 - x)` with `l = 1 - 2x`: inward unit normal at both ends.
pub fn unit_interval() -> Result<BoundarySpec> {
    let psi = Polynomial::from_terms(&[(1.0, &[1]), (-1.0, &[2])]);
    let ell = PolyField::new(vec![Polynomial::linear(&[-2.0], 1.0)]);
    BoundarySpec::new(psi, Arc::new(ell), vec![0.0], vec![1.0])
}

/// `{x > 0}` truncated at `x = 8`, normal reflection.
pub fn half_line() -> Result<BoundarySpec> {
    BoundarySpec::new(Polynomial::linear(&[1.0], 0.0), Arc::new(PolyField::constant(&[1.0])), vec![0.0], vec![8.0])
}

/// Unit disk with `l = (x2 - x1 + x1^2, -x1 - x2 + x1 x2)`. On the circle
/// `<l, nu> = 1 - x1`, so reflection is oblique everywhere except at `(1,0)`
/// where `l = (0,-1)` is tangential.
pub fn shear_disk() -> Result<BoundarySpec> {
    let psi = Polynomial::from_terms(&[(1.0, &[0, 0]), (-1.0, &[2, 0]), (-1.0, &[0, 2])]);
    let ell: Arc<dyn VectorField> = Arc::new(PolyField::new(vec![
        Polynomial::from_terms(&[(1.0, &[0, 1]), (-1.0, &[1, 0]), (1.0, &[2, 0])]),
        Polynomial::from_terms(&[(-1.0, &[1, 0]), (-1.0, &[0, 1]), (1.0, &[1, 1])]),
    ]));
    BoundarySpec::new(psi, ell, vec![-1.0, -1.0], vec![1.0, 1.0])
}

fn bm_1d() -> Result<Scenario> {
    Ok(Scenario {
        id: "bm_1d".into(),
        summary: "Brownian motion".into(),
        spec: bm()?,
        boundary: None,
        domain: Domain::Box { lo: vec![-6.0], hi: vec![6.0] },
        spacing: 0.01,
        probes: vec![vec![0.0], vec![0.25], vec![0.5]],
        payoff: Payoff::Field(ScalarField::cos_pi(0)),
        oracle: Some(cos_oracle(PI * PI / 2.0)),
        eps_cut: 0.1,
        dt: 1e-3,
    })
}

fn interval_rbm() -> Result<Scenario> {
    let b = unit_interval()?;
    Ok(Scenario {
        id: "interval_rbm".into(),
        summary: "reflected Brownian motion on [0,1]".into(),
        spec: bm()?,
        boundary: Some(b.clone()),
        domain: Domain::Region(b),
        spacing: 1.0 / 200.0,
        probes: vec![vec![0.1], vec![0.5], vec![0.9]],
        payoff: Payoff::Field(ScalarField::cos_pi(0)),
        oracle: Some(cos_oracle(PI * PI / 2.0)),
        eps_cut: 0.1,
        dt: 1e-3,
    })
}

fn halfline_rbm() -> Result<Scenario> {
    let b = half_line()?;
    // lambda u - u''/2 = e^{-x}, u'(0) = 0, u bounded.
    let oracle: Oracle = Arc::new(|x: &[f64], lambda: f64| {
        let l = if (lambda - 0.5).abs() < 1e-6 { 0.5 + 1e-6 } else { lambda };
        let k = (2.0 * l).sqrt();
        ((-x[0]).exp() - (-k * x[0]).exp() / k) / (l - 0.5)
    });
    Ok(Scenario {
        id: "halfline_rbm".into(),
        summary: "reflected Brownian motion on [0,inf)".into(),
        spec: bm()?,
        boundary: Some(b.clone()),
        domain: Domain::Region(b),
        spacing: 0.01,
        probes: vec![vec![0.0], vec![0.5], vec![1.0]],
        payoff: Payoff::Field(ScalarField::new("exp(-x)", |x| (-x[0]).exp()).with_sup_bound(1.0)),
        oracle: Some(oracle),
        eps_cut: 0.1,
        dt: 1e-3,
    })
}

fn ou_1d() -> Result<Scenario> {
    Ok(Scenario {
        id: "ou_1d".into(),
        summary: "Ornstein-Uhlenbeck".into(),
        spec: GeneratorSpec::linear(1, &[1.0], &[-1.0], &[0.0])?,
        boundary: None,
        domain: Domain::Box { lo: vec![-4.0], hi: vec![4.0] },
        spacing: 0.01,
        probes: vec![vec![-1.0], vec![0.0], vec![0.5]],
        payoff: Payoff::Manufactured(TestFunction::squared_norm(1)),
        oracle: Some(Arc::new(|x: &[f64], _| x[0] * x[0])),
        eps_cut: 0.1,
        dt: 1e-3,
    })
}

fn disk_tangential() -> Result<Scenario> {
    let b = shear_disk()?;
    Ok(Scenario {
        id: "disk_tangential".into(),
        summary: "disk with tangential reflection at (1,0)".into(),
        spec: GeneratorSpec::linear(2, &[1.0, 0.0, 0.0, 0.0], &[0.0; 4], &[0.0, 0.0])?,
        boundary: Some(b.clone()),
        domain: Domain::Region(b),
        spacing: 0.04,
        probes: vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![-0.3, 0.4]],
        payoff: Payoff::Field(ScalarField::new("x1+x2^2", |x| x[0] + x[1] * x[1]).with_sup_bound(2.0)),
        oracle: None,
        eps_cut: 0.1,
        dt: 1e-3,
    })
}

/// `eta(x, z) = z` on a one-dimensional mark space.
fn eta_is_mark() -> Arc<dyn VectorField> {
    Arc::new(PolyField::new(vec![Polynomial::from_terms(&[(1.0, &[0, 1])])]))
}

/// `m(dz) = |z|^{-5/2} dz` on `0 < |z| <= 1`.
pub fn alpha_measure() -> MarkMeasure {
    MarkMeasure {
        atoms: vec![],
        power_law: vec![
            PowerLawSegment { lo: -1.0, hi: 0.0, coef: 1.0, exponent: 2.5 },
            PowerLawSegment { lo: 0.0, hi: 1.0, coef: 1.0, exponent: 2.5 },
        ],
    }
}

pub fn alpha_jumps() -> Result<JumpSpec> {
    JumpSpec::new(1, eta_is_mark(), alpha_measure(), RhoBound { coef: 1.0, power: 1.0 })
}

/// Unit jumps at rate 2: `m = 2 delta_1`, `eta = 1`.
pub fn poisson_jumps() -> Result<JumpSpec> {
    JumpSpec::new(
        1,
        Arc::new(PolyField::constant(&[1.0])),
        MarkMeasure { atoms: vec![Atom { z: 1.0, weight: 2.0 }], power_law: vec![] },
        RhoBound { coef: 1.0, power: 1.0 },
    )
}

fn jump_alpha() -> Result<Scenario> {
    Ok(Scenario {
        id: "jump_alpha".into(),
        summary: "stable-like jump diffusion".into(),
        spec: GeneratorSpec::linear(1, &[0.0], &[-1.0], &[0.0])?.with_jump(alpha_jumps()?)?,
        boundary: None,
        domain: Domain::Box { lo: vec![-8.0], hi: vec![8.0] },
        spacing: 0.02,
        probes: vec![vec![0.0], vec![0.5]],
        payoff: Payoff::Field(ScalarField::cos_pi(0)),
        oracle: None,
        eps_cut: 0.1,
        dt: 1e-3,
    })
}

fn poisson_jump() -> Result<Scenario> {
    Ok(Scenario {
        id: "poisson_jump".into(),
        summary: "compound Poisson".into(),
        spec: GeneratorSpec::linear(1, &[0.0], &[0.0], &[0.0])?.with_jump(poisson_jumps()?)?,
        boundary: None,
        domain: Domain::Box { lo: vec![0.0], hi: vec![20.0] },
        spacing: 0.05,
        probes: vec![vec![0.0], vec![0.5]],
        payoff: Payoff::Field(ScalarField::cos_pi(0)),
        oracle: Some(cos_oracle(4.0)),
        eps_cut: 0.1,
        dt: 1e-3,
    })
}
