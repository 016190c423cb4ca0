//! Jump part of a generator: amplitude `eta(x, z)`, a Levy measure `m` on a
//! one-dimensional mark space, and the growth bound `rho`.

use std::f64::consts::LN_2;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::field::VectorField;
use crate::error::{LabError, Result};
use crate::numerics::{gauss_legendre, norm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub z: f64,
    pub weight: f64,
}

/// Density `coef * |z|^(-exponent)` on `lo < z <= hi`. A segment may touch the
/// origin at one end but must not contain it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawSegment {
    pub lo: f64,
    pub hi: f64,
    pub coef: f64,
    pub exponent: f64,
}

impl PowerLawSegment {
    pub fn density(&self, z: f64) -> f64 {
        self.coef * z.abs().powf(-self.exponent)
    }

    /// `(a, b, sign)`: the segment as a magnitude range `[a, b]` on one side.
    fn magnitude_range(&self) -> (f64, f64, f64) {
        if self.lo >= 0.0 {
            (self.lo, self.hi, 1.0)
        } else {
            (-self.hi, -self.lo, -1.0)
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(LabError::Config(format!(
                "power-law segment needs finite lo < hi, got ({}, {})",
                self.lo, self.hi
            )));
        }
        if self.lo < 0.0 && self.hi > 0.0 {
            return Err(LabError::Config(
                "power-law segment must not contain the origin; split it".into(),
            ));
        }
        if !self.coef.is_finite() || !self.exponent.is_finite() || self.coef < 0.0 {
            return Err(LabError::Data(format!(
                "power-law segment has invalid coefficients ({}, {})",
                self.coef, self.exponent
            )));
        }
        Ok(())
    }

    /// Closed-form mass of magnitudes in `[a, b]`, `0 <= a < b`.
    fn mass_between(&self, a: f64, b: f64) -> f64 {
        power_integral(self.coef, self.exponent, a, b)
    }
}

/// `coef * int_a^b r^(-e) dr`; infinite when the integral diverges at 0.
fn power_integral(coef: f64, e: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let k = 1.0 - e;
    if a == 0.0 {
        return if k > 0.0 {
            coef * b.powf(k) / k
        } else {
            f64::INFINITY
        };
    }
    if k.abs() < 1e-12 {
        coef * (b / a).ln()
    } else {
        coef * (b.powf(k) - a.powf(k)) / k
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct MarkMeasure {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub power_law: Vec<PowerLawSegment>,
}

/// `rho(z) = coef * |z|^power`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoBound {
    pub coef: f64,
    pub power: f64,
}

impl RhoBound {
    pub fn eval(&self, z: f64) -> f64 {
        self.coef * z.abs().powf(self.power)
    }
}

/// Quadrature node on the mark space; `weight` already includes the density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkNode {
    pub z: f64,
    pub weight: f64,
}

/// Dyadic shells `[top 2^-(k+1), top 2^-k]` clipped to `[bottom, top]`,
/// stopping once the shell drops below `floor`.
fn shells(bottom: f64, top: f64, floor: f64, max_shells: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut hi = top;
    let stop = bottom.max(floor);
    for _ in 0..max_shells {
        if hi <= stop {
            break;
        }
        let lo = (0.5 * hi).max(stop);
        out.push((lo, hi));
        hi = lo;
    }
    out
}

#[derive(Clone)]
pub struct JumpSpec {
    dim: usize,
    eta: Arc<dyn VectorField>,
    measure: MarkMeasure,
    rho: RhoBound,
    /// Marks with `|z| < cutoff_unit` are compensated.
    cutoff_unit: f64,
    /// Smallest mark magnitude resolved by the generator quadrature.
    quad_floor: f64,
    nodes_small: Vec<MarkNode>,
    nodes_large: Vec<MarkNode>,
}

impl fmt::Debug for JumpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpSpec")
            .field("dim", &self.dim)
            .field("measure", &self.measure)
            .field("rho", &self.rho)
            .finish()
    }
}

/// Result of evaluating the compensated jump integral at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpIntegral {
    pub value: f64,
    pub error_bound: f64,
}

impl JumpSpec {
    /// `eta` receives the concatenated input `(x_1, ..., x_d, z)`.
    pub fn new(
        dim: usize,
        eta: Arc<dyn VectorField>,
        measure: MarkMeasure,
        rho: RhoBound,
    ) -> Result<Self> {
        for seg in &measure.power_law {
            seg.check()?;
        }
        for a in &measure.atoms {
            if !a.z.is_finite() || !a.weight.is_finite() || a.weight < 0.0 || a.z == 0.0 {
                return Err(LabError::Data(format!("invalid atom {a:?}")));
            }
        }
        if eta.dim_out() != dim {
            return Err(LabError::Config(format!(
                "jump amplitude has {} components, state dimension is {dim}",
                eta.dim_out()
            )));
        }
        let mut spec = JumpSpec {
            dim,
            eta,
            measure,
            rho,
            cutoff_unit: 1.0,
            quad_floor: 2f64.powi(-40),
            nodes_small: vec![],
            nodes_large: vec![],
        };
        spec.build_nodes();
        Ok(spec)
    }

    fn build_nodes(&mut self) {
        let unit = self.cutoff_unit;
        let mut small = Vec::new();
        let mut large = Vec::new();
        for a in &self.measure.atoms {
            let node = MarkNode {
                z: a.z,
                weight: a.weight,
            };
            if a.z.abs() < unit {
                small.push(node);
            } else {
                large.push(node);
            }
        }
        for seg in &self.measure.power_law {
            let (a, b, sign) = seg.magnitude_range();
            for (lo, hi) in shells(a, b.min(unit), self.quad_floor, 4096) {
                for (r, w) in gauss_legendre(lo, hi) {
                    small.push(MarkNode {
                        z: sign * r,
                        weight: w * seg.density(r),
                    });
                }
            }
            if b > unit {
                let lo = a.max(unit);
                let panels = 16;
                let h = (b - lo) / panels as f64;
                for k in 0..panels {
                    let p0 = lo + k as f64 * h;
                    for (r, w) in gauss_legendre(p0, p0 + h) {
                        large.push(MarkNode {
                            z: sign * r,
                            weight: w * seg.density(r),
                        });
                    }
                }
            }
        }
        self.nodes_small = small;
        self.nodes_large = large;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn measure(&self) -> &MarkMeasure {
        &self.measure
    }

    pub fn rho(&self) -> RhoBound {
        self.rho
    }

    pub fn cutoff_unit(&self) -> f64 {
        self.cutoff_unit
    }

    /// Jump amplitude `eta(x, z)` into `out`; `buf` must have length `d + 1`.
    pub fn eta_into(&self, x: &[f64], z: f64, buf: &mut [f64], out: &mut [f64]) {
        buf[..self.dim].copy_from_slice(&x[..self.dim]);
        buf[self.dim] = z;
        self.eta.eval(buf, out);
    }

    pub fn eta(&self, x: &[f64], z: f64) -> Vec<f64> {
        let mut buf = vec![0.0; self.dim + 1];
        let mut out = vec![0.0; self.dim];
        self.eta_into(x, z, &mut buf, &mut out);
        out
    }

    /// `int_{|z| < eps} rho(z)^2 m(dz)`, closed form for the power-law parts.
    pub fn rho_sq_mass_below(&self, eps: f64) -> f64 {
        let mut acc = 0.0;
        for a in &self.measure.atoms {
            if a.z.abs() < eps {
                acc += a.weight * self.rho.eval(a.z).powi(2);
            }
        }
        for seg in &self.measure.power_law {
            let (a, b, _) = seg.magnitude_range();
            let rc2 = self.rho.coef * self.rho.coef;
            acc += rc2 * power_integral(seg.coef, seg.exponent - 2.0 * self.rho.power, a, b.min(eps));
        }
        acc
    }

    /// Compensated jump integral
    /// `int [f(x+eta) - f(x) - grad f(x).eta 1_{|z|<1}] m(dz)` for a function
    /// given by value and gradient callbacks and its Hessian at `x`, on the
    /// shared node set. Marks below `TAYLOR_CUT` use the second-order Taylor
    /// term, since the exact difference loses every digit to cancellation there.
    pub fn integral<F, G>(&self, x: &[f64], f: F, grad: G, hess: &[f64]) -> Result<JumpIntegral>
    where
        F: Fn(&[f64]) -> f64,
        G: Fn(&[f64], &mut [f64]),
    {
        const TAYLOR_CUT: f64 = 3e-3;
        let d = self.dim;
        let fx = f(x);
        let mut g = vec![0.0; d];
        grad(x, &mut g);
        let mut buf = vec![0.0; d + 1];
        let mut eta = vec![0.0; d];
        let mut y = vec![0.0; d];
        let quad = |eta: &[f64]| -> f64 {
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    q += eta[i] * hess[i * d + j] * eta[j];
                }
            }
            0.5 * q
        };
        let mut acc = 0.0;
        let mut cube_mass = 0.0;
        let mut c3: f64 = 0.0;
        let mut cut_seen = f64::INFINITY;
        for (nodes, compensate) in [(&self.nodes_small, true), (&self.nodes_large, false)] {
            for node in nodes.iter() {
                self.eta_into(x, node.z, &mut buf, &mut eta);
                if compensate && node.z.abs() < TAYLOR_CUT {
                    acc += node.weight * quad(&eta);
                    cube_mass += node.weight * norm(&eta).powi(3);
                    continue;
                }
                for i in 0..d {
                    y[i] = x[i] + eta[i];
                }
                let mut v = f(&y) - fx;
                if compensate {
                    v -= g.iter().zip(&eta).map(|(a, b)| a * b).sum::<f64>();
                    // Third-order coefficient estimated at the smallest exact node.
                    let e = norm(&eta);
                    if node.z.abs() < cut_seen && e > 0.0 {
                        cut_seen = node.z.abs();
                        c3 = (v - quad(&eta)).abs() / e.powi(3);
                    }
                }
                acc += node.weight * v;
            }
        }
        let tail = self.rho_sq_mass_below(self.quad_floor);
        if !tail.is_finite() {
            return Err(LabError::Integrability(format!(
                "small-jump mass of rho^2 below {:.1e} is infinite",
                self.quad_floor
            )));
        }
        let hess_norm = hess.iter().map(|v| v * v).sum::<f64>().sqrt();
        let growth = 1.0 + norm(x);
        Ok(JumpIntegral {
            value: acc,
            error_bound: 0.5 * hess_norm * growth * growth * tail + c3 * cube_mass,
        })
    }

    /// Mass of `{|z| >= eps}`; errors when infinite.
    pub fn restricted_mass(&self, eps: f64) -> Result<f64> {
        let mut mass: f64 = self
            .measure
            .atoms
            .iter()
            .filter(|a| a.z.abs() >= eps)
            .map(|a| a.weight)
            .sum();
        for seg in &self.measure.power_law {
            let (a, b, _) = seg.magnitude_range();
            mass += seg.mass_between(a.max(eps), b);
        }
        if !mass.is_finite() {
            return Err(LabError::Config(format!(
                "Levy measure restricted to |z| >= {eps} has infinite mass; raise eps_cut"
            )));
        }
        Ok(mass)
    }

    /// Draws a mark from `m` restricted to `{|z| >= eps}` and normalised.
    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R, eps: f64, total: f64) -> f64 {
        let mut u = rng.random::<f64>() * total;
        for a in self.measure.atoms.iter().filter(|a| a.z.abs() >= eps) {
            if u < a.weight {
                return a.z;
            }
            u -= a.weight;
        }
        let mut last = 0.0;
        for seg in &self.measure.power_law {
            let (a, b, sign) = seg.magnitude_range();
            let lo = a.max(eps);
            let m = seg.mass_between(lo, b);
            if m <= 0.0 {
                continue;
            }
            last = sign * b;
            if u < m {
                let v = rng.random::<f64>();
                let k = 1.0 - seg.exponent;
                let r = if k.abs() < 1e-12 {
                    lo * (b / lo).powf(v)
                } else {
                    (lo.powf(k) + v * (b.powf(k) - lo.powf(k))).powf(1.0 / k)
                };
                return sign * r;
            }
            u -= m;
        }
        last
    }

    /// Quadrature nodes for `eps <= |z| < 1`, used for the compensator drift.
    pub fn compensator_nodes(&self, eps: f64) -> Vec<MarkNode> {
        let mut out: Vec<MarkNode> = self
            .measure
            .atoms
            .iter()
            .filter(|a| a.z.abs() >= eps && a.z.abs() < self.cutoff_unit)
            .map(|a| MarkNode {
                z: a.z,
                weight: a.weight,
            })
            .collect();
        for seg in &self.measure.power_law {
            let (a, b, sign) = seg.magnitude_range();
            for (lo, hi) in shells(a.max(eps), b.min(self.cutoff_unit), eps, 4096) {
                for (r, w) in gauss_legendre(lo, hi) {
                    out.push(MarkNode {
                        z: sign * r,
                        weight: w * seg.density(r),
                    });
                }
            }
        }
        out
    }

    /// Compensator drift `-int_{eps <= |z| < 1} eta(x, z) m(dz)`.
    pub fn compensator_drift(&self, x: &[f64], eps: f64) -> Vec<f64> {
        let d = self.dim;
        let mut buf = vec![0.0; d + 1];
        let mut eta = vec![0.0; d];
        let mut out = vec![0.0; d];
        for node in self.compensator_nodes(eps) {
            self.eta_into(x, node.z, &mut buf, &mut eta);
            for i in 0..d {
                out[i] -= node.weight * eta[i];
            }
        }
        out
    }

    /// Nodes of the whole measure restricted to `|z| >= eps` (for grid assembly).
    pub fn nodes_above(&self, eps: f64) -> Vec<MarkNode> {
        let mut out = self.compensator_nodes(eps);
        out.extend(self.nodes_large.iter().copied());
        out
    }

    /// `int_{|z| < eps} eta eta^T m(dz)` at `x`, by quadrature down to the
    /// generator floor, row-major `d x d`.
    pub fn small_jump_covariance(&self, x: &[f64], eps: f64) -> Vec<f64> {
        let d = self.dim;
        let mut buf = vec![0.0; d + 1];
        let mut eta = vec![0.0; d];
        let mut cov = vec![0.0; d * d];
        for node in self.nodes_small.iter().filter(|n| n.z.abs() < eps) {
            self.eta_into(x, node.z, &mut buf, &mut eta);
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += node.weight * eta[i] * eta[j];
                }
            }
        }
        cov
    }
}

/// Outcome of the growth and integrability checks on a jump specification.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpReport {
    /// `|eta(x,z)| <= rho(z)(1+|x|)` held at every sample with `|z| < 1`.
    pub growth_pass: bool,
    pub growth_max_ratio: f64,
    pub rho_vanishes_at_origin: bool,
    /// `int [rho^2 1_{|z|<1} + 1_{|z|>=1}] m(dz)`, or `None` when divergent.
    pub integral: Option<f64>,
    pub small_jump_part: Option<f64>,
    pub large_jump_mass: f64,
    pub truncation_error: f64,
    pub integrable_pass: bool,
    pub pass: bool,
    pub diagnostic: Option<String>,
}

/// Shell-by-shell quadrature of `int_{(0,top]} rho^2 dm` with geometric tail
/// extrapolation; `None` when the shell contributions stop decaying.
fn small_part_integral(seg: &PowerLawSegment, rho: &RhoBound, unit: f64) -> Result<Option<(f64, f64)>> {
    let (a, b, sign) = seg.magnitude_range();
    let top = b.min(unit);
    if top <= a {
        return Ok(Some((0.0, 0.0)));
    }
    let integrand = |r: f64| -> Result<f64> {
        let v = rho.eval(sign * r).powi(2) * seg.density(sign * r);
        if !v.is_finite() {
            return Err(LabError::Data(format!("non-finite density at z = {}", sign * r)));
        }
        Ok(v)
    };
    let shell_sum = |lo: f64, hi: f64| -> Result<f64> {
        let mut s = 0.0;
        for (r, w) in gauss_legendre(lo, hi) {
            s += w * integrand(r)?;
        }
        Ok(s)
    };
    if a > 0.0 {
        let mut s = 0.0;
        for (lo, hi) in shells(a, top, a, 4096) {
            s += shell_sum(lo, hi)?;
        }
        return Ok(Some((s, 0.0)));
    }
    const SHELLS: usize = 200;
    let mut contributions = Vec::with_capacity(SHELLS);
    let mut hi = top;
    for _ in 0..SHELLS {
        let lo = 0.5 * hi;
        contributions.push(shell_sum(lo, hi)?);
        hi = lo;
    }
    let n = contributions.len();
    let (c1, c2) = (contributions[n - 2], contributions[n - 1]);
    let partial: f64 = contributions.iter().sum();
    if !partial.is_finite() {
        return Ok(None);
    }
    if c2 == 0.0 {
        return Ok(Some((partial, 0.0)));
    }
    let ratio = c2 / c1;
    if !(ratio < 1.0 - 1e-9) {
        return Ok(None);
    }
    let tail = c2 * ratio / (1.0 - ratio);
    // A tail estimate is only as good as the shell ratio is stable.
    let drift = (contributions[n - 3] / contributions[n - 2] - ratio).abs();
    Ok(Some((partial + tail, tail.abs() * (1.0 + drift / LN_2) + 1e-14 * partial.abs())))
}

/// Checks the growth bound on `eta` and the integrability of `rho^2` against
/// the small-jump part of `m` plus finiteness of the large-jump mass.
pub fn validate_jump_conditions(jspec: &JumpSpec) -> Result<JumpReport> {
    use rand::SeedableRng;
    let unit = jspec.cutoff_unit;
    let d = jspec.dim;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6a75_6d70);
    let mut marks: Vec<f64> = jspec
        .nodes_small
        .iter()
        .map(|n| n.z)
        .filter(|z| z.abs() < unit)
        .step_by(7)
        .collect();
    for seg in &jspec.measure.power_law {
        let (a, b, sign) = seg.magnitude_range();
        let top = b.min(unit);
        if top > a {
            for _ in 0..64 {
                marks.push(sign * (a + (top - a) * rng.random::<f64>()).max(1e-12));
            }
        }
    }
    let mut max_ratio: f64 = 0.0;
    let mut buf = vec![0.0; d + 1];
    let mut eta = vec![0.0; d];
    for _ in 0..64 {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        for &z in &marks {
            jspec.eta_into(&x, z, &mut buf, &mut eta);
            let bound = jspec.rho.eval(z) * (1.0 + norm(&x));
            let e = norm(&eta);
            let ratio = if bound > 0.0 {
                e / bound
            } else if e == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            max_ratio = max_ratio.max(ratio);
        }
    }
    let growth_pass = max_ratio <= 1.0 + 1e-12;
    let rho_vanishes = jspec.rho.power > 0.0 && jspec.rho.coef > 0.0;

    let mut small = 0.0;
    let mut err = 0.0;
    let mut diagnostic = None;
    let mut divergent = false;
    for a in jspec.measure.atoms.iter().filter(|a| a.z.abs() < unit) {
        small += a.weight * jspec.rho.eval(a.z).powi(2);
    }
    for seg in &jspec.measure.power_law {
        match small_part_integral(seg, &jspec.rho, unit)? {
            Some((v, e)) => {
                small += v;
                err += e;
            }
            None => {
                divergent = true;
                diagnostic = Some(format!(
                    "int rho(z)^2 m(dz) over |z|<1 diverges on segment ({}, {}]: density exponent {} vs rho power {}",
                    seg.lo, seg.hi, seg.exponent, jspec.rho.power
                ));
            }
        }
    }
    let large: f64 = jspec.nodes_large.iter().map(|n| n.weight).sum();
    if !large.is_finite() {
        return Err(LabError::Data("large-jump mass is not finite".into()));
    }
    let integrable = !divergent;
    if !growth_pass && diagnostic.is_none() {
        diagnostic = Some(format!(
            "|eta(x,z)| exceeds rho(z)(1+|x|) by factor {max_ratio:.3}"
        ));
    }
    Ok(JumpReport {
        growth_pass,
        growth_max_ratio: max_ratio,
        rho_vanishes_at_origin: rho_vanishes,
        integral: integrable.then_some(small + large),
        small_jump_part: integrable.then_some(small),
        large_jump_mass: large,
        truncation_error: err,
        integrable_pass: integrable,
        pass: growth_pass && integrable && rho_vanishes,
        diagnostic,
    })
}
