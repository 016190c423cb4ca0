use rand::{Rng, SeedableRng};
use serde::Serialize;

use super::boundary::BoundarySpec;
use crate::error::{LabError, Result};
use crate::numerics::{dist, dot, norm};

/// `<l, nu>` below this counts as tangential reflection.
pub const DEGENERACY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tangency {
    /// In the plane the degenerate set is a finite set of points.
    NotApplicable,
    /// `grad psi_tilde . l != 0` at every detected point.
    Transversal,
    Tangential { points: Vec<Vec<f64>> },
    /// No second defining function was supplied; sampling cannot decide.
    Unverified,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeometryReport {
    pub n_samples: usize,
    pub min_grad_psi: f64,
    pub min_ell_norm: f64,
    pub min_ell_dot_normal: f64,
    /// Detected points of the set where reflection is tangential.
    pub degenerate_points: Vec<Vec<f64>>,
    pub tangency: Tangency,
    pub pass: bool,
}

fn tangent_basis(nu: &[f64]) -> Vec<Vec<f64>> {
    let d = nu.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        let c = dot(&v, nu);
        for k in 0..d {
            v[k] -= c * nu[k];
        }
        for b in &basis {
            let c = dot(&v, b);
            for k in 0..d {
                v[k] -= c * b[k];
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
        if basis.len() == d - 1 {
            break;
        }
    }
    basis
}

/// `min_k <l_k(x), nu(x)>` over pieces containing `x`.
fn obliqueness(bspec: &BoundarySpec, x: &[f64]) -> Option<f64> {
    let nu = bspec.normal(x)?;
    let pieces = bspec.pieces_at(x);
    pieces
        .iter()
        .map(|&k| dot(&bspec.ell(k, x), &nu))
        .reduce(f64::min)
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Local minimisation of `<l, nu>` along the boundary from `start`.
fn refine(bspec: &BoundarySpec, start: &[f64]) -> Option<(Vec<f64>, f64)> {
    let mut x = start.to_vec();
    let mut h = 0.05 * bspec.diameter();
    let eval = |p: &[f64]| -> f64 {
        bspec
            .project(p)
            .ok()
            .and_then(|q| obliqueness(bspec, &q))
            .unwrap_or(f64::INFINITY)
    };
    for _ in 0..80 {
        let nu = bspec.normal(&x)?;
        for t in tangent_basis(&nu) {
            let line = |s: f64| -> Vec<f64> { x.iter().zip(&t).map(|(a, b)| a + s * b).collect() };
            let s = golden_min(|s| eval(&line(s)), -h, h, 60);
            let cand = bspec.project(&line(s)).ok()?;
            if eval(&cand) <= eval(&x) {
                x = cand;
            }
        }
        h *= 0.7;
    }
    // <l, nu> is flat at its minimum, so golden search stalls at the noise
    // floor of the projection; a three-point parabola with a finite step does not.
    let delta = 3e-4 * bspec.diameter();
    for _ in 0..4 {
        let nu = bspec.normal(&x)?;
        for t in tangent_basis(&nu) {
            let at = |s: f64| -> f64 { eval(&x.iter().zip(&t).map(|(a, b)| a + s * b).collect::<Vec<_>>()) };
            let (gm, g0, gp) = (at(-delta), at(0.0), at(delta));
            let curv = gm - 2.0 * g0 + gp;
            if !(curv > 0.0) {
                continue;
            }
            let step = 0.5 * delta * (gm - gp) / curv;
            if step.abs() <= delta {
                let moved: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a + step * b).collect();
                x = bspec.project(&moved).ok()?;
            }
        }
    }
    let g = obliqueness(bspec, &x)?;
    Some((x, g))
}

/// Samples the boundary and reports the non-degeneracy quantities of the
/// reflection field, locating the set where `l` becomes tangential.
pub fn validate_reflection_geometry(bspec: &BoundarySpec, n_samples: usize) -> Result<GeometryReport> {
    let d = bspec.dim();
    let (lo, hi) = bspec.bbox();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6765_6f6d);
    let mut samples: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n_samples);
    let mut min_grad = f64::INFINITY;
    let mut min_l = f64::INFINITY;
    let mut min_g = f64::INFINITY;
    let mut attempts = 0;
    while samples.len() < n_samples && attempts < 20 * n_samples.max(1) {
        attempts += 1;
        let y: Vec<f64> = (0..d)
            .map(|i| {
                let w = hi[i] - lo[i];
                rng.random_range(lo[i] - 0.1 * w..=hi[i] + 0.1 * w)
            })
            .collect();
        let Ok(x) = bspec.project(&y) else { continue };
        min_grad = min_grad.min(norm(&bspec.grad_psi(&x)));
        let Some(nu) = bspec.normal(&x) else { continue };
        let pieces = bspec.pieces_at(&x);
        if pieces.is_empty() {
            return Err(LabError::Geometry(format!("boundary point {x:?} belongs to no piece")));
        }
        let mut g_min = f64::INFINITY;
        for k in pieces {
            let l = bspec.ell(k, &x);
            min_l = min_l.min(norm(&l));
            let g = dot(&l, &nu);
            if g < -DEGENERACY_TOL {
                return Err(LabError::Geometry(format!(
                    "outward reflection at {x:?}: <l, nu> = {g:.3e}"
                )));
            }
            g_min = g_min.min(g);
        }
        min_g = min_g.min(g_min);
        samples.push((x, g_min));
    }
    if samples.is_empty() {
        return Err(LabError::Geometry("no boundary points could be sampled".into()));
    }

    samples.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let spacing = 0.05 * bspec.diameter();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for (x, _) in &samples {
        if starts.len() >= 8 {
            break;
        }
        if starts.iter().all(|s| dist(s, x) > spacing) {
            starts.push(x.clone());
        }
    }
    let mut degenerate: Vec<Vec<f64>> = Vec::new();
    for s in &starts {
        if let Some((x, g)) = refine(bspec, s) {
            if g < -DEGENERACY_TOL {
                return Err(LabError::Geometry(format!(
                    "outward reflection at {x:?}: <l, nu> = {g:.3e}"
                )));
            }
            min_g = min_g.min(g);
            if g <= DEGENERACY_TOL && degenerate.iter().all(|p| dist(p, &x) > 1e-3 * bspec.diameter()) {
                degenerate.push(x);
            }
        }
    }

    let tangency = if degenerate.is_empty() || d <= 2 {
        Tangency::NotApplicable
    } else if let Some(pt) = bspec.psi_tilde() {
        let mut bad = Vec::new();
        let mut g = vec![0.0; d];
        for x in &degenerate {
            pt.gradient(x, &mut g);
            let k = bspec.piece_at(x).unwrap_or(0);
            if dot(&g, &bspec.ell(k, x)).abs() <= DEGENERACY_TOL {
                bad.push(x.clone());
            }
        }
        if bad.is_empty() {
            Tangency::Transversal
        } else {
            Tangency::Tangential { points: bad }
        }
    } else {
        Tangency::Unverified
    };
    let pass = min_grad > 0.0
        && min_l > 0.0
        && !matches!(tangency, Tangency::Tangential { .. });
    Ok(GeometryReport {
        n_samples: samples.len(),
        min_grad_psi: min_grad,
        min_ell_norm: min_l,
        min_ell_dot_normal: min_g,
        degenerate_points: degenerate,
        tangency,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_core::field::{FnField, PolyField};
    use crate::operator_core::polynomial::Polynomial;

    fn disk_psi() -> Polynomial {
        Polynomial::from_terms(&[(1.0, &[0, 0]), (-1.0, &[2, 0]), (-1.0, &[0, 2])])
    }

    fn disk(sign: f64) -> BoundarySpec {
        let ell = FnField::shared(2, move |x: &[f64], out: &mut [f64]| {
            out[0] = -sign * x[0];
            out[1] = -sign * x[1];
        });
        BoundarySpec::new(disk_psi(), ell, vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn normal_reflection_has_no_degenerate_set() {
        let r = validate_reflection_geometry(&disk(1.0), 400).unwrap();
        assert!(r.degenerate_points.is_empty());
        assert!((r.min_ell_dot_normal - 1.0).abs() < 1e-6);
        assert!(r.pass);
    }

    #[test]
    fn outward_reflection_is_rejected() {
        let e = validate_reflection_geometry(&disk(-1.0), 100).unwrap_err();
        assert!(matches!(e, LabError::Geometry(_)));
    }

    #[test]
    fn tangential_point_of_the_shear_field() {
        let ell = PolyField::new(vec![
            Polynomial::from_terms(&[(1.0, &[0, 1]), (-1.0, &[1, 0]), (1.0, &[2, 0])]),
            Polynomial::from_terms(&[(-1.0, &[1, 0]), (-1.0, &[0, 1]), (1.0, &[1, 1])]),
        ]);
        let b = BoundarySpec::new(disk_psi(), std::sync::Arc::new(ell), vec![-1.0, -1.0], vec![1.0, 1.0])
            .unwrap();
        let r = validate_reflection_geometry(&b, 2000).unwrap();
        assert_eq!(r.degenerate_points.len(), 1, "{:?}", r.degenerate_points);
        let p = &r.degenerate_points[0];
        assert!((p[0] - 1.0).abs() < 1e-6 && p[1].abs() < 1e-6, "{p:?}");
        assert_eq!(r.tangency, Tangency::NotApplicable);
    }
}
