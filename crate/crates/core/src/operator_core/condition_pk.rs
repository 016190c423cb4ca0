use rand::{Rng, SeedableRng};
use serde::Serialize;

use super::boundary::BoundarySpec;
use super::generator::GeneratorSpec;
use crate::error::{LabError, Result};
use crate::numerics::{invert, max_abs};

/// A local change of coordinates `x = phi(z)` with its Jacobian and inverse.
pub trait CoordinateMap: Send + Sync {
    fn dim(&self) -> usize;
    fn forward(&self, z: &[f64]) -> Vec<f64>;
    /// Row-major `d x d` Jacobian `J phi(z)`.
    fn jacobian(&self, z: &[f64]) -> Vec<f64>;
    fn inverse(&self, x: &[f64]) -> Vec<f64>;
    fn descriptor(&self) -> String;
}

pub struct IdentityMap {
    pub dim: usize,
}

impl CoordinateMap for IdentityMap {
    fn dim(&self) -> usize {
        self.dim
    }
    fn forward(&self, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }
    fn jacobian(&self, _z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut j = vec![0.0; d * d];
        for i in 0..d {
            j[i * d + i] = 1.0;
        }
        j
    }
    fn inverse(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn descriptor(&self) -> String {
        "identity".into()
    }
}

/// Shear chart at `(1, 0)` on the unit circle:
/// `phi(z) = (z1 + 1 - F(z2), z2)` with `F(s) = int_0^s l1/|l2|` along the
/// boundary point of height `s`.
pub struct DiskShearMap {
    bspec: BoundarySpec,
    piece: usize,
}

impl DiskShearMap {
    pub fn new(bspec: &BoundarySpec, piece: usize) -> Result<Self> {
        if bspec.dim() != 2 {
            return Err(LabError::Precondition("shear chart needs a planar domain".into()));
        }
        Ok(DiskShearMap {
            bspec: bspec.clone(),
            piece,
        })
    }

    /// `l1 / |l2|` at the right boundary point of height `s`.
    pub fn normalized_l1(&self, s: f64) -> f64 {
        let xb = [(1.0 - s * s).max(0.0).sqrt(), s];
        let l = self.bspec.ell(self.piece, &xb);
        l[0] / l[1].abs()
    }

    fn shift(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        crate::numerics::integrate(|t| self.normalized_l1(t), 0.0, s, 8)
    }
}

impl CoordinateMap for DiskShearMap {
    fn dim(&self) -> usize {
        2
    }
    fn forward(&self, z: &[f64]) -> Vec<f64> {
        vec![z[0] + 1.0 - self.shift(z[1]), z[1]]
    }
    fn jacobian(&self, z: &[f64]) -> Vec<f64> {
        vec![1.0, -self.normalized_l1(z[1]), 0.0, 1.0]
    }
    fn inverse(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0] - 1.0 + self.shift(x[1]), x[1]]
    }
    fn descriptor(&self) -> String {
        "disk_shear(x0=(1,0))".into()
    }
}

/// Sampling neighbourhood in chart coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct Patch {
    pub center: Vec<f64>,
    pub radius: f64,
    pub n_samples: usize,
    /// Compare against `l / |l_d|` instead of `l`.
    pub normalize: bool,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ClauseCheck {
    pub max_partial: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct PkReport {
    pub map: String,
    /// Max-norm of `J_d phi(z) + l(phi(z))` over boundary preimages.
    pub residual: f64,
    pub n_boundary_samples: usize,
    pub roundtrip_error: f64,
    pub jacobian_fd_error: f64,
    pub clause_a: ClauseCheck,
    pub clause_b: ClauseCheck,
    pub pass: bool,
}

pub const PK_RESIDUAL_TOL: f64 = 1e-8;
const CLAUSE_TOL: f64 = 1e-4;

struct Transformed {
    b: Vec<f64>,
    sigma: Vec<f64>,
}

/// Drift and diffusion factor of the operator in chart coordinates.
fn transformed(spec: &GeneratorSpec, phi: &dyn CoordinateMap, z: &[f64]) -> Option<Transformed> {
    let d = spec.dim();
    let r = spec.noise_dim();
    let x = phi.forward(z);
    let jinv = invert(&phi.jacobian(z), d)?;
    let mut s = vec![0.0; d * r];
    spec.sigma_into(&x, &mut s);
    let a = spec.diffusion_matrix(&x);
    let b = spec.drift(&x);
    let mut sigma = vec![0.0; d * r];
    for i in 0..d {
        for j in 0..r {
            sigma[i * r + j] = (0..d).map(|k| jinv[i * d + k] * s[k * r + j]).sum();
        }
    }
    // Second derivatives of the inverse chart by central differences.
    let h = 1e-4;
    let mut bt = vec![0.0; d];
    for k in 0..d {
        bt[k] = (0..d).map(|m| jinv[k * d + m] * b[m]).sum();
    }
    let inv0 = phi.inverse(&x);
    let mut xp = x.clone();
    for i in 0..d {
        for j in 0..d {
            if a[i * d + j] == 0.0 {
                continue;
            }
            let mut hess = vec![0.0; d];
            let mut eval = |di: f64, dj: f64| -> Vec<f64> {
                xp.copy_from_slice(&x);
                xp[i] += di;
                xp[j] += dj;
                phi.inverse(&xp)
            };
            if i == j {
                let p = eval(h, 0.0);
                let m = eval(-h, 0.0);
                for k in 0..d {
                    hess[k] = (p[k] - 2.0 * inv0[k] + m[k]) / (h * h);
                }
            } else {
                let pp = eval(h, h);
                let pm = eval(h, -h);
                let mp = eval(-h, h);
                let mm = eval(-h, -h);
                for k in 0..d {
                    hess[k] = (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * h * h);
                }
            }
            for k in 0..d {
                bt[k] += 0.5 * a[i * d + j] * hess[k];
            }
        }
    }
    Some(Transformed { b: bt, sigma })
}

/// Checks the chart condition `J_d phi = -l(phi)` on boundary preimages in
/// `patch`, plus the coordinate-dependence clauses on the transformed
/// coefficients at interior preimages.
pub fn check_condition_pk(
    bspec: &BoundarySpec,
    spec: &GeneratorSpec,
    phi: &dyn CoordinateMap,
    patch: &Patch,
) -> Result<PkReport> {
    let d = bspec.dim();
    if phi.dim() != d || spec.dim() != d {
        return Err(LabError::Precondition("chart dimension mismatch".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x706b);
    let sample = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        patch
            .center
            .iter()
            .map(|c| c + patch.radius * rng.random_range(-1.0..=1.0))
            .collect()
    };

    let mut roundtrip = 0.0f64;
    let mut jac_fd = 0.0f64;
    let mut residual = 0.0f64;
    let mut n_boundary = 0;
    let mut interior: Vec<Vec<f64>> = Vec::new();
    for _ in 0..patch.n_samples {
        let z = sample(&mut rng);
        let x = phi.forward(&z);
        let back = phi.inverse(&x);
        let err = max_abs(&back.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>());
        roundtrip = roundtrip.max(err);
        if !(err < 1e-8) {
            return Err(LabError::Precondition(format!(
                "chart {} is not invertible at {z:?} (round trip error {err:.3e})",
                phi.descriptor()
            )));
        }
        let j = phi.jacobian(&z);
        let h = 1e-6;
        for c in 0..d {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[c] += h;
            zm[c] -= h;
            let (fp, fm) = (phi.forward(&zp), phi.forward(&zm));
            for r in 0..d {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                jac_fd = jac_fd.max((fd - j[r * d + c]).abs());
            }
        }
        if bspec.psi(&x) > bspec.boundary_tolerance() {
            interior.push(z.clone());
        }

        // Boundary preimage near this sample.
        let Ok(xb) = bspec.project(&x) else { continue };
        let zb = phi.inverse(&xb);
        if zb
            .iter()
            .zip(&patch.center)
            .any(|(a, c)| (a - c).abs() > patch.radius)
        {
            continue;
        }
        let Some(k) = bspec.piece_at(&xb) else { continue };
        let mut l = bspec.ell(k, &xb);
        if patch.normalize {
            let ld = l[d - 1].abs();
            if ld < 1e-12 {
                return Err(LabError::Precondition(format!(
                    "last component of l vanishes at {xb:?}; cannot normalise"
                )));
            }
            l.iter_mut().for_each(|v| *v /= ld);
        }
        let jb = phi.jacobian(&zb);
        let r = (0..d)
            .map(|i| (jb[i * d + d - 1] + l[i]).abs())
            .fold(0.0, f64::max);
        residual = residual.max(r);
        n_boundary += 1;
    }
    if n_boundary == 0 {
        return Err(LabError::Precondition("patch contains no boundary points".into()));
    }

    let mut max_a = 0.0f64;
    let mut max_b = 0.0f64;
    let h = 1e-3;
    for z in &interior {
        if transformed(spec, phi, z).is_none() {
            return Err(LabError::Precondition(format!("singular Jacobian at {z:?}")));
        }
        let r = spec.noise_dim();
        for c in 0..d {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[c] += h;
            zm[c] -= h;
            let (Some(tp), Some(tm)) = (transformed(spec, phi, &zp), transformed(spec, phi, &zm)) else {
                continue;
            };
            let partial = |p: f64, m: f64| ((p - m) / (2.0 * h)).abs();
            for i in 0..d {
                // Tangential components depend on the first d-1 coordinates, the
                // last one on z_d only.
                let depends_forbidden = if i < d - 1 { c == d - 1 } else { c < d - 1 };
                if depends_forbidden {
                    max_a = max_a.max(partial(tp.b[i], tm.b[i]));
                }
                if i < d - 1 && c == d - 1 {
                    for j in 0..r {
                        max_b = max_b.max(partial(tp.sigma[i * r + j], tm.sigma[i * r + j]));
                    }
                }
            }
        }
    }
    let clause_a = ClauseCheck {
        max_partial: max_a,
        pass: max_a <= CLAUSE_TOL,
    };
    let clause_b = ClauseCheck {
        max_partial: max_b,
        pass: max_b <= CLAUSE_TOL,
    };
    let pass = residual < PK_RESIDUAL_TOL && clause_a.pass && clause_b.pass;
    Ok(PkReport {
        map: phi.descriptor(),
        residual,
        n_boundary_samples: n_boundary,
        roundtrip_error: roundtrip,
        jacobian_fd_error: jac_fd,
        clause_a,
        clause_b,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_core::field::PolyField;
    use crate::operator_core::polynomial::Polynomial;
    use std::sync::Arc;

    fn half_plane(l: [f64; 2]) -> BoundarySpec {
        BoundarySpec::new(
            Polynomial::linear(&[0.0, 1.0], 0.0),
            Arc::new(PolyField::constant(&l)),
            vec![-1.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    fn bm2() -> GeneratorSpec {
        GeneratorSpec::linear(2, &[1.0, 0.0, 0.0, 1.0], &[0.0; 4], &[0.0; 2]).unwrap()
    }

    fn patch(normalize: bool) -> Patch {
        Patch {
            center: vec![0.0, 0.0],
            radius: 0.2,
            n_samples: 200,
            normalize,
        }
    }

    #[test]
    fn identity_with_matching_field_passes() {
        let r = check_condition_pk(&half_plane([0.0, -1.0]), &bm2(), &IdentityMap { dim: 2 }, &patch(false))
            .unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn identity_with_transverse_field_fails() {
        let r = check_condition_pk(&half_plane([1.0, 0.0]), &bm2(), &IdentityMap { dim: 2 }, &patch(false))
            .unwrap();
        assert!((r.residual - 1.0).abs() < 1e-12);
        assert!(!r.pass);
    }

    struct Squash;
    impl CoordinateMap for Squash {
        fn dim(&self) -> usize {
            2
        }
        fn forward(&self, z: &[f64]) -> Vec<f64> {
            vec![z[0] * z[0], z[1]]
        }
        fn jacobian(&self, z: &[f64]) -> Vec<f64> {
            vec![2.0 * z[0], 0.0, 0.0, 1.0]
        }
        fn inverse(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0].abs().sqrt(), x[1]]
        }
        fn descriptor(&self) -> String {
            "squash".into()
        }
    }

    #[test]
    fn non_invertible_chart_is_a_precondition_error() {
        let e = check_condition_pk(&half_plane([0.0, -1.0]), &bm2(), &Squash, &patch(false)).unwrap_err();
        assert!(matches!(e, LabError::Precondition(_)));
    }
}
