use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use super::field::{PolyField, VectorField};
use super::jump::JumpSpec;
use super::test_function::{ScalarField, TestFunction};
use crate::error::{LabError, Result};
use crate::numerics::{dist, min_sym_eigenvalue, outer_self};

/// Diffusion factor `sigma` (d x r), drift `b`, and an optional jump part.
/// The generator is
/// `Af = 1/2 tr(a D^2 f) + grad f . b + int [f(x+eta) - f - grad f . eta 1_{|z|<1}] m(dz)`
/// with `a = sigma sigma^T`.
#[derive(Clone)]
pub struct GeneratorSpec {
    dim: usize,
    noise_dim: usize,
    sigma: Arc<dyn VectorField>,
    drift: Arc<dyn VectorField>,
    jump: Option<JumpSpec>,
    /// Declared Lipschitz constant of sigma and b on the scenario domain.
    lipschitz: f64,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("jump", &self.jump)
            .finish()
    }
}

/// Value of an operator at a point together with its quadrature error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub value: f64,
    pub error_bound: f64,
}

/// Which local terms of the generator are kept at a node. Truncated box faces
/// drop the second-order term along an axis whose outer neighbour is missing,
/// and drift components pointing out of the box.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TermMask {
    pub keep_diffusion: Vec<bool>,
    pub keep_drift_plus: Vec<bool>,
    pub keep_drift_minus: Vec<bool>,
}

impl TermMask {
    pub fn full(dim: usize) -> Self {
        TermMask {
            keep_diffusion: vec![true; dim],
            keep_drift_plus: vec![true; dim],
            keep_drift_minus: vec![true; dim],
        }
    }

    pub fn is_full(&self) -> bool {
        self.keep_diffusion
            .iter()
            .chain(&self.keep_drift_plus)
            .chain(&self.keep_drift_minus)
            .all(|&k| k)
    }
}

impl GeneratorSpec {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        sigma: Arc<dyn VectorField>,
        drift: Arc<dyn VectorField>,
    ) -> Result<Self> {
        if sigma.dim_out() != dim * noise_dim {
            return Err(LabError::Config(format!(
                "sigma has {} entries, expected {dim}x{noise_dim}",
                sigma.dim_out()
            )));
        }
        if drift.dim_out() != dim {
            return Err(LabError::Config(format!(
                "drift has {} entries, expected {dim}",
                drift.dim_out()
            )));
        }
        Ok(GeneratorSpec {
            dim,
            noise_dim,
            sigma,
            drift,
            jump: None,
            lipschitz: f64::INFINITY,
        })
    }

    /// Constant `sigma` and drift `b(x) = drift_matrix x + drift_offset`.
    pub fn linear(dim: usize, sigma: &[f64], drift_matrix: &[f64], drift_offset: &[f64]) -> Result<Self> {
        let noise_dim = sigma.len() / dim.max(1);
        let drift = PolyField::new(
            (0..dim)
                .map(|i| {
                    super::polynomial::Polynomial::linear(
                        &drift_matrix[i * dim..(i + 1) * dim],
                        drift_offset[i],
                    )
                })
                .collect(),
        );
        Self::new(dim, noise_dim, Arc::new(PolyField::constant(sigma)), Arc::new(drift))
    }

    pub fn with_jump(mut self, jump: JumpSpec) -> Result<Self> {
        if jump.dim() != self.dim {
            return Err(LabError::Config("jump dimension mismatch".into()));
        }
        self.jump = Some(jump);
        Ok(self)
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = l;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn jump(&self) -> Option<&JumpSpec> {
        self.jump.as_ref()
    }

    pub fn declared_lipschitz(&self) -> f64 {
        self.lipschitz
    }

    #[inline]
    pub fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        self.sigma.eval(x, out)
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        self.drift.eval(x, out)
    }

    /// `sigma` when it is constant in `x`.
    pub fn constant_sigma(&self) -> Option<Vec<f64>> {
        self.sigma.as_constant()
    }

    pub fn constant_drift(&self) -> Option<Vec<f64>> {
        self.drift.as_constant()
    }

    pub fn diffusion_matrix(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.dim * self.noise_dim];
        self.sigma_into(x, &mut s);
        let mut a = vec![0.0; self.dim * self.dim];
        outer_self(&s, self.dim, self.noise_dim, &mut a);
        a
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.dim];
        self.drift_into(x, &mut b);
        b
    }

    /// Sampled structural checks: `a` symmetric PSD and finite difference
    /// quotients of `sigma` and `b` below the declared Lipschitz constant.
    pub fn validate(&self, lo: &[f64], hi: &[f64], n_samples: usize, seed: u64) -> GeneratorReport {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut min_eig = f64::INFINITY;
        let mut max_quot: f64 = 0.0;
        let mut s1 = vec![0.0; d * self.noise_dim];
        let mut s2 = s1.clone();
        for _ in 0..n_samples {
            let x: Vec<f64> = (0..d).map(|i| rng.random_range(lo[i]..=hi[i])).collect();
            let y: Vec<f64> = x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| (v + 1e-3 * (h - l) * (rng.random::<f64>() - 0.5)).clamp(*l, *h))
                .collect();
            let a = self.diffusion_matrix(&x);
            min_eig = min_eig.min(min_sym_eigenvalue(&a, d));
            let r = dist(&x, &y);
            if r > 0.0 {
                self.sigma_into(&x, &mut s1);
                self.sigma_into(&y, &mut s2);
                let ds = dist(&s1, &s2);
                let db = dist(&self.drift(&x), &self.drift(&y));
                max_quot = max_quot.max(ds / r).max(db / r);
            }
        }
        GeneratorReport {
            min_eigenvalue: min_eig,
            max_difference_quotient: max_quot,
            psd_pass: min_eig >= -1e-12,
            lipschitz_pass: max_quot <= self.lipschitz,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub min_eigenvalue: f64,
    pub max_difference_quotient: f64,
    pub psd_pass: bool,
    pub lipschitz_pass: bool,
}

/// Local (diffusion + drift) part of `Af(x)` restricted by `mask`.
pub fn local_part(spec: &GeneratorSpec, f: &TestFunction, x: &[f64], mask: &TermMask) -> f64 {
    local_terms(spec, f, x, Some(mask))
}

fn local_terms(spec: &GeneratorSpec, f: &TestFunction, x: &[f64], mask: Option<&TermMask>) -> f64 {
    let (d, r) = (spec.dim, spec.noise_dim);
    // Stack buffers cover the low-dimensional cases that dominate path loops.
    const N: usize = 16;
    let (mut sa, mut aa, mut ba, mut ga, mut ha) = ([0.0; N], [0.0; N], [0.0; N], [0.0; N], [0.0; N]);
    let mut heap;
    let (s, a, b, g, h): (&mut [f64], &mut [f64], &mut [f64], &mut [f64], &mut [f64]) = if d * d.max(r) <= N {
        (&mut sa[..d * r], &mut aa[..d * d], &mut ba[..d], &mut ga[..d], &mut ha[..d * d])
    } else {
        heap = vec![0.0; d * r + 3 * d * d + 2 * d];
        let (s, rest) = heap.split_at_mut(d * r);
        let (a, rest) = rest.split_at_mut(d * d);
        let (b, rest) = rest.split_at_mut(d);
        let (g, h) = rest.split_at_mut(d);
        (s, a, b, g, &mut h[..d * d])
    };
    spec.sigma_into(x, s);
    outer_self(s, d, r, a);
    spec.drift_into(x, b);
    f.gradient(x, g);
    f.hessian(x, h);
    let mut v = 0.0;
    for i in 0..d {
        for j in 0..d {
            if mask.is_none_or(|m| m.keep_diffusion[i] && m.keep_diffusion[j]) {
                v += 0.5 * a[i * d + j] * h[j * d + i];
            }
        }
        let keep = mask.is_none_or(|m| if b[i] >= 0.0 { m.keep_drift_plus[i] } else { m.keep_drift_minus[i] });
        if keep {
            v += g[i] * b[i];
        }
    }
    v
}

/// `Af(x)`: local part plus the compensated jump integral when present.
pub fn generator_apply(spec: &GeneratorSpec, f: &TestFunction, x: &[f64]) -> Result<Evaluation> {
    apply(spec, f, x, None)
}

pub fn generator_apply_masked(
    spec: &GeneratorSpec,
    f: &TestFunction,
    x: &[f64],
    mask: &TermMask,
) -> Result<Evaluation> {
    apply(spec, f, x, Some(mask))
}

fn apply(spec: &GeneratorSpec, f: &TestFunction, x: &[f64], mask: Option<&TermMask>) -> Result<Evaluation> {
    if let TestFunction::Constant(_) = f {
        return Ok(Evaluation {
            value: 0.0,
            error_bound: 0.0,
        });
    }
    let local = local_terms(spec, f, x, mask);
    match &spec.jump {
        None => Ok(Evaluation {
            value: local,
            error_bound: 0.0,
        }),
        Some(j) => {
            let d = spec.dim;
            let mut hess = vec![0.0; d * d];
            f.hessian(x, &mut hess);
            let ji = j.integral(x, |y| f.value(y), |y, out| f.gradient(y, out), &hess)?;
            Ok(Evaluation {
                value: local + ji.value,
                error_bound: ji.error_bound,
            })
        }
    }
}

/// Manufactured right-hand side `h = lambda u - Au`.
pub fn manufacture_rhs(spec: &GeneratorSpec, lambda: f64, u: &TestFunction) -> Result<ScalarField> {
    if !(lambda > 0.0) {
        return Err(LabError::Precondition(format!("lambda must be positive, got {lambda}")));
    }
    let probe = vec![0.0; spec.dim];
    generator_apply(spec, u, &probe)?;
    let spec = spec.clone();
    let u = u.clone();
    let desc = format!("{lambda}*u - Au, u = {}", u.descriptor());
    Ok(ScalarField::new(desc, move |x| {
        let au = generator_apply(&spec, &u, x).map(|e| e.value).unwrap_or(f64::NAN);
        lambda * u.value(x) - au
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_core::jump::{Atom, MarkMeasure, RhoBound};
    use crate::operator_core::polynomial::Polynomial;
    use proptest::prelude::*;

    fn bm() -> GeneratorSpec {
        GeneratorSpec::linear(1, &[1.0], &[0.0], &[0.0]).unwrap()
    }

    fn ou() -> GeneratorSpec {
        GeneratorSpec::linear(1, &[1.0], &[-1.0], &[0.0]).unwrap()
    }

    fn poisson() -> GeneratorSpec {
        let eta: Arc<dyn VectorField> = Arc::new(PolyField::new(vec![Polynomial::constant(1.0)]));
        let j = JumpSpec::new(
            1,
            eta,
            MarkMeasure { atoms: vec![Atom { z: 1.0, weight: 2.0 }], power_law: vec![] },
            RhoBound { coef: 1.0, power: 1.0 },
        )
        .unwrap();
        GeneratorSpec::linear(1, &[0.0], &[0.0], &[0.0]).unwrap().with_jump(j).unwrap()
    }

    fn alpha_jump() -> GeneratorSpec {
        let eta: Arc<dyn VectorField> =
            Arc::new(PolyField::new(vec![Polynomial::from_terms(&[(1.0, &[0, 1])])]));
        let seg = |lo, hi| crate::operator_core::jump::PowerLawSegment { lo, hi, coef: 1.0, exponent: 2.5 };
        let j = JumpSpec::new(
            1,
            eta,
            MarkMeasure { atoms: vec![], power_law: vec![seg(-1.0, 0.0), seg(0.0, 1.0)] },
            RhoBound { coef: 1.0, power: 1.0 },
        )
        .unwrap();
        GeneratorSpec::linear(1, &[0.0], &[-1.0], &[0.0]).unwrap().with_jump(j).unwrap()
    }

    fn sq() -> TestFunction {
        TestFunction::squared_norm(1)
    }

    #[test]
    fn constants_are_annihilated() {
        for g in [bm(), ou(), poisson(), alpha_jump()] {
            let v = generator_apply(&g, &TestFunction::Constant(3.0), &[0.7]).unwrap();
            assert_eq!(v.value, 0.0);
        }
    }

    #[test]
    fn brownian_motion_on_square() {
        let v = generator_apply(&bm(), &sq(), &[0.0]).unwrap();
        assert!((v.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn finite_measure_jump_generator() {
        let v = generator_apply(&poisson(), &TestFunction::Coordinate(0), &[0.4]).unwrap();
        assert!((v.value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_small_jumps_on_square() {
        // A(x^2) = 2x(-x) + int z^2 |z|^-2.5 dz over |z|<1 = -2x^2 + 4.
        let v = generator_apply(&alpha_jump(), &sq(), &[0.5]).unwrap();
        assert!((v.value - (-0.5 + 4.0)).abs() < 1e-5, "{v:?}");
        assert!(v.error_bound < 1e-4);
    }

    #[test]
    fn manufactured_rhs_examples() {
        let h = manufacture_rhs(&ou(), 1.0, &sq()).unwrap();
        for x in [-2.0, 0.0, 0.3, 1.7] {
            assert!((h.eval(&[x]) - (3.0 * x * x - 1.0)).abs() < 1e-12);
        }
        let cos = TestFunction::Cosine { axis: 0, freq: 1.0, amplitude: 1.0 };
        let h = manufacture_rhs(&bm(), 1.0, &cos).unwrap();
        for x in [-2.0, 0.0, 0.3, 1.7] {
            assert!((h.eval(&[x]) - 1.5 * f64::cos(x)).abs() < 1e-12);
        }
        let h = manufacture_rhs(&bm(), 2.0, &TestFunction::Constant(1.5)).unwrap();
        assert_eq!(h.eval(&[0.2]), 3.0);
        assert!(manufacture_rhs(&bm(), 0.0, &sq()).is_err());
    }

    #[test]
    fn validate_reports_psd_and_lipschitz() {
        let r = ou().with_lipschitz(1.5).validate(&[-3.0], &[3.0], 200, 1);
        assert!(r.psd_pass && r.lipschitz_pass, "{r:?}");
        let r = ou().with_lipschitz(0.5).validate(&[-3.0], &[3.0], 200, 1);
        assert!(!r.lipschitz_pass);
    }

    proptest! {
        #[test]
        fn generator_is_linear(
            s in proptest::collection::vec(-2.0f64..2.0, 8),
            x in -1.5f64..1.5,
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let f = TestFunction::quadratic(vec![s[0]], vec![s[1]], vec![s[2]], s[3]);
            let g = TestFunction::quadratic(vec![s[4]], vec![s[5]], vec![s[6]], s[7]);
            // alpha f + beta g is again a quadratic about 0.
            let lin = |t: &TestFunction| -> (f64, f64, f64) {
                if let TestFunction::Quadratic { center, p, q, c } = t {
                    let (x0, p, q) = (center[0], p[0], q[0]);
                    (c - p * x0 + 0.5 * q * x0 * x0, p - q * x0, q)
                } else { unreachable!() }
            };
            let (c1, p1, q1) = lin(&f);
            let (c2, p2, q2) = lin(&g);
            let comb = TestFunction::quadratic(
                vec![0.0],
                vec![alpha * p1 + beta * p2],
                vec![alpha * q1 + beta * q2],
                alpha * c1 + beta * c2,
            );
            for spec in [ou(), alpha_jump(), poisson()] {
                let lhs = generator_apply(&spec, &comb, &[x]).unwrap().value;
                let rhs = alpha * generator_apply(&spec, &f, &[x]).unwrap().value
                    + beta * generator_apply(&spec, &g, &[x]).unwrap().value;
                prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            }
        }

        #[test]
        fn manufactured_round_trip(x in -3.0f64..3.0, lambda in 0.1f64..4.0) {
            let u = TestFunction::Bump { center: vec![0.2], width: 1.3, amplitude: 0.8 };
            for spec in [ou(), alpha_jump()] {
                let h = manufacture_rhs(&spec, lambda, &u).unwrap();
                let au = generator_apply(&spec, &u, &[x]).unwrap().value;
                prop_assert!((lambda * u.value(&[x]) - au - h.eval(&[x])).abs() < 1e-10);
            }
        }

        #[test]
        fn diffusion_part_nonpositive_at_interior_max(x0 in -1.0f64..1.0, w in 0.3f64..2.0) {
            // Bump has its strict maximum at its centre.
            let f = TestFunction::Bump { center: vec![x0], width: w, amplitude: 1.0 };
            let v = local_part(&ou(), &f, &[x0], &TermMask::full(1));
            prop_assert!(v <= 1e-8);
        }
    }
}
