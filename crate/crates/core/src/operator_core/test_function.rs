use std::fmt;
use std::sync::Arc;

use super::polynomial::Polynomial;

/// Closed-form smooth function with exact first and second derivatives.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    /// `x_i`
    Coordinate(usize),
    /// `c + p.(x - center) + 1/2 (x - center)^T Q (x - center)`, `Q` row-major and symmetric.
    Quadratic {
        center: Vec<f64>,
        p: Vec<f64>,
        q: Vec<f64>,
        c: f64,
    },
    /// `amplitude * exp(-|x - center|^2 / width^2)`
    Bump {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
    },
    /// `amplitude * cos(freq * x_axis)`
    Cosine {
        axis: usize,
        freq: f64,
        amplitude: f64,
    },
    Poly(Polynomial),
}

impl TestFunction {
    pub fn quadratic(center: Vec<f64>, p: Vec<f64>, q: Vec<f64>, c: f64) -> Self {
        TestFunction::Quadratic { center, p, q, c }
    }

    /// `sum_i x_i^2`.
    pub fn squared_norm(dim: usize) -> Self {
        let mut q = vec![0.0; dim * dim];
        for i in 0..dim {
            q[i * dim + i] = 2.0;
        }
        Self::quadratic(vec![0.0; dim], vec![0.0; dim], q, 0.0)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Coordinate(i) => x[*i],
            TestFunction::Quadratic { center, p, q, c } => {
                let d = center.len();
                let mut v = *c;
                for i in 0..d {
                    let yi = x[i] - center[i];
                    v += p[i] * yi;
                    for j in 0..d {
                        v += 0.5 * yi * q[i * d + j] * (x[j] - center[j]);
                    }
                }
                v
            }
            TestFunction::Bump {
                center,
                width,
                amplitude,
            } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                amplitude * (-r2 / (width * width)).exp()
            }
            TestFunction::Cosine {
                axis,
                freq,
                amplitude,
            } => amplitude * (freq * x[*axis]).cos(),
            TestFunction::Poly(p) => p.eval(x),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            TestFunction::Constant(_) => {}
            TestFunction::Coordinate(i) => out[*i] = 1.0,
            TestFunction::Quadratic { center, p, q, .. } => {
                let d = center.len();
                for i in 0..d {
                    let mut g = p[i];
                    for j in 0..d {
                        g += q[i * d + j] * (x[j] - center[j]);
                    }
                    out[i] = g;
                }
            }
            TestFunction::Bump {
                center, width, ..
            } => {
                let v = self.value(x);
                for i in 0..center.len() {
                    out[i] = -2.0 * (x[i] - center[i]) / (width * width) * v;
                }
            }
            TestFunction::Cosine {
                axis,
                freq,
                amplitude,
            } => out[*axis] = -amplitude * freq * (freq * x[*axis]).sin(),
            TestFunction::Poly(p) => p.gradient(x, out),
        }
    }

    /// Row-major Hessian into `out` (length `d*d`).
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            TestFunction::Constant(_) | TestFunction::Coordinate(_) => {}
            TestFunction::Quadratic { q, .. } => out.copy_from_slice(&q[..d * d]),
            TestFunction::Bump { center, width, .. } => {
                let v = self.value(x);
                let w2 = width * width;
                for i in 0..d {
                    for j in 0..d {
                        let yi = x[i] - center[i];
                        let yj = x[j] - center[j];
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out[i * d + j] = v * (4.0 * yi * yj / (w2 * w2) - 2.0 * delta / w2);
                    }
                }
            }
            TestFunction::Cosine {
                axis,
                freq,
                amplitude,
            } => out[axis * d + axis] = -amplitude * freq * freq * (freq * x[*axis]).cos(),
            TestFunction::Poly(p) => p.hessian(x, out),
        }
    }

    /// Symbolic tag used in reports.
    pub fn descriptor(&self) -> String {
        match self {
            TestFunction::Constant(c) => format!("constant({c})"),
            TestFunction::Coordinate(i) => format!("coordinate({i})"),
            TestFunction::Quadratic { center, p, q, c } => {
                format!("quadratic(center={center:?},p={p:?},Q={q:?},c={c})")
            }
            TestFunction::Bump {
                center,
                width,
                amplitude,
            } => format!("bump(center={center:?},width={width},amp={amplitude})"),
            TestFunction::Cosine {
                axis,
                freq,
                amplitude,
            } => format!("cosine(axis={axis},freq={freq},amp={amplitude})"),
            TestFunction::Poly(p) => format!("polynomial({:?})", p.terms()),
        }
    }

    /// Infinity norm of the Hessian where it is constant; `None` otherwise.
    pub fn constant_hessian_norm(&self, dim: usize) -> Option<f64> {
        match self {
            TestFunction::Constant(_) | TestFunction::Coordinate(_) => Some(0.0),
            TestFunction::Quadratic { q, .. } => Some(crate::numerics::mat_inf_norm(q, dim)),
            _ => None,
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

/// A real-valued field on the state space. Used for payoffs `h` and for the
/// `g` side of martingale pairs; no derivatives are required.
#[derive(Clone)]
pub struct ScalarField {
    descriptor: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    sup_bound: Option<f64>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({})", self.descriptor)
    }
}

impl ScalarField {
    pub fn new<F>(descriptor: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        ScalarField {
            descriptor: descriptor.into(),
            f: Arc::new(f),
            sup_bound: None,
        }
    }

    /// Declares `sup |h| <= bound` over the state space.
    pub fn with_sup_bound(mut self, bound: f64) -> Self {
        self.sup_bound = Some(bound);
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), move |_| c).with_sup_bound(c.abs())
    }

    pub fn cos_pi(axis: usize) -> Self {
        Self::new(format!("cos(pi*x{})", axis + 1), move |x| {
            (std::f64::consts::PI * x[axis]).cos()
        })
        .with_sup_bound(1.0)
    }

    pub fn tanh(axis: usize) -> Self {
        Self::new(format!("tanh(x{})", axis + 1), move |x| x[axis].tanh()).with_sup_bound(1.0)
    }

    pub fn tanh_sq(axis: usize) -> Self {
        Self::new(format!("tanh(x{}^2)", axis + 1), move |x| (x[axis] * x[axis]).tanh())
            .with_sup_bound(1.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn sup_bound(&self) -> Option<f64> {
        self.sup_bound
    }

    /// Pointwise `a*self + b*other`.
    pub fn combine(&self, a: f64, other: &ScalarField, b: f64) -> ScalarField {
        let (f, g) = (self.f.clone(), other.f.clone());
        let bound = match (self.sup_bound, other.sup_bound) {
            (Some(x), Some(y)) => Some(a.abs() * x + b.abs() * y),
            _ => None,
        };
        ScalarField {
            descriptor: format!("{a}*[{}]+{b}*[{}]", self.descriptor, other.descriptor),
            f: Arc::new(move |x| a * f(x) + b * g(x)),
            sup_bound: bound,
        }
    }
}

impl From<TestFunction> for ScalarField {
    fn from(t: TestFunction) -> Self {
        let bound = match &t {
            TestFunction::Constant(c) => Some(c.abs()),
            TestFunction::Bump { amplitude, .. } | TestFunction::Cosine { amplitude, .. } => {
                Some(amplitude.abs())
            }
            _ => None,
        };
        let desc = t.descriptor();
        let mut s = ScalarField::new(desc, move |x| t.value(x));
        s.sup_bound = bound;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_gradient(f: &TestFunction, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f.value(&xp) - f.value(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn fd_hessian(f: &TestFunction, x: &[f64], h: f64) -> Vec<f64> {
        let d = x.len();
        let mut out = vec![0.0; d * d];
        for j in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let mut gp = vec![0.0; d];
            let mut gm = vec![0.0; d];
            f.gradient(&xp, &mut gp);
            f.gradient(&xm, &mut gm);
            for i in 0..d {
                out[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        out
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
    }

    fn bank_member(k: usize, s: &[f64]) -> TestFunction {
        match k % 5 {
            0 => TestFunction::Constant(s[0]),
            1 => TestFunction::Coordinate(1),
            2 => TestFunction::quadratic(
                vec![s[0], s[1]],
                vec![s[2], s[3]],
                vec![s[4], s[5], s[5], s[6]],
                s[7],
            ),
            3 => TestFunction::Bump {
                center: vec![s[0], s[1]],
                width: 1.0 + s[2].abs(),
                amplitude: s[3],
            },
            _ => TestFunction::Cosine {
                axis: 0,
                freq: s[4],
                amplitude: s[5],
            },
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(
            k in 0usize..5,
            s in proptest::collection::vec(-2.0f64..2.0, 8),
            x in proptest::collection::vec(-1.5f64..1.5, 2),
        ) {
            let f = bank_member(k, &s);
            let mut g = vec![0.0; 2];
            f.gradient(&x, &mut g);
            let gfd = fd_gradient(&f, &x, 1e-5);
            for i in 0..2 {
                prop_assert!(close(g[i], gfd[i], 1e-6), "grad {} vs {}", g[i], gfd[i]);
            }
            let mut h = vec![0.0; 4];
            f.hessian(&x, &mut h);
            let hfd = fd_hessian(&f, &x, 1e-5);
            for i in 0..4 {
                prop_assert!(close(h[i], hfd[i], 1e-4), "hess {} vs {}", h[i], hfd[i]);
            }
        }
    }

    #[test]
    fn scalar_field_combination() {
        let h = ScalarField::constant(2.0).combine(3.0, &ScalarField::cos_pi(0), -1.0);
        assert!((h.eval(&[0.0]) - 5.0).abs() < 1e-15);
        assert_eq!(h.sup_bound(), Some(7.0));
    }
}
