use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{LabError, Result};
use crate::grid_resolvent::{Grid, GridFunction, NodeClass};
use crate::operator_core::test_function::TestFunction;

/// Finite family of smooth test functions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TestBank {
    functions: Vec<TestFunction>,
}

impl TestBank {
    pub fn new(functions: Vec<TestFunction>) -> Self {
        TestBank { functions }
    }

    pub fn functions(&self) -> &[TestFunction] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn push(&mut self, f: TestFunction) {
        self.functions.push(f);
    }

    /// Largest Hessian norm among members with a constant Hessian.
    pub fn max_hessian_norm(&self, dim: usize) -> f64 {
        self.functions
            .iter()
            .filter_map(|f| f.constant_hessian_norm(dim))
            .fold(0.0, f64::max)
    }

    /// Quadratics centered at every active node with `(p, Q)` drawn from
    /// centered normals of the given scales.
    pub fn random_quadratics(grid: &Grid, per_node: usize, p_scale: f64, q_scale: f64, seed: u64) -> Self {
        let d = grid.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut functions = Vec::with_capacity(grid.n_active() * per_node);
        for x in grid.points() {
            for _ in 0..per_node {
                let p = (0..d).map(|_| p_scale * rng.sample::<f64, _>(StandardNormal)).collect();
                let q = sym_normal(&mut rng, d, q_scale);
                functions.push(TestFunction::quadratic(x.clone(), p, q, 0.0));
            }
        }
        TestBank { functions }
    }

    /// Quadratics centered at every generator-row node whose `(p, Q)` are
    /// difference estimates of the derivatives of `u` that skip the node
    /// itself. Each node gets the estimate with `+curvature I` and
    /// `-curvature I` added to `Q`, so that `u - f` peaks (or bottoms out) at
    /// the center, plus `per_node` perturbations of the estimate of size
    /// `spread`.
    pub fn touching(u: &GridFunction, curvature: f64, per_node: usize, spread: f64, seed: u64) -> Self {
        let grid = u.grid();
        let d = grid.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut functions = Vec::new();
        for s in 0..grid.n_active() {
            if matches!(grid.class(s), NodeClass::Boundary(_)) {
                continue;
            }
            let x = grid.point(s);
            let (p, q) = derivative_estimates(u, s);
            for sign in [1.0, -1.0] {
                let mut qk = q.clone();
                for i in 0..d {
                    qk[i * d + i] += sign * curvature;
                }
                functions.push(TestFunction::quadratic(x.clone(), p.clone(), qk, 0.0));
            }
            for _ in 0..per_node {
                let pp = p.iter().map(|v| v + spread * rng.sample::<f64, _>(StandardNormal)).collect();
                let dq = sym_normal(&mut rng, d, spread);
                let qq = q.iter().zip(&dq).map(|(a, b)| a + b).collect();
                functions.push(TestFunction::quadratic(x.clone(), pp, qq, 0.0));
            }
        }
        TestBank { functions }
    }
}

fn sym_normal(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    let mut q = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v = scale * rng.sample::<f64, _>(StandardNormal);
            q[i * d + j] = v;
            q[j * d + i] = v;
        }
    }
    q
}

/// Gradient and Hessian of `u` at active node `s` from neighbors only:
/// `(u(+1) - u(-1)) / 2h`, `(u(+2) - u(+1) - u(-1) + u(-2)) / 3h^2` and the
/// four-corner mixed difference. Falls back to the usual three-point second
/// difference where the wide stencil leaves the active set, and to zero where
/// no symmetric stencil exists.
fn derivative_estimates(u: &GridFunction, s: usize) -> (Vec<f64>, Vec<f64>) {
    let grid = u.grid();
    let d = grid.dim();
    let h = grid.spacing();
    let id = grid.node_id(s);
    let v = u.values();
    let at = |off: &[isize]| grid.active_neighbor(id, off).map(|j| v[j]);
    let mut p = vec![0.0; d];
    let mut q = vec![0.0; d * d];
    let mut off = vec![0isize; d];
    for i in 0..d {
        let mut shift = |k: isize| {
            off.iter_mut().for_each(|o| *o = 0);
            off[i] = k;
            at(&off)
        };
        let (m2, m1, p1, p2) = (shift(-2), shift(-1), shift(1), shift(2));
        if let (Some(a), Some(b)) = (m1, p1) {
            p[i] = (b - a) / (2.0 * h[i]);
            q[i * d + i] = match (m2, p2) {
                (Some(aa), Some(bb)) => (bb - b - a + aa) / (3.0 * h[i] * h[i]),
                _ => (b - 2.0 * v[s] + a) / (h[i] * h[i]),
            };
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut corner = |a: isize, b: isize| {
                off.iter_mut().for_each(|o| *o = 0);
                off[i] = a;
                off[j] = b;
                at(&off)
            };
            if let (Some(pp), Some(pm), Some(mp), Some(mm)) = (corner(1, 1), corner(1, -1), corner(-1, 1), corner(-1, -1)) {
                let c = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
                q[i * d + j] = c;
                q[j * d + i] = c;
            }
        }
    }
    (p, q)
}

/// `10 (dx + dx max|Q|)` with `dx` the largest spacing.
pub fn default_slack(grid: &Grid, bank: &TestBank) -> Result<f64> {
    if bank.is_empty() {
        return Err(LabError::Precondition("empty test-function bank".into()));
    }
    let dx = grid.max_spacing();
    Ok(10.0 * (dx + dx * bank.max_hessian_norm(grid.dim())))
}

