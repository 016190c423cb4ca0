//! Small dense helpers shared by the modules. Dimensions here are tiny (d <= 3
//! in every preset), so plain slices beat pulling in a matrix library.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Row-major `rows x cols` matrix times vector.
pub fn mat_vec(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        out[i] = dot(&m[i * cols..(i + 1) * cols], v);
    }
}

/// `a = s s^T` for a row-major `d x r` factor.
pub fn outer_self(s: &[f64], d: usize, r: usize, a: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..r {
                acc += s[i * r + k] * s[j * r + k];
            }
            a[i * d + j] = acc;
        }
    }
}

/// Infinity norm (max absolute row sum) of a square row-major matrix.
pub fn mat_inf_norm(m: &[f64], d: usize) -> f64 {
    (0..d)
        .map(|i| m[i * d..(i + 1) * d].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `m x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when the matrix is numerically singular.
pub fn solve_dense(m: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            a[i * n + col]
                .abs()
                .partial_cmp(&a[j * n + col].abs())
                .unwrap()
        })?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            x.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * x[k];
        }
        x[col] = acc / a[col * n + col];
    }
    Some(x)
}

/// Inverse of a small square matrix, row-major.
pub fn invert(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve_dense(m, &e, n)?;
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Some(inv)
}

/// Smallest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.
pub fn min_sym_eigenvalue(m: &[f64], n: usize) -> f64 {
    let mut a = m.to_vec();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).fold(f64::INFINITY, f64::min)
}

/// 8-point Gauss-Legendre rule on [-1, 1].
const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Gauss-Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL8_NODES
        .iter()
        .zip(GL8_WEIGHTS.iter())
        .map(move |(x, w)| (mid + half * x, half * w))
}

/// Composite Gauss-Legendre integral of `g` over `[a, b]` using `panels` panels.
pub fn integrate<F: Fn(f64) -> f64>(g: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * h;
            gauss_legendre(lo, lo + h).map(|(x, w)| w * g(x)).sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_degree_15() {
        let v = integrate(|x| x.powi(15) + 3.0 * x.powi(4), 0.0, 2.0, 1);
        let exact = 2f64.powi(16) / 16.0 + 3.0 * 2f64.powi(5) / 5.0;
        assert!((v - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn dense_solve_and_inverse() {
        let m = [2.0, 1.0, 1.0, 3.0];
        let x = solve_dense(&m, &[3.0, 5.0], 2).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        let inv = invert(&m, 2).unwrap();
        assert!((inv[0] - 0.6).abs() < 1e-14);
        assert!(solve_dense(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn jacobi_eigenvalue() {
        let m = [2.0, 1.0, 1.0, 2.0];
        assert!((min_sym_eigenvalue(&m, 2) - 1.0).abs() < 1e-12);
        assert!(min_sym_eigenvalue(&[1.0, 0.0, 0.0, 0.0], 2).abs() < 1e-15);
    }
}
