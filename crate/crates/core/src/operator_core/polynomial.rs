use serde::{Deserialize, Serialize};

/// One term `coef * prod_i x_i^powers[i]`. Missing trailing powers are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    #[serde(rename = "c")]
    pub coef: f64,
    #[serde(rename = "p", default)]
    pub powers: Vec<u32>,
}

/// Sparse multivariate polynomial. This is the coefficient language of the
/// scenario files: drift, diffusion factor, defining function and reflection
/// field entries are all polynomials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(from = "PolySpec", into = "PolySpec")]
pub struct Polynomial {
    terms: Vec<Monomial>,
    /// Flat copy of the powers, `terms.len() x arity`, for the hot loops.
    flat: Vec<u32>,
    stride: usize,
    /// Dense coefficients, lowest degree first, when at most one variable
    /// occurs and the degree is small.
    dense: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PolySpec {
    Constant(f64),
    Terms(Vec<Monomial>),
}

impl From<PolySpec> for Polynomial {
    fn from(s: PolySpec) -> Self {
        match s {
            PolySpec::Constant(c) => Polynomial::constant(c),
            PolySpec::Terms(t) => Polynomial::new(t),
        }
    }
}

impl From<Polynomial> for PolySpec {
    fn from(p: Polynomial) -> Self {
        match p.as_constant() {
            Some(c) => PolySpec::Constant(c),
            None => PolySpec::Terms(p.terms),
        }
    }
}

#[inline]
fn ipow(x: f64, n: u32) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(n as i32),
    }
}

impl Polynomial {
    pub fn new(terms: Vec<Monomial>) -> Self {
        let terms: Vec<Monomial> = terms.into_iter().filter(|t| t.coef != 0.0).collect();
        let stride = terms
            .iter()
            .map(|t| t.powers.iter().rposition(|&p| p > 0).map_or(0, |i| i + 1))
            .max()
            .unwrap_or(0);
        let mut flat = vec![0; terms.len() * stride];
        for (k, t) in terms.iter().enumerate() {
            for (i, &p) in t.powers.iter().take(stride).enumerate() {
                flat[k * stride + i] = p;
            }
        }
        let dense = if stride <= 1 {
            let deg = flat.iter().copied().max().unwrap_or(0) as usize;
            (deg <= 16).then(|| {
                let mut c = vec![0.0; deg + 1];
                for (k, t) in terms.iter().enumerate() {
                    let p = if stride == 1 { flat[k] as usize } else { 0 };
                    c[p] += t.coef;
                }
                c
            })
        } else {
            None
        };
        Polynomial {
            terms,
            flat,
            stride,
            dense,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![Monomial {
            coef: c,
            powers: vec![],
        }])
    }

    pub fn zero() -> Self {
        Polynomial::new(vec![])
    }

    /// `sum_i coefs[i] x_i + offset`.
    pub fn linear(coefs: &[f64], offset: f64) -> Self {
        let mut terms = vec![Monomial {
            coef: offset,
            powers: vec![],
        }];
        for (i, &c) in coefs.iter().enumerate() {
            let mut powers = vec![0; i + 1];
            powers[i] = 1;
            terms.push(Monomial { coef: c, powers });
        }
        Self::new(terms)
    }

    /// Builds from `(coef, powers)` pairs.
    pub fn from_terms(terms: &[(f64, &[u32])]) -> Self {
        Self::new(
            terms
                .iter()
                .map(|(c, p)| Monomial {
                    coef: *c,
                    powers: p.to_vec(),
                })
                .collect(),
        )
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [] => Some(0.0),
            [t] if t.powers.iter().all(|&p| p == 0) => Some(t.coef),
            _ => None,
        }
    }

    /// Number of variables referenced (highest index + 1).
    pub fn arity(&self) -> usize {
        self.stride
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.dense.as_deref() {
            Some([a]) => *a,
            Some([a, b]) => a + b * x[0],
            Some([a, b, q]) => a + x[0] * (b + x[0] * q),
            _ => self.eval_general(x),
        }
    }

    #[inline(never)]
    fn eval_general(&self, x: &[f64]) -> f64 {
        if let Some(c) = &self.dense {
            return c.iter().rev().fold(0.0, |acc, &a| acc * x[0] + a);
        }
        let m = self.stride;
        let mut acc = 0.0;
        for (k, t) in self.terms.iter().enumerate() {
            let mut v = t.coef;
            for (i, &p) in self.flat[k * m..(k + 1) * m].iter().enumerate() {
                if p > 0 {
                    v *= ipow(x[i], p);
                }
            }
            acc += v;
        }
        acc
    }

    #[inline]
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match (self.dense.as_deref(), out) {
            (Some([_, b]), [o]) => *o = *b,
            (Some([_, b, q]), [o]) => *o = b + 2.0 * q * x[0],
            (_, out) => self.gradient_general(x, out),
        }
    }

    #[inline(never)]
    fn gradient_general(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if let Some(c) = &self.dense {
            if c.len() > 1 {
                let mut acc = 0.0;
                for k in (1..c.len()).rev() {
                    acc = acc * x[0] + k as f64 * c[k];
                }
                out[0] = acc;
            }
            return;
        }
        let m = self.stride;
        for (k, t) in self.terms.iter().enumerate() {
            let pw = &self.flat[k * m..(k + 1) * m];
            for (j, &pj) in pw.iter().enumerate() {
                if pj == 0 {
                    continue;
                }
                let mut v = t.coef * pj as f64;
                for (i, &p) in pw.iter().enumerate() {
                    let e = if i == j { p - 1 } else { p };
                    if e > 0 {
                        v *= ipow(x[i], e);
                    }
                }
                out[j] += v;
            }
        }
    }

    /// Row-major `d x d` Hessian.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            for a in 0..t.powers.len() {
                for b in 0..t.powers.len() {
                    let pa = t.powers[a];
                    let pb = t.powers[b];
                    let (fac, ok) = if a == b {
                        ((pa as f64) * (pa as f64 - 1.0), pa >= 2)
                    } else {
                        ((pa as f64) * (pb as f64), pa >= 1 && pb >= 1)
                    };
                    if !ok {
                        continue;
                    }
                    let mut v = t.coef * fac;
                    for (i, &p) in t.powers.iter().enumerate() {
                        let mut e = p;
                        if i == a {
                            e -= 1;
                        }
                        if i == b {
                            e -= 1;
                        }
                        if e > 0 {
                            v *= ipow(x[i], e);
                        }
                    }
                    out[a * d + b] += v;
                }
            }
        }
    }
}
