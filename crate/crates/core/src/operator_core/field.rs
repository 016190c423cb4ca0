use std::sync::Arc;

use super::polynomial::Polynomial;

/// A map `R^n -> R^m` evaluated into a caller-owned buffer so the simulation
/// hot loop never allocates. Matrix fields are flattened row-major.
pub trait VectorField: Send + Sync {
    fn dim_out(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// The field's value when it does not depend on `x`.
    fn as_constant(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Component-wise polynomial field.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyField {
    components: Vec<Polynomial>,
}

impl PolyField {
    pub fn new(components: Vec<Polynomial>) -> Self {
        PolyField { components }
    }

    pub fn constant(values: &[f64]) -> Self {
        PolyField::new(values.iter().map(|&v| Polynomial::constant(v)).collect())
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    /// Row-major Jacobian `d_out x n`.
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let mut g = vec![0.0; n];
        for (i, p) in self.components.iter().enumerate() {
            p.gradient(x, &mut g);
            out[i * n..(i + 1) * n].copy_from_slice(&g);
        }
    }
}

impl VectorField for PolyField {
    fn dim_out(&self) -> usize {
        self.components.len()
    }

    #[inline]
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.components) {
            *o = p.eval(x);
        }
    }

    fn as_constant(&self) -> Option<Vec<f64>> {
        self.components.iter().map(|p| p.as_constant()).collect()
    }
}

/// Closure-backed field.
pub struct FnField<F> {
    dim_out: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
{
    pub fn new(dim_out: usize, f: F) -> Self {
        FnField { dim_out, f }
    }

    pub fn shared(dim_out: usize, f: F) -> Arc<dyn VectorField> {
        Arc::new(Self::new(dim_out, f))
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim_out(&self) -> usize {
        self.dim_out
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}
