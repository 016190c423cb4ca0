use std::fmt;
use std::sync::Arc;

use super::field::VectorField;
use super::polynomial::Polynomial;
use super::test_function::TestFunction;
use crate::error::{LabError, Result};
use crate::numerics::{dot, norm};

/// One piece `E_k` of the boundary: points of `dD` where `selector >= 0`,
/// with its own reflection field when given (otherwise the global one).
#[derive(Clone)]
pub struct BoundaryPiece {
    pub name: String,
    pub selector: Polynomial,
    pub ell: Option<Arc<dyn VectorField>>,
}

impl fmt::Debug for BoundaryPiece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryPiece")
            .field("name", &self.name)
            .field("selector", &self.selector)
            .finish()
    }
}

/// Domain `D = {psi > 0}` with an oblique reflection field on `dD`.
#[derive(Clone)]
pub struct BoundarySpec {
    dim: usize,
    psi: Polynomial,
    psi_tilde: Option<Polynomial>,
    ell: Arc<dyn VectorField>,
    pieces: Vec<BoundaryPiece>,
    bbox_lo: Vec<f64>,
    bbox_hi: Vec<f64>,
}

impl fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundarySpec")
            .field("dim", &self.dim)
            .field("psi", &self.psi)
            .field("pieces", &self.pieces)
            .field("bbox", &(&self.bbox_lo, &self.bbox_hi))
            .finish()
    }
}

impl BoundarySpec {
    /// `bbox` bounds the closure of the domain (or the part of it that grids cover).
    pub fn new(
        psi: Polynomial,
        ell: Arc<dyn VectorField>,
        bbox_lo: Vec<f64>,
        bbox_hi: Vec<f64>,
    ) -> Result<Self> {
        let dim = bbox_lo.len();
        if bbox_hi.len() != dim || ell.dim_out() != dim {
            return Err(LabError::Config("boundary dimensions disagree".into()));
        }
        if bbox_lo.iter().zip(&bbox_hi).any(|(l, h)| !(l < h)) {
            return Err(LabError::Config("empty bounding box".into()));
        }
        Ok(BoundarySpec {
            dim,
            psi,
            psi_tilde: None,
            ell,
            pieces: vec![BoundaryPiece {
                name: "boundary".into(),
                selector: Polynomial::constant(1.0),
                ell: None,
            }],
            bbox_lo,
            bbox_hi,
        })
    }

    pub fn with_pieces(mut self, pieces: Vec<BoundaryPiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(LabError::Config("at least one boundary piece is required".into()));
        }
        self.pieces = pieces;
        Ok(self)
    }

    pub fn with_psi_tilde(mut self, p: Polynomial) -> Self {
        self.psi_tilde = Some(p);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[BoundaryPiece] {
        &self.pieces
    }

    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn psi_tilde(&self) -> Option<&Polynomial> {
        self.psi_tilde.as_ref()
    }

    pub fn bbox(&self) -> (&[f64], &[f64]) {
        (&self.bbox_lo, &self.bbox_hi)
    }

    pub fn diameter(&self) -> f64 {
        self.bbox_lo
            .iter()
            .zip(&self.bbox_hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Points with `|psi| <= tau` count as boundary points; `tau = 1e-8 diam`.
    pub fn boundary_tolerance(&self) -> f64 {
        1e-8 * self.diameter()
    }

    #[inline]
    pub fn psi(&self, x: &[f64]) -> f64 {
        self.psi.eval(x)
    }

    pub fn grad_psi_into(&self, x: &[f64], out: &mut [f64]) {
        self.psi.gradient(x, out);
    }

    pub fn grad_psi(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.psi.gradient(x, &mut g);
        g
    }

    /// Unit inward normal `grad psi / |grad psi|`.
    pub fn normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        let g = self.grad_psi(x);
        let n = norm(&g);
        (n > 1e-300).then(|| g.iter().map(|v| v / n).collect())
    }

    pub fn on_boundary(&self, x: &[f64]) -> bool {
        self.psi(x).abs() <= self.boundary_tolerance()
    }

    pub fn in_closure(&self, x: &[f64]) -> bool {
        self.psi(x) >= -self.boundary_tolerance()
    }

    /// Indices of every piece whose selector accepts `x`.
    pub fn pieces_at(&self, x: &[f64]) -> Vec<usize> {
        (0..self.pieces.len())
            .filter(|&k| self.pieces[k].selector.eval(x) >= 0.0)
            .collect()
    }

    pub fn piece_at(&self, x: &[f64]) -> Option<usize> {
        (0..self.pieces.len()).find(|&k| self.pieces[k].selector.eval(x) >= 0.0)
    }

    /// Reflection direction `l_k(x)`.
    pub fn ell_into(&self, k: usize, x: &[f64], out: &mut [f64]) {
        match &self.pieces[k].ell {
            Some(f) => f.eval(x, out),
            None => self.ell.eval(x, out),
        }
    }

    pub fn ell(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.ell_into(k, x, &mut out);
        out
    }

    /// Projection onto `dD` along the gradient flow of `psi` (Newton on
    /// `psi(x + t grad psi) = 0`). Converges to the normal projection when the
    /// gradient direction is constant along the normal line, as for spheres
    /// and half-spaces.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut x = y.to_vec();
        if self.project_into(y, &mut x) {
            Ok(x)
        } else {
            Err(LabError::Geometry(format!(
                "projection onto the boundary failed from {y:?}"
            )))
        }
    }

    /// Allocation-free form of [`project`](Self::project); `false` when
    /// Newton fails to reach the boundary.
    pub fn project_into(&self, y: &[f64], x: &mut [f64]) -> bool {
        let tol = self.boundary_tolerance() * 1e-3;
        x.copy_from_slice(y);
        let mut gbuf = [0.0; 8];
        let mut gvec = Vec::new();
        let g: &mut [f64] = if self.dim <= 8 {
            &mut gbuf[..self.dim]
        } else {
            gvec.resize(self.dim, 0.0);
            &mut gvec
        };
        for _ in 0..100 {
            let p = self.psi(x);
            if p.abs() <= tol {
                return true;
            }
            self.psi.gradient(x, g);
            let gg = dot(g, g);
            if gg < 1e-300 {
                break;
            }
            let t = -p / gg;
            for i in 0..self.dim {
                x[i] += t * g[i];
            }
        }
        self.psi(x).abs() <= self.boundary_tolerance()
    }
}

/// `B_k f(x) = grad f(x) . l_k(x)` at a boundary point of piece `k`.
pub fn boundary_apply(bspec: &BoundarySpec, k: usize, f: &TestFunction, x: &[f64]) -> Result<f64> {
    if k >= bspec.n_pieces() {
        return Err(LabError::Precondition(format!("no boundary piece {k}")));
    }
    if !bspec.on_boundary(x) {
        return Err(LabError::Precondition(format!(
            "{x:?} is not on the boundary (psi = {:.3e})",
            bspec.psi(x)
        )));
    }
    if !bspec.pieces_at(x).contains(&k) {
        return Err(LabError::Precondition(format!(
            "{x:?} does not belong to boundary piece {k}"
        )));
    }
    if let TestFunction::Constant(_) = f {
        return Ok(0.0);
    }
    let mut g = vec![0.0; bspec.dim];
    f.gradient(x, &mut g);
    Ok(dot(&g, &bspec.ell(k, x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_core::field::PolyField;

    fn interval() -> BoundarySpec {
        let psi = Polynomial::from_terms(&[(1.0, &[1]), (-1.0, &[2])]);
        BoundarySpec::new(psi, Arc::new(PolyField::constant(&[1.0])), vec![0.0], vec![1.0])
            .unwrap()
            .with_pieces(vec![
                BoundaryPiece {
                    name: "left".into(),
                    selector: Polynomial::linear(&[-1.0], 0.5),
                    ell: Some(Arc::new(PolyField::constant(&[1.0]))),
                },
                BoundaryPiece {
                    name: "right".into(),
                    selector: Polynomial::linear(&[1.0], -0.5),
                    ell: Some(Arc::new(PolyField::constant(&[-1.0]))),
                },
            ])
            .unwrap()
    }

    #[test]
    fn interval_boundary_operator() {
        let b = interval();
        assert_eq!(boundary_apply(&b, 0, &TestFunction::Coordinate(0), &[0.0]).unwrap(), 1.0);
        assert_eq!(boundary_apply(&b, 1, &TestFunction::Coordinate(0), &[1.0]).unwrap(), -1.0);
        assert_eq!(boundary_apply(&b, 0, &TestFunction::Constant(4.0), &[0.0]).unwrap(), 0.0);
        assert!(matches!(
            boundary_apply(&b, 1, &TestFunction::Coordinate(0), &[0.0]),
            Err(LabError::Precondition(_))
        ));
        assert!(boundary_apply(&b, 0, &TestFunction::Coordinate(0), &[0.3]).is_err());
    }

    #[test]
    fn projection_onto_interval_ends() {
        let b = interval();
        let p = b.project(&[-0.03]).unwrap();
        assert!(p[0].abs() < 1e-9);
        let p = b.project(&[1.2]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9);
    }
}
