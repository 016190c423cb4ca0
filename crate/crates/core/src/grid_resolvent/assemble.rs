use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use super::grid::{Grid, GridFunction, NodeClass};
use crate::error::{LabError, Result};
use crate::numerics::norm;
use crate::operator_core::boundary::BoundarySpec;
use crate::operator_core::generator::GeneratorSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RowKind {
    /// `(lambda - A_h) u = h`.
    Interior,
    /// Generator row with the stencil truncated at a face of the box.
    Edge,
    /// `-B_k u = 0` by a one-sided difference along `l_k`.
    Boundary(usize),
}

impl RowKind {
    pub fn is_generator_row(self) -> bool {
        !matches!(self, RowKind::Boundary(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MMatrixFlags {
    pub sign_pattern: bool,
    pub diagonal_dominance: bool,
}

impl MMatrixFlags {
    pub fn certified(&self) -> bool {
        self.sign_pattern && self.diagonal_dominance
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[derive(Default)]
pub struct AssembleOptions {
    /// Marks with `|z|` below this enter through their covariance as extra
    /// diffusion; larger marks are jumps on the grid. Defaults to the spacing.
    pub jump_eps: Option<f64>,
}


/// Sparse `lambda I - A_h` stacked with the boundary rows, in CSR form over
/// the active nodes of a grid.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    grid: Arc<Grid>,
    lambda: f64,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<usize>,
    kinds: Vec<RowKind>,
    extrapolated: Vec<usize>,
    renormalized: Vec<usize>,
    flags: MMatrixFlags,
}

fn scan_flags(op: &DiscreteOperator) -> MMatrixFlags {
    let mut flags = MMatrixFlags {
        sign_pattern: true,
        diagonal_dominance: true,
    };
    for r in 0..op.n_rows() {
        let (sign, dom) = op.row_status(r);
        flags.sign_pattern &= sign;
        flags.diagonal_dominance &= dom;
    }
    flags
}

struct RowBuilder {
    entries: Vec<(usize, f64)>,
}

impl RowBuilder {
    fn add(&mut self, col: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((col, v));
        }
    }

    fn finish(mut self, row: usize, op: &mut DiscreteOperator) {
        self.entries.push((row, 0.0));
        self.entries.sort_by_key(|e| e.0);
        let mut last = usize::MAX;
        for (c, v) in self.entries {
            if c == last {
                *op.vals.last_mut().expect("entry") += v;
            } else {
                if c == row {
                    op.diag.push(op.cols.len());
                }
                op.cols.push(c);
                op.vals.push(v);
                last = c;
            }
        }
        op.row_ptr.push(op.cols.len());
    }
}

/// Monotone assembly of `lambda - A` on the grid: central second differences
/// for the diagonal of `a`, the positive-coefficient seven-point stencil for
/// cross terms, upwind drift, jumps through nonnegative interpolation weights,
/// and oblique one-sided boundary rows.
pub fn assemble(
    spec: &GeneratorSpec,
    grid: Arc<Grid>,
    lambda: f64,
    bspec: Option<&BoundarySpec>,
    opts: &AssembleOptions,
) -> Result<DiscreteOperator> {
    if !(lambda > 0.0) {
        return Err(LabError::Precondition(format!("lambda must be positive, got {lambda}")));
    }
    let d = grid.dim();
    if spec.dim() != d {
        return Err(LabError::Config(format!(
            "generator has dimension {}, grid has {d}",
            spec.dim()
        )));
    }
    let n = grid.n_active();
    let mut op = DiscreteOperator {
        grid: grid.clone(),
        lambda,
        row_ptr: vec![0],
        cols: Vec::new(),
        vals: Vec::new(),
        diag: Vec::with_capacity(n),
        kinds: Vec::with_capacity(n),
        extrapolated: Vec::new(),
        renormalized: Vec::new(),
        flags: MMatrixFlags {
            sign_pattern: true,
            diagonal_dominance: true,
        },
    };
    let h = grid.spacing().to_vec();
    let jump_eps = opts.jump_eps.unwrap_or_else(|| grid.min_spacing());
    let jump = spec.jump();
    let jump_nodes = jump.map(|j| j.nodes_above(jump_eps)).unwrap_or_default();
    let mut off = vec![0isize; d];
    let mut eta = vec![0.0; d];
    let mut ebuf = vec![0.0; d + 1];
    let mut y = vec![0.0; d];
    for s in 0..n {
        let id = grid.node_id(s);
        let x = grid.point(s);
        let mut row = RowBuilder { entries: Vec::new() };
        let kind = match grid.class(s) {
            NodeClass::Interior => RowKind::Interior,
            NodeClass::Edge => RowKind::Edge,
            NodeClass::Boundary(k) => RowKind::Boundary(k),
            NodeClass::Exterior => unreachable!("exterior nodes carry no unknown"),
        };
        if let RowKind::Boundary(k) = kind {
            let b = bspec.ok_or_else(|| {
                LabError::Precondition("grid has boundary nodes but no boundary specification was given".into())
            })?;
            let p = grid.anchor(s).unwrap_or(&x);
            let l = b.ell(k, p);
            let ln = norm(&l);
            if !(ln > 0.0) {
                return Err(LabError::Assembly {
                    node: id,
                    detail: "reflection direction vanishes".into(),
                });
            }
            // Step along l to the nearest cell whose corners are all active,
            // so the difference stays exact on linear functions.
            let mut chosen = None;
            for m in [1.0, 1.5, 2.0, 3.0, 4.0] {
                let delta = m * grid.min_spacing();
                for i in 0..d {
                    y[i] = x[i] + delta * l[i] / ln;
                }
                if let Some(st) = grid.stencil(&y) {
                    if st.complete && !st.clamped {
                        chosen = Some((delta, st));
                        break;
                    }
                    if chosen.is_none() {
                        chosen = Some((delta, st));
                    }
                }
            }
            let (delta, st) = chosen.ok_or_else(|| LabError::Assembly {
                node: id,
                detail: "the reflection direction leaves the grid; enlarge the box".into(),
            })?;
            if !st.complete || st.clamped {
                op.renormalized.push(s);
            }
            let scale = ln / delta;
            row.add(s, scale);
            let mut moved = 0.0;
            for &(j, w) in &st.entries {
                row.add(j, -scale * w);
                if j != s {
                    moved += w;
                }
            }
            if moved <= 1e-12 {
                return Err(LabError::Assembly {
                    node: id,
                    detail: "the one-sided difference along l does not leave the node; refine the grid".into(),
                });
            }
        } else {
            let mut a = spec.diffusion_matrix(&x);
            let mut b = spec.drift(&x);
            if let Some(j) = jump {
                let cov = j.small_jump_covariance(&x, jump_eps);
                for (ai, ci) in a.iter_mut().zip(&cov) {
                    *ai += ci;
                }
                for (bi, ci) in b.iter_mut().zip(j.compensator_drift(&x, jump_eps)) {
                    *bi += ci;
                }
            }
            // Axes whose stencil reaches past the box are dropped at edge nodes.
            let open: Vec<bool> = (0..d)
                .map(|i| {
                    off.iter_mut().for_each(|o| *o = 0);
                    off[i] = 1;
                    let up = grid.active_neighbor(id, &off).is_some();
                    off[i] = -1;
                    let down = grid.active_neighbor(id, &off).is_some();
                    up && down
                })
                .collect();
            let mut centre = -lambda;
            let neighbor = |offset: &[(usize, isize)], v: f64, row: &mut RowBuilder| -> Result<()> {
                let mut o = vec![0isize; d];
                for &(i, k) in offset {
                    o[i] = k;
                }
                let j = grid.active_neighbor(id, &o).ok_or_else(|| LabError::Assembly {
                    node: id,
                    detail: format!("stencil neighbor {o:?} is not an active node"),
                })?;
                // Stored as the operator row: off-diagonals of lambda - A.
                row.add(j, -v);
                Ok(())
            };
            for i in 0..d {
                if !open[i] {
                    continue;
                }
                let mut axis = a[i * d + i] / (2.0 * h[i] * h[i]);
                for j in 0..d {
                    if j != i && open[j] {
                        axis -= a[i * d + j].abs() / (2.0 * h[i] * h[j]);
                    }
                }
                if axis < -1e-12 * a[i * d + i].abs().max(1.0) / (h[i] * h[i]) {
                    return Err(LabError::Assembly {
                        node: id,
                        detail: format!(
                            "cross-diffusion dominates axis {}: the seven-point stencil is not monotone at this spacing; use a finer grid along the other axes or a wider stencil",
                            i + 1
                        ),
                    });
                }
                let axis = axis.max(0.0);
                neighbor(&[(i, 1)], axis, &mut row)?;
                neighbor(&[(i, -1)], axis, &mut row)?;
                centre -= 2.0 * axis;
            }
            for i in 0..d {
                for j in (i + 1)..d {
                    let aij = a[i * d + j];
                    if aij == 0.0 || !open[i] || !open[j] {
                        continue;
                    }
                    let c = aij.abs() / (2.0 * h[i] * h[j]);
                    let sj = if aij > 0.0 { 1 } else { -1 };
                    neighbor(&[(i, 1), (j, sj)], c, &mut row)?;
                    neighbor(&[(i, -1), (j, -sj)], c, &mut row)?;
                    centre -= 2.0 * c;
                }
            }
            for i in 0..d {
                if b[i] == 0.0 {
                    continue;
                }
                let dir = if b[i] > 0.0 { 1 } else { -1 };
                off.iter_mut().for_each(|o| *o = 0);
                off[i] = dir;
                if grid.active_neighbor(id, &off).is_none() {
                    continue;
                }
                let c = b[i].abs() / h[i];
                neighbor(&[(i, dir)], c, &mut row)?;
                centre -= c;
            }
            if let Some(jspec) = jump {
                let mut flagged = false;
                for node in &jump_nodes {
                    jspec.eta_into(&x, node.z, &mut ebuf, &mut eta);
                    for i in 0..d {
                        y[i] = x[i] + eta[i];
                    }
                    let st = match grid.stencil(&y) {
                        Some(st) => st,
                        None => {
                            // Constant extrapolation from the nearest point of the box.
                            for i in 0..d {
                                y[i] = y[i].clamp(grid.lo()[i], grid.hi()[i]);
                            }
                            flagged = true;
                            grid.stencil(&y).ok_or_else(|| LabError::Assembly {
                                node: id,
                                detail: "jump destination has no active interpolation corner".into(),
                            })?
                        }
                    };
                    flagged |= st.clamped;
                    for &(j, w) in &st.entries {
                        row.add(j, -node.weight * w);
                    }
                    centre -= node.weight;
                }
                if flagged {
                    op.extrapolated.push(s);
                }
            }
            row.add(s, -centre);
        }
        op.kinds.push(kind);
        row.finish(s, &mut op);
    }
    op.flags = scan_flags(&op);
    Ok(op)
}

impl DiscreteOperator {
    /// Operator from `(row, col, value)` triplets, all rows treated as
    /// generator rows. Duplicates are summed.
    pub fn from_triplets(grid: Arc<Grid>, lambda: f64, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let n = grid.n_active();
        let mut rows: Vec<RowBuilder> = (0..n).map(|_| RowBuilder { entries: Vec::new() }).collect();
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(LabError::Data(format!("triplet ({r}, {c}) outside a {n}x{n} operator")));
            }
            rows[r].add(c, v);
        }
        let mut op = DiscreteOperator {
            grid,
            lambda,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            diag: Vec::with_capacity(n),
            kinds: vec![RowKind::Interior; n],
            extrapolated: Vec::new(),
            renormalized: Vec::new(),
            flags: MMatrixFlags {
                sign_pattern: true,
                diagonal_dominance: true,
            },
        };
        for (r, row) in rows.into_iter().enumerate() {
            row.finish(r, &mut op);
        }
        op.flags = scan_flags(&op);
        Ok(op)
    }

    /// Same matrix with new row kinds.
    pub fn with_kinds(mut self, kinds: Vec<RowKind>) -> Result<Self> {
        if kinds.len() != self.n_rows() {
            return Err(LabError::Data("row kind count mismatch".into()));
        }
        self.kinds = kinds;
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn kinds(&self) -> &[RowKind] {
        &self.kinds
    }

    pub fn flags(&self) -> MMatrixFlags {
        self.flags
    }

    /// Rows whose jump destinations were clamped onto the box.
    pub fn extrapolated_rows(&self) -> &[usize] {
        &self.extrapolated
    }

    /// Boundary rows whose foot point fell in a cell with inactive corners;
    /// their weights were renormalized, so they are monotone but not exact on
    /// linear functions. This happens where `l` is nearly tangential.
    pub fn renormalized_rows(&self) -> &[usize] {
        &self.renormalized
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn diagonal(&self, r: usize) -> f64 {
        self.vals[self.diag[r]]
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }

    /// `(sign pattern ok, weakly diagonally dominant)` for one row.
    pub fn row_status(&self, r: usize) -> (bool, bool) {
        let diag = self.diagonal(r);
        let mut off = 0.0;
        let mut sign = diag > 0.0;
        for (c, v) in self.row(r) {
            if c != r {
                sign &= v <= 0.0;
                off += v.abs();
            }
        }
        (sign, diag >= off - 1e-12 * diag.abs().max(off))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n_rows())
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n_rows())
            .map(|r| self.row(r).map(|(c, v)| v * u[c]).sum())
            .collect()
    }

    /// Right-hand side: `h` on generator rows, zero on boundary rows.
    pub fn rhs(&self, h: &GridFunction) -> Vec<f64> {
        h.values()
            .iter()
            .zip(&self.kinds)
            .map(|(&v, k)| if k.is_generator_row() { v } else { 0.0 })
            .collect()
    }

    /// One Gauss-Seidel / SOR sweep; returns the largest update.
    pub(crate) fn sweep(&self, u: &mut [f64], rhs: &[f64], omega: f64) -> f64 {
        let mut change = 0.0f64;
        for r in 0..self.n_rows() {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut acc = rhs[r];
            for k in a..b {
                let c = self.cols[k];
                if c != r {
                    acc -= self.vals[k] * u[c];
                }
            }
            let new = acc / self.vals[self.diag[r]];
            let next = u[r] + omega * (new - u[r]);
            change = change.max((next - u[r]).abs());
            u[r] = next;
        }
        change
    }

    /// Text export: a `rows,cols,nnz` header line, then `row,col,value` lines.
    pub fn write_triplets<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{},{},{}", self.n_rows(), self.n_rows(), self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r},{c},{v}")?;
        }
        Ok(())
    }
}
