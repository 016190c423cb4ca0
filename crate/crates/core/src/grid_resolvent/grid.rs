use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::operator_core::boundary::BoundarySpec;

/// Region to discretize.
#[allow(clippy::large_enum_variant)]
#[derive(Clone)]
pub enum Domain {
    /// Plain box; nodes on its faces get truncated stencils.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{psi > 0}` inside the bounding box of the boundary specification.
    Region(BoundarySpec),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resolution {
    /// Target spacing, adjusted per axis to fit the box exactly.
    Spacing(f64),
    /// Nodes per axis.
    Nodes(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NodeClass {
    Interior,
    /// Inside the domain but on a face of the box.
    Edge,
    /// Carries the boundary piece index.
    Boundary(usize),
    Exterior,
}

impl NodeClass {
    pub fn is_active(self) -> bool {
        self != NodeClass::Exterior
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounts {
    pub interior: usize,
    pub edge: usize,
    pub boundary: usize,
    pub exterior: usize,
}

const NONE: usize = usize::MAX;

/// Structured grid over the closure of the domain. Unknowns live on the
/// active (non-exterior) nodes, numbered in node order.
#[derive(Clone, Debug)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
    h: Vec<f64>,
    stride: Vec<usize>,
    class: Vec<NodeClass>,
    active: Vec<usize>,
    slot: Vec<usize>,
    /// Boundary point associated with each active boundary node.
    anchor: Vec<Option<Vec<f64>>>,
    tau: f64,
}

/// Multilinear interpolation weights over active nodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stencil {
    pub entries: Vec<(usize, f64)>,
    /// The point lay outside the box and was clamped onto it.
    pub clamped: bool,
    /// Every corner with positive weight was active, so no renormalization.
    pub complete: bool,
}

pub fn build_grid(domain: &Domain, resolution: Resolution) -> Result<Grid> {
    let (lo, hi, bspec) = match domain {
        Domain::Box { lo, hi } => (lo.clone(), hi.clone(), None),
        Domain::Region(b) => {
            let (lo, hi) = b.bbox();
            (lo.to_vec(), hi.to_vec(), Some(b))
        }
    };
    let d = lo.len();
    if d == 0 || hi.len() != d || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
        return Err(LabError::Config("grid box needs lo < hi on every axis".into()));
    }
    let mut n = Vec::with_capacity(d);
    for i in 0..d {
        let len = hi[i] - lo[i];
        let ni = match resolution {
            Resolution::Nodes(k) => k,
            Resolution::Spacing(dx) => {
                if !(dx > 0.0) {
                    return Err(LabError::Resolution(format!("spacing must be positive, got {dx}")));
                }
                (len / dx).round() as usize + 1
            }
        };
        if ni < 4 {
            return Err(LabError::Resolution(format!(
                "axis {} has {ni} nodes; at least 4 are required",
                i + 1
            )));
        }
        n.push(ni);
    }
    let h: Vec<f64> = (0..d).map(|i| (hi[i] - lo[i]) / (n[i] - 1) as f64).collect();
    let mut stride = vec![1; d];
    for i in 1..d {
        stride[i] = stride[i - 1] * n[i - 1];
    }
    let total = stride[d - 1] * n[d - 1];
    let mut grid = Grid {
        lo,
        hi,
        n,
        h,
        stride,
        class: vec![NodeClass::Exterior; total],
        active: Vec::new(),
        slot: vec![NONE; total],
        anchor: Vec::new(),
        tau: bspec.map_or(0.0, |b| b.boundary_tolerance()),
    };
    let mut x = vec![0.0; d];
    let mut inside = vec![true; total];
    if let Some(b) = bspec {
        for id in 0..total {
            grid.coords_into(id, &mut x);
            inside[id] = b.psi(&x) > grid.tau;
        }
    }
    if !inside.iter().any(|&v| v) {
        return Err(LabError::Resolution("the domain does not meet the grid box".into()));
    }
    let mut anchors = vec![None; total];
    for id in 0..total {
        grid.coords_into(id, &mut x);
        if inside[id] {
            grid.class[id] = if grid.on_face(id) {
                NodeClass::Edge
            } else {
                NodeClass::Interior
            };
        } else if let Some(b) = bspec {
            if grid.neighborhood(id).any(|j| inside[j]) {
                let p = b.project(&x).map_err(|_| LabError::Classification(id))?;
                let k = b.piece_at(&p).ok_or(LabError::Classification(id))?;
                grid.class[id] = NodeClass::Boundary(k);
                anchors[id] = Some(p);
            }
        }
    }
    for id in 0..total {
        if grid.class[id].is_active() {
            grid.slot[id] = grid.active.len();
            grid.active.push(id);
            grid.anchor.push(anchors[id].take());
        }
    }
    if grid.counts().interior == 0 {
        return Err(LabError::Resolution(
            "the domain is thinner than one cell: no interior nodes".into(),
        ));
    }
    Ok(grid)
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.n
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn min_spacing(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.h.iter().copied().fold(0.0, f64::max)
    }

    pub fn n_nodes(&self) -> usize {
        self.class.len()
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn counts(&self) -> NodeCounts {
        let mut c = NodeCounts::default();
        for cl in &self.class {
            match cl {
                NodeClass::Interior => c.interior += 1,
                NodeClass::Edge => c.edge += 1,
                NodeClass::Boundary(_) => c.boundary += 1,
                NodeClass::Exterior => c.exterior += 1,
            }
        }
        c
    }

    pub fn class_of_node(&self, id: usize) -> NodeClass {
        self.class[id]
    }

    /// Class of the active node `s`.
    pub fn class(&self, s: usize) -> NodeClass {
        self.class[self.active[s]]
    }

    /// Node id of the active node `s`.
    pub fn node_id(&self, s: usize) -> usize {
        self.active[s]
    }

    /// Active index of a node id.
    pub fn slot(&self, id: usize) -> Option<usize> {
        let s = self.slot[id];
        (s != NONE).then_some(s)
    }

    /// Boundary point attached to an active boundary node.
    pub fn anchor(&self, s: usize) -> Option<&[f64]> {
        self.anchor[s].as_deref()
    }

    pub fn multi_index(&self, id: usize) -> Vec<usize> {
        (0..self.dim()).map(|i| (id / self.stride[i]) % self.n[i]).collect()
    }

    pub fn coords_into(&self, id: usize, out: &mut [f64]) {
        for i in 0..self.dim() {
            let k = (id / self.stride[i]) % self.n[i];
            out[i] = if k + 1 == self.n[i] {
                self.hi[i]
            } else {
                self.lo[i] + k as f64 * self.h[i]
            };
        }
    }

    /// Coordinates of the active node `s`.
    pub fn point(&self, s: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords_into(self.active[s], &mut x);
        x
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.n_active()).map(|s| self.point(s))
    }

    fn on_face(&self, id: usize) -> bool {
        (0..self.dim()).any(|i| {
            let k = (id / self.stride[i]) % self.n[i];
            k == 0 || k + 1 == self.n[i]
        })
    }

    /// Node id shifted by `offset` (per axis), if it stays in the box.
    pub fn shifted(&self, id: usize, offset: &[isize]) -> Option<usize> {
        let mut out = id;
        for i in 0..self.dim() {
            let k = ((id / self.stride[i]) % self.n[i]) as isize + offset[i];
            if k < 0 || k >= self.n[i] as isize {
                return None;
            }
            out = (out as isize + offset[i] * self.stride[i] as isize) as usize;
        }
        Some(out)
    }

    /// Active index of the node shifted by `offset`.
    pub fn active_neighbor(&self, id: usize, offset: &[isize]) -> Option<usize> {
        self.shifted(id, offset).and_then(|j| self.slot(j))
    }

    /// All nodes at Chebyshev distance one.
    fn neighborhood(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        let d = self.dim();
        (0..3usize.pow(d as u32)).filter_map(move |mut code| {
            let mut off = [0isize; 8];
            let mut zero = true;
            for o in off.iter_mut().take(d) {
                *o = (code % 3) as isize - 1;
                zero &= *o == 0;
                code /= 3;
            }
            if zero {
                None
            } else {
                self.shifted(id, &off[..d])
            }
        })
    }

    /// Interpolation weights at `x` over the active corners of its cell,
    /// renormalized. Points up to one cell outside the box are clamped onto it.
    /// `None` when the point is farther out or its cell has no active corner.
    pub fn stencil(&self, x: &[f64]) -> Option<Stencil> {
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        let mut clamped = false;
        for i in 0..d {
            let t = (x[i] - self.lo[i]) / self.h[i];
            let top = (self.n[i] - 1) as f64;
            if !t.is_finite() || t < -1.0 - 1e-9 || t > top + 1.0 + 1e-9 {
                return None;
            }
            let tc = if t < 0.0 {
                clamped |= t < -1e-9;
                0.0
            } else if t > top {
                clamped |= t > top + 1e-9;
                top
            } else {
                t
            };
            let c = (tc.floor() as usize).min(self.n[i] - 2);
            base[i] = c;
            frac[i] = tc - c as f64;
        }
        let mut entries = Vec::with_capacity(1 << d);
        let mut total = 0.0;
        let mut complete = true;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut id = 0;
            for i in 0..d {
                let up = (corner >> i) & 1;
                w *= if up == 1 { frac[i] } else { 1.0 - frac[i] };
                id += (base[i] + up) * self.stride[i];
            }
            if w <= 0.0 {
                continue;
            }
            if let Some(s) = self.slot(id) {
                entries.push((s, w));
                total += w;
            } else {
                complete = false;
            }
        }
        if total <= 0.0 {
            return None;
        }
        for e in &mut entries {
            e.1 /= total;
        }
        Some(Stencil {
            entries,
            clamped,
            complete,
        })
    }
}

/// Values on the active nodes of a grid.
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_active() {
            return Err(LabError::Data(format!(
                "{} values for {} active nodes",
                values.len(),
                grid.n_active()
            )));
        }
        if let Some(s) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::Data(format!("non-finite value at active node {s}")));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Arc<Grid>, f: F) -> Result<Self> {
        let values = grid.points().map(|x| f(&x)).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.n_active();
        GridFunction { grid, values: vec![c; n] }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
            || (self.grid.lo == other.grid.lo
                && self.grid.hi == other.grid.hi
                && self.grid.n == other.grid.n
                && self.grid.active == other.grid.active)
    }

    /// Pointwise map into a new function on the same grid.
    pub fn map<F: Fn(&[f64], f64) -> f64>(&self, f: F) -> GridFunction {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(s, &v)| f(&self.grid.point(s), v))
            .collect();
        GridFunction {
            grid: self.grid.clone(),
            values,
        }
    }

    /// Multilinear interpolation; constant extrapolation up to one cell
    /// outside the grid box.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.grid.dim() {
            return Err(LabError::Precondition(format!(
                "point has dimension {}, grid has {}",
                x.len(),
                self.grid.dim()
            )));
        }
        let st = self.grid.stencil(x).ok_or_else(|| LabError::Extrapolation { point: x.to_vec() })?;
        Ok(st.entries.iter().map(|&(s, w)| w * self.values[s]).sum())
    }

    /// CSV with columns `i1..id, x1..xd, u`, one row per active node.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let d = self.grid.dim();
        let mut head: Vec<String> = (1..=d).map(|i| format!("i{i}")).collect();
        head.extend((1..=d).map(|i| format!("x{i}")));
        head.push("u".into());
        writeln!(w, "{}", head.join(","))?;
        let mut x = vec![0.0; d];
        for (s, &id) in self.grid.active.iter().enumerate() {
            self.grid.coords_into(id, &mut x);
            let idx = self.grid.multi_index(id);
            let mut row: Vec<String> = idx.iter().map(|k| k.to_string()).collect();
            row.extend(x.iter().map(|v| v.to_string()));
            row.push(self.values[s].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("ascii csv")
    }
}
