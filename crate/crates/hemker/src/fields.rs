//! Grid functions, bilinear evaluation in native coordinates, and the
//! composite solutions assembled from overlapping subdomain solves.
//!
//! A composite owns an ordered list of (region, field) pieces; evaluation at
//! a physical point returns 1 inside the closed unit disk and otherwise uses
//! the first piece whose region contains the point, converting to that
//! piece's native coordinates. Piece order therefore resolves overlaps
//! deterministically.

use std::sync::Arc;

use crate::error::{HemkerError, Result};
use crate::mesh::TensorMesh;
use crate::params::ProblemParams;

/// Nodal values on a tensor mesh with a bilinear evaluator.
#[derive(Debug, Clone)]
pub struct GridField {
    pub mesh: Arc<TensorMesh>,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(mesh: Arc<TensorMesh>, values: Vec<f64>) -> Self {
        assert_eq!(mesh.num_nodes(), values.len());
        GridField { mesh, values }
    }

    pub fn constant(mesh: Arc<TensorMesh>, value: f64) -> Self {
        let values = vec![value; mesh.num_nodes()];
        GridField { mesh, values }
    }

    pub fn value_at(&self, i: usize, j: usize) -> f64 {
        self.values[self.mesh.idx(i, j)]
    }

    /// Bilinear value at a native point; exact at nodes, error outside the
    /// mesh bounding box.
    pub fn eval(&self, u: f64, v: f64) -> Result<f64> {
        bilinear_eval(self, u, v)
    }

    /// Evaluates at physical points through the mesh's coordinate map.
    pub fn trace_physical(&self, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        let map = self.mesh.map();
        points
            .iter()
            .map(|&(x, y)| {
                let (u, v) = map.inverse(x, y);
                self.eval(u, v)
            })
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Tensor-product bilinear interpolation on the containing cell.
pub fn bilinear_eval(f: &GridField, u: f64, v: f64) -> Result<f64> {
    let mesh = &f.mesh;
    let cu = mesh.u.find_cell(u).map_err(|_| HemkerError::OutsideMesh { u, v })?;
    let cv = mesh.v.find_cell(v).map_err(|_| HemkerError::OutsideMesh { u, v })?;
    let (u0, u1) = (mesh.u.nodes[cu], mesh.u.nodes[cu + 1]);
    let (v0, v1) = (mesh.v.nodes[cv], mesh.v.nodes[cv + 1]);
    let wu = (u - u0) / (u1 - u0);
    let wv = (v - v0) / (v1 - v0);
    let f00 = f.value_at(cu, cv);
    let f10 = f.value_at(cu + 1, cv);
    let f01 = f.value_at(cu, cv + 1);
    let f11 = f.value_at(cu + 1, cv + 1);
    Ok((1.0 - wv) * ((1.0 - wu) * f00 + wu * f10) + wv * ((1.0 - wu) * f01 + wu * f11))
}

/// Physical-region predicate of a composite piece.
#[derive(Debug, Clone, Copy)]
pub enum Region {
    /// `x <= 0` within the annulus (polar piece).
    LeftHalfPlane { r_max: f64 },
    /// Whole polar sector including the angular overhang.
    Sector { r_max: f64, theta_min: f64, theta_max: f64 },
    /// `x_min <= x <= x_max`, `|y| <= y_max` (strip and downwind pieces).
    Rectangle { x_min: f64, x_max: f64, y_max: f64 },
    /// Parabolic patch: `0 <= x <= len`, `t_min <= y + x^2/2 <= t_max`.
    PatchUpper { len: f64, t_min: f64, t_max: f64 },
    /// Mirror image: `t = -y + x^2/2` in the same band.
    PatchLower { len: f64, t_min: f64, t_max: f64 },
}

const REGION_TOL: f64 = 1e-12;

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::LeftHalfPlane { r_max } => {
                x <= 0.0 && x.hypot(y) <= r_max * (1.0 + REGION_TOL)
            }
            Region::Sector {
                r_max,
                theta_min,
                theta_max,
            } => {
                let r = x.hypot(y);
                let mut theta = y.atan2(x);
                if theta < 0.0 {
                    theta += 2.0 * std::f64::consts::PI;
                }
                r <= r_max * (1.0 + REGION_TOL) && (theta_min..=theta_max).contains(&theta)
            }
            Region::Rectangle { x_min, x_max, y_max } => {
                (x_min - REGION_TOL..=x_max + REGION_TOL).contains(&x) && y.abs() <= y_max + REGION_TOL
            }
            Region::PatchUpper { len, t_min, t_max } => {
                let t = y + 0.5 * x * x;
                (-REGION_TOL..=len + REGION_TOL).contains(&x)
                    && (t_min - REGION_TOL..=t_max + REGION_TOL).contains(&t)
            }
            Region::PatchLower { len, t_min, t_max } => {
                let t = -y + 0.5 * x * x;
                (-REGION_TOL..=len + REGION_TOL).contains(&x)
                    && (t_min - REGION_TOL..=t_max + REGION_TOL).contains(&t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionLabel {
    /// Sector solve only (stage 1), used for the sector convergence table.
    SectorOnly,
    /// Initial composite of the polar and strip solves.
    Initial,
    /// Corrected composite with the parabolic patches and downwind re-solve.
    Corrected,
}

#[derive(Debug, Clone)]
pub struct Piece {
    pub region: Region,
    pub field: GridField,
}

/// Ordered overlapping pieces covering the domain outside the unit disk.
#[derive(Debug, Clone)]
pub struct CompositeSolution {
    pub pieces: Vec<Piece>,
    pub params: ProblemParams,
    pub label: SolutionLabel,
}

impl CompositeSolution {
    /// Value at a physical point: 1 on the closed unit disk, otherwise the
    /// first piece owning the point.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        if x * x + y * y <= 1.0 {
            return Ok(1.0);
        }
        for piece in &self.pieces {
            if piece.region.contains(x, y) {
                let (u, v) = piece.field.mesh.map().inverse(x, y);
                return piece.field.eval(u, v);
            }
        }
        Err(HemkerError::OutsideDomain { x, y })
    }

    /// Values along a list of physical points.
    pub fn trace(&self, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        points.iter().map(|&(x, y)| self.eval(x, y)).collect()
    }

    /// Physical images of every node of every piece, open unit disk
    /// excluded.
    pub fn node_images(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for piece in &self.pieces {
            let mesh = &piece.field.mesh;
            for j in 0..mesh.nv() {
                for i in 0..mesh.nu() {
                    let (x, y) = mesh.physical(i, j);
                    if x * x + y * y >= 1.0 {
                        pts.push((x, y));
                    }
                }
            }
        }
        pts
    }

    /// Physical images of every cell center (used to enrich the two-mesh
    /// sampling set; interpolation error peaks there).
    pub fn cell_centers(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for piece in &self.pieces {
            let mesh = &piece.field.mesh;
            let map = mesh.map();
            for j in 0..mesh.nv() - 1 {
                for i in 0..mesh.nu() - 1 {
                    let u = 0.5 * (mesh.u.nodes[i] + mesh.u.nodes[i + 1]);
                    let v = 0.5 * (mesh.v.nodes[j] + mesh.v.nodes[j + 1]);
                    let (x, y) = map.forward(u, v);
                    if x * x + y * y >= 1.0 {
                        pts.push((x, y));
                    }
                }
            }
        }
        pts
    }
}

/// Maximum absolute difference between two composites over the union of
/// their node images plus the first composite's cell centers, restricted by
/// `filter`. Points where either composite is undefined (outside its
/// domain) are skipped; the open unit disk is excluded by construction.
pub fn union_sup_diff<F>(a: &CompositeSolution, b: &CompositeSolution, filter: F) -> f64
where
    F: Fn(f64, f64) -> bool + Sync,
{
    union_sup_diff_counted(a, b, filter).0
}

/// As [`union_sup_diff`], also returning (evaluated, selected) point counts
/// so callers can detect a sampling set that silently collapsed.
pub fn union_sup_diff_counted<F>(
    a: &CompositeSolution,
    b: &CompositeSolution,
    filter: F,
) -> (f64, usize, usize)
where
    F: Fn(f64, f64) -> bool + Sync,
{
    use rayon::prelude::*;
    let mut pts = a.node_images();
    pts.extend(b.node_images());
    pts.extend(a.cell_centers());
    pts.par_chunks(4096)
        .map(|chunk| {
            let mut worst = 0.0f64;
            let mut evaluated = 0usize;
            let mut selected = 0usize;
            for &(x, y) in chunk {
                if !filter(x, y) {
                    continue;
                }
                selected += 1;
                if let (Ok(va), Ok(vb)) = (a.eval(x, y), b.eval(x, y)) {
                    evaluated += 1;
                    worst = worst.max((va - vb).abs());
                }
            }
            (worst, evaluated, selected)
        })
        .reduce(
            || (0.0, 0, 0),
            |x, y| (x.0.max(y.0), x.1 + y.1, x.2 + y.2),
        )
}
