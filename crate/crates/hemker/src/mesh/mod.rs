//! Piecewise-uniform Shishkin meshes for the four solver stages.
//!
//! All meshes are tensor products of two [`Mesh1D`]s. Nodes are ordered
//! lexicographically with the first coordinate innermost: node `(i, j)` has
//! linear index `j * nu + i`. Construction is pure; a mesh is immutable once
//! built.

mod coords;

pub use coords::{shishkin_1d, CoordSystem, CoordinateMap, Mesh1D};

pub use crate::params::{patch_width, ProblemParams};

use crate::error::{HemkerError, Result};

/// Relative slack used when classifying nodes against the unit circle.
const CIRCLE_TOL: f64 = 1e-12;

/// Role of a node in the discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeMask {
    Interior,
    /// Outer boundary or inter-stage interface carrying prescribed values.
    DirichletOuter,
    /// On the unit circle (value 1).
    DirichletInner,
    /// Artificial outflow or angular-extreme boundary (one-sided difference).
    NeumannArtificial,
    /// Strictly inside the unit circle (value 1).
    InsideCircle,
}

/// Tensor-product mesh with a coordinate-system tag and per-node masks.
#[derive(Debug, Clone)]
pub struct TensorMesh {
    pub u: Mesh1D,
    pub v: Mesh1D,
    pub system: CoordSystem,
    pub mask: Vec<NodeMask>,
}

impl TensorMesh {
    pub fn nu(&self) -> usize {
        self.u.len()
    }

    pub fn nv(&self) -> usize {
        self.v.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nu() * self.nv()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nu() + i
    }

    pub fn native(&self, i: usize, j: usize) -> (f64, f64) {
        (self.u.nodes[i], self.v.nodes[j])
    }

    pub fn map(&self) -> CoordinateMap {
        CoordinateMap::new(self.system)
    }

    pub fn physical(&self, i: usize, j: usize) -> (f64, f64) {
        let (u, v) = self.native(i, j);
        self.map().forward(u, v)
    }

    pub fn mask_at(&self, i: usize, j: usize) -> NodeMask {
        self.mask[self.idx(i, j)]
    }
}

fn circle_mask(x: f64, y: f64) -> Option<NodeMask> {
    let d2 = x * x + y * y;
    if (d2 - 1.0).abs() <= CIRCLE_TOL {
        Some(NodeMask::DirichletInner)
    } else if d2 < 1.0 {
        Some(NodeMask::InsideCircle)
    } else {
        None
    }
}

/// Polar mesh on the sector `[1, R] x [pi/2 - tau, 3pi/2 + tau]`.
///
/// Radial breakpoints `1, 1 + sigma1, 1 + sigma1 + sigma2, R` carry
/// `N/4 : N/4 : N/2` elements; angular breakpoints
/// `pi/2 - tau, pi/2 + tau, 3pi/2 - tau, 3pi/2 + tau` carry
/// `N/4 : N/2 : N/4`.
pub fn annulus_mesh(p: &ProblemParams) -> Result<TensorMesh> {
    p.validate()?;
    let n = p.n;
    let r_out = p.outer_radius;
    let (s1, s2) = (p.sigma1(), p.sigma2());
    let radial = shishkin_1d(
        &[1.0, 1.0 + s1, 1.0 + s1 + s2, r_out],
        &[n / 4, n / 4, n / 2],
    )?;
    let pi = std::f64::consts::PI;
    let tau = p.tau_angle();
    let angular = shishkin_1d(
        &[
            pi / 2.0 - tau,
            pi / 2.0 + tau,
            3.0 * pi / 2.0 - tau,
            3.0 * pi / 2.0 + tau,
        ],
        &[n / 4, n / 2, n / 4],
    )?;

    // The Dirichlet part of the outer arc is theta in [pi/2, 3pi/2]; by the
    // segment layout those are exactly the angular indices [N/8, 7N/8].
    let (j_lo, j_hi) = (n / 8, 7 * n / 8);
    let (nu, nv) = (radial.len(), angular.len());
    let mut mask = vec![NodeMask::Interior; nu * nv];
    for j in 0..nv {
        for i in 0..nu {
            let m = if i == 0 {
                NodeMask::DirichletInner
            } else if i == nu - 1 && (j_lo..=j_hi).contains(&j) {
                NodeMask::DirichletOuter
            } else if i == nu - 1 || j == 0 || j == nv - 1 {
                NodeMask::NeumannArtificial
            } else {
                NodeMask::Interior
            };
            mask[j * nu + i] = m;
        }
    }
    Ok(TensorMesh {
        u: radial,
        v: angular,
        system: CoordSystem::Polar,
        mask,
    })
}

/// Vertical Shishkin mesh shared by the strip and the downwind region:
/// breakpoints `-R, -1-tau2, -1+tau1, 1-tau1, 1+tau2, R` with elements in
/// the ratio `N/8 : N/4 : N/4 : N/4 : N/8`.
fn vertical_strip_mesh(p: &ProblemParams) -> Result<Mesh1D> {
    let r_out = p.outer_radius;
    let (t1, t2) = (p.tau1(), p.tau2());
    let n = p.n;
    shishkin_1d(
        &[
            -r_out,
            -1.0 - t2,
            -1.0 + t1,
            1.0 - t1,
            1.0 + t2,
            r_out,
        ],
        &[n / 8, n / 4, n / 4, n / 4, n / 8],
    )
}

fn cartesian_masks(horizontal: &Mesh1D, vertical: &Mesh1D) -> Vec<NodeMask> {
    let (nu, nv) = (horizontal.len(), vertical.len());
    let mut mask = vec![NodeMask::Interior; nu * nv];
    for j in 0..nv {
        for i in 0..nu {
            let (x, y) = (horizontal.nodes[i], vertical.nodes[j]);
            let m = if let Some(c) = circle_mask(x, y) {
                c
            } else if j == 0 || j == nv - 1 || i == 0 {
                NodeMask::DirichletOuter
            } else if i == nu - 1 {
                NodeMask::NeumannArtificial
            } else {
                NodeMask::Interior
            };
            mask[j * nu + i] = m;
        }
    }
    mask
}

/// Cartesian mesh on the strip `[0, R] x [-R, R]`: uniform horizontally,
/// layer-refined vertically. Nodes inside the unit circle are masked.
pub fn strip_mesh(p: &ProblemParams) -> Result<TensorMesh> {
    p.validate()?;
    let horizontal = shishkin_1d(&[0.0, p.outer_radius], &[p.n])?;
    let vertical = vertical_strip_mesh(p)?;
    let mask = cartesian_masks(&horizontal, &vertical);
    Ok(TensorMesh {
        u: horizontal,
        v: vertical,
        system: CoordSystem::Cartesian,
        mask,
    })
}

/// Cartesian mesh on the downwind region `[L*, R] x [-R, R]`: the strip's
/// vertical mesh with a uniform horizontal mesh rebuilt on `[L*, R]`.
pub fn downwind_mesh(p: &ProblemParams) -> Result<TensorMesh> {
    p.validate()?;
    let l_star = p.l_star();
    if l_star >= p.outer_radius {
        return Err(HemkerError::Mesh(format!(
            "downwind region is empty: L* = {} >= R = {}",
            l_star, p.outer_radius
        )));
    }
    if std::env::var("HEMKER_STAGE4_CLIP").is_ok() {
        // Experimental variant: keep the strip's own horizontal nodes and
        // clip at the first node past L*.
        let strip_h = shishkin_1d(&[0.0, p.outer_radius], &[p.n])?;
        let start = strip_h
            .nodes
            .iter()
            .position(|&x| x >= l_star)
            .unwrap_or(1)
            .max(1);
        let nodes: Vec<f64> = strip_h.nodes[start..].to_vec();
        let horizontal = Mesh1D {
            transitions: vec![nodes[0], *nodes.last().unwrap()],
            segment_counts: vec![nodes.len() - 1],
            nodes,
        };
        let vertical = vertical_strip_mesh(p)?;
        let mask = cartesian_masks(&horizontal, &vertical);
        return Ok(TensorMesh {
            u: horizontal,
            v: vertical,
            system: CoordSystem::Cartesian,
            mask,
        });
    }
    let horizontal = shishkin_1d(&[l_star, p.outer_radius], &[p.n])?;
    let vertical = vertical_strip_mesh(p)?;
    let mask = cartesian_masks(&horizontal, &vertical);
    Ok(TensorMesh {
        u: horizontal,
        v: vertical,
        system: CoordSystem::Cartesian,
        mask,
    })
}

/// Parabolic-patch mesh on `[0, L] x [1 - tau3, 1 + 3 delta]`: uniform in
/// `s`, Shishkin in `t` with breakpoints `1 - tau3, 1, 1 + tau3,
/// 1 + tau3 + tau4, 1 + 3 delta` and `M/4` elements per segment.
///
/// `upper` selects the coordinate flavour; the lower patch is the mirror
/// image and shares the same native mesh.
pub fn patch_mesh(p: &ProblemParams, upper: bool) -> Result<TensorMesh> {
    p.validate()?;
    let l = p.patch_len;
    if l > p.l_star() * (1.0 + 1e-12) {
        return Err(HemkerError::Mesh(format!(
            "patch width {} exceeds stability limit L* = {}",
            l,
            p.l_star()
        )));
    }
    let s_mesh = shishkin_1d(&[0.0, l], &[p.n])?;
    let (t3, t4) = (p.tau3(), p.tau4());
    let top = 1.0 + 3.0 * p.delta;
    let t_mesh = shishkin_1d(
        &[1.0 - t3, 1.0, 1.0 + t3, 1.0 + t3 + t4, top],
        &[p.m / 4, p.m / 4, p.m / 4, p.m / 4],
    )?;
    let system = if upper {
        CoordSystem::ParabolicUpper
    } else {
        CoordSystem::ParabolicLower
    };
    let map = CoordinateMap::new(system);
    let (nu, nv) = (s_mesh.len(), t_mesh.len());
    let mut mask = vec![NodeMask::Interior; nu * nv];
    for j in 0..nv {
        for i in 0..nu {
            let (x, y) = map.forward(s_mesh.nodes[i], t_mesh.nodes[j]);
            let m = if let Some(c) = circle_mask(x, y) {
                c
            } else if i == nu - 1 {
                // Outflow edge s = L, including the top corner.
                NodeMask::NeumannArtificial
            } else if i == 0 || j == nv - 1 {
                NodeMask::DirichletOuter
            } else if j == 0 {
                // Bottom edge t = 1 - tau3 always lies inside the circle;
                // keep the circle value if rounding puts a node just outside.
                NodeMask::DirichletInner
            } else {
                NodeMask::Interior
            };
            mask[j * nu + i] = m;
        }
    }
    Ok(TensorMesh {
        u: s_mesh,
        v: t_mesh,
        system,
        mask,
    })
}
