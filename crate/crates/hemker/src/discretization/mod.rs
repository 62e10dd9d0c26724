//! Upwind finite-difference assembly for the four stage operators.
//!
//! Every node of a [`TensorMesh`] owns exactly one [`StencilRow`]. Rows are
//! normalized by their largest absolute coefficient so that the solver's
//! residual contract is meaningful across the whole `eps` range; the
//! normalization is sign-preserving, so the M-matrix pattern of the raw
//! operator survives it.

use std::io::Write;
use std::sync::Arc;

use crate::error::{HemkerError, Result};
use crate::mesh::{CoordSystem, NodeMask, TensorMesh};
use crate::params::ProblemParams;

/// Classification of an assembled row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Interior,
    DirichletInner,
    DirichletOuter,
    NeumannOutflow,
    NeumannAngular,
    InsideCircle,
}

/// One matrix row in stencil form. `entries` contains the center entry.
#[derive(Debug, Clone)]
pub struct StencilRow {
    pub center_index: usize,
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
    pub kind: RowKind,
}

impl StencilRow {
    pub fn center_coefficient(&self) -> f64 {
        self.entries
            .iter()
            .find(|(c, _)| *c == self.center_index)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    }
}

/// Sparse structured system tied to the mesh it was assembled on.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub rows: Vec<StencilRow>,
    pub unknown_count: usize,
    pub mesh: Arc<TensorMesh>,
}

impl LinearSystem {
    /// Infinity norm of `rhs - A x`, recomputed from the stencil rows.
    pub fn residual_inf(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            let ax: f64 = row.entries.iter().map(|&(c, v)| v * x[c]).sum();
            worst = worst.max((row.rhs - ax).abs());
        }
        worst
    }

    pub fn rhs_inf(&self) -> f64 {
        self.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max)
    }

    /// Text dump in `row col value` coordinate format, one rhs line per row.
    pub fn dump_coo<W: Write>(&self, mut w: W) -> Result<()> {
        for row in &self.rows {
            for &(c, v) in &row.entries {
                writeln!(w, "{} {} {:.17e}", row.center_index, c, v)?;
            }
            writeln!(w, "rhs {} {:.17e}", row.center_index, row.rhs)?;
        }
        Ok(())
    }
}

/// Upwinded first-difference value: `2 (b D^pm) Z = (b - |b|) D^+ Z + (b + |b|) D^- Z`.
pub fn upwind_first(b: f64, backward_diff: f64, forward_diff: f64) -> f64 {
    0.5 * ((b - b.abs()) * forward_diff + (b + b.abs()) * backward_diff)
}

/// Accumulates stencil coefficients for one row, then normalizes.
struct RowBuilder {
    center: usize,
    // (index, coefficient); small fixed set, linear scan is fine.
    entries: Vec<(usize, f64)>,
    rhs: f64,
}

impl RowBuilder {
    fn new(center: usize) -> Self {
        RowBuilder {
            center,
            entries: Vec::with_capacity(9),
            rhs: 0.0,
        }
    }

    fn add(&mut self, index: usize, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        if let Some(e) = self.entries.iter_mut().find(|(c, _)| *c == index) {
            e.1 += coeff;
        } else {
            self.entries.push((index, coeff));
        }
    }

    /// `b * D^pm` convection term along one axis.
    fn add_upwind(
        &mut self,
        b: f64,
        left: usize,
        right: usize,
        step_before: f64,
        step_after: f64,
    ) {
        let backward = 0.5 * (b + b.abs());
        let forward = 0.5 * (b - b.abs());
        self.add(self.center, backward / step_before - forward / step_after);
        self.add(left, -backward / step_before);
        self.add(right, forward / step_after);
    }

    /// `-coeff * delta^2` diffusion term along one axis.
    fn add_diffusion(
        &mut self,
        coeff: f64,
        left: usize,
        right: usize,
        step_before: f64,
        step_after: f64,
    ) {
        let mean = 0.5 * (step_before + step_after);
        self.add(self.center, coeff * (1.0 / step_before + 1.0 / step_after) / mean);
        self.add(left, -coeff / (step_before * mean));
        self.add(right, -coeff / (step_after * mean));
    }

    fn finish(mut self, rhs: f64, kind: RowKind) -> StencilRow {
        let scale = self
            .entries
            .iter()
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max);
        if scale > 0.0 {
            for e in &mut self.entries {
                e.1 /= scale;
            }
            self.rhs = rhs / scale;
        } else {
            self.rhs = rhs;
        }
        self.entries.sort_unstable_by_key(|&(c, _)| c);
        StencilRow {
            center_index: self.center,
            entries: self.entries,
            rhs: self.rhs,
            kind,
        }
    }
}

fn dirichlet_row(index: usize, value: f64, kind: RowKind) -> StencilRow {
    StencilRow {
        center_index: index,
        entries: vec![(index, 1.0)],
        rhs: value,
        kind,
    }
}

/// One-sided difference row `(Z_center - Z_other) / step = 0`, written with
/// a positive center coefficient.
fn one_sided_row(center: usize, other: usize, step: f64, kind: RowKind) -> StencilRow {
    let mut b = RowBuilder::new(center);
    b.add(center, 1.0 / step);
    b.add(other, -1.0 / step);
    b.finish(0.0, kind)
}

/// Stage 1 operator on the polar sector mesh:
/// `-(eps/r^2) d2_theta - eps d2_r + (cos(theta) - eps/r) D_r - (sin(theta)/r) D_theta = 0`
/// with `U = 1` on `r = 1`, `U = 0` on the Dirichlet part of the outer arc,
/// a discrete `u_x = 0` outflow row on the rest of the arc, and one-sided
/// angular rows at the sector extremes.
pub fn assemble_polar(mesh: &Arc<TensorMesh>, p: &ProblemParams) -> Result<LinearSystem> {
    if mesh.system != CoordSystem::Polar {
        return Err(HemkerError::Assembly(
            "polar assembly requires a polar mesh".into(),
        ));
    }
    if mesh.u.elements() != p.n || mesh.v.elements() != p.n {
        return Err(HemkerError::Assembly(format!(
            "mesh has {}x{} elements, parameters expect {}x{}",
            mesh.u.elements(),
            mesh.v.elements(),
            p.n,
            p.n
        )));
    }
    let eps = p.epsilon;
    let (nu, nv) = (mesh.nu(), mesh.nv());
    let r_out = mesh.u.last();
    let mut rows = Vec::with_capacity(nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            let idx = mesh.idx(i, j);
            let (r, theta) = mesh.native(i, j);
            let row = match mesh.mask_at(i, j) {
                NodeMask::DirichletInner => dirichlet_row(idx, 1.0, RowKind::DirichletInner),
                NodeMask::DirichletOuter => dirichlet_row(idx, 0.0, RowKind::DirichletOuter),
                NodeMask::NeumannArtificial => {
                    if j == 0 {
                        one_sided_row(
                            idx,
                            mesh.idx(i, 1),
                            mesh.v.step_after(0),
                            RowKind::NeumannAngular,
                        )
                    } else if j == nv - 1 {
                        one_sided_row(
                            idx,
                            mesh.idx(i, nv - 2),
                            mesh.v.step_before(nv - 1),
                            RowKind::NeumannAngular,
                        )
                    } else {
                        // Outflow arc: (cos(theta) D^-_r - sin(theta)/R D^pm_theta) U = 0.
                        let mut b = RowBuilder::new(idx);
                        let hr = mesh.u.step_before(i);
                        b.add(idx, theta.cos() / hr);
                        b.add(mesh.idx(i - 1, j), -theta.cos() / hr);
                        b.add_upwind(
                            -theta.sin() / r_out,
                            mesh.idx(i, j - 1),
                            mesh.idx(i, j + 1),
                            mesh.v.step_before(j),
                            mesh.v.step_after(j),
                        );
                        b.finish(0.0, RowKind::NeumannOutflow)
                    }
                }
                NodeMask::Interior => {
                    let mut b = RowBuilder::new(idx);
                    b.add_diffusion(
                        eps / (r * r),
                        mesh.idx(i, j - 1),
                        mesh.idx(i, j + 1),
                        mesh.v.step_before(j),
                        mesh.v.step_after(j),
                    );
                    b.add_diffusion(
                        eps,
                        mesh.idx(i - 1, j),
                        mesh.idx(i + 1, j),
                        mesh.u.step_before(i),
                        mesh.u.step_after(i),
                    );
                    b.add_upwind(
                        theta.cos() - eps / r,
                        mesh.idx(i - 1, j),
                        mesh.idx(i + 1, j),
                        mesh.u.step_before(i),
                        mesh.u.step_after(i),
                    );
                    b.add_upwind(
                        -theta.sin() / r,
                        mesh.idx(i, j - 1),
                        mesh.idx(i, j + 1),
                        mesh.v.step_before(j),
                        mesh.v.step_after(j),
                    );
                    b.finish(0.0, RowKind::Interior)
                }
                NodeMask::InsideCircle => {
                    return Err(HemkerError::Assembly(
                        "polar mesh cannot contain interior-circle nodes".into(),
                    ))
                }
            };
            rows.push(row);
        }
    }
    Ok(LinearSystem {
        unknown_count: rows.len(),
        rows,
        mesh: Arc::clone(mesh),
    })
}

/// Stage 2 / Stage 4 operator on a Cartesian mesh:
/// `(-eps d2_x - eps d2_y + D^-_x) U = 0` away from the circle, `U = 1` on
/// mesh nodes inside the closed unit circle, `U = 0` on `y = +-R`,
/// `D^-_x U = 0` on the outflow edge, and prescribed `inflow` values on the
/// left edge (one per vertical node).
pub fn assemble_cartesian(
    mesh: &Arc<TensorMesh>,
    p: &ProblemParams,
    inflow: &[f64],
) -> Result<LinearSystem> {
    if mesh.system != CoordSystem::Cartesian {
        return Err(HemkerError::Assembly(
            "cartesian assembly requires a cartesian mesh".into(),
        ));
    }
    let (nu, nv) = (mesh.nu(), mesh.nv());
    if inflow.len() != nv {
        return Err(HemkerError::MissingInflow(inflow.len().min(nv)));
    }
    let eps = p.epsilon;
    let mut rows = Vec::with_capacity(nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            let idx = mesh.idx(i, j);
            let row = match mesh.mask_at(i, j) {
                NodeMask::InsideCircle => dirichlet_row(idx, 1.0, RowKind::InsideCircle),
                NodeMask::DirichletInner => dirichlet_row(idx, 1.0, RowKind::DirichletInner),
                NodeMask::DirichletOuter => {
                    if j == 0 || j == nv - 1 {
                        dirichlet_row(idx, 0.0, RowKind::DirichletOuter)
                    } else {
                        let value = inflow[j];
                        if !value.is_finite() {
                            return Err(HemkerError::MissingInflow(j));
                        }
                        dirichlet_row(idx, value, RowKind::DirichletOuter)
                    }
                }
                NodeMask::NeumannArtificial => one_sided_row(
                    idx,
                    mesh.idx(i - 1, j),
                    mesh.u.step_before(i),
                    RowKind::NeumannOutflow,
                ),
                NodeMask::Interior => {
                    let mut b = RowBuilder::new(idx);
                    b.add_diffusion(
                        eps,
                        mesh.idx(i - 1, j),
                        mesh.idx(i + 1, j),
                        mesh.u.step_before(i),
                        mesh.u.step_after(i),
                    );
                    b.add_diffusion(
                        eps,
                        mesh.idx(i, j - 1),
                        mesh.idx(i, j + 1),
                        mesh.v.step_before(j),
                        mesh.v.step_after(j),
                    );
                    // Convection D^-_x with unit coefficient.
                    let h = mesh.u.step_before(i);
                    b.add(idx, 1.0 / h);
                    b.add(mesh.idx(i - 1, j), -1.0 / h);
                    b.finish(0.0, RowKind::Interior)
                }
            };
            rows.push(row);
        }
    }
    Ok(LinearSystem {
        unknown_count: rows.len(),
        rows,
        mesh: Arc::clone(mesh),
    })
}

/// Boundary data for the patch solve, sampled from the current composite
/// approximation: `left[j]` prescribes `U(0, t_j)`, `top[i]` prescribes
/// `U(s_i, 1 + 3 delta)`.
#[derive(Debug, Clone)]
pub struct PatchBoundary {
    pub left: Vec<f64>,
    pub top: Vec<f64>,
}

impl PatchBoundary {
    pub fn constant(mesh: &TensorMesh, value: f64) -> Self {
        PatchBoundary {
            left: vec![value; mesh.nv()],
            top: vec![value; mesh.nu()],
        }
    }
}

/// Stage 3 operator in patch coordinates:
/// `-eps (d2_ss + 2 s d_st + (1 + s^2) d2_tt) U + D^-_s U + (s - eps) D^pm_t U = 0`
/// with the mixed difference `2 d_st = D^-_t D^-_s + D^+_t D^+_s`. The
/// stencil therefore has no `(i+1, j-1)` / `(i-1, j+1)` legs, which is what
/// keeps the matrix an M-matrix for `L <= L*`.
pub fn assemble_patch(
    mesh: &Arc<TensorMesh>,
    p: &ProblemParams,
    boundary: &PatchBoundary,
) -> Result<LinearSystem> {
    if p.patch_len > p.l_star() * (1.0 + 1e-12) {
        return Err(HemkerError::Assembly(format!(
            "patch width {} exceeds stability limit L* = {}",
            p.patch_len,
            p.l_star()
        )));
    }
    assemble_patch_rows(mesh, p, boundary)
}

// The row assembly itself, without the stability guard; tests use this to
// produce the sign-pattern violation the guard exists to prevent.
fn assemble_patch_rows(
    mesh: &Arc<TensorMesh>,
    p: &ProblemParams,
    boundary: &PatchBoundary,
) -> Result<LinearSystem> {
    if !matches!(
        mesh.system,
        CoordSystem::ParabolicUpper | CoordSystem::ParabolicLower
    ) {
        return Err(HemkerError::Assembly(
            "patch assembly requires a parabolic mesh".into(),
        ));
    }
    let (nu, nv) = (mesh.nu(), mesh.nv());
    if boundary.left.len() != nv || boundary.top.len() != nu {
        return Err(HemkerError::MissingInflow(
            boundary.left.len().min(boundary.top.len()),
        ));
    }
    let eps = p.epsilon;
    let mut rows = Vec::with_capacity(nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            let idx = mesh.idx(i, j);
            let row = match mesh.mask_at(i, j) {
                NodeMask::InsideCircle => dirichlet_row(idx, 1.0, RowKind::InsideCircle),
                NodeMask::DirichletInner => dirichlet_row(idx, 1.0, RowKind::DirichletInner),
                NodeMask::DirichletOuter => {
                    let value = if i == 0 {
                        boundary.left[j]
                    } else {
                        boundary.top[i]
                    };
                    if !value.is_finite() {
                        return Err(HemkerError::MissingInflow(idx));
                    }
                    dirichlet_row(idx, value, RowKind::DirichletOuter)
                }
                NodeMask::NeumannArtificial => one_sided_row(
                    idx,
                    mesh.idx(i - 1, j),
                    mesh.u.step_before(i),
                    RowKind::NeumannOutflow,
                ),
                NodeMask::Interior => {
                    let s = mesh.u.nodes[i];
                    let h = mesh.u.step_before(i); // uniform in s
                    let kj = mesh.v.step_before(j);
                    let kj1 = mesh.v.step_after(j);
                    let mut b = RowBuilder::new(idx);
                    // -eps d2_ss
                    b.add(idx, 2.0 * eps / (h * h));
                    b.add(mesh.idx(i - 1, j), -eps / (h * h));
                    b.add(mesh.idx(i + 1, j), -eps / (h * h));
                    // -eps (1 + s^2) d2_tt
                    b.add_diffusion(
                        eps * (1.0 + s * s),
                        mesh.idx(i, j - 1),
                        mesh.idx(i, j + 1),
                        kj,
                        kj1,
                    );
                    // -2 eps s d_st = -eps s (D^-_t D^-_s + D^+_t D^+_s)
                    let c_dn = eps * s / (h * kj);
                    let c_up = eps * s / (h * kj1);
                    b.add(idx, -c_dn - c_up);
                    b.add(mesh.idx(i - 1, j), c_dn);
                    b.add(mesh.idx(i, j - 1), c_dn);
                    b.add(mesh.idx(i - 1, j - 1), -c_dn);
                    b.add(mesh.idx(i + 1, j + 1), -c_up);
                    b.add(mesh.idx(i, j + 1), c_up);
                    b.add(mesh.idx(i + 1, j), c_up);
                    // D^-_s with unit coefficient
                    b.add(idx, 1.0 / h);
                    b.add(mesh.idx(i - 1, j), -1.0 / h);
                    // (s - eps) D^pm_t
                    b.add_upwind(
                        s - eps,
                        mesh.idx(i, j - 1),
                        mesh.idx(i, j + 1),
                        kj,
                        kj1,
                    );
                    b.finish(0.0, RowKind::Interior)
                }
            };
            rows.push(row);
        }
    }
    Ok(LinearSystem {
        unknown_count: rows.len(),
        rows,
        mesh: Arc::clone(mesh),
    })
}

/// Result of the M-matrix sign scan.
#[derive(Debug, Clone)]
pub struct MMatrixReport {
    /// Per-row compliance (center > 0, off-center <= 0).
    pub row_ok: Vec<bool>,
    /// Number of interior rows scanned.
    pub interior_rows: usize,
    /// First non-compliant interior row, if any.
    pub first_violation: Option<usize>,
    /// True iff every interior row complies.
    pub ok: bool,
}

/// Scans the sign pattern required by the discrete comparison principle.
/// Rows are normalized, so a plain `1e-14` slack absorbs assembly rounding.
pub fn m_matrix_check(sys: &LinearSystem) -> MMatrixReport {
    const SLACK: f64 = 1e-14;
    let mut row_ok = Vec::with_capacity(sys.rows.len());
    let mut interior_rows = 0;
    let mut first_violation = None;
    let mut ok = true;
    for (r, row) in sys.rows.iter().enumerate() {
        let mut compliant = row.center_coefficient() > 0.0;
        for &(c, v) in &row.entries {
            if c != row.center_index && v > SLACK {
                compliant = false;
            }
        }
        row_ok.push(compliant);
        if row.kind == RowKind::Interior {
            interior_rows += 1;
            if !compliant {
                ok = false;
                first_violation.get_or_insert(r);
            }
        }
    }
    MMatrixReport {
        row_ok,
        interior_rows,
        first_violation,
        ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{annulus_mesh, patch_mesh, strip_mesh};
    use proptest::prelude::*;

    #[test]
    fn upwind_selects_by_sign() {
        assert_eq!(upwind_first(1.0, 2.0, 5.0), 2.0);
        assert_eq!(upwind_first(-1.0, 2.0, 5.0), -5.0);
        assert_eq!(upwind_first(0.0, 2.0, 6.0), 0.0);
    }

    proptest! {
        #[test]
        fn upwind_matches_printed_formula(
            b in -100.0f64..100.0,
            dm in -10.0f64..10.0,
            dp in -10.0f64..10.0,
        ) {
            let direct = if b > 0.0 { b * dm } else if b < 0.0 { b * dp } else { 0.0 };
            let formula = upwind_first(b, dm, dp);
            prop_assert!((formula - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    fn test_params(eps: f64, n: usize) -> ProblemParams {
        ProblemParams::new(eps, n).unwrap()
    }

    #[test]
    fn polar_dirichlet_rows() {
        let p = test_params(1.0, 8);
        let mesh = Arc::new(annulus_mesh(&p).unwrap());
        let sys = assemble_polar(&mesh, &p).unwrap();
        // Inner circle row: single unit entry, rhs 1.
        let row = &sys.rows[mesh.idx(0, 3)];
        assert_eq!(row.entries, vec![(mesh.idx(0, 3), 1.0)]);
        assert_eq!(row.rhs, 1.0);
        assert_eq!(row.kind, RowKind::DirichletInner);
        // Outer Dirichlet arc: rhs 0.
        let row = &sys.rows[mesh.idx(8, 4)];
        assert_eq!(row.rhs, 0.0);
        assert_eq!(row.kind, RowKind::DirichletOuter);
    }

    #[test]
    fn polar_interior_sign_pattern() {
        for &(eps, n) in &[(1.0, 8), (2f64.powi(-4), 16), (2f64.powi(-10), 32)] {
            let p = test_params(eps, n);
            let mesh = Arc::new(annulus_mesh(&p).unwrap());
            let sys = assemble_polar(&mesh, &p).unwrap();
            let report = m_matrix_check(&sys);
            assert!(report.ok, "sign violation for eps={eps}, N={n}");
        }
    }

    #[test]
    fn cartesian_circle_rows_are_identity() {
        let p = test_params(1.0, 16);
        let mesh = Arc::new(strip_mesh(&p).unwrap());
        let inflow = vec![0.0; mesh.nv()];
        let sys = assemble_cartesian(&mesh, &p, &inflow).unwrap();
        // Find the node nearest (0.25, 0.5): inside the circle.
        let i = (0..mesh.nu())
            .min_by(|&a, &b| {
                (mesh.u.nodes[a] - 0.25)
                    .abs()
                    .total_cmp(&(mesh.u.nodes[b] - 0.25).abs())
            })
            .unwrap();
        let j = (0..mesh.nv())
            .min_by(|&a, &b| {
                (mesh.v.nodes[a] - 0.5)
                    .abs()
                    .total_cmp(&(mesh.v.nodes[b] - 0.5).abs())
            })
            .unwrap();
        let row = &sys.rows[mesh.idx(i, j)];
        assert_eq!(row.kind, RowKind::InsideCircle);
        assert_eq!(row.entries, vec![(mesh.idx(i, j), 1.0)]);
        assert_eq!(row.rhs, 1.0);
    }

    #[test]
    fn cartesian_rejects_short_inflow() {
        let p = test_params(1.0, 8);
        let mesh = Arc::new(strip_mesh(&p).unwrap());
        let inflow = vec![0.0; mesh.nv() - 1];
        assert!(assemble_cartesian(&mesh, &p, &inflow).is_err());
    }

    #[test]
    fn patch_stencil_has_no_cross_legs() {
        // a_{i+1,j-1} and a_{i-1,j+1} must be absent from every interior row.
        let p = test_params(2f64.powi(-10), 64);
        let mesh = Arc::new(patch_mesh(&p, true).unwrap());
        let sys = assemble_patch(&mesh, &p, &PatchBoundary::constant(&mesh, 1.0)).unwrap();
        let nu = mesh.nu();
        for row in sys.rows.iter().filter(|r| r.kind == RowKind::Interior) {
            let idx = row.center_index;
            let (i, j) = (idx % nu, idx / nu);
            let forbidden = [(i + 1, j - 1), (i - 1, j + 1)];
            for (fi, fj) in forbidden {
                let f = mesh.idx(fi, fj);
                assert!(
                    !row.entries.iter().any(|&(c, v)| c == f && v != 0.0),
                    "cross leg ({fi},{fj}) present in row {idx}"
                );
            }
        }
    }

    #[test]
    fn patch_m_matrix_within_limit_and_violation_beyond() {
        let p = test_params(2f64.powi(-10), 64);
        let mesh = Arc::new(patch_mesh(&p, true).unwrap());
        let sys = assemble_patch(&mesh, &p, &PatchBoundary::constant(&mesh, 1.0)).unwrap();
        assert!(m_matrix_check(&sys).ok);

        // Doubling the width past L* breaks the sign pattern: a_{i+-1,j}
        // turns positive once s_i h > k. The public assembler refuses such
        // widths, so drive the raw row assembly directly.
        let wide = p.clone().set_patch_len_unchecked(2.0 * p.l_star());
        let wide_mesh = Arc::new(oversized_patch_mesh(&wide));
        let sys = assemble_patch_rows(
            &wide_mesh,
            &wide,
            &PatchBoundary::constant(&wide_mesh, 1.0),
        )
        .unwrap();
        let report = m_matrix_check(&sys);
        assert!(!report.ok);
        assert!(report.first_violation.is_some());
        // The guard in the public entry point trips for the same width.
        assert!(assemble_patch(
            &wide_mesh,
            &wide,
            &PatchBoundary::constant(&wide_mesh, 1.0)
        )
        .is_err());
    }

    // Patch mesh for a width beyond L*, which `patch_mesh` refuses to build.
    fn oversized_patch_mesh(p: &ProblemParams) -> TensorMesh {
        use crate::mesh::{shishkin_1d, CoordinateMap};
        let s_mesh = shishkin_1d(&[0.0, p.patch_len], &[p.n]).unwrap();
        let (t3, t4) = (p.tau3(), p.tau4());
        let t_mesh = shishkin_1d(
            &[1.0 - t3, 1.0, 1.0 + t3, 1.0 + t3 + t4, 1.0 + 3.0 * p.delta],
            &[p.m / 4, p.m / 4, p.m / 4, p.m / 4],
        )
        .unwrap();
        let map = CoordinateMap::new(CoordSystem::ParabolicUpper);
        let (nu, nv) = (s_mesh.len(), t_mesh.len());
        let mut mask = vec![NodeMask::Interior; nu * nv];
        for j in 0..nv {
            for i in 0..nu {
                let (x, y) = map.forward(s_mesh.nodes[i], t_mesh.nodes[j]);
                mask[j * nu + i] = if x * x + y * y <= 1.0 {
                    NodeMask::InsideCircle
                } else if i == nu - 1 {
                    NodeMask::NeumannArtificial
                } else if i == 0 || j == nv - 1 {
                    NodeMask::DirichletOuter
                } else if j == 0 {
                    NodeMask::DirichletInner
                } else {
                    NodeMask::Interior
                };
            }
        }
        TensorMesh {
            u: s_mesh,
            v: t_mesh,
            system: CoordSystem::ParabolicUpper,
            mask,
        }
    }

    #[test]
    fn identity_system_passes_m_matrix_check() {
        let p = test_params(1.0, 8);
        let mesh = Arc::new(strip_mesh(&p).unwrap());
        let rows: Vec<StencilRow> = (0..mesh.num_nodes())
            .map(|i| dirichlet_row(i, 0.0, RowKind::DirichletOuter))
            .collect();
        let sys = LinearSystem {
            unknown_count: rows.len(),
            rows,
            mesh,
        };
        assert!(m_matrix_check(&sys).ok);
    }

    #[test]
    fn interior_row_sums_nonnegative() {
        // Convection-diffusion rows annihilate constants: row sums are zero
        // up to rounding, never negative beyond it.
        let p = test_params(2f64.powi(-6), 16);
        let mesh = Arc::new(strip_mesh(&p).unwrap());
        let inflow = vec![0.0; mesh.nv()];
        let sys = assemble_cartesian(&mesh, &p, &inflow).unwrap();
        for row in sys.rows.iter().filter(|r| r.kind == RowKind::Interior) {
            let sum: f64 = row.entries.iter().map(|(_, v)| v).sum();
            assert!(sum >= -1e-12);
        }
    }
}
