//! The four-stage solve and the composite approximations it produces.
//!
//! Stage 1 solves on the polar sector, stage 2 on the Cartesian strip with
//! inflow traced from stage 1, giving the initial composite. Stage 3 solves
//! the transformed problem on the two parabolic patches with boundary data
//! from the initial composite, and stage 4 re-solves the downwind rectangle
//! with the corrected inflow, giving the corrected composite.

use std::sync::Arc;

use crate::discretization::{
    assemble_cartesian, assemble_patch, assemble_polar, m_matrix_check, PatchBoundary,
};
use crate::error::Result;
use crate::fields::{CompositeSolution, GridField, Piece, Region, SolutionLabel};
use crate::mesh::{annulus_mesh, downwind_mesh, patch_mesh, strip_mesh};
use crate::params::ProblemParams;
use crate::solver::{solve_with_fallback, SolveMethod, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageId {
    Sector,
    Strip,
    PatchUpper,
    PatchLower,
    Downwind,
}

/// Per-stage solve record: residual certificate, solution range, and the
/// M-matrix verdict where the scheme's stability theorem applies.
#[derive(Debug, Clone)]
pub struct StageDiag {
    pub stage: StageId,
    pub residual_inf: f64,
    pub iterations: usize,
    pub method: SolveMethod,
    pub min_value: f64,
    pub max_value: f64,
    pub m_matrix_ok: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub params: ProblemParams,
    pub stage_a: GridField,
    pub stage_b: GridField,
    pub stage_c_upper: Option<GridField>,
    pub stage_c_lower: Option<GridField>,
    pub stage_d: Option<GridField>,
    pub initial: CompositeSolution,
    pub corrected: Option<CompositeSolution>,
    pub diagnostics: Vec<StageDiag>,
}

fn diag_from(
    stage: StageId,
    rep: &crate::solver::SolveReport,
    field: &GridField,
    m_matrix_ok: Option<bool>,
) -> StageDiag {
    StageDiag {
        stage,
        residual_inf: rep.residual_inf,
        iterations: rep.iterations,
        method: rep.method,
        min_value: field.min_value(),
        max_value: field.max_value(),
        m_matrix_ok,
    }
}

/// Stage 1: upwind solve of the polar problem on the annular sector.
pub fn run_stage1(p: &ProblemParams, opts: &SolverOptions) -> Result<(GridField, StageDiag)> {
    let mesh = Arc::new(annulus_mesh(p)?);
    let sys = assemble_polar(&mesh, p)?;
    let rep = solve_with_fallback(&sys, opts)?;
    let field = GridField::new(mesh, rep.solution.clone());
    let diag = diag_from(StageId::Sector, &rep, &field, None);
    Ok((field, diag))
}

/// The stage-1 field as a standalone composite over the sector.
pub fn sector_composite(p: &ProblemParams, stage_a: GridField) -> CompositeSolution {
    let mesh = &stage_a.mesh;
    CompositeSolution {
        pieces: vec![Piece {
            region: Region::Sector {
                r_max: mesh.u.last(),
                theta_min: mesh.v.first(),
                theta_max: mesh.v.last(),
            },
            field: stage_a,
        }],
        params: p.clone(),
        label: SolutionLabel::SectorOnly,
    }
}

/// Inflow for the strip: the stage-1 trace along `x = 0`, which on the
/// sector mesh is vertical-ray interpolation at `theta = pi/2` (above the
/// disk) and `theta = 3 pi/2` (below it).
fn strip_inflow(stage_a: &GridField, vertical_nodes: &[f64]) -> Result<Vec<f64>> {
    let pi = std::f64::consts::PI;
    vertical_nodes
        .iter()
        .map(|&y| {
            if y.abs() <= 1.0 {
                Ok(1.0)
            } else {
                let theta = if y > 0.0 { pi / 2.0 } else { 3.0 * pi / 2.0 };
                stage_a.eval(y.abs(), theta)
            }
        })
        .collect()
}

/// Stage 2: upwind solve on the strip with stage-1 inflow.
pub fn run_stage2(
    p: &ProblemParams,
    stage_a: &GridField,
    opts: &SolverOptions,
) -> Result<(GridField, StageDiag)> {
    let mesh = Arc::new(strip_mesh(p)?);
    let inflow = strip_inflow(stage_a, &mesh.v.nodes)?;
    let sys = assemble_cartesian(&mesh, p, &inflow)?;
    let rep = solve_with_fallback(&sys, opts)?;
    let field = GridField::new(mesh, rep.solution.clone());
    let diag = diag_from(StageId::Strip, &rep, &field, None);
    Ok((field, diag))
}

/// Initial composite: the polar piece owns `x <= 0`, the strip piece owns
/// `x >= 0`; listed in that order so the interface line goes to the sector.
pub fn initial_composite(
    p: &ProblemParams,
    stage_a: GridField,
    stage_b: GridField,
) -> CompositeSolution {
    let r = p.outer_radius;
    CompositeSolution {
        pieces: vec![
            Piece {
                region: Region::LeftHalfPlane { r_max: r },
                field: stage_a,
            },
            Piece {
                region: Region::Rectangle {
                    x_min: 0.0,
                    x_max: r,
                    y_max: r,
                },
                field: stage_b,
            },
        ],
        params: p.clone(),
        label: SolutionLabel::Initial,
    }
}

/// Stage 3: the transformed solve on one parabolic patch, boundary data
/// traced from the initial composite. Returns the field, its diagnostics,
/// and the M-matrix verdict of the assembled system.
pub fn run_stage3_patch(
    p: &ProblemParams,
    initial: &CompositeSolution,
    upper: bool,
    opts: &SolverOptions,
) -> Result<(GridField, StageDiag)> {
    let mesh = Arc::new(patch_mesh(p, upper)?);
    let map = mesh.map();
    let t_top = mesh.v.last();
    let left = mesh
        .v
        .nodes
        .iter()
        .map(|&t| {
            let (x, y) = map.forward(0.0, t);
            initial.eval(x, y)
        })
        .collect::<Result<Vec<f64>>>()?;
    let top = mesh
        .u
        .nodes
        .iter()
        .map(|&s| {
            let (x, y) = map.forward(s, t_top);
            initial.eval(x, y)
        })
        .collect::<Result<Vec<f64>>>()?;
    let sys = assemble_patch(&mesh, p, &PatchBoundary { left, top })?;
    let m_ok = m_matrix_check(&sys).ok;
    let rep = solve_with_fallback(&sys, opts)?;
    let field = GridField::new(mesh, rep.solution.clone());
    let stage = if upper {
        StageId::PatchUpper
    } else {
        StageId::PatchLower
    };
    let diag = diag_from(stage, &rep, &field, Some(m_ok));
    Ok((field, diag))
}

/// Stage 4: downwind re-solve on `[L*, R] x [-R, R]`. The left edge takes
/// the patch trace at `s = L` (mapped to `y = t - L^2/2`) inside the patch
/// band and the initial composite elsewhere.
pub fn run_stage4(
    p: &ProblemParams,
    initial: &CompositeSolution,
    patch_upper: &GridField,
    patch_lower: &GridField,
    opts: &SolverOptions,
) -> Result<(GridField, StageDiag)> {
    let mesh = Arc::new(downwind_mesh(p)?);
    let l_star = mesh.u.first();
    let l = p.patch_len;
    let (t_lo, t_hi) = (patch_upper.mesh.v.first(), patch_upper.mesh.v.last());
    let inflow = mesh
        .v
        .nodes
        .iter()
        .map(|&y| {
            if l_star * l_star + y * y <= 1.0 {
                return Ok(1.0);
            }
            let t = y.abs() + 0.5 * l * l;
            if t >= t_lo && t <= t_hi {
                let patch = if y > 0.0 { patch_upper } else { patch_lower };
                patch.eval(l, t)
            } else {
                initial.eval(l_star, y)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let sys = assemble_cartesian(&mesh, p, &inflow)?;
    let rep = solve_with_fallback(&sys, opts)?;
    let field = GridField::new(mesh, rep.solution.clone());
    let diag = diag_from(StageId::Downwind, &rep, &field, None);
    Ok((field, diag))
}

/// Corrected composite: patches first, then the downwind piece, then the
/// initial pieces; first match wins, which resolves the overlaps in the
/// stated precedence.
pub fn corrected_composite(
    p: &ProblemParams,
    initial: &CompositeSolution,
    patch_upper: GridField,
    patch_lower: GridField,
    stage_d: GridField,
) -> CompositeSolution {
    let r = p.outer_radius;
    let (t_lo, t_hi) = (patch_upper.mesh.v.first(), patch_upper.mesh.v.last());
    let mut pieces = vec![
        Piece {
            region: Region::PatchUpper {
                len: p.patch_len,
                t_min: t_lo,
                t_max: t_hi,
            },
            field: patch_upper,
        },
        Piece {
            region: Region::PatchLower {
                len: p.patch_len,
                t_min: t_lo,
                t_max: t_hi,
            },
            field: patch_lower,
        },
        Piece {
            region: Region::Rectangle {
                x_min: stage_d.mesh.u.first(),
                x_max: r,
                y_max: r,
            },
            field: stage_d,
        },
    ];
    pieces.extend(initial.pieces.iter().cloned());
    CompositeSolution {
        pieces,
        params: p.clone(),
        label: SolutionLabel::Corrected,
    }
}

impl PipelineRun {
    /// Stages 1 and 2 only.
    pub fn initial(p: &ProblemParams, opts: &SolverOptions) -> Result<Self> {
        let (stage_a, diag_a) = run_stage1(p, opts)?;
        let (stage_b, diag_b) = run_stage2(p, &stage_a, opts)?;
        let initial = initial_composite(p, stage_a.clone(), stage_b.clone());
        Ok(PipelineRun {
            params: p.clone(),
            stage_a,
            stage_b,
            stage_c_upper: None,
            stage_c_lower: None,
            stage_d: None,
            initial,
            corrected: None,
            diagnostics: vec![diag_a, diag_b],
        })
    }

    /// Stages 3 and 4 on top of an initial run. Idempotent.
    pub fn correct(&mut self, opts: &SolverOptions) -> Result<()> {
        if self.corrected.is_some() {
            return Ok(());
        }
        let p = self.params.clone();
        let (upper, diag_u) = run_stage3_patch(&p, &self.initial, true, opts)?;
        let (lower, diag_l) = run_stage3_patch(&p, &self.initial, false, opts)?;
        let (stage_d, diag_d) = run_stage4(&p, &self.initial, &upper, &lower, opts)?;
        self.corrected = Some(corrected_composite(
            &p,
            &self.initial,
            upper.clone(),
            lower.clone(),
            stage_d.clone(),
        ));
        self.stage_c_upper = Some(upper);
        self.stage_c_lower = Some(lower);
        self.stage_d = Some(stage_d);
        self.diagnostics.extend([diag_u, diag_l, diag_d]);
        Ok(())
    }

    /// All four stages.
    pub fn full(p: &ProblemParams, opts: &SolverOptions) -> Result<Self> {
        let mut run = Self::initial(p, opts)?;
        run.correct(opts)?;
        Ok(run)
    }

    /// The corrected composite, which exists iff every stage solved within
    /// the residual contract.
    pub fn corrected(&self) -> Option<&CompositeSolution> {
        self.corrected.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn stage1_small_run_in_unit_range() {
        let p = ProblemParams::new(1.0, 8).unwrap();
        let (field, diag) = run_stage1(&p, &opts()).unwrap();
        assert!(diag.residual_inf <= 1e-10);
        assert!(field.min_value() >= -1e-10);
        assert!(field.max_value() <= 1.0 + 1e-10);
        // Boundary rows reproduce data exactly.
        for j in 0..field.mesh.nv() {
            assert_eq!(field.value_at(0, j), 1.0);
        }
    }

    #[test]
    fn full_pipeline_small() {
        let p = ProblemParams::new(2f64.powi(-4), 16).unwrap();
        let run = PipelineRun::full(&p, &opts()).unwrap();
        assert!(run.corrected.is_some());
        assert_eq!(run.diagnostics.len(), 5);
        for d in &run.diagnostics {
            assert!(d.residual_inf <= 1e-10);
            assert!(d.min_value >= -1e-10, "{:?} min {}", d.stage, d.min_value);
            assert!(d.max_value <= 1.0 + 1e-10, "{:?} max {}", d.stage, d.max_value);
        }
        // Patch systems satisfied the comparison-principle sign pattern.
        for d in run
            .diagnostics
            .iter()
            .filter(|d| matches!(d.stage, StageId::PatchUpper | StageId::PatchLower))
        {
            assert_eq!(d.m_matrix_ok, Some(true));
        }
    }

    #[test]
    fn reproducible_bit_for_bit() {
        let p = ProblemParams::new(2f64.powi(-6), 8).unwrap();
        let a = PipelineRun::full(&p, &opts()).unwrap();
        let b = PipelineRun::full(&p, &opts()).unwrap();
        let bits =
            |f: &GridField| f.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.stage_a), bits(&b.stage_a));
        assert_eq!(bits(&a.stage_b), bits(&b.stage_b));
        assert_eq!(
            bits(a.stage_d.as_ref().unwrap()),
            bits(b.stage_d.as_ref().unwrap())
        );
    }
}
