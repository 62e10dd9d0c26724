//! Cross-module checks: the banded solve against an independent dense
//! elimination, discrete minimum principles, constant reproduction through
//! every assembler, composite evaluation geometry, and the stage wiring.

use std::sync::Arc;

use hemker::discretization::{
    assemble_cartesian, assemble_patch, assemble_polar, LinearSystem, PatchBoundary, RowKind,
};
use hemker::fields::union_sup_diff;
use hemker::mesh::{annulus_mesh, patch_mesh, strip_mesh};
use hemker::pipeline::{run_stage1, run_stage3_patch, PipelineRun};
use hemker::solver::{solve, SolverOptions};
use hemker::ProblemParams;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense Gaussian elimination with partial pivoting. Deliberately
/// independent of the banded path it cross-checks.
fn dense_solve(sys: &LinearSystem) -> Vec<f64> {
    let n = sys.unknown_count;
    let mut a = vec![0.0f64; n * n];
    let mut b = vec![0.0f64; n];
    for row in &sys.rows {
        let r = row.center_index;
        b[r] = row.rhs;
        for &(c, v) in &row.entries {
            a[r * n + c] += v;
        }
    }
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[piv * n + k].abs() {
                piv = i;
            }
        }
        assert!(a[piv * n + k] != 0.0, "dense oracle hit a singular column");
        if piv != k {
            for j in 0..n {
                a.swap(k * n + j, piv * n + j);
            }
            b.swap(k, piv);
        }
        let pivot = a[k * n + k];
        for i in k + 1..n {
            let l = a[i * n + k] / pivot;
            if l != 0.0 {
                for j in k..n {
                    a[i * n + j] -= l * a[k * n + j];
                }
                b[i] -= l * b[k];
            }
        }
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i * n + j] * x[j];
        }
        x[i] = s / a[i * n + i];
    }
    x
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn stage1_matches_dense_oracle() {
    let p = ProblemParams::new(1.0, 8).unwrap();
    let mesh = Arc::new(annulus_mesh(&p).unwrap());
    let sys = assemble_polar(&mesh, &p).unwrap();
    let banded = solve(&sys).unwrap();
    let dense = dense_solve(&sys);
    assert!(max_abs_diff(&banded.solution, &dense) <= 1e-10);
}

#[test]
fn stage2_zero_inflow_matches_dense_oracle() {
    let p = ProblemParams::new(1.0, 8).unwrap();
    let mesh = Arc::new(strip_mesh(&p).unwrap());
    let inflow = vec![0.0; mesh.nv()];
    let sys = assemble_cartesian(&mesh, &p, &inflow).unwrap();
    let banded = solve(&sys).unwrap();
    let dense = dense_solve(&sys);
    assert!(max_abs_diff(&banded.solution, &dense) <= 1e-10);
    // Only the disk forces nonzero values; everything stays in [0, 1].
    assert!(banded.solution.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
}

#[test]
fn patch_matches_dense_oracle() {
    let p = ProblemParams::new(2f64.powi(-4), 8).unwrap();
    let mesh = Arc::new(patch_mesh(&p, true).unwrap());
    let boundary = PatchBoundary::constant(&mesh, 0.5);
    let sys = assemble_patch(&mesh, &p, &boundary).unwrap();
    let banded = solve(&sys).unwrap();
    let dense = dense_solve(&sys);
    assert!(max_abs_diff(&banded.solution, &dense) <= 1e-10);
}

/// Overwrites every prescribed-value row with the constant `c`; the
/// convection-diffusion and one-sided rows annihilate constants, so the
/// solve must return exactly `c` everywhere (to solver tolerance).
fn force_constant_boundaries(sys: &mut LinearSystem, c: f64) {
    for row in &mut sys.rows {
        match row.kind {
            RowKind::DirichletInner | RowKind::DirichletOuter | RowKind::InsideCircle => {
                row.rhs = c;
            }
            RowKind::Interior | RowKind::NeumannOutflow | RowKind::NeumannAngular => {}
        }
    }
}

#[test]
fn constant_reproduction_all_assemblers() {
    let c = 0.37;
    let p = ProblemParams::new(2f64.powi(-6), 16).unwrap();

    let mesh = Arc::new(annulus_mesh(&p).unwrap());
    let mut sys = assemble_polar(&mesh, &p).unwrap();
    force_constant_boundaries(&mut sys, c);
    let rep = solve(&sys).unwrap();
    assert!(rep.solution.iter().all(|v| (v - c).abs() <= 1e-10));

    let mesh = Arc::new(strip_mesh(&p).unwrap());
    let inflow = vec![c; mesh.nv()];
    let mut sys = assemble_cartesian(&mesh, &p, &inflow).unwrap();
    force_constant_boundaries(&mut sys, c);
    let rep = solve(&sys).unwrap();
    assert!(rep.solution.iter().all(|v| (v - c).abs() <= 1e-10));

    let mesh = Arc::new(patch_mesh(&p, true).unwrap());
    let boundary = PatchBoundary::constant(&mesh, c);
    let mut sys = assemble_patch(&mesh, &p, &boundary).unwrap();
    force_constant_boundaries(&mut sys, c);
    let rep = solve(&sys).unwrap();
    assert!(rep.solution.iter().all(|v| (v - c).abs() <= 1e-10));
}

#[test]
fn patch_boundary_all_ones_gives_ones() {
    // Constants solve the homogeneous convection-diffusion rows, and the
    // circle rows prescribe 1 as well.
    let p = ProblemParams::new(2f64.powi(-8), 16).unwrap();
    let mesh = Arc::new(patch_mesh(&p, true).unwrap());
    let sys = assemble_patch(&mesh, &p, &PatchBoundary::constant(&mesh, 1.0)).unwrap();
    let rep = solve(&sys).unwrap();
    assert!(rep.solution.iter().all(|v| (v - 1.0).abs() <= 1e-10));
}

#[test]
fn minimum_principle_across_test_grid() {
    for &j in &[0i32, 4, 10] {
        for &n in &[8usize, 16, 32] {
            let p = ProblemParams::benchmark(j, n).unwrap();
            let run = PipelineRun::full(&p, &SolverOptions::default()).unwrap();
            for d in &run.diagnostics {
                assert!(
                    d.min_value >= -1e-10 && d.max_value <= 1.0 + 1e-10,
                    "range violation at eps=2^-{j}, N={n}, {:?}: [{}, {}]",
                    d.stage,
                    d.min_value,
                    d.max_value
                );
                assert!(d.residual_inf <= 1e-10);
            }
        }
    }
}

#[test]
fn full_solution_symmetric_in_y() {
    let p = ProblemParams::new(2f64.powi(-4), 16).unwrap();
    let run = PipelineRun::full(&p, &SolverOptions::default()).unwrap();
    let sol = run.corrected().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    while checked < 1000 {
        let x = rng.gen_range(-4.0..4.0);
        let y = rng.gen_range(0.0..4.0);
        let r2 = x * x + y * y;
        if r2 <= 1.0 || (x < 0.0 && r2 > 16.0) {
            continue;
        }
        let up = sol.eval(x, y).unwrap();
        let down = sol.eval(x, -y).unwrap();
        assert!(
            (up - down).abs() <= 1e-8,
            "asymmetry {:.3e} at ({x}, {y})",
            (up - down).abs()
        );
        checked += 1;
    }
}

#[test]
fn mirrored_patches_agree() {
    let p = ProblemParams::new(2f64.powi(-6), 16).unwrap();
    let run = PipelineRun::full(&p, &SolverOptions::default()).unwrap();
    let upper = run.stage_c_upper.as_ref().unwrap();
    let lower = run.stage_c_lower.as_ref().unwrap();
    let diff = max_abs_diff(&upper.values, &lower.values);
    assert!(diff <= 1e-8, "mirrored patch difference {diff:.3e}");
}

#[test]
fn composite_geometry_examples() {
    let p = ProblemParams::new(2f64.powi(-10), 32).unwrap();
    let run = PipelineRun::full(&p, &SolverOptions::default()).unwrap();
    let sol = run.corrected().unwrap();
    // Disk boundary and interior give exactly 1.
    assert_eq!(sol.eval(-1.0, 0.0).unwrap(), 1.0);
    assert_eq!(sol.eval(0.3, 0.4).unwrap(), 1.0);
    // Outer arc on the upwind side is Dirichlet zero.
    assert_eq!(sol.eval(-4.0, 0.0).unwrap(), 0.0);
    // (0.1, 1.0) lies in the upper patch for this eps; value in [0, 1].
    let t = 1.0 + 0.5 * 0.1 * 0.1;
    assert!(t > 1.0 - p.tau3() && t < 1.0 + 3.0 * p.delta);
    let v = sol.eval(0.1, 1.0).unwrap();
    assert!((0.0..=1.0 + 1e-10).contains(&v));
    // Top boundary of the domain is zero.
    assert_eq!(sol.eval(1.0, 4.0).unwrap(), 0.0);
}

#[test]
fn stage1_trace_is_vertical_ray_interpolation() {
    let p = ProblemParams::new(2f64.powi(-4), 16).unwrap();
    let opts = SolverOptions::default();
    let (field, _) = run_stage1(&p, &opts).unwrap();
    let pi = std::f64::consts::PI;
    // Manual 1D linear interpolation along theta = pi/2 (a mesh line).
    let j_half = field
        .mesh
        .v
        .nodes
        .iter()
        .position(|&t| (t - pi / 2.0).abs() < 1e-12)
        .expect("pi/2 is a node");
    let radial = &field.mesh.u.nodes;
    for &y in &[1.0001, 1.3, 2.0, 3.7, 3.999999] {
        let cell = radial.partition_point(|&r| r <= y).saturating_sub(1);
        let cell = cell.min(radial.len() - 2);
        let w = (y - radial[cell]) / (radial[cell + 1] - radial[cell]);
        let manual = (1.0 - w) * field.value_at(cell, j_half) + w * field.value_at(cell + 1, j_half);
        let traced = field.trace_physical(&[(0.0, y)]).unwrap()[0];
        assert!(
            (manual - traced).abs() <= 1e-13,
            "trace mismatch at y={y}: {manual} vs {traced}"
        );
    }
}

#[test]
fn stage3_boundary_rows_reproduce_trace() {
    let p = ProblemParams::new(2f64.powi(-6), 16).unwrap();
    let opts = SolverOptions::default();
    let run = PipelineRun::initial(&p, &opts).unwrap();
    let (field, _) = run_stage3_patch(&p, &run.initial, true, &opts).unwrap();
    let mesh = &field.mesh;
    let map = mesh.map();
    for j in 0..mesh.nv() {
        let (x, y) = map.forward(0.0, mesh.v.nodes[j]);
        let expected = run.initial.eval(x, y).unwrap();
        assert!(
            (field.value_at(0, j) - expected).abs() <= 1e-12,
            "left edge row {j} does not reproduce its data"
        );
    }
}

#[test]
fn correction_is_inert_at_eps_one() {
    // With eps = 1 there are no layers to correct, so the corrected and
    // initial composites describe the same smooth solution. The downwind
    // solve lives on a rebuilt horizontal mesh, so they agree to the
    // difference of two first-order discretizations, which must shrink
    // roughly like 1/N, not to solver tolerance.
    let diff_at = |n: usize| {
        let p = ProblemParams::new(1.0, n).unwrap();
        let run = PipelineRun::full(&p, &SolverOptions::default()).unwrap();
        let sol = run.corrected().unwrap();
        // Inflow rows of the downwind solve reproduce their data exactly.
        let stage_d = run.stage_d.as_ref().unwrap();
        let x0 = stage_d.mesh.u.first();
        for j in 1..stage_d.mesh.nv() - 1 {
            let y = stage_d.mesh.v.nodes[j];
            if x0 * x0 + y * y <= 1.0 {
                continue;
            }
            let expected = run.initial.eval(x0, y).unwrap();
            // The patch band carries the patch trace instead; skip it.
            let t = y.abs() + 0.5 * run.params.patch_len.powi(2);
            if t <= 1.0 + 3.0 * run.params.delta {
                continue;
            }
            assert!(
                (stage_d.value_at(0, j) - expected).abs() <= 1e-12,
                "inflow row at y = {y} does not reproduce its data"
            );
        }
        union_sup_diff(&run.initial, sol, |_, _| true)
    };
    let d16 = diff_at(16);
    let d64 = diff_at(64);
    println!("eps=1 |U1 - U2|: N=16 {d16:.3e}, N=64 {d64:.3e}");
    assert!(d64 <= 0.08, "disagreement at N=64 too large: {d64:.3e}");
    assert!(
        d64 <= 0.6 * d16,
        "cross-discretization disagreement should shrink: {d16:.3e} -> {d64:.3e}"
    );
}

#[test]
fn stage_independence_of_m_in_first_two_stages() {
    // Re-running with a different M changes only the patch inputs, so the
    // stage-1/2 fields must be bit-identical.
    let eps = 2f64.powi(-6);
    let p1 = ProblemParams::with(eps, 16, 16, 4.0, 0.05).unwrap();
    let p2 = ProblemParams::with(eps, 16, 32, 4.0, 0.05).unwrap();
    let opts = SolverOptions::default();
    let a = PipelineRun::initial(&p1, &opts).unwrap();
    let b = PipelineRun::initial(&p2, &opts).unwrap();
    let bits = |f: &hemker::fields::GridField| {
        f.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(bits(&a.stage_a), bits(&b.stage_a));
    assert_eq!(bits(&a.stage_b), bits(&b.stage_b));
}

#[test]
fn left_envelope_constant_stable_under_refinement() {
    use hemker::verification::{bound_envelope, BoundKind};
    let opts = SolverOptions::default();
    let mut previous = f64::INFINITY;
    for n in [32usize, 64, 128] {
        let p = ProblemParams::new(2f64.powi(-10), n).unwrap();
        let run = PipelineRun::full(&p, &opts).unwrap();
        let env = bound_envelope(run.corrected().unwrap(), BoundKind::Left);
        let c = env.fitted_c.expect("left region sampled");
        println!("left envelope at N={n}: C = {c:.4} over {} samples", env.sample_count);
        assert!(c.is_finite() && c > 0.0);
        // Non-increasing under refinement, with slack for sampling noise.
        assert!(
            c <= previous * 1.05,
            "left envelope constant grew: {previous:.4} -> {c:.4}"
        );
        previous = c;
    }
}

#[test]
fn center_envelope_empty_region_is_reported_not_failed() {
    use hemker::verification::{bound_envelope, BoundKind};
    // At eps = 1 the central strip |0.5x^2 + |y| - 1| <= eps^(2/3)/2 is wide
    // and holds samples; shrink N so the patch band may still miss it, then
    // just assert the call reports rather than errors in both cases.
    let p = ProblemParams::new(1.0, 8).unwrap();
    let run = PipelineRun::full(&p, &SolverOptions::default()).unwrap();
    let env = bound_envelope(run.corrected().unwrap(), BoundKind::Center);
    println!(
        "center envelope at eps=1: {:?} over {} samples",
        env.fitted_c, env.sample_count
    );
    assert_eq!(env.violation_count, 0);
    if env.sample_count == 0 {
        assert!(env.fitted_c.is_none());
    }
}

#[test]
fn interface_mismatch_tracked_against_two_mesh_difference() {
    use hemker::verification::{two_mesh_difference_solutions, DiffRegion};
    // The composite's two-sided mismatch at piece interfaces is part of
    // what the two-mesh difference measures, so it should not exceed it.
    let opts = SolverOptions::default();
    let p16 = ProblemParams::new(2f64.powi(-4), 16).unwrap();
    let p32 = ProblemParams::new(2f64.powi(-4), 32).unwrap();
    let run16 = PipelineRun::full(&p16, &opts).unwrap();
    let run32 = PipelineRun::full(&p32, &opts).unwrap();
    let sol = run16.corrected().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatch = 0.0f64;
    // x = 0 interface between the polar and strip pieces.
    let mut sampled = 0;
    while sampled < 1000 {
        let y = rng.gen_range(-4.0f64..4.0);
        if y.abs() <= 1.0 {
            continue;
        }
        let polar = sol.pieces[3].field.trace_physical(&[(0.0, y)]).unwrap()[0];
        let strip = sol.pieces[4].field.trace_physical(&[(0.0, y)]).unwrap()[0];
        mismatch = mismatch.max((polar - strip).abs());
        sampled += 1;
    }
    let d16 = two_mesh_difference_solutions(
        sol,
        run32.corrected().unwrap(),
        DiffRegion::Corrected,
    )
    .unwrap();
    println!("interface mismatch {mismatch:.3e} vs two-mesh difference {d16:.3e}");
    assert!(
        mismatch <= d16,
        "interface mismatch {mismatch:.3e} exceeds the harness bound {d16:.3e}"
    );
}

#[test]
fn desk_scale_memory_estimate() {
    // The largest stage system used by the sweeps must fit the default
    // direct-solve budget.
    let p = ProblemParams::new(2f64.powi(-10), 512).unwrap();
    let mesh = Arc::new(strip_mesh(&p).unwrap());
    let inflow = vec![0.0; mesh.nv()];
    let sys = assemble_cartesian(&mesh, &p, &inflow).unwrap();
    let bytes = hemker::solver::direct_memory_estimate(&sys);
    println!("N=512 strip band: {:.2} GiB", bytes as f64 / (1u64 << 30) as f64);
    assert!(bytes <= 8 << 30);
}

#[test]
fn sector_decay_consistent_with_layer_bound() {
    // Along theta = pi the layer decays like exp(-(r-1)/eps); at
    // r = 1 + 4 eps the continuous bound is e^-4. The upwind scheme decays
    // geometrically rather than exponentially, so allow the standard
    // first-order slack above the continuous value.
    let p = ProblemParams::new(2f64.powi(-10), 64).unwrap();
    let (field, _) = run_stage1(&p, &SolverOptions::default()).unwrap();
    let eps = p.epsilon;
    let value = field
        .trace_physical(&[(-(1.0 + 4.0 * eps), 0.0)])
        .unwrap()[0];
    println!("sector value at r = 1+4eps: {value:.5} vs e^-4 = {:.5}", (-4.0f64).exp());
    assert!(value <= (-4.0f64).exp() + 0.08);
    assert!(value >= 0.0);
}
