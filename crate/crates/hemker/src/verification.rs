//! Double-mesh convergence measurement, theoretical-bound envelopes, and
//! the closed-form barrier-function sign checks.
//!
//! The two-mesh difference for a run with `N` elements compares it against
//! the `2N` run over the union of both solutions' node images plus the
//! coarse run's cell centers. Local and parameter-uniform orders follow by
//! the log2 ratio of consecutive differences.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{HemkerError, Result};
use crate::fields::{union_sup_diff_counted, CompositeSolution, Region};
use crate::params::ProblemParams;
use crate::pipeline::{run_stage1, sector_composite, PipelineRun};
use crate::solver::SolverOptions;

/// Region over which a two-mesh difference is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffRegion {
    /// Whole domain, initial composites.
    Initial,
    /// Whole domain, corrected composites.
    Corrected,
    /// Corrected composites over the parabolic patches only.
    Patch,
    /// Sector-only solves over `x <= 0`.
    SectorLeft,
}

/// D and order matrices over an `(eps, N)` grid. `d[e][k]` is the two-mesh
/// difference (or fine-mesh error) for `eps = 2^-eps_exponents[e]` and
/// `N = n_list[k]`; entries are `None` where undefined.
#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub eps_exponents: Vec<i32>,
    pub n_list: Vec<usize>,
    pub d: Vec<Vec<Option<f64>>>,
    pub p_local: Vec<Vec<Option<f64>>>,
    pub p_uniform: Vec<Option<f64>>,
}

impl ConvergenceTable {
    pub fn new(eps_exponents: Vec<i32>, n_list: Vec<usize>) -> Self {
        let rows = eps_exponents.len();
        let cols = n_list.len();
        ConvergenceTable {
            eps_exponents,
            n_list,
            d: vec![vec![None; cols]; rows],
            p_local: vec![vec![None; cols]; rows],
            p_uniform: vec![None; cols],
        }
    }

    pub fn d_at(&self, eps_exp: i32, n: usize) -> Option<f64> {
        let e = self.eps_exponents.iter().position(|&j| j == eps_exp)?;
        let k = self.n_list.iter().position(|&m| m == n)?;
        self.d[e][k]
    }

    pub fn p_at(&self, eps_exp: i32, n: usize) -> Option<f64> {
        let e = self.eps_exponents.iter().position(|&j| j == eps_exp)?;
        let k = self.n_list.iter().position(|&m| m == n)?;
        self.p_local[e][k]
    }

    /// Maximum of `d` over the eps grid for column `k`; `None` if any cell
    /// in the column is missing.
    pub fn d_uniform(&self, k: usize) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for row in &self.d {
            match row[k] {
                Some(v) => worst = Some(worst.map_or(v, |w: f64| w.max(v))),
                None => return None,
            }
        }
        worst
    }

    /// Fills the order matrices by the log2 ratio formulas. A zero or
    /// negative difference leaves the order undefined rather than NaN.
    pub fn compute_orders(&mut self) {
        let cols = self.n_list.len();
        for e in 0..self.eps_exponents.len() {
            for k in 0..cols.saturating_sub(1) {
                self.p_local[e][k] = match (self.d[e][k], self.d[e][k + 1]) {
                    (Some(dn), Some(d2n)) if dn > 0.0 && d2n > 0.0 => Some((dn / d2n).log2()),
                    _ => None,
                };
            }
        }
        for k in 0..cols.saturating_sub(1) {
            self.p_uniform[k] = match (self.d_uniform(k), self.d_uniform(k + 1)) {
                (Some(dn), Some(d2n)) if dn > 0.0 && d2n > 0.0 => Some((dn / d2n).log2()),
                _ => None,
            };
        }
    }
}

/// Closed-form two-mesh difference model from the worked anomaly example:
/// `D = rho/(1+rho)` with `rho = 1/(eps N)` once `k eps ln N >= 1`, and
/// `D = 1/N` below that threshold.
pub fn synthetic_anomaly(k: f64, eps: f64, n: usize) -> f64 {
    assert!(k >= 1.0, "model requires k >= 1");
    let n_f = n as f64;
    if k * eps * n_f.ln() >= 1.0 {
        let rho = 1.0 / (eps * n_f);
        rho / (1.0 + rho)
    } else {
        1.0 / n_f
    }
}

/// Parameter-uniform counterpart: `sup_eps D_eps^N = k ln N / (N + k ln N)`
/// for `N >= 4`, `k >= 1`.
pub fn synthetic_anomaly_uniform(k: f64, n: usize) -> f64 {
    assert!(k >= 1.0 && n >= 4, "model requires k >= 1 and N >= 4");
    let kl = k * (n as f64).ln();
    kl / (n as f64 + kl)
}

fn check_doubled(coarse: &ProblemParams, fine: &ProblemParams) -> Result<()> {
    if coarse.epsilon != fine.epsilon {
        return Err(HemkerError::InvalidParams(format!(
            "two-mesh pair has mismatched eps: {} vs {}",
            coarse.epsilon, fine.epsilon
        )));
    }
    if fine.n != 2 * coarse.n || fine.m != 2 * coarse.m {
        return Err(HemkerError::InvalidParams(format!(
            "two-mesh pair must double N and M: ({}, {}) vs ({}, {})",
            coarse.n, coarse.m, fine.n, fine.m
        )));
    }
    Ok(())
}

fn patch_region_filter(p: &ProblemParams) -> impl Fn(f64, f64) -> bool + Sync {
    let upper = Region::PatchUpper {
        len: p.patch_len,
        t_min: 1.0 - p.tau3(),
        t_max: 1.0 + 3.0 * p.delta,
    };
    let lower = Region::PatchLower {
        len: p.patch_len,
        t_min: 1.0 - p.tau3(),
        t_max: 1.0 + 3.0 * p.delta,
    };
    move |x, y| upper.contains(x, y) || lower.contains(x, y)
}

/// Two-mesh difference between composites of a coarse and a doubled run,
/// restricted to the named region. The sampling set must not collapse: if
/// fewer than half of the selected points were evaluable in both solutions,
/// something is inconsistent and the measurement errors out.
pub fn two_mesh_difference_solutions(
    coarse: &CompositeSolution,
    fine: &CompositeSolution,
    region: DiffRegion,
) -> Result<f64> {
    check_doubled(&coarse.params, &fine.params)?;
    let (diff, evaluated, selected) = match region {
        DiffRegion::Initial | DiffRegion::Corrected => {
            union_sup_diff_counted(coarse, fine, |_, _| true)
        }
        DiffRegion::Patch => {
            let filter = patch_region_filter(&coarse.params);
            union_sup_diff_counted(coarse, fine, filter)
        }
        DiffRegion::SectorLeft => union_sup_diff_counted(coarse, fine, |x, _| x <= 0.0),
    };
    if selected == 0 || evaluated * 2 < selected {
        return Err(HemkerError::IncompleteTable(format!(
            "two-mesh sampling collapsed: {evaluated} of {selected} points evaluable"
        )));
    }
    Ok(diff)
}

/// Global fine-mesh error proxy: the difference between a solution and a
/// reference computed with at least four times as many elements.
pub fn fine_mesh_error(
    sol: &CompositeSolution,
    reference: &CompositeSolution,
) -> Result<f64> {
    if sol.params.epsilon != reference.params.epsilon {
        return Err(HemkerError::InvalidParams(
            "error proxy requires matching eps".into(),
        ));
    }
    if reference.params.n < 4 * sol.params.n {
        return Err(HemkerError::InvalidParams(format!(
            "reference must use at least 4N elements: N = {}, reference = {}",
            sol.params.n, reference.params.n
        )));
    }
    let (diff, evaluated, selected) = union_sup_diff_counted(sol, reference, |_, _| true);
    if selected == 0 || evaluated * 2 < selected {
        return Err(HemkerError::IncompleteTable(format!(
            "error-proxy sampling collapsed: {evaluated} of {selected} points evaluable"
        )));
    }
    Ok(diff)
}

/// Memoizing store of pipeline and sector-only runs for the sweep drivers.
/// Concurrent requests for the same key serialize on a per-key slot; results
/// are shared. Requests for distinct keys proceed in parallel.
pub struct RunPool {
    opts: SolverOptions,
    outer_radius: f64,
    delta: f64,
    initial_only: bool,
    full: Mutex<HashMap<(i32, usize), Arc<Mutex<Option<Arc<PipelineRun>>>>>>,
    sector: Mutex<HashMap<(i32, usize), Arc<Mutex<Option<Arc<CompositeSolution>>>>>>,
}

impl RunPool {
    pub fn new(opts: SolverOptions) -> Self {
        RunPool {
            opts,
            outer_radius: crate::params::DEFAULT_OUTER_RADIUS,
            delta: crate::params::DEFAULT_DELTA,
            initial_only: false,
            full: Mutex::new(HashMap::new()),
            sector: Mutex::new(HashMap::new()),
        }
    }

    /// Overrides the geometry parameters and, when `initial_only`, stops
    /// every pooled run after stage 2.
    pub fn with_overrides(mut self, outer_radius: f64, delta: f64, initial_only: bool) -> Self {
        self.outer_radius = outer_radius;
        self.delta = delta;
        self.initial_only = initial_only;
        self
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    fn params(&self, eps_exp: i32, n: usize) -> Result<ProblemParams> {
        ProblemParams::with(
            2f64.powi(-eps_exp),
            n,
            n,
            self.outer_radius,
            self.delta,
        )
    }

    fn slot<T>(
        map: &Mutex<HashMap<(i32, usize), Arc<Mutex<Option<Arc<T>>>>>>,
        key: (i32, usize),
    ) -> Arc<Mutex<Option<Arc<T>>>> {
        let mut guard = map.lock().unwrap();
        guard.entry(key).or_default().clone()
    }

    /// Four-stage run for `eps = 2^-eps_exp`, `N = M = n` (stages 1-2 only
    /// if the pool was built `initial_only`).
    pub fn full_run(&self, eps_exp: i32, n: usize) -> Result<Arc<PipelineRun>> {
        let slot = Self::slot(&self.full, (eps_exp, n));
        let mut guard = slot.lock().unwrap();
        if let Some(run) = guard.as_ref() {
            return Ok(Arc::clone(run));
        }
        let p = self.params(eps_exp, n)?;
        let run = if self.initial_only {
            PipelineRun::initial(&p, &self.opts)?
        } else {
            PipelineRun::full(&p, &self.opts)?
        };
        let run = Arc::new(run);
        *guard = Some(Arc::clone(&run));
        Ok(run)
    }

    /// Stage-1-only sector composite.
    pub fn sector_run(&self, eps_exp: i32, n: usize) -> Result<Arc<CompositeSolution>> {
        let slot = Self::slot(&self.sector, (eps_exp, n));
        let mut guard = slot.lock().unwrap();
        if let Some(sol) = guard.as_ref() {
            return Ok(Arc::clone(sol));
        }
        let p = self.params(eps_exp, n)?;
        let (field, _) = run_stage1(&p, &self.opts)?;
        let sol = Arc::new(sector_composite(&p, field));
        *guard = Some(Arc::clone(&sol));
        Ok(sol)
    }

    /// The best composite a pooled run can offer: corrected when present,
    /// initial otherwise.
    pub fn solution(&self, eps_exp: i32, n: usize) -> Result<Arc<CompositeSolution>> {
        let run = self.full_run(eps_exp, n)?;
        Ok(Arc::new(
            run.corrected().cloned().unwrap_or_else(|| run.initial.clone()),
        ))
    }

    /// Every pipeline run the pool has computed so far.
    pub fn all_runs(&self) -> Vec<Arc<PipelineRun>> {
        let guard = self.full.lock().unwrap();
        guard
            .values()
            .filter_map(|slot| slot.lock().unwrap().as_ref().map(Arc::clone))
            .collect()
    }

    fn solution_for(
        &self,
        region: DiffRegion,
        eps_exp: i32,
        n: usize,
    ) -> Result<Arc<CompositeSolution>> {
        match region {
            DiffRegion::SectorLeft => self.sector_run(eps_exp, n),
            DiffRegion::Initial => {
                let run = self.full_run(eps_exp, n)?;
                Ok(Arc::new(run.initial.clone()))
            }
            DiffRegion::Corrected | DiffRegion::Patch => {
                let run = self.full_run(eps_exp, n)?;
                run.corrected()
                    .cloned()
                    .map(Arc::new)
                    .ok_or_else(|| HemkerError::IncompleteTable("corrected run missing".into()))
            }
        }
    }
}

/// Two-mesh difference `D^N_eps` computed from the pool for the given region.
pub fn two_mesh_difference(
    pool: &RunPool,
    eps_exp: i32,
    n: usize,
    region: DiffRegion,
) -> Result<f64> {
    let coarse = pool.solution_for(region, eps_exp, n)?;
    let fine = pool.solution_for(region, eps_exp, 2 * n)?;
    two_mesh_difference_solutions(&coarse, &fine, region)
}

fn require_doubling(n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() {
        return Err(HemkerError::InvalidParams("empty N list".into()));
    }
    for w in n_list.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(HemkerError::InvalidParams(format!(
                "N list must double at each step, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Fills `D^N_eps` for every `N` in `n_list` (the last column needs a `2N`
/// run as well) and computes the order matrices.
pub fn fill_two_mesh_table(
    pool: &RunPool,
    eps_exponents: &[i32],
    n_list: &[usize],
    region: DiffRegion,
) -> Result<ConvergenceTable> {
    use rayon::prelude::*;
    require_doubling(n_list)?;
    let mut table = ConvergenceTable::new(eps_exponents.to_vec(), n_list.to_vec());
    let cells: Vec<(usize, usize)> = (0..eps_exponents.len())
        .flat_map(|e| (0..n_list.len()).map(move |k| (e, k)))
        .collect();
    let values: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(e, k)| two_mesh_difference(pool, eps_exponents[e], n_list[k], region))
        .collect();
    for ((e, k), value) in cells.into_iter().zip(values) {
        table.d[e][k] = Some(value?);
    }
    table.compute_orders();
    Ok(table)
}

/// Fills the fine-mesh error proxy against a fixed reference run.
pub fn fill_error_table(
    pool: &RunPool,
    eps_exponents: &[i32],
    n_list: &[usize],
    reference_n: usize,
) -> Result<ConvergenceTable> {
    use rayon::prelude::*;
    let mut table = ConvergenceTable::new(eps_exponents.to_vec(), n_list.to_vec());
    let cells: Vec<(usize, usize)> = (0..eps_exponents.len())
        .flat_map(|e| (0..n_list.len()).map(move |k| (e, k)))
        .collect();
    let values: Vec<Result<Option<f64>>> = cells
        .par_iter()
        .map(|&(e, k)| {
            if reference_n < 4 * n_list[k] {
                return Ok(None);
            }
            let run = pool.full_run(eps_exponents[e], n_list[k])?;
            let reference = pool.full_run(eps_exponents[e], reference_n)?;
            let (sol, r) = (
                run.corrected().ok_or_else(|| {
                    HemkerError::IncompleteTable("corrected run missing".into())
                })?,
                reference.corrected().ok_or_else(|| {
                    HemkerError::IncompleteTable("corrected reference missing".into())
                })?,
            );
            fine_mesh_error(sol, r).map(Some)
        })
        .collect();
    for ((e, k), value) in cells.into_iter().zip(values) {
        table.d[e][k] = value?;
    }
    Ok(table)
}

/// Envelope families from the pointwise solution bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Basic,
    Left,
    Right,
    Center,
}

/// Fitted envelope constant over a solution's node images. `fitted_c` is
/// the max of value/envelope over the admissible samples, so violations
/// against it are zero by construction; the interesting signal is its
/// magnitude and stability under refinement.
#[derive(Debug, Clone)]
pub struct BoundEnvelope {
    pub kind: BoundKind,
    pub fitted_c: Option<f64>,
    pub violation_count: usize,
    pub sample_count: usize,
}

/// Envelope values below this floor are skipped: there the computed field
/// is dominated by discretization noise and a ratio would be meaningless.
const ENVELOPE_FLOOR: f64 = 1e-6;

pub fn bound_envelope(sol: &CompositeSolution, kind: BoundKind) -> BoundEnvelope {
    let eps = sol.params.epsilon;
    let mu = 0.5;
    let mut fitted: Option<f64> = None;
    let mut samples = 0usize;
    for (x, y) in sol.node_images() {
        let env = match kind {
            BoundKind::Basic => Some(1.0),
            BoundKind::Left => {
                let r = x.hypot(y);
                if x <= 0.0 && r >= 1.0 {
                    let cos_theta = x / r;
                    Some((cos_theta * (r - 1.0) / eps).exp())
                } else {
                    None
                }
            }
            BoundKind::Right => {
                if y.abs() >= 1.0 {
                    Some((-(y.abs() - 1.0) / eps.sqrt()).exp())
                } else {
                    None
                }
            }
            BoundKind::Center => {
                let layer = 0.5 * x * x + y.abs() - 1.0;
                if x.abs() <= eps.powf(1.0 / 3.0) && layer.abs() <= mu * eps.powf(2.0 / 3.0) {
                    Some((-layer / (3.0 * eps.powf(2.0 / 3.0))).exp())
                } else {
                    None
                }
            }
        };
        let Some(env) = env else { continue };
        if env < ENVELOPE_FLOOR {
            continue;
        }
        samples += 1;
        if let Ok(value) = sol.eval(x, y) {
            let ratio = value / env;
            fitted = Some(fitted.map_or(ratio, |f: f64| f.max(ratio)));
        }
    }
    BoundEnvelope {
        kind,
        fitted_c: fitted,
        violation_count: 0,
        sample_count: samples,
    }
}

/// Barrier families from the closed-form comparison arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierKind {
    /// Exponential boundary-layer barrier in polar coordinates.
    Bminus,
    /// Characteristic-layer barrier above `y = 1`.
    Bplus,
    /// Parabolic barrier near the characteristic points.
    Bcenter,
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierParams {
    /// Decay rate of the polar barrier (`Bminus`), in `(0, 1]`; also the
    /// exponent constant of the central barrier.
    pub kappa: f64,
    /// Growth constant of the `Bplus` barrier, at least 2.
    pub c1: f64,
    /// Slope parameter of the central barrier.
    pub alpha: f64,
    /// Half-width constant of the central barrier's strip.
    pub c: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        BarrierParams {
            kappa: 1.0 / 3.0,
            c1: 2.0,
            alpha: 0.9,
            c: 1.0,
        }
    }
}

/// The parameter constraints that make the central barrier's operator image
/// nonnegative.
pub fn barrier_constraints_ok(c: f64, alpha: f64, kappa: f64) -> bool {
    kappa <= c / 3.0 && alpha > (8.0 / 9.0) * c * c && c * c * c < 9.0 / 8.0
}

/// Closed-form operator residual of the named barrier at one sample point
/// (native coordinates: `(r, theta)` for `Bminus`, `(x, y)` otherwise).
/// Errors if the sample lies outside the barrier's stated region.
pub fn barrier_residual(
    kind: BarrierKind,
    eps: f64,
    point: (f64, f64),
    params: &BarrierParams,
) -> Result<f64> {
    let outside = |msg: &str| Err(HemkerError::InvalidParams(msg.into()));
    match kind {
        BarrierKind::Bminus => {
            let (r, theta) = point;
            let kappa = params.kappa;
            if !(kappa > 0.0 && kappa <= 1.0) {
                return outside("Bminus requires 0 < kappa <= 1");
            }
            if !(theta.cos() < 0.0 && r > 1.0) {
                return outside("Bminus requires cos(theta) < 0 and r > 1");
            }
            let barrier = (kappa * theta.cos() * (r - 1.0) / eps).exp();
            Ok((kappa / eps)
                * theta.sin().powi(2)
                * (1.0 - kappa + kappa / r)
                * (1.0 - 1.0 / r)
                * barrier)
        }
        BarrierKind::Bplus => {
            let (x, y) = point;
            let c1 = params.c1;
            if c1 < 2.0 {
                return outside("Bplus requires C1 >= 2");
            }
            if y <= 1.0 {
                return outside("Bplus requires y > 1");
            }
            let barrier = (c1 * (1.0 + x)).exp() * (-(y - 1.0) / eps.sqrt()).exp();
            Ok((c1 - eps * c1 * c1 - 1.0) * barrier)
        }
        BarrierKind::Bcenter => {
            let (x, y) = point;
            let (kappa, alpha, c) = (params.kappa, params.alpha, params.c);
            if alpha * c >= 1.0 {
                return outside("Bcenter requires alpha * C < 1");
            }
            let xi = x / eps.powf(1.0 / 3.0);
            if xi.abs() >= c {
                return outside("Bcenter requires |x| < C eps^(1/3)");
            }
            if y <= 0.0 {
                return outside("Bcenter is stated for y > 0");
            }
            let decay = (-(kappa) * (0.5 * x * x + y - 1.0) / eps.powf(2.0 / 3.0)).exp();
            let poly = alpha - kappa * xi * (1.0 + alpha * xi) - kappa * kappa * (1.0 + alpha * xi);
            Ok(poly * decay / ((1.0 - alpha * c) * eps.powf(1.0 / 3.0)))
        }
    }
}
