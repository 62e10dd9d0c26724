//! Problem parameters and the Shishkin transition-point formulas.
//!
//! Every mesh in the solver is piecewise uniform with transition points of
//! the form `min{geometric cap, c * eps^p * ln K}`. All of those formulas
//! live here so the mesh builders and the tests share a single source.

use crate::error::{HemkerError, Result};

/// Default outer radius of the computational domain.
pub const DEFAULT_OUTER_RADIUS: f64 = 4.0;
/// Default half-height scale of the parabolic patch.
pub const DEFAULT_DELTA: f64 = 0.05;
/// The patch width formula is pinned to `ln 2048` so that the patch has the
/// same physical width for every mesh size in a convergence sweep.
pub const PATCH_WIDTH_LOG_ARG: f64 = 2048.0;

/// Parameters of a single benchmark run.
///
/// `n` is the number of mesh elements per coordinate direction (multiple of
/// 8), `m` the number of vertical elements in the parabolic patch (multiple
/// of 4). Construction validates the stability constraints; an invalid
/// combination is rejected rather than clamped, except for the patch width
/// which is clamped by design (see [`patch_width`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemParams {
    pub epsilon: f64,
    pub n: usize,
    pub m: usize,
    pub outer_radius: f64,
    pub delta: f64,
    pub patch_len: f64,
    pub kappa_angle: f64,
}

impl ProblemParams {
    /// Standard benchmark setup: `m = n`, `R = 4`, `delta = 0.05`, patch
    /// width from [`patch_width`].
    pub fn new(epsilon: f64, n: usize) -> Result<Self> {
        Self::with(epsilon, n, n, DEFAULT_OUTER_RADIUS, DEFAULT_DELTA)
    }

    /// Benchmark setup for `eps = 2^-j`.
    pub fn benchmark(eps_exponent: i32, n: usize) -> Result<Self> {
        Self::new(2f64.powi(-eps_exponent), n)
    }

    pub fn with(epsilon: f64, n: usize, m: usize, outer_radius: f64, delta: f64) -> Result<Self> {
        let patch_len = patch_width_from(epsilon, n, m, delta);
        let p = ProblemParams {
            epsilon,
            n,
            m,
            outer_radius,
            delta,
            patch_len,
            kappa_angle: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Replace the patch width, re-validating the stability constraint.
    pub fn set_patch_len(mut self, patch_len: f64) -> Result<Self> {
        self.patch_len = patch_len;
        self.validate()?;
        Ok(self)
    }

    /// Bypasses validation. Only for tests that deliberately break the
    /// stability constraints.
    #[doc(hidden)]
    pub fn set_patch_len_unchecked(mut self, patch_len: f64) -> Self {
        self.patch_len = patch_len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HemkerError::InvalidParams(msg));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.n == 0 || self.n % 8 != 0 {
            return fail(format!("N must be a positive multiple of 8, got {}", self.n));
        }
        if self.m == 0 || self.m % 4 != 0 {
            return fail(format!("M must be a positive multiple of 4, got {}", self.m));
        }
        if !(self.outer_radius > 1.0) {
            return fail(format!(
                "outer radius must exceed 1, got {}",
                self.outer_radius
            ));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0 / 6.0) {
            return fail(format!("delta must lie in (0, 1/6], got {}", self.delta));
        }
        // Maximum vertical patch step K <= 12 delta / M must not exceed 1/N.
        if 12.0 * self.delta > self.m as f64 / self.n as f64 {
            return fail(format!(
                "step bound violated: 12*delta = {} > M/N = {}",
                12.0 * self.delta,
                self.m as f64 / self.n as f64
            ));
        }
        if !(self.patch_len > 0.0 && self.patch_len < 1.0) {
            return fail(format!("patch width must lie in (0, 1), got {}", self.patch_len));
        }
        let l_star = self.l_star();
        if self.patch_len > l_star * (1.0 + 1e-12) {
            return fail(format!(
                "patch width {} exceeds stability limit L* = {}",
                self.patch_len, l_star
            ));
        }
        if !(self.kappa_angle > 0.0 && self.kappa_angle <= 1.0) {
            return fail(format!(
                "kappa_angle must lie in (0, 1], got {}",
                self.kappa_angle
            ));
        }
        Ok(())
    }

    /// First radial transition: `min{(R-1)/4, 2 eps ln N}`.
    pub fn sigma1(&self) -> f64 {
        ((self.outer_radius - 1.0) / 4.0).min(2.0 * self.epsilon * (self.n as f64).ln())
    }

    /// Second radial transition: `min{(R-1)/4, 3 eps^(2/3) ln N}`.
    pub fn sigma2(&self) -> f64 {
        ((self.outer_radius - 1.0) / 4.0)
            .min(3.0 * self.epsilon.powf(2.0 / 3.0) * (self.n as f64).ln())
    }

    /// Angular transition: `min{pi/6, sqrt(6) eps^(1/3) ln N}`.
    pub fn tau_angle(&self) -> f64 {
        (std::f64::consts::PI / 6.0)
            .min(6f64.sqrt() * self.epsilon.powf(1.0 / 3.0) * (self.n as f64).ln())
    }

    /// Inner vertical transition of the strip: `min{1/2, 2 sqrt(eps) ln N}`.
    pub fn tau1(&self) -> f64 {
        0.5f64.min(2.0 * self.epsilon.sqrt() * (self.n as f64).ln())
    }

    /// Outer vertical transition of the strip: `min{(R-1)/2, 2 sqrt(eps) ln N}`.
    pub fn tau2(&self) -> f64 {
        ((self.outer_radius - 1.0) / 2.0).min(2.0 * self.epsilon.sqrt() * (self.n as f64).ln())
    }

    /// Lower patch transition: `min{delta, 3 eps^(2/3) ln M}`.
    pub fn tau3(&self) -> f64 {
        self.delta
            .min(3.0 * self.epsilon.powf(2.0 / 3.0) * (self.m as f64).ln())
    }

    /// Upper patch transition: `min{delta, 2 sqrt(eps) ln M}`.
    pub fn tau4(&self) -> f64 {
        self.delta.min(2.0 * self.epsilon.sqrt() * (self.m as f64).ln())
    }

    /// Stability limit on the patch width: `L* = 2 sqrt(N tau3 / M)`.
    pub fn l_star(&self) -> f64 {
        2.0 * (self.n as f64 * self.tau3() / self.m as f64).sqrt()
    }

    /// Critical angle `theta*` with `kappa cos(theta*) = -1/2`; undefined for
    /// `kappa < 1/2`. Diagnostics only.
    pub fn critical_angle(&self) -> Option<f64> {
        if self.kappa_angle >= 0.5 {
            Some((-1.0 / (2.0 * self.kappa_angle)).acos())
        } else {
            None
        }
    }
}

/// Patch width `L = 2 sqrt(min{delta, eps^(2/3) ln 2048})`, clamped to the
/// stability limit `L*` and to 0.999 so that `L < 1` always holds.
pub fn patch_width(p: &ProblemParams) -> f64 {
    patch_width_from(p.epsilon, p.n, p.m, p.delta)
}

fn patch_width_from(epsilon: f64, n: usize, m: usize, delta: f64) -> f64 {
    let arg = delta.min(epsilon.powf(2.0 / 3.0) * PATCH_WIDTH_LOG_ARG.ln());
    let l = 2.0 * arg.sqrt();
    let tau3 = delta.min(3.0 * epsilon.powf(2.0 / 3.0) * (m as f64).ln());
    let l_star = 2.0 * (n as f64 * tau3 / m as f64).sqrt();
    l.min(l_star).min(0.999)
}
