//! Maps between the native coordinate systems and physical `(x, y)`.

use crate::error::{HemkerError, Result};

/// Coordinate system of a tensor mesh. The parabolic system comes in an
/// upper and a lower flavour; the lower patch is the mirror image `y -> -y`
/// of the upper one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordSystem {
    /// `(r, theta)` with `x = r cos(theta)`, `y = r sin(theta)`.
    Polar,
    /// Identity.
    Cartesian,
    /// `(s, t)` with `x = s`, `y = t - s^2/2`.
    ParabolicUpper,
    /// `(s, t)` with `x = s`, `y = -(t - s^2/2)`.
    ParabolicLower,
}

/// Invertible map between a native coordinate pair and physical `(x, y)`.
/// The inverse is partial: polar angles are reduced to `[0, 2*pi)`, which
/// covers every mesh used here.
#[derive(Debug, Clone, Copy)]
pub struct CoordinateMap {
    pub system: CoordSystem,
}

impl CoordinateMap {
    pub fn new(system: CoordSystem) -> Self {
        CoordinateMap { system }
    }

    pub fn forward(&self, u: f64, v: f64) -> (f64, f64) {
        match self.system {
            CoordSystem::Polar => (u * v.cos(), u * v.sin()),
            CoordSystem::Cartesian => (u, v),
            CoordSystem::ParabolicUpper => (u, v - 0.5 * u * u),
            CoordSystem::ParabolicLower => (u, 0.5 * u * u - v),
        }
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        match self.system {
            CoordSystem::Polar => {
                let r = x.hypot(y);
                let mut theta = y.atan2(x);
                if theta < 0.0 {
                    theta += 2.0 * std::f64::consts::PI;
                }
                (r, theta)
            }
            CoordSystem::Cartesian => (x, y),
            CoordSystem::ParabolicUpper => (x, y + 0.5 * x * x),
            CoordSystem::ParabolicLower => (x, 0.5 * x * x - y),
        }
    }
}

/// One-dimensional piecewise-uniform mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    /// Strictly increasing node coordinates, `sum(segment_counts) + 1` long.
    pub nodes: Vec<f64>,
    /// The breakpoints actually used (first and last node included).
    pub transitions: Vec<f64>,
    /// Elements per segment.
    pub segment_counts: Vec<usize>,
}

impl Mesh1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn first(&self) -> f64 {
        self.nodes[0]
    }

    pub fn last(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn span(&self) -> f64 {
        self.last() - self.first()
    }

    /// Step to the left of node `i` (`h_i = x_i - x_{i-1}`).
    pub fn step_before(&self, i: usize) -> f64 {
        self.nodes[i] - self.nodes[i - 1]
    }

    /// Step to the right of node `i`.
    pub fn step_after(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn max_step(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Cell index `c` with `nodes[c] <= q <= nodes[c+1]`, snapping points
    /// within a relative `1e-12` of the ends back into range. Anything
    /// farther outside is an error, not a clamp.
    pub fn find_cell(&self, q: f64) -> Result<usize> {
        let tol = 1e-12 * self.span().max(1.0);
        if q < self.first() - tol || q > self.last() + tol {
            return Err(HemkerError::OutsideMesh { u: q, v: f64::NAN });
        }
        let pos = self.nodes.partition_point(|&x| x <= q);
        Ok(pos.saturating_sub(1).min(self.nodes.len() - 2))
    }
}

/// Builds a piecewise-uniform mesh: `counts[i]` equal elements on each
/// `[breakpoints[i], breakpoints[i+1]]`. Segment ends land exactly on the
/// breakpoints.
pub fn shishkin_1d(breakpoints: &[f64], counts: &[usize]) -> Result<Mesh1D> {
    if breakpoints.len() != counts.len() + 1 {
        return Err(HemkerError::Mesh(format!(
            "{} breakpoints require {} segment counts, got {}",
            breakpoints.len(),
            breakpoints.len() - 1,
            counts.len()
        )));
    }
    for w in breakpoints.windows(2) {
        if !(w[1] > w[0]) {
            return Err(HemkerError::Mesh(format!(
                "breakpoints must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(&zero) = counts.iter().find(|&&c| c == 0) {
        let _ = zero;
        return Err(HemkerError::Mesh("zero-length segment".into()));
    }
    let total: usize = counts.iter().sum();
    let mut nodes = Vec::with_capacity(total + 1);
    nodes.push(breakpoints[0]);
    for (seg, &count) in counts.iter().enumerate() {
        let (a, b) = (breakpoints[seg], breakpoints[seg + 1]);
        let h = (b - a) / count as f64;
        for k in 1..count {
            nodes.push(a + k as f64 * h);
        }
        nodes.push(b);
    }
    debug_assert_eq!(nodes.len(), total + 1);
    Ok(Mesh1D {
        nodes,
        transitions: breakpoints.to_vec(),
        segment_counts: counts.to_vec(),
    })
}
