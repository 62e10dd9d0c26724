//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HemkerError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("mesh construction failed: {0}")]
    Mesh(String),

    #[error("evaluation point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("native point ({u}, {v}) lies outside the mesh bounding box")]
    OutsideMesh { u: f64, v: f64 },

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("missing inflow value at edge node {0}")]
    MissingInflow(usize),

    #[error("system is singular or structurally deficient at row {row}: {reason}")]
    SingularSystem { row: usize, reason: String },

    #[error("iterative solve did not converge within {0} matrix applications")]
    NoConvergence(usize),

    #[error("solve residual {residual:.3e} exceeds the contract {bound:.3e}")]
    ResidualContract { residual: f64, bound: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("table is incomplete: {0}")]
    IncompleteTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HemkerError>;
