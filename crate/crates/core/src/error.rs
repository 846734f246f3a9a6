use thiserror::Error;

/// Errors raised by the calculus and the certification checks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed input: shapes, non-finite values, unknown names.
    #[error("invalid input: {0}")]
    Input(String),

    /// A matrix that must be positive definite is not (e.g. the field left its domain).
    #[error("not positive definite: {0}")]
    NotPositive(String),

    /// A quadratic form expected to be positive semidefinite has a negative direction.
    #[error("form is not positive semidefinite: smallest generalized eigenvalue {min:e}, largest {max:e}")]
    NotPsd { min: f64, max: f64 },

    /// Curvature assembly broke the block-transpose symmetry beyond tolerance.
    #[error("curvature matrix asymmetry {asymmetry:e} exceeds {limit:e}")]
    Symmetry { asymmetry: f64, limit: f64 },

    /// Tensor-product rule would exceed the node budget.
    #[error("quadrature rule needs {nodes} nodes, budget is {limit}")]
    Budget { nodes: u128, limit: u128 },

    /// Quadrature produced an unusable result (rule too coarse, weight not integrable).
    #[error("quadrature failed: {0}")]
    Quadrature(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
