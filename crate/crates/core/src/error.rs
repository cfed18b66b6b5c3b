use thiserror::Error;

/// Errors raised across the toolkit. Numeric payloads are reported as `f64`
/// regardless of the scalar type the computation ran in.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("profile length {len} does not match grid size {n}")]
    LengthMismatch { len: usize, n: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("profiles live on different grids")]
    GridMismatch,

    #[error("profile has non-positive mass {0}")]
    NonPositiveMass(f64),

    #[error("negative value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },

    #[error("non-positive value {value} at interior index {index}; split the domain at the node")]
    NonPositiveInterior { index: usize, value: f64 },

    #[error("time {t} outside the window [{t0}, {t1}]")]
    TimeOutOfWindow { t: f64, t0: f64, t1: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("potential is singular on the computation domain ({0}); split the domain or use the path-integral estimator")]
    SingularPotential(String),

    #[error("step count {n_steps} violates the stiffness bound dt*max|c| <= 0.5 (max|c| = {max_c}); need at least {required} steps")]
    StiffnessBound { n_steps: usize, max_c: f64, required: usize },

    #[error("point {0} lies in the singular set or outside the domain")]
    PointExcluded(f64),

    #[error("times do not chain: {0}")]
    TimeChain(String),

    #[error("Schrödinger system did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("zero or non-finite denominator at index {index} ({side}); kernel and marginals are incompatible")]
    ZeroDenominator { index: usize, side: &'static str },

    #[error("marginal has an interior zero at index {0}; nodal data must be split into components")]
    NodalMarginal(usize),

    #[error("transition density row {row} sums to {sum}, beyond tolerance {tol:e}")]
    RowSum { row: usize, sum: f64, tol: f64 },

    #[error("missing kernel for slice t = {0}")]
    MissingSlice(f64),

    #[error("quantity {quantity} is not available for case {case}")]
    QuantityUnavailable { case: String, quantity: String },

    #[error("kernel is not strictly positive (min entry {0:e})")]
    KernelNotPositive(f64),

    #[error("unknown case: {0}")]
    UnknownCase(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
