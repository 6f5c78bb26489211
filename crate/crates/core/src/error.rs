use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unsupported polynomial degree {0} (supported: 0..=5)")]
    UnsupportedDegree(usize),
    #[error("unsupported quadrature order {0}")]
    UnsupportedOrder(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("iterative solver stopped after {iterations} iterations with relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("operator is not positive definite (CG curvature {curvature:e} at iteration {iteration})")]
    NotPositiveDefinite { iteration: usize, curvature: f64 },
    #[error("singular matrix at pivot {0}")]
    Singular(usize),
    #[error("invalid penalty: {0}")]
    Penalty(String),
    #[error("trace state holds {found} traces, expected {expected}")]
    WrongTraceKind { expected: &'static str, found: &'static str },
    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("stage traces were not retained for this step")]
    MissingStageTraces,
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
