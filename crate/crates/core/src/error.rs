use thiserror::Error;

/// Unified error type for the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative squared pressure at node {node} (load physically infeasible)")]
    NegativeSquaredPressure { node: usize },
    #[error("steady-state Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },
    #[error("covariance matrix is not positive definite (Cholesky failed)")]
    CholeskyFailure,
    #[error("sample has zero variance in dimension {dim}")]
    ZeroVariance { dim: usize },
    #[error("evaluation point outside the space-time domain: {0}")]
    OutOfDomain(String),
    #[error("CFL condition violated: |d|*dt/dx = {ratio:.4} > 1")]
    CflViolation { ratio: f64 },
    #[error("empty time window: start {start} exceeds horizon {horizon}")]
    EmptyWindow { start: f64, horizon: f64 },
    #[error("probability level {alpha} is unattainable for this problem")]
    InfeasibleAlpha { alpha: f64 },
    #[error("line search stalled at iteration {iteration}")]
    LineSearchStall { iteration: usize },
    #[error("across-run confidence interval needs at least two runs, got {runs}")]
    InsufficientRuns { runs: usize },
    #[error("pressure sample {index} is not strictly positive")]
    NonpositivePressureSample { index: usize },
    #[error("degenerate ray direction: projected coefficients vanish")]
    ZeroDirection,
}

pub type Result<T> = std::result::Result<T, Error>;
