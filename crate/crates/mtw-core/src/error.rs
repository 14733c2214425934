use thiserror::Error;

/// Errors shared across the library.
///
/// Numeric verdicts (a condition failing on a sample) are never errors; they
/// are report entries. Errors mean a computation could not be carried out.
#[derive(Debug, Clone, Error)]
pub enum MtwError {
    #[error("unknown cost family `{0}`")]
    UnknownCost(String),

    #[error("invalid parameters for cost family `{name}`: {reason}")]
    BadCostParams { name: String, reason: String },

    #[error("invalid domain: {0}")]
    BadDomain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "mixed hessian is singular at x={x:?}, y={y:?} (det {det:.3e}, threshold {threshold:.3e})"
    )]
    SingularMixedHessian {
        x: Vec<f64>,
        y: Vec<f64>,
        det: f64,
        threshold: f64,
    },

    #[error("newton did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonStalled { iterations: usize, residual: f64 },

    #[error(
        "newton iterate left the target box by {distance:.3e} (more than one box diagonal {diagonal:.3e})"
    )]
    IterateEscaped { distance: f64, diagonal: f64 },

    #[error("cost is singular on the diagonal but the sampling domains touch and declare no exclusion radius")]
    DiagonalNotExcluded,

    #[error("could not draw an admissible sample after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("degenerate gradient: |grad| {grad_norm:.3e} below threshold {threshold:.3e}")]
    DegenerateGradient { grad_norm: f64, threshold: f64 },

    #[error("direction degenerate after projection (|xi| {remainder:.3e} of original)")]
    DegenerateDirection { remainder: f64 },

    #[error("unknown checker method `{0}`")]
    UnknownMethod(String),

    #[error("grid i/o: {0}")]
    GridIo(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MtwError>;
