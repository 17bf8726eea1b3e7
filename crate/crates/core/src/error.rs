use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("syntax error at byte {position}: expected {expected}")]
    Syntax { position: usize, expected: String },

    #[error("unknown variable `{name}` (dimension is {dim})")]
    UnknownVariable { name: String, dim: usize },

    #[error("domain error evaluating `{node}` at {point:?}: {reason}")]
    Domain {
        node: String,
        point: Vec<f64>,
        reason: String,
    },

    #[error("operation requires an expression that is symbolically smooth at zero: {0}")]
    NonsmoothInput(String),

    #[error("dilation parameter must be positive, got {0}")]
    NonpositiveEpsilon(f64),

    #[error("weights must be positive, nondecreasing and start at 1: {0}")]
    BadWeights(String),

    #[error("frame basis matrix is singular at {point:?}")]
    SingularFrame { point: Vec<f64> },

    #[error("frame fails the commutator-table check: {0}")]
    InvalidFrame(String),

    #[error("trajectory escaped the working box at t={t} (state {state:?})")]
    TrajectoryEscape { t: f64, state: Vec<f64> },

    #[error("integration step failed at t={t}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("Newton inversion diverged after {iterations} iterations (residual {residual})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("partition is not a disjoint cover of 1..={dim}: {reason}")]
    BadPartition { dim: usize, reason: String },

    #[error("degenerate sample skipped: {0}")]
    DegenerateSample(String),

    #[error("distance/quasinorm ratios spread over {spread:.3e}; no two-sided bound exists")]
    UnboundedRatio { spread: f64 },

    #[error("limit table has no entry for the requested sample: {0}")]
    MissingSample(String),

    #[error("sampled limit map is not invertible near {point:?}")]
    NonInvertibleL { point: Vec<f64> },

    #[error("limit Jacobian is singular at the origin")]
    SingularLambda,

    #[error("evaluation failed at schedule step {step}: {source}")]
    EvaluationFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown gallery entry `{0}`")]
    UnknownEntry(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("bad input: {0}")]
    BadInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
