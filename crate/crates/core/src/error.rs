use thiserror::Error;

/// Failure modes shared across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("degenerate tensions {0:?}: no contact angles in (0, pi)")]
    DegenerateTensions([f64; 3]),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("no consistent orientation of the junction frames: {0}")]
    OrientationFailure(String),
    #[error("bad mesh: {0}")]
    BadMesh(String),
    #[error("cutoff supports overlap on chart {chart}: r0 = {r0}, chart length = {length}")]
    SupportOverlap { chart: usize, r0: f64, length: f64 },
    #[error("fold-over: {0}")]
    FoldOver(String),
    #[error("singular junction coupling (condition number {0:.3e})")]
    SingularCoupling(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("fixed-point iteration failed: {0}")]
    PicardDiverged(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("symbol violation: {0}")]
    Violation(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, FlowError>;
