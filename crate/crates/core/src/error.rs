use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("operator is not self-adjoint (asymmetry {asymmetry:.3e})")]
    NotSelfAdjoint { asymmetry: f64 },

    #[error("covector is not unit length (|w| = {norm})")]
    NonUnit { norm: f64 },

    #[error("covector is zero")]
    ZeroCovector,

    #[error("eigenvalues are not distinct (relative gap {gap:.3e} below {tol:.3e})")]
    RepeatedEigenvalues { gap: f64, tol: f64 },

    #[error("map is degenerate at this point (|det J| = {det:.3e})")]
    DegenerateMap { det: f64 },

    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { pos: usize, name: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("point {point:?} lies outside the domain box")]
    OutOfDomain { point: [f64; 3] },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("frame is not orthonormal (defect {defect:.3e})")]
    FrameNotOrthonormal { defect: f64 },

    #[error("check is not applicable: {0}")]
    Inapplicable(String),

    #[error("eigenframe has sign holonomy; no globally consistent orientation exists on this grid")]
    Holonomy,

    #[error("leaf metric invalid at node {node}: {msg}")]
    LeafMetric { node: usize, msg: String },

    #[error("sup |mu| = {sup:.4} exceeds k_max = {k_max}")]
    DilatationTooLarge { sup: f64, k_max: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("map does not preserve leaves (leaf coordinate drift {drift:.3e})")]
    LeafMixing { drift: f64 },

    #[error("chart has non-positive Jacobian (min {min:.3e})")]
    NonPositiveJacobian { min: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
