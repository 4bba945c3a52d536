use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("undeclared symbol '{0}'")]
    UndeclaredSymbol(String),

    #[error("domain error in '{subexpression}': {message}")]
    Domain {
        subexpression: String,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),

    #[error("degenerate metric at {point:?}: |det g| = {det:e}")]
    DegenerateMetric { point: Vec<f64>, det: f64 },

    #[error("insufficient jet order: {needed} required, {available} available")]
    InsufficientOrder { needed: usize, available: usize },

    #[error("tensor is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("trace of P is not an integer: {0}")]
    NonIntegralTrace(f64),

    #[error("degenerate projector: p = {p} with n = {n}")]
    DegenerateProjector { p: usize, n: usize },

    #[error("null form cannot be normalized (Ω·Ω = {0:e})")]
    NullForm(f64),

    #[error("factors of the simple form are dependent (Gram determinant {0:e})")]
    DependentFactors(f64),

    #[error("1-form is not null (k·k = {0:e})")]
    NotNull(f64),

    #[error("rank {found} inconsistent with expected {expected}")]
    RankMismatch { expected: usize, found: usize },

    #[error("p = {p} out of range for n = {n}")]
    OutOfRange { n: usize, p: usize },

    #[error("excluded case: {0}")]
    Excluded(String),

    #[error("flow left the domain box at s = {s} (point {point:?})")]
    FlowExit { s: f64, point: Vec<f64> },

    #[error("manifest field '{field}': {message}")]
    Manifest { field: String, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no square-root sign verifies (residuals {0:e}, {1:e})")]
    SignFailure(f64, f64),
}
