use thiserror::Error;

/// Errors produced by kernel construction, quadrature, field evaluation,
/// and the analysis harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spatial dimension must be 1, 2, or 3, got {0}")]
    InvalidDimension(usize),

    #[error("kernel exponent must satisfy 0 < p < n, got p = {p} with n = {n}")]
    InvalidExponent { p: f64, n: usize },

    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),

    #[error("kernel evaluated exactly at the origin (singular point)")]
    KernelSingularity,

    #[error("L^a norm of the kernel diverges: need 1 <= a < n/p = {limit}, got a = {a}")]
    DivergentNorm { a: f64, limit: f64 },

    #[error("quadrature order must be >= 1, got radial {radial}, angular {angular}")]
    InvalidQuadratureOrder { radial: usize, angular: usize },

    #[error("rule was built for (n={rule_n}, p={rule_p}, delta={rule_delta}), kernel has (n={n}, p={p}, delta={delta})")]
    RuleKernelMismatch {
        rule_n: usize,
        rule_p: f64,
        rule_delta: f64,
        n: usize,
        p: f64,
        delta: f64,
    },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("unknown builtin field {0:?}")]
    UnknownField(String),

    #[error("field has {m} components in dimension {n}, operator {op} needs {need}")]
    FieldShapeMismatch {
        op: String,
        m: usize,
        n: usize,
        need: String,
    },

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("grid spacing h = {h} too coarse for horizon delta = {delta}: need h <= delta/4")]
    StencilTooCoarse { h: f64, delta: f64 },

    #[error("grid not padded enough for the stencil: need margin {need} cells, have {have}")]
    InsufficientPadding { need: usize, have: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
