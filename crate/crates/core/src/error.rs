use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector is not future timelike (<a,a> = {norm_sq}, a0 = {a0})")]
    NotTimelike { norm_sq: f64, a0: f64 },

    #[error("tangent vectors are based at different points")]
    BaseMismatch,

    #[error("grids do not match")]
    GridMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step {ds} exceeds the stability limit {limit}")]
    Cfl { ds: f64, limit: f64 },

    #[error("sup|d_x phi| grew from {before:.3e} to {after:.3e} between rungs at s = {s}")]
    BlowUp { s: f64, before: f64, after: f64 },

    #[error("tail criterion unmet at s = {s}: {detail}; raise s_max")]
    TailUnmet { s: f64, detail: String },

    #[error("frame orthonormality drift {drift:.3e} exceeds {limit:.1e}")]
    FrameDrift { drift: f64, limit: f64 },

    #[error("energy drift {drift:.3e} exceeds abort threshold {limit:.3e}")]
    EnergyDrift { drift: f64, limit: f64 },

    #[error("index {index} is at or outside the boundary of a sequence of length {len}")]
    Boundary { index: usize, len: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
