use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported Daubechies order {order}: supported orders are {min}..={max}")]
    UnsupportedOrder { order: usize, min: usize, max: usize },

    #[error("cascade iteration for db{order} did not converge: {reason}")]
    CascadeDiverged { order: usize, reason: String },

    #[error("sample count {len} is not divisible by 2^{levels} = {required}")]
    IncompatibleLength { len: usize, levels: usize, required: usize },

    #[error("inconsistent expansion: {0}")]
    InconsistentExpansion(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value {value} at index {index} of {what}")]
    NonFinite { what: &'static str, index: usize, value: f64 },

    #[error("grid extent [{lo}, {hi}] too small: need at least [{need_lo}, {need_hi}] to cover support growth")]
    GridTooSmall { lo: f64, hi: f64, need_lo: f64, need_hi: f64 },

    #[error("scaled time {needed} exceeds cache horizon {horizon}; rebuild the cache with tau_max >= {needed}")]
    HorizonExceeded { needed: f64, horizon: f64 },

    #[error("missing sharp draw for {0}")]
    MissingDraw(String),

    #[error("cache format: {0}")]
    Format(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
