use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters or inputs that violate a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("population is empty")]
    EmptyPopulation,

    #[error("signaling fraction {0} outside [0, 1]")]
    SignalingOutOfRange(f64),

    /// A non-positive time to the next boundary crossing. This indicates a
    /// bug in boundary processing rather than bad input.
    #[error("non-positive event step {dt:e} at t = {time}")]
    NonPositiveStep { dt: f64, time: f64 },

    #[error("event budget of {limit} exhausted at t = {time} ({params})")]
    EventOverflow {
        limit: usize,
        time: f64,
        params: String,
    },

    #[error("piecewise map has {count} segments (limit {limit})")]
    SegmentOverflow { count: usize, limit: usize },

    #[error("piecewise map discontinuous at x = {at}: jump {jump:e}")]
    Discontinuity { at: f64, jump: f64 },

    /// An independent numerical check disagreed with the primary computation.
    #[error("numerical certificate failed: {0}")]
    Certificate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of numerical self-checks (as opposed to bad input).
    pub fn is_certificate_failure(&self) -> bool {
        matches!(
            self,
            Error::Certificate(_)
                | Error::Discontinuity { .. }
                | Error::NonPositiveStep { .. }
                | Error::SegmentOverflow { .. }
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
