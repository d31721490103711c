use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: degenerate input ({detail})")]
    DegenerateInput { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parameter {0:?} registered twice")]
    DuplicateParam(String),

    #[error("unknown parameter {0:?}")]
    UnknownParam(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}
