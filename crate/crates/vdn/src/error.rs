use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {detail}")]
    Json { path: PathBuf, detail: String },

    #[error("{path}: bad format at byte {offset}: {detail}")]
    Format { path: PathBuf, offset: u64, detail: String },

    #[error(transparent)]
    Autodiff(#[from] autodiff::Error),

    #[error(transparent)]
    Shapegen(#[from] shapegen::Error),
}
