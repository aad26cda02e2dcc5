use thiserror::Error;

/// Unified error type for the whole crate.
///
/// `InvalidConfig` and `InvalidData` are caller mistakes (bad settings, bad
/// input files); everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (configs, data files) as
    /// opposed to runtime/numeric failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidConfig(_) | Error::InvalidData(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch { op, detail: detail.into() }
}
