use thiserror::Error;

use swipeforge_nn::NnError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("layout schema: {0}")]
    Schema(String),
    #[error("duplicate character {0:?} in layout")]
    DuplicateChar(char),
    #[error("key {ch:?} lies outside the keyboard bounds")]
    OutOfBounds { ch: char },
    #[error("character {0:?} is not in the alphabet")]
    UnknownChar(char),
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("no alignment of a {target_len}-symbol target fits in {frames} frames")]
    ImpossibleTarget { target_len: usize, frames: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            CoreError::Schema(_) => "schema",
            CoreError::DuplicateChar(_) => "duplicate_char",
            CoreError::OutOfBounds { .. } => "out_of_bounds",
            CoreError::UnknownChar(_) => "unknown_char",
            CoreError::Invalid { .. } => "invalid",
            CoreError::ImpossibleTarget { .. } => "impossible_target",
            CoreError::Config(_) => "config",
            CoreError::Nn(_) => "nn",
            CoreError::Json(_) => "json",
            CoreError::Io(_) => "io",
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        CoreError::Invalid {
            op,
            msg: msg.into(),
        }
    }
}
