use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid config `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invariant breached: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error: 2 for bad input, 3 for internal breaches.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Invariant(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn config(field: &str, msg: impl Into<String>) -> Self {
        Error::Config { field: field.to_string(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
