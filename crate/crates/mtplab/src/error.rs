//! Crate-wide error type. Library code returns `Error`; binaries wrap it in
//! `anyhow` at the edge.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or dimension mismatch in a tensor op. Names the op so graph
    /// construction failures point at the offending call site.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An op produced NaN or infinity.
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    /// Precondition violation outside the tensor ops (bad argument, empty
    /// input, invalid model/config combination, ...).
    #[error("{0}")]
    Invalid(String),

    #[error("tokenizer: {0}")]
    Tokenize(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file did not match its expected on-disk format (bad magic, truncated
    /// payload, malformed line, ...).
    #[error("{what}: {detail}")]
    Format { what: String, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("judge: {0}")]
    Judge(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { what: what.into(), detail: detail.into() }
    }
}
