use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error at '{key}': {msg}")]
    Config { key: String, msg: String },

    #[error("{0}")]
    Core(#[from] failsafe_core::Error),

    #[error("baseline run is not stable: {0}")]
    InvalidBaseline(String),

    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub fn config(key: &str, e: impl std::fmt::Display) -> Self {
        Self::Config { key: key.into(), msg: e.to_string() }
    }
}

pub type SimResult<T> = std::result::Result<T, SimError>;
