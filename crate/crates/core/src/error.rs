use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no observations with nonzero kernel weight at t = {0}")]
    EmptyWindow(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("outside table hull: {0}")]
    Extrapolation(String),
    #[error("optimization failed: {0}")]
    Fit(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Fit(_) | Error::EmptyWindow(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
