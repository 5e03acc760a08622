use thiserror::Error;

/// Crate-wide error type. `Config`-class errors (bad flags, missing env
/// vars, schema-version mismatches) map to exit code 2 in the CLI; the
/// rest map to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("task catalog: {0}")]
    Catalog(String),
    #[error("reward schedule: {0}")]
    Schedule(String),
    #[error("prompt: {0}")]
    Prompt(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("log schema: {0}")]
    LogSchema(String),
    #[error("fit: {0}")]
    Fit(String),
    #[error("analysis: {0}")]
    Analysis(String),
    #[error("probe: {0}")]
    Probe(String),
}

impl Error {
    /// True for errors caused by bad configuration rather than runtime
    /// failure (used to pick the CLI exit code).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Catalog(_) | Error::LogSchema(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
