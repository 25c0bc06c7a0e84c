use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to ingest {path}: {message}")]
    Ingestion { path: PathBuf, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("template `{template}` has no binding for placeholder `{{{placeholder}}}`")]
    Template { template: String, placeholder: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("authentication rejected by backend: {0}")]
    Auth(String),

    #[error("no mock fixture for template `{template}` with fingerprint {fingerprint}")]
    Fixture { template: String, fingerprint: String },

    #[error("no JSON object or array found in model output")]
    StructuredOutput { raw: String },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("backend contract violated: {0}")]
    Backend(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("missing artifact {path}; run `propdial {producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
