use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented invariant (bad box, bad threshold, empty set, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("box parse error at byte {offset}: {reason}")]
    BoxParse { offset: usize, reason: String },

    /// Annotation file is structurally wrong. `record` names the offending entry.
    #[error("ingestion error in {record}: {reason}")]
    Ingest { record: String, reason: String },

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("generation error: {reason} (achievable: {achievable})")]
    Generation { reason: String, achievable: usize },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("fixture miss: {} key(s) not recorded: {}", missing.len(), missing.join(", "))]
    FixtureMiss { missing: Vec<String> },

    #[error("partial results: {completed}/{total} records done, resume from {}", checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<no checkpoint>".into()))]
    Partial {
        completed: usize,
        total: usize,
        checkpoint: Option<PathBuf>,
        #[source]
        cause: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for failures caused by a model backend rather than by the inputs.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            Error::Transport(_) | Error::FixtureMiss { .. } => true,
            Error::Partial { cause, .. } => cause.is_provider_failure(),
            _ => false,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::BoxParse { .. } => "box_parse",
            Error::Ingest { .. } => "ingest",
            Error::Scoring(_) => "scoring",
            Error::Generation { .. } => "generation",
            Error::Transport(_) => "transport",
            Error::FixtureMiss { .. } => "fixture_miss",
            Error::Partial { .. } => "partial",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }
}
