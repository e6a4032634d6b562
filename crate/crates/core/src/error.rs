use std::path::PathBuf;

use crate::model::FacilityType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an enumeration error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Connection,
    Consolidation,
    Omission,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Connection => "connection",
            Stage::Consolidation => "consolidation",
            Stage::Omission => "omission",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("could not parse model reply {raw:?}: {message}")]
    Parse { message: String, raw: String },

    #[error("image format error: {0}")]
    Format(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("{facility} {stage} stage failed ({context}): {source}")]
    Stage {
        facility: FacilityType,
        stage: Stage,
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cancelled")]
    Cancelled,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Transport failures are the only errors worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }

    /// Walks through `Stage` wrappers to the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Converts a serde_json error into a schema error, naming the JSON path
/// when serde reports one.
pub(crate) fn schema_error(what: &str, err: serde_json::Error) -> Error {
    let message = err.to_string();
    let field = message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| what.to_string());
    Error::Schema { field, message }
}
