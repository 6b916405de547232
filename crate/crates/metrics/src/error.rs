use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{path}:{line}: malformed journal line: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: conflicting duplicate for {key}")]
    Conflict {
        path: PathBuf,
        line: usize,
        key: String,
    },
    #[error("unknown run id '{0}'")]
    UnknownRun(String),
    #[error("run '{run_id}' is incomplete: missing {missing}")]
    IncompleteRun { run_id: String, missing: String },
    #[error("scaling series is empty; no base configuration to compare against")]
    MissingBase,
    #[error("no run ids given")]
    EmptySelection,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MetricsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MetricsError::Io {
            path: path.into(),
            source,
        }
    }
}
