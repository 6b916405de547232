use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    /// Definition rejected; carries one message per violated invariant.
    #[error("invalid flow definition: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("definition is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown run id '{0}'")]
    UnknownRun(String),
    #[error("no provider registered for action type '{0}'")]
    UnknownActionType(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FlowError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlowError::Io {
            path: path.into(),
            source,
        }
    }
}
