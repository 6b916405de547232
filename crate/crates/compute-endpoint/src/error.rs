use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("unknown function id '{0}'")]
    UnknownFunction(String),
    #[error("unknown task id '{0}'")]
    UnknownTask(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("allocation denied: node cap of {max_nodes} reached")]
    AllocationDenied { max_nodes: usize },
    #[error("slot file {path}: {reason}")]
    SlotFormat { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl EndpointError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EndpointError::Io {
            path: path.into(),
            source,
        }
    }
}
