use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum FacilityError {
    #[error("invalid deployment: {0}")]
    Config(String),
    #[error("unknown endpoint '{0}'")]
    UnknownEndpoint(String),
    #[error("missing source view {}", .0.display())]
    MissingSource(PathBuf),
    #[error("folder name '{0}' has no trailing digits")]
    NoScanId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("journal serialization: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl FacilityError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FacilityError::Io {
            path: path.into(),
            source,
        }
    }
}
