use thiserror::Error;

/// Errors produced by the reconstruction core.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error(
        "scan position {index} at (y={y}, x={x}) does not fit: object {object_shape:?}, probe {probe_shape:?}"
    )]
    PositionOutOfBounds {
        index: usize,
        y: i32,
        x: i32,
        object_shape: (usize, usize),
        probe_shape: (usize, usize),
    },

    #[error("dataset has {frames} frames but {positions} scan positions")]
    FrameCountMismatch { frames: usize, positions: usize },

    #[error("frame {index} contains a negative intensity")]
    NegativeIntensity { index: usize },

    #[error("invalid reconstruction config: {0}")]
    InvalidConfig(String),

    #[error("residual diverged (non-finite) at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("{partitions} partitions requested but only {positions} scan positions available")]
    TooManyPartitions { partitions: usize, positions: usize },

    #[error("dataset i/o: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset format: {0}")]
    Format(String),
}

impl CoreError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
