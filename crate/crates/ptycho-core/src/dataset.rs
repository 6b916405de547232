use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::field::Shape;
use crate::positions::ScanPositions;

/// Noise model applied when frames are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    None,
    Poisson,
}

impl std::fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseModel::None => write!(f, "none"),
            NoiseModel::Poisson => write!(f, "poisson"),
        }
    }
}

/// One view's worth of measurement data: diffraction intensity frames plus
/// the scan positions they were recorded at.
///
/// Frames are stored frame-major, row-major within a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanDataset {
    pub view_id: String,
    pub positions: ScanPositions,
    pub object_shape: Shape,
    pub probe_shape: Shape,
    pub photon_scale: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    frames: Vec<f64>,
}

impl ScanDataset {
    pub fn new(
        view_id: impl Into<String>,
        positions: ScanPositions,
        object_shape: Shape,
        probe_shape: Shape,
        frames: Vec<f64>,
        photon_scale: f64,
        noise: NoiseModel,
        seed: u64,
    ) -> Result<Self, CoreError> {
        let frame_len = probe_shape.0 * probe_shape.1;
        if frame_len == 0 || frames.len() % frame_len != 0 {
            return Err(CoreError::Format(format!(
                "frame buffer of {} values is not a multiple of the {}x{} frame size",
                frames.len(),
                probe_shape.0,
                probe_shape.1
            )));
        }
        let count = frames.len() / frame_len;
        if count != positions.len() {
            return Err(CoreError::FrameCountMismatch {
                frames: count,
                positions: positions.len(),
            });
        }
        positions.validate_bounds(object_shape, probe_shape)?;
        for (j, chunk) in frames.chunks_exact(frame_len).enumerate() {
            if chunk.iter().any(|&v| !(v >= 0.0)) {
                return Err(CoreError::NegativeIntensity { index: j });
            }
        }
        Ok(ScanDataset {
            view_id: view_id.into(),
            positions,
            object_shape,
            probe_shape,
            photon_scale,
            noise,
            seed,
            frames,
        })
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    /// Intensity frame `j`, row-major.
    pub fn frame(&self, j: usize) -> &[f64] {
        let len = self.probe_shape.0 * self.probe_shape.1;
        &self.frames[j * len..(j + 1) * len]
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    /// Sum of all intensities across all frames.
    pub fn total_intensity(&self) -> f64 {
        self.frames.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positions_2() -> ScanPositions {
        ScanPositions::from_pairs([(0, 0), (2, 2)])
    }

    #[test]
    fn frame_count_must_match_positions() {
        let frames = vec![0.0; 4]; // one 2x2 frame, two positions
        let err = ScanDataset::new(
            "v",
            positions_2(),
            (4, 4),
            (2, 2),
            frames,
            1.0,
            NoiseModel::None,
            0,
        );
        assert!(matches!(err, Err(CoreError::FrameCountMismatch { .. })));
    }

    #[test]
    fn negative_intensity_rejected() {
        let mut frames = vec![1.0; 8];
        frames[5] = -0.25;
        let err = ScanDataset::new(
            "v",
            positions_2(),
            (4, 4),
            (2, 2),
            frames,
            1.0,
            NoiseModel::None,
            0,
        );
        assert!(matches!(err, Err(CoreError::NegativeIntensity { index: 1 })));
    }

    #[test]
    fn frame_accessor_slices_frame_major() {
        let frames: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let ds = ScanDataset::new(
            "v",
            positions_2(),
            (4, 4),
            (2, 2),
            frames,
            1.0,
            NoiseModel::None,
            7,
        )
        .unwrap();
        assert_eq!(ds.frame(1), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(ds.total_intensity(), 28.0);
    }
}
