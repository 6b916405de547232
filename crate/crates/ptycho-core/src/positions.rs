use crate::error::CoreError;
use crate::field::Shape;

/// Scan positions: per-point integer pixel offsets of the probe's top-left
/// corner in object coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanPositions {
    y: Vec<i32>,
    x: Vec<i32>,
}

impl ScanPositions {
    pub fn new(y: Vec<i32>, x: Vec<i32>) -> Result<Self, CoreError> {
        if y.len() != x.len() {
            return Err(CoreError::Format(format!(
                "positions have {} y offsets but {} x offsets",
                y.len(),
                x.len()
            )));
        }
        Ok(ScanPositions { y, x })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (i32, i32)>) -> Self {
        let (y, x) = pairs.into_iter().unzip();
        ScanPositions { y, x }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// (y, x) offset of position `index`.
    #[inline]
    pub fn get(&self, index: usize) -> (i32, i32) {
        (self.y[index], self.x[index])
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.y.iter().copied().zip(self.x.iter().copied())
    }

    /// Check every offset keeps the probe footprint inside the object.
    pub fn validate_bounds(
        &self,
        object_shape: Shape,
        probe_shape: Shape,
    ) -> Result<(), CoreError> {
        let max_y = object_shape.0 as i64 - probe_shape.0 as i64;
        let max_x = object_shape.1 as i64 - probe_shape.1 as i64;
        for (j, (y, x)) in self.iter().enumerate() {
            if i64::from(y) < 0
                || i64::from(y) > max_y
                || i64::from(x) < 0
                || i64::from(x) > max_x
            {
                return Err(CoreError::PositionOutOfBounds {
                    index: j,
                    y,
                    x,
                    object_shape,
                    probe_shape,
                });
            }
        }
        Ok(())
    }
}
