use num_complex::Complex64;

use crate::error::CoreError;

/// (height, width) in pixels.
pub type Shape = (usize, usize);

/// Dense row-major 2D complex field. Holds the object transmission and the
/// illumination probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2D {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexField2D {
    /// Field filled with a constant value.
    pub fn filled(shape: Shape, value: Complex64) -> Self {
        ComplexField2D {
            height: shape.0,
            width: shape.1,
            data: vec![value; shape.0 * shape.1],
        }
    }

    /// Zero field.
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, Complex64::new(0.0, 0.0))
    }

    /// All-ones field.
    pub fn ones(shape: Shape) -> Self {
        Self::filled(shape, Complex64::new(1.0, 0.0))
    }

    /// Build from a row-major buffer. The buffer length must match the shape.
    pub fn from_vec(shape: Shape, data: Vec<Complex64>) -> Result<Self, CoreError> {
        if data.len() != shape.0 * shape.1 {
            return Err(CoreError::Format(format!(
                "buffer of {} values cannot fill a {}x{} field",
                data.len(),
                shape.0,
                shape.1
            )));
        }
        Ok(ComplexField2D {
            height: shape.0,
            width: shape.1,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> Shape {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// One row as a slice.
    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    /// Sum of |v|^2 over the field (total power).
    pub fn power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Largest |v| over the field.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// True when every value is finite in both components.
    pub fn all_finite(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Overwrite every value.
    pub fn fill(&mut self, value: Complex64) {
        self.data.fill(value);
    }

    /// Multiply every value by a scalar.
    pub fn scale(&mut self, factor: Complex64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// self += other * factor, elementwise. Shapes must match.
    pub fn add_scaled(&mut self, other: &ComplexField2D, factor: f64) -> Result<(), CoreError> {
        if self.shape() != other.shape() {
            return Err(CoreError::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        for (dst, src) in self.data.iter_mut().zip(other.data.iter()) {
            *dst += src * factor;
        }
        Ok(())
    }
}
