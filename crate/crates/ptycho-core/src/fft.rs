//! 2D DFT used by the far-field propagator.
//!
//! Convention: the forward transform is unnormalized, the inverse carries the
//! full 1/N factor (N = number of pixels), so `inverse(forward(x)) == x`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::field::{ComplexField2D, Shape};

/// Planned 2D FFT for one (height, width) shape. Reusable across transforms;
/// the solver keeps one per probe shape to avoid replanning in the hot loop.
pub struct Fft2 {
    shape: Shape,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(shape: Shape) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            shape,
            row_fwd: planner.plan_fft(shape.1, FftDirection::Forward),
            col_fwd: planner.plan_fft(shape.0, FftDirection::Forward),
            row_inv: planner.plan_fft(shape.1, FftDirection::Inverse),
            col_inv: planner.plan_fft(shape.0, FftDirection::Inverse),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Unnormalized forward 2D DFT, in place.
    pub fn forward(&self, field: &mut ComplexField2D) {
        assert_eq!(field.shape(), self.shape, "fft plan shape mismatch");
        transform_2d(
            field.data_mut(),
            self.shape,
            &self.row_fwd,
            &self.col_fwd,
        );
    }

    /// Inverse 2D DFT with 1/N normalization, in place.
    pub fn inverse(&self, field: &mut ComplexField2D) {
        assert_eq!(field.shape(), self.shape, "fft plan shape mismatch");
        transform_2d(
            field.data_mut(),
            self.shape,
            &self.row_inv,
            &self.col_inv,
        );
        let scale = 1.0 / (self.shape.0 * self.shape.1) as f64;
        for v in field.data_mut() {
            *v *= scale;
        }
    }
}

/// Row FFTs, transpose, column FFTs, transpose back.
fn transform_2d(
    data: &mut [Complex64],
    shape: Shape,
    row_plan: &Arc<dyn Fft<f64>>,
    col_plan: &Arc<dyn Fft<f64>>,
) {
    let (h, w) = shape;
    for row in data.chunks_exact_mut(w) {
        row_plan.process(row);
    }
    let mut transposed = transpose(data, h, w);
    for col in transposed.chunks_exact_mut(h) {
        col_plan.process(col);
    }
    // Transpose back into the caller's buffer.
    for r in 0..h {
        for c in 0..w {
            data[r * w + c] = transposed[c * h + r];
        }
    }
}

fn transpose(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..h {
        for c in 0..w {
            out[c * h + r] = data[r * w + c];
        }
    }
    out
}
