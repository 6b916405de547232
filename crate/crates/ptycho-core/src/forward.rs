//! Far-field forward model: probe × object patch, propagated by an
//! unnormalized 2D DFT, measured as squared modulus.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::dataset::{NoiseModel, ScanDataset};
use crate::error::CoreError;
use crate::fft::Fft2;
use crate::field::{ComplexField2D, Shape};
use crate::positions::ScanPositions;

/// Copy the probe-sized sub-array of `object` at scan position `pos_index`.
pub fn extract_patch(
    object: &ComplexField2D,
    pos_index: usize,
    positions: &ScanPositions,
    probe_shape: Shape,
) -> Result<ComplexField2D, CoreError> {
    let (y, x) = positions.get(pos_index);
    check_in_bounds(pos_index, y, x, object.shape(), probe_shape)?;
    let mut patch = ComplexField2D::zeros(probe_shape);
    copy_patch_into(object, y as usize, x as usize, &mut patch);
    Ok(patch)
}

pub(crate) fn check_in_bounds(
    index: usize,
    y: i32,
    x: i32,
    object_shape: Shape,
    probe_shape: Shape,
) -> Result<(), CoreError> {
    let max_y = object_shape.0 as i64 - probe_shape.0 as i64;
    let max_x = object_shape.1 as i64 - probe_shape.1 as i64;
    if i64::from(y) < 0 || i64::from(y) > max_y || i64::from(x) < 0 || i64::from(x) > max_x {
        return Err(CoreError::PositionOutOfBounds {
            index,
            y,
            x,
            object_shape,
            probe_shape,
        });
    }
    Ok(())
}

pub(crate) fn copy_patch_into(
    object: &ComplexField2D,
    y: usize,
    x: usize,
    patch: &mut ComplexField2D,
) {
    let (ph, pw) = patch.shape();
    let ow = object.width();
    let src = object.data();
    let dst = patch.data_mut();
    for r in 0..ph {
        let src_off = (y + r) * ow + x;
        dst[r * pw..(r + 1) * pw].copy_from_slice(&src[src_off..src_off + pw]);
    }
}

/// Far-field wave of one position: unnormalized 2D DFT of probe ⊙ patch.
pub fn forward(probe: &ComplexField2D, patch: &ComplexField2D) -> Result<ComplexField2D, CoreError> {
    if probe.shape() != patch.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: probe.shape(),
            got: patch.shape(),
        });
    }
    let fft = Fft2::new(probe.shape());
    let mut wave = exit_wave(probe, patch);
    fft.forward(&mut wave);
    Ok(wave)
}

pub(crate) fn exit_wave(probe: &ComplexField2D, patch: &ComplexField2D) -> ComplexField2D {
    let data = probe
        .data()
        .iter()
        .zip(patch.data())
        .map(|(p, o)| p * o)
        .collect();
    ComplexField2D::from_vec(probe.shape(), data).expect("same shape by construction")
}

/// Simulate the diffraction intensity stack for every scan position.
///
/// Noiseless frames are exactly |forward|². With Poisson noise, |forward|² is
/// scaled to an expected photon count by `photon_scale`, sampled, and scaled
/// back, so the frame keeps the |forward|² intensity scale and `photon_scale`
/// sets the shot-noise level. `photon_scale = 0` yields all-zero frames.
#[allow(clippy::too_many_arguments)]
pub fn simulate_diffraction(
    object: &ComplexField2D,
    probe: &ComplexField2D,
    positions: &ScanPositions,
    photon_scale: f64,
    noise: NoiseModel,
    seed: u64,
    view_id: impl Into<String>,
) -> Result<ScanDataset, CoreError> {
    positions.validate_bounds(object.shape(), probe.shape())?;
    let probe_shape = probe.shape();
    let frame_len = probe_shape.0 * probe_shape.1;
    let fft = Fft2::new(probe_shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut frames = Vec::with_capacity(positions.len() * frame_len);
    let mut patch = ComplexField2D::zeros(probe_shape);
    for (y, x) in positions.iter() {
        copy_patch_into(object, y as usize, x as usize, &mut patch);
        let mut wave = exit_wave(probe, &patch);
        fft.forward(&mut wave);
        match noise {
            NoiseModel::None => {
                frames.extend(wave.data().iter().map(|v| v.norm_sqr()));
            }
            NoiseModel::Poisson => {
                for v in wave.data() {
                    let mean = v.norm_sqr() * photon_scale;
                    // The sampler misbehaves for means near f64's subnormal
                    // range (returns -1); such draws are 0 to any precision.
                    let counts = if mean > 0.0 {
                        Poisson::new(mean)
                            .expect("positive mean")
                            .sample(&mut rng)
                            .max(0.0)
                    } else {
                        0.0
                    };
                    frames.push(if photon_scale > 0.0 {
                        counts / photon_scale
                    } else {
                        0.0
                    });
                }
            }
        }
    }

    ScanDataset::new(
        view_id,
        positions.clone(),
        object.shape(),
        probe_shape,
        frames,
        photon_scale,
        noise,
        seed,
    )
}

/// Data-fidelity residual: Σ_j Σ_pixels (|forward(probe, patch_j)| − sqrt(d_j))².
pub fn residual(
    dataset: &ScanDataset,
    object: &ComplexField2D,
    probe: &ComplexField2D,
) -> Result<f64, CoreError> {
    check_dataset_shapes(dataset, object, probe)?;
    let fft = Fft2::new(probe.shape());
    let mut patch = ComplexField2D::zeros(probe.shape());
    let mut total = 0.0;
    for (j, (y, x)) in dataset.positions.iter().enumerate() {
        copy_patch_into(object, y as usize, x as usize, &mut patch);
        let mut wave = exit_wave(probe, &patch);
        fft.forward(&mut wave);
        total += frame_residual(&wave, dataset.frame(j));
    }
    Ok(total)
}

pub(crate) fn frame_residual(wave: &ComplexField2D, frame: &[f64]) -> f64 {
    wave.data()
        .iter()
        .zip(frame)
        .map(|(v, &d)| {
            let diff = v.norm() - d.sqrt();
            diff * diff
        })
        .sum()
}

pub(crate) fn check_dataset_shapes(
    dataset: &ScanDataset,
    object: &ComplexField2D,
    probe: &ComplexField2D,
) -> Result<(), CoreError> {
    if object.shape() != dataset.object_shape {
        return Err(CoreError::ShapeMismatch {
            expected: dataset.object_shape,
            got: object.shape(),
        });
    }
    if probe.shape() != dataset.probe_shape {
        return Err(CoreError::ShapeMismatch {
            expected: dataset.probe_shape,
            got: probe.shape(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn delta_probe(shape: Shape) -> ComplexField2D {
        let mut p = ComplexField2D::zeros(shape);
        p.set(0, 0, Complex64::new(1.0, 0.0));
        p
    }

    #[test]
    fn extract_patch_of_constant_field() {
        let object = ComplexField2D::ones((4, 4));
        let positions = ScanPositions::from_pairs([(0, 0)]);
        let patch = extract_patch(&object, 0, &positions, (2, 2)).unwrap();
        assert_eq!(patch, ComplexField2D::ones((2, 2)));
    }

    #[test]
    fn extract_patch_indexes_directly() {
        let mut object = ComplexField2D::ones((4, 4));
        object.set(1, 1, Complex64::new(5.0, 0.0));
        let positions = ScanPositions::from_pairs([(1, 1)]);
        let patch = extract_patch(&object, 0, &positions, (2, 2)).unwrap();
        assert_eq!(patch.get(0, 0), Complex64::new(5.0, 0.0));
        assert_eq!(patch.get(0, 1), Complex64::new(1.0, 0.0));
        assert_eq!(patch.get(1, 1), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn extract_patch_rejects_out_of_bounds() {
        let object = ComplexField2D::ones((4, 4));
        let positions = ScanPositions::from_pairs([(3, 0)]);
        let err = extract_patch(&object, 0, &positions, (2, 2)).unwrap_err();
        assert!(err.to_string().contains("position 0"));
    }

    #[test]
    fn extract_patch_matches_loop_copy_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<Complex64> = (0..64 * 64)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let object = ComplexField2D::from_vec((64, 64), data).unwrap();
        let probe_shape = (16, 16);
        let mut pairs = Vec::new();
        for y in (0..=48).step_by(8) {
            for x in (0..=48).step_by(8) {
                pairs.push((y as i32, x as i32));
            }
        }
        let positions = ScanPositions::from_pairs(pairs.clone());
        for (j, (y, x)) in pairs.iter().enumerate() {
            let patch = extract_patch(&object, j, &positions, probe_shape).unwrap();
            // Independent elementwise loop copy.
            for r in 0..probe_shape.0 {
                for c in 0..probe_shape.1 {
                    let expect = object.get(*y as usize + r, *x as usize + c);
                    assert_eq!(patch.get(r, c), expect);
                }
            }
        }
    }

    #[test]
    fn forward_of_ones_concentrates_at_dc() {
        let probe = ComplexField2D::ones((2, 2));
        let patch = ComplexField2D::ones((2, 2));
        let wave = forward(&probe, &patch).unwrap();
        assert!((wave.get(0, 0) - Complex64::new(4.0, 0.0)).norm() < 1e-12);
        for (r, c) in [(0, 1), (1, 0), (1, 1)] {
            assert!(wave.get(r, c).norm() < 1e-12);
        }
    }

    #[test]
    fn forward_of_delta_probe_is_flat_spectrum() {
        let probe = delta_probe((3, 3));
        let mut patch = ComplexField2D::zeros((3, 3));
        for r in 0..3 {
            for c in 0..3 {
                patch.set(r, c, Complex64::new((r * 3 + c) as f64, 0.5));
            }
        }
        let wave = forward(&probe, &patch).unwrap();
        let expect = patch.get(0, 0);
        for v in wave.data() {
            assert!((v - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let probe = ComplexField2D::ones((2, 2));
        let patch = ComplexField2D::ones((2, 3));
        assert!(matches!(
            forward(&probe, &patch),
            Err(CoreError::ShapeMismatch { .. })
        ));
    }

    /// Direct O(N²) DFT, independent of the FFT path.
    fn naive_dft(input: &ComplexField2D) -> ComplexField2D {
        let (h, w) = input.shape();
        let mut out = ComplexField2D::zeros((h, w));
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for ry in 0..h {
                    for rx in 0..w {
                        let angle = -2.0
                            * std::f64::consts::PI
                            * ((ky * ry) as f64 / h as f64 + (kx * rx) as f64 / w as f64);
                        acc += input.get(ry, rx) * Complex64::from_polar(1.0, angle);
                    }
                }
                out.set(ky, kx, acc);
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive_dft_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let data: Vec<Complex64> = (0..16 * 16)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let patch = ComplexField2D::from_vec((16, 16), data).unwrap();
            let probe = ComplexField2D::ones((16, 16));
            let got = forward(&probe, &patch).unwrap();
            let expect = naive_dft(&patch);
            let num: f64 = got
                .data()
                .iter()
                .zip(expect.data())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let den: f64 = expect.data().iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
            assert!(num / den < 1e-10, "relative error {}", num / den);
        }
    }

    #[test]
    fn delta_probe_frames_are_flat_object_intensity() {
        let mut object = ComplexField2D::ones((4, 4));
        object.set(1, 1, Complex64::new(0.5, 0.5));
        let probe = delta_probe((2, 2));
        let positions = ScanPositions::from_pairs([(0, 0), (1, 1)]);
        let ds = simulate_diffraction(
            &object,
            &probe,
            &positions,
            1.0,
            NoiseModel::None,
            0,
            "v",
        )
        .unwrap();
        for &v in ds.frame(0) {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let expect = object.get(1, 1).norm_sqr();
        for &v in ds.frame(1) {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_photon_scale_poisson_gives_zero_frames() {
        let object = ComplexField2D::ones((4, 4));
        let probe = ComplexField2D::ones((2, 2));
        let positions = ScanPositions::from_pairs([(0, 0), (2, 2)]);
        let ds = simulate_diffraction(
            &object,
            &probe,
            &positions,
            0.0,
            NoiseModel::Poisson,
            9,
            "v",
        )
        .unwrap();
        assert!(ds.frames().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_frames_satisfy_parseval() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data: Vec<Complex64> = (0..32 * 32)
            .map(|_| Complex64::new(rng.gen_range(0.5..1.0), rng.gen_range(-0.3..0.3)))
            .collect();
        let object = ComplexField2D::from_vec((32, 32), data).unwrap();
        let probe_data: Vec<Complex64> = (0..8 * 8)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let probe = ComplexField2D::from_vec((8, 8), probe_data).unwrap();
        let positions = ScanPositions::from_pairs([(0, 0), (8, 16), (24, 24)]);
        let ds = simulate_diffraction(
            &object,
            &probe,
            &positions,
            1.0,
            NoiseModel::None,
            0,
            "v",
        )
        .unwrap();
        let n = 64.0;
        for (j, (y, x)) in positions.iter().enumerate() {
            let patch = extract_patch(&object, j, &positions, (8, 8)).unwrap();
            let _ = (y, x);
            let wave_power = exit_wave(&probe, &patch).power();
            let frame_sum: f64 = ds.frame(j).iter().sum();
            assert!((frame_sum - n * wave_power).abs() <= 1e-9 * n * wave_power);
        }
    }

    #[test]
    fn poisson_noise_is_deterministic_per_seed() {
        let object = ComplexField2D::ones((6, 6));
        let probe = ComplexField2D::ones((3, 3));
        let positions = ScanPositions::from_pairs([(0, 0), (3, 3)]);
        let a = simulate_diffraction(&object, &probe, &positions, 50.0, NoiseModel::Poisson, 4, "v")
            .unwrap();
        let b = simulate_diffraction(&object, &probe, &positions, 50.0, NoiseModel::Poisson, 4, "v")
            .unwrap();
        assert_eq!(a.frames(), b.frames());
        let c = simulate_diffraction(&object, &probe, &positions, 50.0, NoiseModel::Poisson, 5, "v")
            .unwrap();
        assert_ne!(a.frames(), c.frames());
    }

    #[test]
    fn residual_is_zero_at_the_simulated_solution() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data: Vec<Complex64> = (0..16 * 16)
            .map(|_| Complex64::new(rng.gen_range(0.5..1.0), rng.gen_range(-0.5..0.5)))
            .collect();
        let object = ComplexField2D::from_vec((16, 16), data).unwrap();
        let probe_data: Vec<Complex64> = (0..4 * 4)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let probe = ComplexField2D::from_vec((4, 4), probe_data).unwrap();
        let positions = ScanPositions::from_pairs([(0, 0), (4, 4), (8, 8), (12, 12)]);
        let ds = simulate_diffraction(&object, &probe, &positions, 1.0, NoiseModel::None, 0, "v")
            .unwrap();
        let r = residual(&ds, &object, &probe).unwrap();
        assert!(r <= 1e-9 * ds.total_intensity());
    }

    #[test]
    fn residual_of_zero_object_is_total_intensity() {
        let object = ComplexField2D::ones((4, 4));
        let probe = ComplexField2D::ones((2, 2));
        let positions = ScanPositions::from_pairs([(0, 0), (2, 2)]);
        let ds = simulate_diffraction(&object, &probe, &positions, 1.0, NoiseModel::None, 0, "v")
            .unwrap();
        let zero = ComplexField2D::zeros((4, 4));
        let r = residual(&ds, &zero, &probe).unwrap();
        let total = ds.total_intensity();
        assert!((r - total).abs() <= 1e-12 * total);
    }

    #[test]
    fn residual_matches_direct_summation_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<Complex64> = (0..8 * 8)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let object = ComplexField2D::from_vec((8, 8), data).unwrap();
        let probe_data: Vec<Complex64> = (0..4 * 4)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let probe = ComplexField2D::from_vec((4, 4), probe_data).unwrap();
        let positions = ScanPositions::from_pairs([(0, 0), (2, 3), (4, 4)]);
        let frames: Vec<f64> = (0..3 * 16).map(|_| rng.gen_range(0.0..4.0)).collect();
        let ds = ScanDataset::new(
            "v",
            positions.clone(),
            (8, 8),
            (4, 4),
            frames,
            1.0,
            NoiseModel::None,
            0,
        )
        .unwrap();

        // Loop-based oracle over positions and pixels.
        let mut expect = 0.0;
        for (j, _) in positions.iter().enumerate() {
            let patch = extract_patch(&object, j, &positions, (4, 4)).unwrap();
            let wave = forward(&probe, &patch).unwrap();
            for (v, &d) in wave.data().iter().zip(ds.frame(j)) {
                let diff = v.norm() - d.sqrt();
                expect += diff * diff;
            }
        }
        let got = residual(&ds, &object, &probe).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
    }
}
