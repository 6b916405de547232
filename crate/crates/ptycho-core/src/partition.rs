//! Grid partitioning of the object for multi-worker solving.
//!
//! The object is split into an r×c grid of owned cells (r = the largest
//! divisor of the worker count not exceeding its square root, so 2 workers
//! give a left/right split). Every scan position belongs to the cell that
//! contains its patch center. Workers accumulate update directions for their
//! own positions into a halo-padded buffer — the halo is probe−1 pixels wide,
//! enough to hold any patch whose center is inside the cell — and the buffers
//! are summed in worker order, which makes the applied update equal to the
//! monolithic full-batch update and keeps runs bit-reproducible.

use num_complex::Complex64;

use crate::dataset::ScanDataset;
use crate::error::CoreError;
use crate::fft::Fft2;
use crate::field::{ComplexField2D, Shape};
use crate::forward::residual;
use crate::positions::ScanPositions;
use crate::solver::{direction_pass, push_checked, step_scales, ReconConfig, ReconResult};

/// Half-open pixel rectangle [y0, y1) × [x0, x1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn is_empty(&self) -> bool {
        self.y0 >= self.y1 || self.x0 >= self.x1
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.y0 < other.y1 && other.y0 < self.y1 && self.x0 < other.x1 && other.x0 < self.x1
    }
}

/// One worker's share: the owned object cell, the halo-padded region its
/// patches may touch, and the indices of its scan positions.
#[derive(Debug, Clone)]
pub struct PartitionCell {
    pub rect: Rect,
    pub halo: Rect,
    pub indices: Vec<usize>,
}

/// Split the object into `partitions` grid cells and assign every position to
/// the cell containing its patch center. Each position lands in exactly one
/// cell.
pub fn partition_positions(
    positions: &ScanPositions,
    object_shape: Shape,
    probe_shape: Shape,
    partitions: usize,
) -> Result<Vec<PartitionCell>, CoreError> {
    if partitions < 1 {
        return Err(CoreError::InvalidConfig("partitions must be >= 1".into()));
    }
    if partitions > positions.len() {
        return Err(CoreError::TooManyPartitions {
            partitions,
            positions: positions.len(),
        });
    }
    let (rows, cols) = grid_shape(partitions);
    let (oh, ow) = object_shape;
    let (ph, pw) = probe_shape;
    let row_bounds = split_bounds(oh, rows);
    let col_bounds = split_bounds(ow, cols);

    let mut cells: Vec<PartitionCell> = Vec::with_capacity(partitions);
    for r in 0..rows {
        for c in 0..cols {
            let rect = Rect {
                y0: row_bounds[r],
                x0: col_bounds[c],
                y1: row_bounds[r + 1],
                x1: col_bounds[c + 1],
            };
            let halo = Rect {
                y0: rect.y0.saturating_sub(ph - 1),
                x0: rect.x0.saturating_sub(pw - 1),
                y1: (rect.y1 + ph - 1).min(oh),
                x1: (rect.x1 + pw - 1).min(ow),
            };
            cells.push(PartitionCell {
                rect,
                halo,
                indices: Vec::new(),
            });
        }
    }

    for (j, (y, x)) in positions.iter().enumerate() {
        let cy = y as usize + ph / 2;
        let cx = x as usize + pw / 2;
        let row = band_of(&row_bounds, cy);
        let col = band_of(&col_bounds, cx);
        cells[row * cols + col].indices.push(j);
    }
    Ok(cells)
}

/// r×c with r·c = n and r the largest divisor of n at most sqrt(n).
fn grid_shape(n: usize) -> (usize, usize) {
    let mut rows = 1;
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            rows = d;
        }
        d += 1;
    }
    (rows, n / rows)
}

/// n+1 boundaries of a near-even split of [0, len) into n bands.
fn split_bounds(len: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| i * len / n).collect()
}

fn band_of(bounds: &[usize], coord: usize) -> usize {
    // Bands can be empty when there are more of them than pixels; scan for
    // the one that actually contains the coordinate.
    for i in 0..bounds.len() - 1 {
        if coord >= bounds[i] && coord < bounds[i + 1] {
            return i;
        }
    }
    bounds.len() - 2
}

fn add_region(target: &mut ComplexField2D, src: &ComplexField2D, origin: (usize, usize)) {
    let tw = target.width();
    let sw = src.width();
    let t = target.data_mut();
    let s = src.data();
    for r in 0..src.height() {
        let t_off = (origin.0 + r) * tw + origin.1;
        for c in 0..sw {
            t[t_off + c] += s[r * sw + c];
        }
    }
}

/// Multi-worker reconstruction. Each iteration, every worker accumulates the
/// update direction over its own positions against the shared pre-update
/// iterate; halo-region and probe contributions are then summed in worker
/// order and applied once, so the result matches the monolithic solver.
pub fn partitioned_reconstruct(
    dataset: &ScanDataset,
    initial_object: &ComplexField2D,
    initial_probe: &ComplexField2D,
    config: &ReconConfig,
) -> Result<ReconResult, CoreError> {
    config.validate()?;
    if config.partitions < 2 {
        return Err(CoreError::InvalidConfig(
            "partitioned solving requires partitions >= 2".into(),
        ));
    }
    let cells = partition_positions(
        &dataset.positions,
        dataset.object_shape,
        dataset.probe_shape,
        config.partitions,
    )?;

    let mut object = initial_object.clone();
    let mut probe = initial_probe.clone();
    let fft = Fft2::new(dataset.probe_shape);
    let scales = step_scales(dataset, &object, &probe, config.step_size);
    let mut dir_obj = ComplexField2D::zeros(object.shape());
    let mut dir_probe = ComplexField2D::zeros(probe.shape());
    let mut history = Vec::with_capacity(config.iterations);

    for k in 0..config.iterations {
        let mut worker_out: Vec<(ComplexField2D, ComplexField2D, f64)> = cells
            .iter()
            .map(|cell| {
                (
                    ComplexField2D::zeros((cell.halo.height(), cell.halo.width())),
                    ComplexField2D::zeros(probe.shape()),
                    0.0,
                )
            })
            .collect();
        {
            let object_ref = &object;
            let probe_ref = &probe;
            let fft_ref = &fft;
            std::thread::scope(|scope| {
                for (cell, out) in cells.iter().zip(worker_out.iter_mut()) {
                    if cell.indices.is_empty() {
                        continue;
                    }
                    let recover_probe = config.recover_probe;
                    scope.spawn(move || {
                        let (obj_buf, probe_buf, resid) = out;
                        *resid = direction_pass(
                            dataset,
                            object_ref,
                            probe_ref,
                            &cell.indices,
                            fft_ref,
                            obj_buf,
                            (cell.halo.y0, cell.halo.x0),
                            recover_probe.then_some(probe_buf),
                        );
                    });
                }
            });
        }

        dir_obj.fill(Complex64::new(0.0, 0.0));
        dir_probe.fill(Complex64::new(0.0, 0.0));
        let mut entry_residual = 0.0;
        for (cell, (obj_buf, probe_buf, resid)) in cells.iter().zip(&worker_out) {
            add_region(&mut dir_obj, obj_buf, (cell.halo.y0, cell.halo.x0));
            if config.recover_probe {
                dir_probe.add_scaled(probe_buf, 1.0)?;
            }
            entry_residual += resid;
        }
        if k > 0 {
            push_checked(&mut history, entry_residual)?;
        }
        object.add_scaled(&dir_obj, -scales.object)?;
        if config.recover_probe {
            probe.add_scaled(&dir_probe, -scales.probe)?;
        }
    }

    let final_residual = residual(dataset, &object, &probe)?;
    push_checked(&mut history, final_residual)?;
    Ok(ReconResult {
        object,
        probe,
        residual_history: history,
        iterations_run: config.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NoiseModel;
    use crate::forward::simulate_diffraction;
    use crate::solver::reconstruct;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn raster(object: Shape, probe: Shape, step: usize) -> ScanPositions {
        let mut pairs = Vec::new();
        let mut y = 0;
        while y + probe.0 <= object.0 {
            let mut x = 0;
            while x + probe.1 <= object.1 {
                pairs.push((y as i32, x as i32));
                x += step;
            }
            y += step;
        }
        ScanPositions::from_pairs(pairs)
    }

    fn fixture(
        object_shape: Shape,
        probe_shape: Shape,
        step: usize,
        seed: u64,
    ) -> (ScanDataset, ComplexField2D, ComplexField2D) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..object_shape.0 * object_shape.1)
            .map(|_| Complex64::from_polar(rng.gen_range(0.6..1.4), rng.gen_range(-0.8..0.8)))
            .collect();
        let object = ComplexField2D::from_vec(object_shape, data).unwrap();
        let probe_data = (0..probe_shape.0 * probe_shape.1)
            .map(|_| Complex64::from_polar(rng.gen_range(0.4..1.0), rng.gen_range(-0.5..0.5)))
            .collect();
        let probe = ComplexField2D::from_vec(probe_shape, probe_data).unwrap();
        let positions = raster(object_shape, probe_shape, step);
        let ds = simulate_diffraction(
            &object,
            &probe,
            &positions,
            1.0,
            NoiseModel::None,
            0,
            "fixture",
        )
        .unwrap();
        (ds, object, probe)
    }

    #[test]
    fn single_partition_owns_everything() {
        let positions = raster((16, 16), (4, 4), 4);
        let cells = partition_positions(&positions, (16, 16), (4, 4), 1).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(
            cells[0].rect,
            Rect {
                y0: 0,
                x0: 0,
                y1: 16,
                x1: 16
            }
        );
        assert_eq!(cells[0].halo, cells[0].rect);
        assert_eq!(cells[0].indices, (0..positions.len()).collect::<Vec<_>>());
    }

    #[test]
    fn two_partitions_split_left_right_by_patch_center() {
        let positions = raster((64, 64), (16, 16), 8);
        assert_eq!(positions.len(), 49);
        let cells = partition_positions(&positions, (64, 64), (16, 16), 2).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].rect.x1, 32);
        assert_eq!(cells[1].rect.x0, 32);
        assert_eq!(cells[0].rect.y1, 64, "2 cells split along x only");

        // Independent predicate: membership by patch-center x.
        for (j, (_, x)) in positions.iter().enumerate() {
            let center_x = x as usize + 8;
            let expected = usize::from(center_x >= 32);
            let owner = cells.iter().position(|c| c.indices.contains(&j)).unwrap();
            assert_eq!(owner, expected, "position {j}");
        }
        let total: usize = cells.iter().map(|c| c.indices.len()).sum();
        assert_eq!(total, 49);
    }

    #[test]
    fn refuses_more_partitions_than_positions() {
        let positions = raster((16, 16), (8, 8), 8);
        assert_eq!(positions.len(), 4);
        let err = partition_positions(&positions, (16, 16), (8, 8), 5).unwrap_err();
        assert!(matches!(err, CoreError::TooManyPartitions { .. }));
    }

    #[test]
    fn interior_patch_stays_out_of_other_cells() {
        let positions = raster((64, 64), (16, 16), 8);
        let cells = partition_positions(&positions, (64, 64), (16, 16), 2).unwrap();
        // Position (0, 0): patch [0,16)×[0,16) lies entirely inside the left
        // cell [0,64)×[0,32).
        let j = 0;
        let owner = &cells[0];
        assert!(owner.indices.contains(&j));
        let patch = Rect {
            y0: 0,
            x0: 0,
            y1: 16,
            x1: 16,
        };
        for other in &cells[1..] {
            assert!(!patch.intersects(&other.rect));
        }
    }

    #[test]
    fn four_way_grid_is_two_by_two() {
        let positions = raster((64, 64), (16, 16), 8);
        let cells = partition_positions(&positions, (64, 64), (16, 16), 4).unwrap();
        assert_eq!(cells.len(), 4);
        let rects: Vec<Rect> = cells.iter().map(|c| c.rect).collect();
        assert_eq!(
            rects[0],
            Rect {
                y0: 0,
                x0: 0,
                y1: 32,
                x1: 32
            }
        );
        assert_eq!(rects[3].y0, 32);
        assert_eq!(rects[3].x0, 32);
    }

    #[test]
    fn partitioned_matches_monolithic() {
        let (ds, _, probe) = fixture((32, 32), (8, 8), 4, 77);
        let start = ComplexField2D::ones((32, 32));
        let base_config = ReconConfig {
            iterations: 10,
            step_size: 0.5,
            recover_probe: true,
            ..ReconConfig::default()
        };
        let mono = reconstruct(&ds, &start, &probe, &base_config).unwrap();
        for partitions in [2usize, 4] {
            let config = ReconConfig {
                partitions,
                ..base_config.clone()
            };
            let split = reconstruct(&ds, &start, &probe, &config).unwrap();
            for (a, b) in mono
                .residual_history
                .iter()
                .zip(&split.residual_history)
            {
                assert!((a - b).abs() <= 1e-6 * a.max(1.0), "{partitions}: {a} vs {b}");
            }
            let scale = mono.object.max_abs();
            for (a, b) in mono.object.data().iter().zip(split.object.data()) {
                assert!(
                    (a - b).norm() <= 1e-6 * scale,
                    "{partitions} workers diverge from monolithic"
                );
            }
            let pscale = mono.probe.max_abs();
            for (a, b) in mono.probe.data().iter().zip(split.probe.data()) {
                assert!((a - b).norm() <= 1e-6 * pscale);
            }
        }
    }

    #[test]
    fn partitioned_run_is_bit_deterministic() {
        let (ds, _, probe) = fixture((32, 32), (8, 8), 4, 5);
        let start = ComplexField2D::ones((32, 32));
        let config = ReconConfig {
            iterations: 8,
            step_size: 0.5,
            partitions: 4,
            ..ReconConfig::default()
        };
        let a = reconstruct(&ds, &start, &probe, &config).unwrap();
        let b = reconstruct(&ds, &start, &probe, &config).unwrap();
        assert_eq!(a.object.data(), b.object.data());
        assert_eq!(a.probe.data(), b.probe.data());
        assert_eq!(a.residual_history, b.residual_history);
    }

    proptest! {
        /// Partition law: every position lands in exactly one cell and its
        /// whole patch fits inside that cell's halo.
        #[test]
        fn assignment_is_a_partition(
            oh in 8usize..40,
            ow in 8usize..40,
            ph in 2usize..6,
            pw in 2usize..6,
            partitions in 1usize..7,
            seed in 0u64..1000,
        ) {
            prop_assume!(ph <= oh && pw <= ow);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let count = partitions + rng.gen_range(0..20);
            let pairs: Vec<(i32, i32)> = (0..count)
                .map(|_| {
                    (
                        rng.gen_range(0..=(oh - ph)) as i32,
                        rng.gen_range(0..=(ow - pw)) as i32,
                    )
                })
                .collect();
            let positions = ScanPositions::from_pairs(pairs.clone());
            let cells = partition_positions(&positions, (oh, ow), (ph, pw), partitions).unwrap();
            prop_assert_eq!(cells.len(), partitions);

            let mut seen = vec![0usize; positions.len()];
            for cell in &cells {
                for &j in &cell.indices {
                    seen[j] += 1;
                    let (y, x) = positions.get(j);
                    let (y, x) = (y as usize, x as usize);
                    prop_assert!(cell.rect.contains(y + ph / 2, x + pw / 2));
                    prop_assert!(cell.halo.y0 <= y && y + ph <= cell.halo.y1);
                    prop_assert!(cell.halo.x0 <= x && x + pw <= cell.halo.x1);
                }
            }
            prop_assert!(seen.iter().all(|&n| n == 1));
        }
    }
}
