//! Gradient-family solvers for the amplitude least-squares objective
//! Σ_j Σ_q (|F(p ⊙ ψ_j)(q)| − sqrt(d_j(q)))².
//!
//! The default solver applies one full-batch update per iteration: all
//! position contributions are accumulated against the same iterate and the
//! object and probe are moved together (Jacobi style). ePIE is available as a
//! sequential alternative; it visits positions in a shuffled order and is
//! excluded from partitioned solving.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ScanDataset;
use crate::error::CoreError;
use crate::fft::Fft2;
use crate::field::ComplexField2D;
use crate::forward::{check_dataset_shapes, copy_patch_into, frame_residual, residual};
use crate::partition::partitioned_reconstruct;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    GradientDescent,
    Epie,
}

impl Default for SolverKind {
    fn default() -> Self {
        SolverKind::GradientDescent
    }
}

/// Reconstruction parameters.
///
/// `step_size` is a dimensionless relaxation factor: each update moves by
/// `step_size / w_max` times the accumulated correction, where `w_max` is the
/// peak summed illumination power (object update) or peak summed patch power
/// (probe update). Values in (0, 1] are stable on clean data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub iterations: usize,
    pub solver: SolverKind,
    pub step_size: f64,
    pub recover_probe: bool,
    pub partitions: usize,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            iterations: 100,
            solver: SolverKind::GradientDescent,
            step_size: 0.5,
            recover_probe: true,
            partitions: 1,
            seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.iterations < 1 {
            return Err(CoreError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(CoreError::InvalidConfig(format!(
                "step_size must be a positive finite number, got {}",
                self.step_size
            )));
        }
        if self.partitions < 1 {
            return Err(CoreError::InvalidConfig("partitions must be >= 1".into()));
        }
        if self.solver == SolverKind::Epie && self.partitions > 1 {
            return Err(CoreError::InvalidConfig(
                "epie is sequential; partitions > 1 requires the gradient-descent solver".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub object: ComplexField2D,
    pub probe: ComplexField2D,
    /// Data-fidelity residual evaluated after each completed iteration.
    pub residual_history: Vec<f64>,
    pub iterations_run: usize,
}

/// Wirtinger gradients ∂f/∂conj(·) of the residual with respect to the object
/// and the probe.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub object: ComplexField2D,
    pub probe: ComplexField2D,
}

/// Per-update step factors, fixed once per reconstruction from the initial
/// iterate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepScales {
    pub object: f64,
    pub probe: f64,
}

pub(crate) fn step_scales(
    dataset: &ScanDataset,
    object: &ComplexField2D,
    probe: &ComplexField2D,
    step_size: f64,
) -> StepScales {
    let (ph, pw) = dataset.probe_shape;
    let ow = object.width();
    let mut illum = vec![0.0f64; object.len()];
    let mut patch_power = vec![0.0f64; ph * pw];
    for (y, x) in dataset.positions.iter() {
        let (y, x) = (y as usize, x as usize);
        for r in 0..ph {
            for c in 0..pw {
                illum[(y + r) * ow + x + c] += probe.get(r, c).norm_sqr();
                patch_power[r * pw + c] += object.get(y + r, x + c).norm_sqr();
            }
        }
    }
    let max_illum = illum.iter().fold(0.0f64, |a, &b| a.max(b));
    let max_patch = patch_power.iter().fold(0.0f64, |a, &b| a.max(b));
    StepScales {
        object: if max_illum > 0.0 { step_size / max_illum } else { 0.0 },
        probe: if max_patch > 0.0 { step_size / max_patch } else { 0.0 },
    }
}

/// Accumulate the update direction for the given position subset into
/// `obj_acc` (offset by `obj_origin` in object coordinates) and optionally
/// `probe_acc`. Returns the residual contribution of those positions at the
/// current iterate.
///
/// The accumulated direction is (1/N) × the Wirtinger gradient: per position,
/// the far field Ψ_j has its modulus replaced by sqrt(d_j) keeping phase, the
/// difference is inverse-transformed (1/N normalization) to χ_j, and
/// conj(probe)⊙χ_j / conj(patch)⊙χ_j are summed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn direction_pass(
    dataset: &ScanDataset,
    object: &ComplexField2D,
    probe: &ComplexField2D,
    indices: &[usize],
    fft: &Fft2,
    obj_acc: &mut ComplexField2D,
    obj_origin: (usize, usize),
    mut probe_acc: Option<&mut ComplexField2D>,
) -> f64 {
    let (ph, pw) = dataset.probe_shape;
    let mut patch = ComplexField2D::zeros((ph, pw));
    let mut wave = ComplexField2D::zeros((ph, pw));
    let mut resid = 0.0;
    for &j in indices {
        let (y, x) = dataset.positions.get(j);
        let (y, x) = (y as usize, x as usize);
        copy_patch_into(object, y, x, &mut patch);
        for ((w, p), o) in wave
            .data_mut()
            .iter_mut()
            .zip(probe.data())
            .zip(patch.data())
        {
            *w = p * o;
        }
        fft.forward(&mut wave);
        let frame = dataset.frame(j);
        resid += frame_residual(&wave, frame);
        // Ψ − sqrt(d)·phase(Ψ); phase defined as 1 where |Ψ| = 0.
        for (v, &d) in wave.data_mut().iter_mut().zip(frame) {
            let target = d.sqrt();
            let modulus = v.norm();
            *v = if modulus > 0.0 {
                *v * (1.0 - target / modulus)
            } else {
                Complex64::new(-target, 0.0)
            };
        }
        fft.inverse(&mut wave);
        let acc_w = obj_acc.width();
        let acc = obj_acc.data_mut();
        for r in 0..ph {
            let row_off = (y - obj_origin.0 + r) * acc_w + (x - obj_origin.1);
            for c in 0..pw {
                acc[row_off + c] += probe.get(r, c).conj() * wave.get(r, c);
            }
        }
        if let Some(pacc) = probe_acc.as_deref_mut() {
            for ((g, o), chi) in pacc
                .data_mut()
                .iter_mut()
                .zip(patch.data())
                .zip(wave.data())
            {
                *g += o.conj() * chi;
            }
        }
    }
    resid
}

/// Wirtinger gradient of `residual` with respect to conj(object) and
/// conj(probe). The finite-difference identities are
/// ∂f/∂Re z = 2·Re(g) and ∂f/∂Im z = 2·Im(g) per component.
pub fn gradient(
    dataset: &ScanDataset,
    object: &ComplexField2D,
    probe: &ComplexField2D,
) -> Result<Gradients, CoreError> {
    check_dataset_shapes(dataset, object, probe)?;
    let fft = Fft2::new(dataset.probe_shape);
    let mut gobj = ComplexField2D::zeros(object.shape());
    let mut gprobe = ComplexField2D::zeros(probe.shape());
    let all: Vec<usize> = (0..dataset.count()).collect();
    direction_pass(
        dataset,
        object,
        probe,
        &all,
        &fft,
        &mut gobj,
        (0, 0),
        Some(&mut gprobe),
    );
    let n = Complex64::new((dataset.probe_shape.0 * dataset.probe_shape.1) as f64, 0.0);
    gobj.scale(n);
    gprobe.scale(n);
    Ok(Gradients {
        object: gobj,
        probe: gprobe,
    })
}

/// One full-batch update of object (and probe when `recover_probe`).
pub fn gradient_step(
    dataset: &ScanDataset,
    object: &ComplexField2D,
    probe: &ComplexField2D,
    step_size: f64,
    recover_probe: bool,
) -> Result<(ComplexField2D, ComplexField2D), CoreError> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(CoreError::InvalidConfig(format!(
            "step_size must be a positive finite number, got {step_size}"
        )));
    }
    check_dataset_shapes(dataset, object, probe)?;
    let scales = step_scales(dataset, object, probe, step_size);
    let fft = Fft2::new(dataset.probe_shape);
    let mut dir_obj = ComplexField2D::zeros(object.shape());
    let mut dir_probe = ComplexField2D::zeros(probe.shape());
    let all: Vec<usize> = (0..dataset.count()).collect();
    direction_pass(
        dataset,
        object,
        probe,
        &all,
        &fft,
        &mut dir_obj,
        (0, 0),
        recover_probe.then_some(&mut dir_probe),
    );
    let mut new_object = object.clone();
    new_object.add_scaled(&dir_obj, -scales.object)?;
    let mut new_probe = probe.clone();
    if recover_probe {
        new_probe.add_scaled(&dir_probe, -scales.probe)?;
    }
    Ok((new_object, new_probe))
}

/// Record a post-update residual, failing if the iterate has diverged.
pub(crate) fn push_checked(history: &mut Vec<f64>, value: f64) -> Result<(), CoreError> {
    history.push(value);
    if !value.is_finite() {
        return Err(CoreError::Diverged {
            iteration: history.len(),
        });
    }
    Ok(())
}

/// Iterative reconstruction. Deterministic for a fixed config; delegates to
/// the partitioned path when `config.partitions > 1`.
pub fn reconstruct(
    dataset: &ScanDataset,
    initial_object: &ComplexField2D,
    initial_probe: &ComplexField2D,
    config: &ReconConfig,
) -> Result<ReconResult, CoreError> {
    config.validate()?;
    check_dataset_shapes(dataset, initial_object, initial_probe)?;
    match config.solver {
        SolverKind::Epie => epie_reconstruct(dataset, initial_object, initial_probe, config),
        SolverKind::GradientDescent if config.partitions > 1 => {
            partitioned_reconstruct(dataset, initial_object, initial_probe, config)
        }
        SolverKind::GradientDescent => {
            gradient_reconstruct(dataset, initial_object, initial_probe, config)
        }
    }
}

fn gradient_reconstruct(
    dataset: &ScanDataset,
    initial_object: &ComplexField2D,
    initial_probe: &ComplexField2D,
    config: &ReconConfig,
) -> Result<ReconResult, CoreError> {
    let mut object = initial_object.clone();
    let mut probe = initial_probe.clone();
    let fft = Fft2::new(dataset.probe_shape);
    let scales = step_scales(dataset, &object, &probe, config.step_size);
    let all: Vec<usize> = (0..dataset.count()).collect();
    let mut dir_obj = ComplexField2D::zeros(object.shape());
    let mut dir_probe = ComplexField2D::zeros(probe.shape());
    let mut history = Vec::with_capacity(config.iterations);
    for k in 0..config.iterations {
        dir_obj.fill(Complex64::new(0.0, 0.0));
        dir_probe.fill(Complex64::new(0.0, 0.0));
        // The residual falls out of the direction pass for free, one update
        // behind: at the top of iteration k it measures the state after
        // update k−1.
        let entry_residual = direction_pass(
            dataset,
            &object,
            &probe,
            &all,
            &fft,
            &mut dir_obj,
            (0, 0),
            config.recover_probe.then_some(&mut dir_probe),
        );
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

fn epie_reconstruct(
    dataset: &ScanDataset,
    initial_object: &ComplexField2D,
    initial_probe: &ComplexField2D,
    config: &ReconConfig,
) -> Result<ReconResult, CoreError> {
    let mut object = initial_object.clone();
    let mut probe = initial_probe.clone();
    let fft = Fft2::new(dataset.probe_shape);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.count()).collect();
    let (ph, pw) = dataset.probe_shape;
    let mut patch = ComplexField2D::zeros((ph, pw));
    let mut wave = ComplexField2D::zeros((ph, pw));
    let mut history = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        order.shuffle(&mut rng);
        for &j in &order {
            let (y, x) = dataset.positions.get(j);
            let (y, x) = (y as usize, x as usize);
            copy_patch_into(&object, y, x, &mut patch);
            for ((w, p), o) in wave
                .data_mut()
                .iter_mut()
                .zip(probe.data())
                .zip(patch.data())
            {
                *w = p * o;
            }
            fft.forward(&mut wave);
            for (v, &d) in wave.data_mut().iter_mut().zip(dataset.frame(j)) {
                let target = d.sqrt();
                let modulus = v.norm();
                *v = if modulus > 0.0 {
                    *v * (1.0 - target / modulus)
                } else {
                    Complex64::new(-target, 0.0)
                };
            }
            fft.inverse(&mut wave);
            let max_p = probe.data().iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
            let max_o = patch.data().iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
            let a_obj = if max_p > 0.0 { config.step_size / max_p } else { 0.0 };
            let a_probe = if max_o > 0.0 { config.step_size / max_o } else { 0.0 };
            let ow = object.width();
            let obj = object.data_mut();
            for r in 0..ph {
                let row_off = (y + r) * ow + x;
                for c in 0..pw {
                    obj[row_off + c] -= probe.get(r, c).conj() * wave.get(r, c) * a_obj;
                }
            }
            if config.recover_probe {
                for ((p, o), chi) in probe
                    .data_mut()
                    .iter_mut()
                    .zip(patch.data())
                    .zip(wave.data())
                {
                    *p -= o.conj() * chi * a_probe;
                }
            }
        }
        let resid = residual(dataset, &object, &probe)?;
        push_checked(&mut history, resid)?;
    }
    Ok(ReconResult {
        object,
        probe,
        residual_history: history,
        iterations_run: config.iterations,
    })
}
