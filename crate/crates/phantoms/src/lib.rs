//! Synthetic test subjects: complex objects, probes, raster scan grids, and
//! complete multi-view datasets written in the on-disk view container format.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use ptycho_core::{
    save_dataset, simulate_diffraction, ComplexField2D, CoreError, NoiseModel, ScanPositions,
    Shape,
};

#[derive(Debug, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Object pattern families. All produce magnitude in [0.5, 1] and phase in
/// [−π/2, π/2].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    SiemensStar,
    Coin,
    Flat,
    /// Textured-disk stand-in for a catalyst particle.
    Catalyst,
}

impl PhantomKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhantomKind::SiemensStar => "siemens-star",
            PhantomKind::Coin => "coin",
            PhantomKind::Flat => "flat",
            PhantomKind::Catalyst => "catalyst",
        }
    }
}

/// Recipe for one generated experiment: geometry, noise, and view count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub object_shape: Shape,
    pub probe_shape: Shape,
    pub step: usize,
    pub views: usize,
    pub photon_scale: f64,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.object_shape.0 < 8 || self.object_shape.1 < 8 {
            return Err(PhantomError::InvalidSpec(format!(
                "object shape {}x{} is below the 8x8 minimum",
                self.object_shape.0, self.object_shape.1
            )));
        }
        if self.probe_shape.0 > self.object_shape.0 || self.probe_shape.1 > self.object_shape.1 {
            return Err(PhantomError::InvalidSpec(
                "probe does not fit inside the object".into(),
            ));
        }
        if self.step == 0 {
            return Err(PhantomError::InvalidSpec("step must be positive".into()));
        }
        if self.step > self.probe_shape.0.min(self.probe_shape.1) {
            return Err(PhantomError::InvalidSpec(format!(
                "step {} exceeds the probe extent; positions would not overlap",
                self.step
            )));
        }
        if self.views < 1 {
            return Err(PhantomError::InvalidSpec("views must be >= 1".into()));
        }
        if !(self.photon_scale >= 0.0) {
            return Err(PhantomError::InvalidSpec(
                "photon_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Complex transmission phantom. Deterministic per (kind, shape, seed).
pub fn make_object(
    kind: PhantomKind,
    object_shape: Shape,
    seed: u64,
) -> Result<ComplexField2D, PhantomError> {
    if object_shape.0 < 8 || object_shape.1 < 8 {
        return Err(PhantomError::InvalidSpec(format!(
            "object shape {}x{} is below the 8x8 minimum",
            object_shape.0, object_shape.1
        )));
    }
    let (h, w) = object_shape;
    let mut field = ComplexField2D::zeros(object_shape);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let r_max = cy.min(cx);
    // Seed enters only as smooth parameter offsets, keeping patterns stable
    // across shapes.
    let rot = hash_unit(seed, 0) * TAU;
    let tex1 = 2.0 + hash_unit(seed, 1) * 3.0;
    let tex2 = 2.0 + hash_unit(seed, 2) * 3.0;

    for r in 0..h {
        for c in 0..w {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            let radius = (dy * dy + dx * dx).sqrt();
            let theta = dy.atan2(dx);
            let (mag, phase) = match kind {
                PhantomKind::Flat => (1.0, 0.0),
                PhantomKind::SiemensStar => {
                    // 12 spokes, alternating dense/light, fading past the rim.
                    let spokes = ((theta + rot) * 12.0).sin();
                    let inside = radius <= r_max;
                    let m = if inside && spokes > 0.0 { 0.5 } else { 1.0 };
                    let p = if inside { (PI / 2.0) * spokes * (radius / r_max).min(1.0) } else { 0.0 };
                    (m, p)
                }
                PhantomKind::Coin => {
                    // Disk with engraved concentric rings.
                    let disk = radius <= 0.9 * r_max;
                    let ring = disk && ((radius / r_max * 8.0).sin()).abs() < 0.35;
                    let m = if ring {
                        0.5
                    } else if disk {
                        0.8
                    } else {
                        1.0
                    };
                    let p = if disk { (PI / 2.0) * (1.0 - radius / r_max) } else { 0.0 };
                    (m, p)
                }
                PhantomKind::Catalyst => {
                    // Textured disk: smooth band-limited speckle inside a rim.
                    let disk = radius <= 0.85 * r_max;
                    if disk {
                        let u = TAU * r as f64 / h as f64;
                        let v = TAU * c as f64 / w as f64;
                        let t = (tex1 * u + rot).sin() * (tex2 * v - rot).cos();
                        (0.75 + 0.25 * t, (PI / 2.0) * 0.8 * t)
                    } else {
                        (1.0, 0.0)
                    }
                }
            };
            field.set(r, c, Complex64::from_polar(mag, phase));
        }
    }
    Ok(field)
}

/// Centered Gaussian-magnitude disk with quadratic phase, total power 1.
pub fn make_probe(probe_shape: Shape, seed: u64) -> ComplexField2D {
    let (h, w) = probe_shape;
    let mut probe = ComplexField2D::zeros(probe_shape);
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    // Breadth and phase curvature chosen for well-conditioned recovery: the
    // quadratic phase supplies the diversity that breaks raster ambiguities.
    let sigma = (h.min(w) as f64 / 3.0) * (0.95 + 0.1 * hash_unit(seed, 3));
    let curvature = 0.1 * (0.9 + 0.2 * hash_unit(seed, 4));
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            let mag = (-d2 / (2.0 * sigma * sigma)).exp();
            probe.set(r, c, Complex64::from_polar(mag, curvature * d2));
        }
    }
    let norm = probe.power().sqrt();
    probe.scale(Complex64::new(1.0 / norm, 0.0));
    probe
}

/// Full raster grid: row-major, top-left corners spaced `step` pixels apart,
/// clipped so every patch stays inside the object.
pub fn raster_positions(
    object_shape: Shape,
    probe_shape: Shape,
    step: usize,
) -> Result<ScanPositions, PhantomError> {
    if step == 0 {
        return Err(PhantomError::InvalidSpec("step must be positive".into()));
    }
    if probe_shape.0 > object_shape.0 || probe_shape.1 > object_shape.1 {
        return Err(PhantomError::InvalidSpec(
            "probe does not fit inside the object".into(),
        ));
    }
    let mut pairs = Vec::new();
    let mut y = 0;
    while y + probe_shape.0 <= object_shape.0 {
        let mut x = 0;
        while x + probe_shape.1 <= object_shape.1 {
            pairs.push((y as i32, x as i32));
            x += step;
        }
        y += step;
    }
    Ok(ScanPositions::from_pairs(pairs))
}

/// Stable parameter noise in [0, 1): splitmix64 of (seed, lane).
fn hash_unit(seed: u64, lane: u64) -> f64 {
    let mut z = seed ^ lane.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Generate `spec.views` view directories `scan1/ … scan<views>/` under
/// `out_dir`. Views share the object, probe, and scan grid; view k is
/// simulated with seed `spec.seed + k`, so Poisson noise differs per view.
/// Each directory also carries the probe and the ground-truth object.
pub fn generate_experiment(spec: &PhantomSpec, out_dir: &Path) -> Result<Vec<PathBuf>, PhantomError> {
    spec.validate()?;
    let object = make_object(spec.kind, spec.object_shape, spec.seed)?;
    let probe = make_probe(spec.probe_shape, spec.seed);
    let positions = raster_positions(spec.object_shape, spec.probe_shape, spec.step)?;
    let mut dirs = Vec::with_capacity(spec.views);
    for k in 1..=spec.views {
        let view_id = format!("scan{k}");
        let dataset = simulate_diffraction(
            &object,
            &probe,
            &positions,
            spec.photon_scale,
            spec.noise,
            spec.seed + k as u64,
            view_id.clone(),
        )?;
        let dir = out_dir.join(&view_id);
        save_dataset(&dir, &dataset, Some(&probe), Some(&object), Some(spec.kind.as_str()))?;
        dirs.push(dir);
    }
    Ok(dirs)
}
