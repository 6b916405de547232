//! On-disk dataset container and reconstruction output formats.
//!
//! A view is a directory holding `meta.json`, `positions.bin` (little-endian
//! i32 y,x pairs), `frames.bin` (little-endian f32, frame-major, row-major)
//! and optionally `probe.bin` / `truth_object.bin` (little-endian f64
//! interleaved re,im). Reconstruction outputs use the same complex binary
//! layout plus a `recon.json` summary.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dataset::{NoiseModel, ScanDataset};
use crate::error::CoreError;
use crate::field::{ComplexField2D, Shape};
use crate::positions::ScanPositions;
use crate::solver::ReconResult;

pub const FORMAT_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const POSITIONS_FILE: &str = "positions.bin";
pub const FRAMES_FILE: &str = "frames.bin";
pub const PROBE_FILE: &str = "probe.bin";
pub const TRUTH_OBJECT_FILE: &str = "truth_object.bin";
pub const RECON_FILE: &str = "recon.json";
pub const RECON_OBJECT_FILE: &str = "object.bin";
pub const RECON_PROBE_FILE: &str = "probe.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    object_shape: Shape,
    probe_shape: Shape,
    count: usize,
    photon_scale: f64,
    noise: NoiseModel,
    seed: u64,
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
}

/// A view loaded back from disk, with whatever optional companions it had.
#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: ScanDataset,
    pub probe: Option<ComplexField2D>,
    pub truth_object: Option<ComplexField2D>,
    pub kind: Option<String>,
}

/// Write one view directory. `dir` itself becomes the `<id>/` container.
pub fn save_dataset(
    dir: &Path,
    dataset: &ScanDataset,
    probe: Option<&ComplexField2D>,
    truth_object: Option<&ComplexField2D>,
    kind: Option<&str>,
) -> Result<(), CoreError> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let meta = Meta {
        object_shape: dataset.object_shape,
        probe_shape: dataset.probe_shape,
        count: dataset.count(),
        photon_scale: dataset.photon_scale,
        noise: dataset.noise,
        seed: dataset.seed,
        format_version: FORMAT_VERSION,
        kind: kind.map(str::to_owned),
    };
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CoreError::Format(e.to_string()))?;
    fs::write(&meta_path, text).map_err(|e| CoreError::io(&meta_path, e))?;

    let mut pos_bytes = Vec::with_capacity(dataset.count() * 8);
    for (y, x) in dataset.positions.iter() {
        pos_bytes.extend_from_slice(&y.to_le_bytes());
        pos_bytes.extend_from_slice(&x.to_le_bytes());
    }
    let pos_path = dir.join(POSITIONS_FILE);
    fs::write(&pos_path, pos_bytes).map_err(|e| CoreError::io(&pos_path, e))?;

    let mut frame_bytes = Vec::with_capacity(dataset.frames().len() * 4);
    for &v in dataset.frames() {
        frame_bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let frames_path = dir.join(FRAMES_FILE);
    fs::write(&frames_path, frame_bytes).map_err(|e| CoreError::io(&frames_path, e))?;

    if let Some(p) = probe {
        write_complex_bin(&dir.join(PROBE_FILE), p)?;
    }
    if let Some(t) = truth_object {
        write_complex_bin(&dir.join(TRUTH_OBJECT_FILE), t)?;
    }
    Ok(())
}

/// Load a view directory written by `save_dataset`. The view id is the
/// directory's file name.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, CoreError> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| CoreError::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text)
        .map_err(|e| CoreError::Format(format!("{}: {e}", meta_path.display())))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "{}: unsupported format_version {} (expected {FORMAT_VERSION})",
            meta_path.display(),
            meta.format_version
        )));
    }

    let pos_path = dir.join(POSITIONS_FILE);
    let pos_bytes = fs::read(&pos_path).map_err(|e| CoreError::io(&pos_path, e))?;
    if pos_bytes.len() != meta.count * 8 {
        return Err(CoreError::Format(format!(
            "{}: expected {} bytes for {} positions, found {}",
            pos_path.display(),
            meta.count * 8,
            meta.count,
            pos_bytes.len()
        )));
    }
    let mut ys = Vec::with_capacity(meta.count);
    let mut xs = Vec::with_capacity(meta.count);
    for pair in pos_bytes.chunks_exact(8) {
        ys.push(i32::from_le_bytes(pair[0..4].try_into().unwrap()));
        xs.push(i32::from_le_bytes(pair[4..8].try_into().unwrap()));
    }
    let positions = ScanPositions::new(ys, xs)?;

    let frames_path = dir.join(FRAMES_FILE);
    let frame_bytes = fs::read(&frames_path).map_err(|e| CoreError::io(&frames_path, e))?;
    let frame_len = meta.probe_shape.0 * meta.probe_shape.1;
    if frame_bytes.len() != meta.count * frame_len * 4 {
        return Err(CoreError::Format(format!(
            "{}: expected {} bytes for {}x{}x{} frames, found {}",
            frames_path.display(),
            meta.count * frame_len * 4,
            meta.count,
            meta.probe_shape.0,
            meta.probe_shape.1,
            frame_bytes.len()
        )));
    }
    let frames: Vec<f64> = frame_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();

    let view_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let dataset = ScanDataset::new(
        view_id,
        positions,
        meta.object_shape,
        meta.probe_shape,
        frames,
        meta.photon_scale,
        meta.noise,
        meta.seed,
    )?;

    let probe_path = dir.join(PROBE_FILE);
    let probe = if probe_path.exists() {
        Some(read_complex_bin(&probe_path, meta.probe_shape)?)
    } else {
        None
    };
    let truth_path = dir.join(TRUTH_OBJECT_FILE);
    let truth_object = if truth_path.exists() {
        Some(read_complex_bin(&truth_path, meta.object_shape)?)
    } else {
        None
    };

    Ok(LoadedDataset {
        dataset,
        probe,
        truth_object,
        kind: meta.kind,
    })
}

/// Little-endian f64 interleaved re,im; row-major.
pub fn write_complex_bin(path: &Path, field: &ComplexField2D) -> Result<(), CoreError> {
    let mut bytes = Vec::with_capacity(field.len() * 16);
    for v in field.data() {
        bytes.extend_from_slice(&v.re.to_le_bytes());
        bytes.extend_from_slice(&v.im.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

pub fn read_complex_bin(path: &Path, shape: Shape) -> Result<ComplexField2D, CoreError> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let expected = shape.0 * shape.1 * 16;
    if bytes.len() != expected {
        return Err(CoreError::Format(format!(
            "{}: expected {expected} bytes for a {}x{} complex array, found {}",
            path.display(),
            shape.0,
            shape.1,
            bytes.len()
        )));
    }
    let data: Vec<Complex64> = bytes
        .chunks_exact(16)
        .map(|b| {
            Complex64::new(
                f64::from_le_bytes(b[0..8].try_into().unwrap()),
                f64::from_le_bytes(b[8..16].try_into().unwrap()),
            )
        })
        .collect();
    ComplexField2D::from_vec(shape, data)
}

#[derive(Debug, Serialize, Deserialize)]
struct ReconMeta {
    object_shape: Shape,
    probe_shape: Shape,
    iterations_run: usize,
    residual_history: Vec<f64>,
    format_version: u32,
}

/// Write a reconstruction result directory: `object.bin`, `probe.bin`,
/// `recon.json`.
pub fn save_recon(dir: &Path, result: &ReconResult) -> Result<(), CoreError> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    write_complex_bin(&dir.join(RECON_OBJECT_FILE), &result.object)?;
    write_complex_bin(&dir.join(RECON_PROBE_FILE), &result.probe)?;
    let meta = ReconMeta {
        object_shape: result.object.shape(),
        probe_shape: result.probe.shape(),
        iterations_run: result.iterations_run,
        residual_history: result.residual_history.clone(),
        format_version: FORMAT_VERSION,
    };
    let path = dir.join(RECON_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CoreError::Format(e.to_string()))?;
    fs::write(&path, text).map_err(|e| CoreError::io(&path, e))
}

pub fn load_recon(dir: &Path) -> Result<ReconResult, CoreError> {
    let path = dir.join(RECON_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let meta: ReconMeta = serde_json::from_str(&text)
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "{}: unsupported format_version {}",
            path.display(),
            meta.format_version
        )));
    }
    let object = read_complex_bin(&dir.join(RECON_OBJECT_FILE), meta.object_shape)?;
    let probe = read_complex_bin(&dir.join(RECON_PROBE_FILE), meta.probe_shape)?;
    Ok(ReconResult {
        object,
        probe,
        residual_history: meta.residual_history,
        iterations_run: meta.iterations_run,
    })
}
