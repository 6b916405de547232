//! Ptychographic forward model and iterative reconstruction.
//!
//! A complex object is scanned by a probe at overlapping positions; each
//! position yields a far-field diffraction intensity frame. This crate
//! simulates that measurement and solves the inverse problem — recovering
//! object (and optionally probe) from the frames — with a full-batch
//! amplitude-projection gradient solver that can run monolithically or split
//! across grid-partitioned workers, plus sequential ePIE as an alternative.

mod dataset;
mod error;
mod fft;
mod field;
mod forward;
mod io;
mod partition;
mod positions;
mod solver;

pub use dataset::{NoiseModel, ScanDataset};
pub use num_complex::Complex64;
pub use error::CoreError;
pub use fft::Fft2;
pub use field::{ComplexField2D, Shape};
pub use forward::{extract_patch, forward, residual, simulate_diffraction};
pub use io::{
    load_dataset, load_recon, read_complex_bin, save_dataset, save_recon, write_complex_bin,
    LoadedDataset, FORMAT_VERSION, FRAMES_FILE, META_FILE, POSITIONS_FILE, PROBE_FILE, RECON_FILE,
    RECON_OBJECT_FILE, RECON_PROBE_FILE, TRUTH_OBJECT_FILE,
};
pub use partition::{partition_positions, partitioned_reconstruct, PartitionCell, Rect};
pub use positions::ScanPositions;
pub use solver::{
    gradient, gradient_step, reconstruct, Gradients, ReconConfig, ReconResult, SolverKind,
};
