//! Desk-scale stand-in for a beamline/compute facility pair: local directory
//! trees play the endpoints, links are modeled by pacing, and an acquisition
//! is replayed from a pre-generated dataset.

mod checksum;
mod config;
mod error;
mod events;
mod replay;
mod transfer;

pub use checksum::{sorted_files, tree_bytes, tree_checksum, CHECKSUM_ALGORITHM};
pub use config::{Deployment, Endpoint, EndpointRole, LinkModel, LinkSpec};
pub use error::FacilityError;
pub use events::{now_s, EventLog, FacilityEvent};
pub use replay::{
    extract_scan_id, prepare_remote_dirs, replay_acquisition, ReplayEvent, ReplayHandle,
};
pub use transfer::{
    modeled_duration_s, transfer, transfer_with_hook, Location, TransferState, TransferTask,
};
