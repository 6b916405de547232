//! FaaS-style compute endpoint: a function registry, a FIFO task queue with
//! node-granular allocation and simulated batch-queue delay, and worker
//! threads that coordinate accelerator slots exclusively through an
//! OS-locked slot file (so separate processes stay correct too).

mod endpoint;
mod error;
mod registry;
mod slotfile;

use std::time::{SystemTime, UNIX_EPOCH};

/// Seconds since the Unix epoch, the timestamp unit used in journals and the
/// slot file.
pub fn now_s() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock before epoch")
        .as_secs_f64()
}

pub use endpoint::{
    ComputeEndpoint, EndpointConfig, EndpointEvent, NodeAllocation, NodeState, QueueDelayModel,
    TaskRecord, TaskState,
};
pub use error::EndpointError;
pub use registry::{FunctionRecord, Registry, TaskBody};
pub use slotfile::{
    acquire_slots, add_node_slots, backoff_ms, init_slot_file, lock_exclusive, read_slots,
    release_slots, repair, try_acquire, with_slots_locked, write_slots_atomic, Acquired,
    SlotEntry, SlotFile, SlotLock, SlotState, SLOT_FILE_VERSION,
};
