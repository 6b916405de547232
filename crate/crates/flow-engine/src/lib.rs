//! JSON state-machine workflow engine: definitions link transfer and compute
//! actions into a graph, runs execute concurrently against pluggable action
//! providers, and every attempt lands in a per-run journal.

mod definition;
mod engine;
mod error;
mod template;

pub use definition::{
    default_retries, default_timeout, parse_definition, FlowDefinition, StateDef, ACTION_TYPES,
    END,
};
pub use engine::{
    now_s, verify_run_path, ActionOutcome, ActionProvider, Engine, EngineConfig, FlowRun,
    JournalLine, Outcome, RunStatus, StateRecord,
};
pub use error::FlowError;
pub use template::{render, scan_references, Reference};
