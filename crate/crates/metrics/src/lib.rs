//! Post-hoc analysis of pipeline journals: typed event ingestion, per-run and
//! batch timing breakdowns, and strong/weak scaling reports with fixed-schema
//! CSV output. Everything here is single-threaded and deterministic — the
//! same journal files always produce byte-identical reports.

mod error;
mod events;
mod report;

pub use error::MetricsError;
pub use events::{
    ingest_events, EventTable, NodeRecord, ReplayRecord, RunRecord, StateRecord, TaskRecord,
    TransferRecord,
};
#[doc(hidden)]
pub use events::write_journal;
pub use report::{
    all_run_breakdowns, breakdown, breakdown_csv, scaling_csv, scaling_report, weak_scaling_report,
    write_breakdown_csv, write_scaling_csv, ScalingPoint, ScalingReport, TimingBreakdown,
    WeakScalingPoint, NOISE_BAND,
};
