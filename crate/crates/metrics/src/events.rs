//! Journal ingestion: merges workflow-engine and compute-endpoint journals
//! (plus optional facility transfer/replay logs) into one typed event table.
//!
//! Ingest is a pure function of the file contents: identical duplicate lines
//! are collapsed, while two lines that claim the same logical slot (same run
//! marker, same state attempt, same task event) with different payloads are
//! rejected with the offending line number.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use crate::error::MetricsError;

/// One attempt record of a workflow state, as journaled by the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRecord {
    pub state: String,
    pub action_type: String,
    pub attempt: u32,
    pub started: f64,
    pub finished: f64,
    pub outcome: String,
    pub error: Option<String>,
}

/// Everything known about one workflow run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub run_id: String,
    pub definition: String,
    pub started_ts: Option<f64>,
    pub finished_ts: Option<f64>,
    pub status: Option<String>,
    pub states: Vec<StateRecord>,
}

/// Merged view of one compute task across its queued/started/finished events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskRecord {
    pub task_id: String,
    pub run_id: Option<String>,
    pub queued_at: Option<f64>,
    pub started: Option<f64>,
    pub finished: Option<f64>,
    pub state: Option<String>,
    pub error: Option<String>,
}

/// Node lifecycle event from the compute endpoint (requested/active/denied).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub node_id: String,
    pub event: String,
    pub ts: f64,
    pub queue_delay: Option<f64>,
}

/// Completed transfer from the facility log, kept for drill-down.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub ts: f64,
    pub state: String,
    pub bytes: u64,
    pub started: f64,
    pub finished: f64,
}

/// Scan publication event from the acquisition replayer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub ts: f64,
    pub scan: String,
    pub sequence: u64,
}

/// Typed, merged view over every ingested journal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventTable {
    pub runs: BTreeMap<String, RunRecord>,
    pub tasks: BTreeMap<String, TaskRecord>,
    pub nodes: Vec<NodeRecord>,
    pub transfers: Vec<TransferRecord>,
    pub replays: Vec<ReplayRecord>,
}

impl EventTable {
    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
            && self.tasks.is_empty()
            && self.nodes.is_empty()
            && self.transfers.is_empty()
            && self.replays.is_empty()
    }

    /// Run ids in sorted order.
    pub fn run_ids(&self) -> Vec<String> {
        self.runs.keys().cloned().collect()
    }

    /// Tasks linked to a run, ordered by start time (unstarted tasks last).
    pub fn tasks_for_run(&self, run_id: &str) -> Vec<&TaskRecord> {
        let mut out: Vec<&TaskRecord> = self
            .tasks
            .values()
            .filter(|t| t.run_id.as_deref() == Some(run_id))
            .collect();
        out.sort_by(|a, b| {
            let ka = a.started.unwrap_or(f64::INFINITY);
            let kb = b.started.unwrap_or(f64::INFINITY);
            ka.total_cmp(&kb).then_with(|| a.task_id.cmp(&b.task_id))
        });
        out
    }
}

/// Wire shapes of the journal lines this crate understands. Unknown `type`
/// tags and missing required fields surface as malformed-line errors.
#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    RunStarted {
        ts: f64,
        run_id: String,
        #[serde(default)]
        definition: String,
    },
    State {
        run_id: String,
        action_type: String,
        state: String,
        attempt: u32,
        started: f64,
        finished: f64,
        outcome: String,
        #[serde(default)]
        error: Option<String>,
    },
    RunFinished {
        ts: f64,
        run_id: String,
        status: String,
    },
    Task {
        event: String,
        #[allow(dead_code)]
        ts: f64,
        task_id: String,
        #[serde(default)]
        run_id: Option<String>,
        #[serde(default)]
        state: Option<String>,
        #[serde(default)]
        queued_at: Option<f64>,
        #[serde(default)]
        started: Option<f64>,
        #[serde(default)]
        finished: Option<f64>,
        #[serde(default)]
        error: Option<String>,
    },
    Node {
        event: String,
        ts: f64,
        node_id: String,
        #[serde(default)]
        queue_delay: Option<f64>,
    },
    Transfer {
        ts: f64,
        state: String,
        bytes: u64,
        started: f64,
        finished: f64,
    },
    Replay {
        ts: f64,
        scan: String,
        sequence: u64,
    },
}

/// Reads and merges journal files into one [`EventTable`].
///
/// Accepts any mix of workflow-engine run journals, compute-endpoint
/// journals, and facility event logs; blank lines are skipped. Re-ingesting
/// the same files always yields an identical table.
pub fn ingest_events<P: AsRef<Path>>(paths: &[P]) -> Result<EventTable, MetricsError> {
    let mut table = EventTable::default();
    // Logical slot -> canonical JSON of the line that claimed it.
    let mut claimed: HashMap<String, String> = HashMap::new();
    // Canonical JSON of append-only lines already applied.
    let mut appended: HashSet<String> = HashSet::new();

    for path in paths {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| MetricsError::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let raw = line.map_err(|e| MetricsError::io(path, e))?;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(raw).map_err(|e| MetricsError::Malformed {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: e.to_string(),
                })?;
            // serde_json objects are key-sorted, so this re-serialization is a
            // canonical form usable for duplicate detection.
            let canonical = value.to_string();
            let parsed: Line =
                serde_json::from_value(value).map_err(|e| MetricsError::Malformed {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: e.to_string(),
                })?;

            let slot = slot_key(&parsed);
            if let Some(key) = &slot {
                match claimed.get(key) {
                    Some(prev) if prev == &canonical => continue,
                    Some(_) => {
                        return Err(MetricsError::Conflict {
                            path: path.to_path_buf(),
                            line: line_no,
                            key: key.clone(),
                        })
                    }
                    None => {
                        claimed.insert(key.clone(), canonical);
                    }
                }
            } else if !appended.insert(canonical) {
                continue;
            }

            apply(&mut table, parsed);
        }
    }
    Ok(table)
}

/// Logical identity of a line, for lines that may legally appear only once.
/// Append-only lines (node/transfer/replay events) return `None`.
fn slot_key(line: &Line) -> Option<String> {
    match line {
        Line::RunStarted { run_id, .. } => Some(format!("run_started:{run_id}")),
        Line::RunFinished { run_id, .. } => Some(format!("run_finished:{run_id}")),
        Line::State {
            run_id,
            state,
            attempt,
            ..
        } => Some(format!("state:{run_id}:{state}:{attempt}")),
        Line::Task { task_id, event, .. } => Some(format!("task:{task_id}:{event}")),
        _ => None,
    }
}

fn apply(table: &mut EventTable, line: Line) {
    match line {
        Line::RunStarted {
            ts,
            run_id,
            definition,
        } => {
            let run = table.runs.entry(run_id.clone()).or_default();
            run.run_id = run_id;
            run.started_ts = Some(ts);
            run.definition = definition;
        }
        Line::State {
            run_id,
            action_type,
            state,
            attempt,
            started,
            finished,
            outcome,
            error,
        } => {
            let run = table.runs.entry(run_id.clone()).or_default();
            run.run_id = run_id;
            run.states.push(StateRecord {
                state,
                action_type,
                attempt,
                started,
                finished,
                outcome,
                error,
            });
        }
        Line::RunFinished { ts, run_id, status } => {
            let run = table.runs.entry(run_id.clone()).or_default();
            run.run_id = run_id;
            run.finished_ts = Some(ts);
            run.status = Some(status);
        }
        Line::Task {
            event,
            ts: _,
            task_id,
            run_id,
            state,
            queued_at,
            started,
            finished,
            error,
        } => {
            let task = table.tasks.entry(task_id.clone()).or_default();
            task.task_id = task_id;
            if run_id.is_some() {
                task.run_id = run_id;
            }
            match event.as_str() {
                "queued" => task.queued_at = task.queued_at.or(queued_at),
                "started" => task.started = task.started.or(started),
                _ => {
                    // The finished event carries the authoritative interval.
                    if queued_at.is_some() {
                        task.queued_at = queued_at;
                    }
                    if started.is_some() {
                        task.started = started;
                    }
                    if finished.is_some() {
                        task.finished = finished;
                    }
                    if state.is_some() {
                        task.state = state;
                    }
                    if error.is_some() {
                        task.error = error;
                    }
                }
            }
        }
        Line::Node {
            event,
            ts,
            node_id,
            queue_delay,
        } => table.nodes.push(NodeRecord {
            node_id,
            event,
            ts,
            queue_delay,
        }),
        Line::Transfer {
            ts,
            state,
            bytes,
            started,
            finished,
        } => table.transfers.push(TransferRecord {
            ts,
            state,
            bytes,
            started,
            finished,
        }),
        Line::Replay { ts, scan, sequence } => table.replays.push(ReplayRecord {
            ts,
            scan,
            sequence,
        }),
    }
}

/// Writes journal lines to a temp file for tests and tooling.
#[doc(hidden)]
pub fn write_journal(path: &Path, lines: &[serde_json::Value]) -> Result<(), MetricsError> {
    let mut body = String::new();
    for line in lines {
        body.push_str(&line.to_string());
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| MetricsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn flow_run_lines(run_id: &str, base: f64) -> Vec<serde_json::Value> {
        vec![
            json!({"type":"run_started","ts":base,"run_id":run_id,"definition":"ptycho-flow","input":{}}),
            json!({"type":"state","run_id":run_id,"action_type":"transfer","state":"transfer_in",
                   "attempt":1,"started":base,"finished":base+2.0,"outcome":"success"}),
            json!({"type":"state","run_id":run_id,"action_type":"compute","state":"reconstruct",
                   "attempt":1,"started":base+2.0,"finished":base+7.0,"outcome":"success"}),
            json!({"type":"state","run_id":run_id,"action_type":"transfer","state":"transfer_out",
                   "attempt":1,"started":base+7.0,"finished":base+8.0,"outcome":"success"}),
            json!({"type":"run_finished","ts":base+9.0,"run_id":run_id,"status":"succeeded"}),
        ]
    }

    #[test]
    fn complete_run_yields_three_states_and_one_task() {
        let dir = tempfile::tempdir().unwrap();
        let flow = dir.path().join("flow.jsonl");
        let endpoint = dir.path().join("endpoint.jsonl");
        write_journal(&flow, &flow_run_lines("run-00001", 100.0)).unwrap();
        write_journal(
            &endpoint,
            &[
                json!({"type":"task","event":"queued","ts":102.0,"task_id":"task-00001",
                       "run_id":"run-00001","function_id":"fn-abc","slots_required":1}),
                json!({"type":"task","event":"started","ts":102.5,"task_id":"task-00001","started":102.5}),
                json!({"type":"task","event":"finished","ts":106.5,"task_id":"task-00001",
                       "state":"done","queued_at":102.0,"started":102.5,"finished":106.5}),
            ],
        )
        .unwrap();

        let table = ingest_events(&[flow, endpoint]).unwrap();
        let run = &table.runs["run-00001"];
        assert_eq!(run.states.len(), 3);
        assert_eq!(run.status.as_deref(), Some("succeeded"));
        assert_eq!(run.started_ts, Some(100.0));
        assert_eq!(run.finished_ts, Some(109.0));
        assert_eq!(table.tasks.len(), 1);
        let task = &table.tasks["task-00001"];
        assert_eq!(task.run_id.as_deref(), Some("run-00001"));
        assert_eq!(task.started, Some(102.5));
        assert_eq!(task.finished, Some(106.5));
        assert_eq!(task.state.as_deref(), Some("done"));
    }

    #[test]
    fn identical_duplicate_lines_are_collapsed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.jsonl");
        let mut lines = flow_run_lines("run-00001", 100.0);
        let dup = lines[1].clone();
        lines.push(dup);
        write_journal(&path, &lines).unwrap();

        let table = ingest_events(&[path]).unwrap();
        assert_eq!(table.runs["run-00001"].states.len(), 3);
    }

    #[test]
    fn conflicting_duplicate_is_an_error_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("endpoint.jsonl");
        write_journal(
            &path,
            &[
                json!({"type":"task","event":"finished","ts":106.5,"task_id":"task-00001",
                       "state":"done","queued_at":102.0,"started":102.5,"finished":106.5}),
                json!({"type":"task","event":"finished","ts":107.0,"task_id":"task-00001",
                       "state":"done","queued_at":102.0,"started":102.5,"finished":107.0}),
            ],
        )
        .unwrap();

        let err = ingest_events(&[&path]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "line number missing: {msg}");
        assert!(msg.contains("task-00001"), "key missing: {msg}");
    }

    #[test]
    fn malformed_line_reports_its_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.jsonl");
        std::fs::write(
            &path,
            "{\"type\":\"run_started\",\"ts\":1.0,\"run_id\":\"run-00001\"}\nnot json at all\n",
        )
        .unwrap();

        let err = ingest_events(&[&path]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "line number missing: {msg}");
        assert!(msg.contains("malformed"), "wrong error: {msg}");
    }

    #[test]
    fn unknown_line_type_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.jsonl");
        write_journal(&path, &[json!({"type":"mystery","ts":1.0})]).unwrap();
        let err = ingest_events(&[&path]).unwrap_err();
        assert!(matches!(err, MetricsError::Malformed { line: 1, .. }));
    }

    #[test]
    fn empty_journal_gives_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let table = ingest_events(&[&path]).unwrap();
        assert!(table.is_empty());
        assert!(table.run_ids().is_empty());
    }

    #[test]
    fn reingest_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.jsonl");
        write_journal(&path, &flow_run_lines("run-00007", 50.0)).unwrap();
        let a = ingest_events(&[&path]).unwrap();
        let b = ingest_events(&[&path]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn node_transfer_and_replay_lines_are_retained() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.jsonl");
        write_journal(
            &path,
            &[
                json!({"type":"node","event":"requested","ts":1.0,"node_id":"node1","queue_delay":0.5}),
                json!({"type":"node","event":"active","ts":1.5,"node_id":"node1"}),
                json!({"type":"transfer","ts":3.0,"state":"succeeded","bytes":4096,
                       "started":2.0,"finished":3.0,
                       "src":{"endpoint":"beamline","path":"a"},"dst":{"endpoint":"compute","path":"b"}}),
                json!({"type":"replay","ts":0.5,"scan":"scan1","path":"/x/scan1","sequence":0}),
            ],
        )
        .unwrap();

        let table = ingest_events(&[&path]).unwrap();
        assert_eq!(table.nodes.len(), 2);
        assert_eq!(table.nodes[0].queue_delay, Some(0.5));
        assert_eq!(table.transfers.len(), 1);
        assert_eq!(table.transfers[0].bytes, 4096);
        assert_eq!(table.replays.len(), 1);
        assert_eq!(table.replays[0].scan, "scan1");
    }

    #[test]
    fn tasks_for_run_sorts_by_start_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("endpoint.jsonl");
        write_journal(
            &path,
            &[
                json!({"type":"task","event":"finished","ts":9.0,"task_id":"task-00002",
                       "run_id":"run-1","state":"done","queued_at":0.0,"started":5.0,"finished":9.0}),
                json!({"type":"task","event":"finished","ts":4.0,"task_id":"task-00001",
                       "run_id":"run-1","state":"done","queued_at":0.0,"started":1.0,"finished":4.0}),
                json!({"type":"task","event":"finished","ts":4.0,"task_id":"task-00003",
                       "run_id":"run-2","state":"done","queued_at":0.0,"started":2.0,"finished":4.0}),
            ],
        )
        .unwrap();

        let table = ingest_events(&[&path]).unwrap();
        let tasks = table.tasks_for_run("run-1");
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].task_id, "task-00001");
        assert_eq!(tasks[1].task_id, "task-00002");
    }
}
