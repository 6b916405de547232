use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::definition::{FlowDefinition, END};
use crate::error::FlowError;
use crate::template::render;

/// Seconds since the Unix epoch, the timestamp unit used in journals.
pub fn now_s() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock before epoch")
        .as_secs_f64()
}

/// What a provider reports back for one attempt.
#[derive(Debug, Clone)]
pub enum ActionOutcome {
    /// Action completed; outputs become `$.states.<name>.output.*`.
    Success(Value),
    /// Worth retrying (transient fault, timeout).
    Retryable(String),
    /// Retrying cannot help; the run fails.
    Fatal(String),
}

/// Implementors execute one action type. Providers are shared across runs
/// and must tolerate concurrent invocation; the engine guarantees exactly
/// one `invoke` per attempt id.
pub trait ActionProvider: Send + Sync {
    fn invoke(&self, parameters: &Value, attempt_id: &str) -> ActionOutcome;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    RetryableFailure,
    Fatal,
}

/// One attempt of one state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateRecord {
    pub state: String,
    /// 1-based attempt number within the state.
    pub attempt: u32,
    pub started: f64,
    pub finished: f64,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowRun {
    pub run_id: String,
    /// Id of the definition this run executes.
    pub definition: String,
    pub input: Value,
    pub state_log: Vec<StateRecord>,
    pub status: RunStatus,
}

/// One line of a run journal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalLine {
    RunStarted {
        ts: f64,
        run_id: String,
        definition: String,
        input: Value,
    },
    State {
        run_id: String,
        action_type: String,
        #[serde(flatten)]
        record: StateRecord,
    },
    RunFinished {
        ts: f64,
        run_id: String,
        status: RunStatus,
    },
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Runs allowed to execute states simultaneously; further runs queue.
    pub max_concurrent: usize,
    /// Where per-run JSONL journals go; `None` disables journaling.
    pub journal_dir: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_concurrent: 64,
            journal_dir: None,
        }
    }
}

/// Executes flow runs on background threads. States within a run are
/// sequential; distinct runs proceed concurrently up to `max_concurrent`.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

struct Inner {
    config: EngineConfig,
    providers: Mutex<HashMap<String, Arc<dyn ActionProvider>>>,
    runs: Mutex<HashMap<String, FlowRun>>,
    done: Condvar,
    active: Mutex<usize>,
    gate: Condvar,
    next_id: AtomicU64,
}

/// Holds one concurrency permit; released on drop so panics cannot leak it.
struct Permit {
    inner: Arc<Inner>,
}

impl Permit {
    fn acquire(inner: Arc<Inner>) -> Permit {
        let mut active = inner.active.lock().expect("gate poisoned");
        while *active >= inner.config.max_concurrent {
            active = inner.gate.wait(active).expect("gate poisoned");
        }
        *active += 1;
        drop(active);
        Permit { inner }
    }
}

impl Drop for Permit {
    fn drop(&mut self) {
        let mut active = self.inner.active.lock().expect("gate poisoned");
        *active -= 1;
        self.inner.gate.notify_one();
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Engine {
        Engine {
            inner: Arc::new(Inner {
                config,
                providers: Mutex::new(HashMap::new()),
                runs: Mutex::new(HashMap::new()),
                done: Condvar::new(),
                active: Mutex::new(0),
                gate: Condvar::new(),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    /// Register the provider executing `action_type` states.
    pub fn register(&self, action_type: &str, provider: Arc<dyn ActionProvider>) {
        self.inner
            .providers
            .lock()
            .expect("providers poisoned")
            .insert(action_type.to_string(), provider);
    }

    /// Begin executing `definition` with `input`; returns the run id
    /// immediately. An input lacking a referenced key fails the run on the
    /// spot (still observable through `await_run`).
    pub fn start_run(&self, definition: &FlowDefinition, input: Value) -> Result<String, FlowError> {
        let n = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
        let run_id = format!("run-{n:05}");
        let run = FlowRun {
            run_id: run_id.clone(),
            definition: definition.id.clone(),
            input: input.clone(),
            state_log: Vec::new(),
            status: RunStatus::Running,
        };
        self.journal(
            &run_id,
            &JournalLine::RunStarted {
                ts: now_s(),
                run_id: run_id.clone(),
                definition: definition.id.clone(),
                input: input.clone(),
            },
        );
        self.inner
            .runs
            .lock()
            .expect("runs poisoned")
            .insert(run_id.clone(), run);

        let missing: Vec<String> = definition
            .referenced_input_keys()
            .into_iter()
            .filter(|key| input.get(key).is_none())
            .collect();
        if !missing.is_empty() {
            log::warn!("{run_id}: input missing referenced keys {missing:?}");
            self.finish(&run_id, RunStatus::Failed);
            return Ok(run_id);
        }

        let engine = self.clone();
        let definition = Arc::new(definition.clone());
        let id = run_id.clone();
        std::thread::spawn(move || {
            let _permit = Permit::acquire(engine.inner.clone());
            engine.run_flow(&definition, &id, &input);
        });
        Ok(run_id)
    }

    /// Current snapshot of a run.
    pub fn get_run(&self, run_id: &str) -> Result<FlowRun, FlowError> {
        self.inner
            .runs
            .lock()
            .expect("runs poisoned")
            .get(run_id)
            .cloned()
            .ok_or_else(|| FlowError::UnknownRun(run_id.to_string()))
    }

    /// Block until the run reaches a terminal status and return it.
    pub fn await_run(&self, run_id: &str) -> Result<FlowRun, FlowError> {
        let mut runs = self.inner.runs.lock().expect("runs poisoned");
        loop {
            match runs.get(run_id) {
                None => return Err(FlowError::UnknownRun(run_id.to_string())),
                Some(run) if run.status != RunStatus::Running => return Ok(run.clone()),
                Some(_) => runs = self.inner.done.wait(runs).expect("runs poisoned"),
            }
        }
    }

    /// Journal path for a run, when journaling is enabled.
    pub fn journal_path(&self, run_id: &str) -> Option<PathBuf> {
        self.inner
            .config
            .journal_dir
            .as_ref()
            .map(|dir| dir.join(format!("{run_id}.jsonl")))
    }

    fn run_flow(&self, definition: &FlowDefinition, run_id: &str, input: &Value) {
        let mut outputs: BTreeMap<String, Value> = BTreeMap::new();
        let mut current = definition.start_state.clone();
        loop {
            let state = &definition.states[&current];
            let provider = self
                .inner
                .providers
                .lock()
                .expect("providers poisoned")
                .get(&state.action_type)
                .cloned();

            let mut advanced = false;
            for attempt in 1..=state.retries + 1 {
                let attempt_id = format!("{run_id}.{current}.{attempt}");
                let started = now_s();
                let outcome = match (&provider, render(&state.parameters, input, &outputs)) {
                    (None, _) => ActionOutcome::Fatal(format!(
                        "no provider registered for action type '{}'",
                        state.action_type
                    )),
                    (_, Err(e)) => ActionOutcome::Fatal(format!("template render failed: {e}")),
                    (Some(p), Ok(params)) => {
                        dispatch(p.clone(), params, attempt_id, state.timeout)
                    }
                };
                let (label, error, output) = match outcome {
                    ActionOutcome::Success(out) => (Outcome::Success, None, Some(out)),
                    ActionOutcome::Retryable(reason) => {
                        (Outcome::RetryableFailure, Some(reason), None)
                    }
                    ActionOutcome::Fatal(reason) => (Outcome::Fatal, Some(reason), None),
                };
                let record = StateRecord {
                    state: current.clone(),
                    attempt,
                    started,
                    finished: now_s(),
                    outcome: label,
                    error,
                };
                self.journal(
                    run_id,
                    &JournalLine::State {
                        run_id: run_id.to_string(),
                        action_type: state.action_type.clone(),
                        record: record.clone(),
                    },
                );
                self.with_run(run_id, |run| run.state_log.push(record));
                match label {
                    Outcome::Success => {
                        outputs.insert(current.clone(), output.unwrap_or(Value::Null));
                        advanced = true;
                        break;
                    }
                    Outcome::RetryableFailure => continue,
                    Outcome::Fatal => break,
                }
            }
            if !advanced {
                self.finish(run_id, RunStatus::Failed);
                return;
            }
            if state.next == END {
                self.finish(run_id, RunStatus::Succeeded);
                return;
            }
            current = state.next.clone();
        }
    }

    fn finish(&self, run_id: &str, status: RunStatus) {
        self.journal(
            run_id,
            &JournalLine::RunFinished {
                ts: now_s(),
                run_id: run_id.to_string(),
                status,
            },
        );
        self.with_run(run_id, |run| run.status = status);
        self.inner.done.notify_all();
    }

    fn with_run(&self, run_id: &str, f: impl FnOnce(&mut FlowRun)) {
        let mut runs = self.inner.runs.lock().expect("runs poisoned");
        if let Some(run) = runs.get_mut(run_id) {
            f(run);
        }
    }

    fn journal(&self, run_id: &str, line: &JournalLine) {
        let Some(path) = self.journal_path(run_id) else {
            return;
        };
        let write = || -> std::io::Result<()> {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
            let mut text = serde_json::to_string(line).expect("journal line serializes");
            text.push('\n');
            file.write_all(text.as_bytes())
        };
        if let Err(e) = write() {
            log::warn!("journal write failed for {run_id}: {e}");
        }
    }
}

/// Run one provider attempt on its own thread so a hung provider turns into
/// a retryable timeout instead of wedging the run. A provider panic surfaces
/// as a fatal outcome.
fn dispatch(
    provider: Arc<dyn ActionProvider>,
    parameters: Value,
    attempt_id: String,
    timeout: f64,
) -> ActionOutcome {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(provider.invoke(&parameters, &attempt_id));
    });
    match rx.recv_timeout(Duration::from_secs_f64(timeout)) {
        Ok(outcome) => outcome,
        Err(mpsc::RecvTimeoutError::Timeout) => {
            ActionOutcome::Retryable(format!("timeout after {timeout} s"))
        }
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            ActionOutcome::Fatal("provider panicked".to_string())
        }
    }
}

/// Check that a terminal run's log is a path through the definition graph:
/// states appear in `next` order from the start, attempt numbers count up
/// from 1, each state succeeds at most once, and the final record agrees
/// with the run status.
pub fn verify_run_path(definition: &FlowDefinition, run: &FlowRun) -> Result<(), String> {
    if run.status == RunStatus::Running {
        return Err(format!("run {} is not terminal", run.run_id));
    }
    let expected = definition.path_from_start();
    if run.state_log.is_empty() {
        return match run.status {
            RunStatus::Failed => Ok(()),
            _ => Err(format!("run {} succeeded with an empty log", run.run_id)),
        };
    }
    let mut idx = 0usize;
    let mut next_attempt = 1u32;
    for (i, record) in run.state_log.iter().enumerate() {
        let last = i == run.state_log.len() - 1;
        if idx >= expected.len() {
            return Err(format!("record for '{}' after the terminal state", record.state));
        }
        if record.state != expected[idx] {
            return Err(format!(
                "expected state '{}' at log position {i}, found '{}'",
                expected[idx], record.state
            ));
        }
        if record.attempt != next_attempt {
            return Err(format!(
                "state '{}': attempt {} out of order (expected {next_attempt})",
                record.state, record.attempt
            ));
        }
        if record.finished < record.started {
            return Err(format!("state '{}': negative duration", record.state));
        }
        match record.outcome {
            Outcome::Success => {
                idx += 1;
                next_attempt = 1;
            }
            Outcome::RetryableFailure => {
                next_attempt += 1;
                if last && run.status != RunStatus::Failed {
                    return Err(format!(
                        "run {} ended on a retryable failure but is not failed",
                        run.run_id
                    ));
                }
            }
            Outcome::Fatal => {
                if !last {
                    return Err(format!(
                        "state '{}': records continue past a fatal outcome",
                        record.state
                    ));
                }
                if run.status != RunStatus::Failed {
                    return Err(format!("run {} has a fatal record but is not failed", run.run_id));
                }
            }
        }
    }
    match run.status {
        RunStatus::Succeeded if idx != expected.len() => Err(format!(
            "run {} succeeded after only {idx} of {} states",
            run.run_id,
            expected.len()
        )),
        RunStatus::Failed if idx == expected.len() => Err(format!(
            "run {} completed every state but is marked failed",
            run.run_id
        )),
        _ => Ok(()),
    }
}
