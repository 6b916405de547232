use std::collections::{HashMap, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::EndpointError;
use crate::now_s;
use crate::registry::{Registry, TaskBody};
use crate::slotfile::{
    acquire_slots, add_node_slots, init_slot_file, read_slots, release_slots,
};

/// How long an allocation sits in the batch queue before its node activates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "value", rename_all = "lowercase")]
pub enum QueueDelayModel {
    Constant(f64),
    /// Exponentially distributed with the given mean.
    Exponential(f64),
}

impl Default for QueueDelayModel {
    fn default() -> Self {
        QueueDelayModel::Constant(0.0)
    }
}

impl QueueDelayModel {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            QueueDelayModel::Constant(v) => v.max(0.0),
            QueueDelayModel::Exponential(mean) => {
                let u: f64 = rng.gen();
                -mean.max(0.0) * (1.0 - u).ln()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub slot_file: PathBuf,
    /// Accelerator slots per node.
    pub slots_per_node: usize,
    /// Hard cap on allocations; beyond it requests are denied.
    pub max_nodes: usize,
    #[serde(default)]
    pub queue_delay: QueueDelayModel,
    #[serde(default)]
    pub seed: u64,
    /// JSONL journal of node and task events; `None` disables it.
    #[serde(default)]
    pub journal: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub function_id: String,
    pub args: Value,
    pub slots_required: usize,
    pub state: TaskState,
    /// Slot ids held while running; empty before and after.
    pub slots: Vec<String>,
    pub queued_at: f64,
    pub started: Option<f64>,
    pub finished: Option<f64>,
    pub outputs: Option<Value>,
    pub error: Option<String>,
    /// Workflow run this task belongs to, when the caller passed one in args.
    pub run_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeState {
    Queued,
    Active,
    Released,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeAllocation {
    pub node_id: String,
    pub slots: usize,
    pub state: NodeState,
    pub queue_delay: f64,
    pub requested_at: f64,
    pub activated_at: Option<f64>,
}

/// One line of the endpoint journal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EndpointEvent {
    Node {
        event: String,
        ts: f64,
        node_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        queue_delay: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slots: Option<usize>,
    },
    Task {
        event: String,
        ts: f64,
        task_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        run_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        function_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slots_required: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slots: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state: Option<TaskState>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        queued_at: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        started: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        finished: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

/// FaaS-style endpoint: a function registry, a FIFO task queue, simulated
/// node allocations that appear as slot-file entries after a queue delay,
/// and per-node worker threads executing bodies under slot locks.
#[derive(Clone)]
pub struct ComputeEndpoint {
    inner: Arc<Inner>,
}

struct Inner {
    config: EndpointConfig,
    registry: Registry,
    queue: Mutex<VecDeque<String>>,
    queue_cv: Condvar,
    tasks: Mutex<HashMap<String, TaskRecord>>,
    tasks_cv: Condvar,
    nodes: Mutex<Vec<NodeAllocation>>,
    /// True while one allocation is requested but not yet active; keeps the
    /// scheduler from requesting a node per queued task.
    allocating: AtomicBool,
    shutdown: AtomicBool,
    next_task: AtomicU64,
    rng: Mutex<ChaCha8Rng>,
    journal: Mutex<()>,
    threads: Mutex<Vec<std::thread::JoinHandle<()>>>,
}

impl ComputeEndpoint {
    pub fn new(config: EndpointConfig) -> Result<ComputeEndpoint, EndpointError> {
        if config.slots_per_node == 0 || config.max_nodes == 0 {
            return Err(EndpointError::InvalidRequest(
                "slots_per_node and max_nodes must be at least 1".into(),
            ));
        }
        if !config.slot_file.exists() {
            init_slot_file(&config.slot_file)?;
        }
        let seed = config.seed;
        Ok(ComputeEndpoint {
            inner: Arc::new(Inner {
                config,
                registry: Registry::new(),
                queue: Mutex::new(VecDeque::new()),
                queue_cv: Condvar::new(),
                tasks: Mutex::new(HashMap::new()),
                tasks_cv: Condvar::new(),
                nodes: Mutex::new(Vec::new()),
                allocating: AtomicBool::new(false),
                shutdown: AtomicBool::new(false),
                next_task: AtomicU64::new(1),
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
                journal: Mutex::new(()),
                threads: Mutex::new(Vec::new()),
            }),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.inner.config
    }

    /// See `Registry::register`.
    pub fn register_function(
        &self,
        name: &str,
        body_source: &str,
        body: Arc<dyn TaskBody>,
    ) -> String {
        self.inner.registry.register(name, body_source, body)
    }

    /// Enqueue a task. Returns immediately; execution happens on node
    /// workers. Triggers a node allocation when the head of the queue cannot
    /// be placed on the currently free slots.
    pub fn invoke(
        &self,
        function_id: &str,
        args: Value,
        slots_required: usize,
    ) -> Result<String, EndpointError> {
        if self.inner.registry.record(function_id).is_none() {
            return Err(EndpointError::UnknownFunction(function_id.to_string()));
        }
        if slots_required == 0 {
            return Err(EndpointError::InvalidRequest(
                "slots_required must be at least 1".into(),
            ));
        }
        if slots_required > self.inner.config.slots_per_node {
            // Placement is single-node, so anything above slots_per_node
            // (and a fortiori above slots_per_node × max_nodes) can never run.
            return Err(EndpointError::Rejected(format!(
                "task needs {slots_required} slots but nodes have {} and placement is single-node (capacity {} over {} nodes)",
                self.inner.config.slots_per_node,
                self.inner.config.slots_per_node * self.inner.config.max_nodes,
                self.inner.config.max_nodes,
            )));
        }
        let n = self.inner.next_task.fetch_add(1, Ordering::Relaxed);
        let task_id = format!("task-{n:05}");
        let run_id = args.get("run_id").and_then(|v| v.as_str()).map(String::from);
        let record = TaskRecord {
            task_id: task_id.clone(),
            function_id: function_id.to_string(),
            args,
            slots_required,
            state: TaskState::Queued,
            slots: Vec::new(),
            queued_at: now_s(),
            started: None,
            finished: None,
            outputs: None,
            error: None,
            run_id: run_id.clone(),
        };
        self.journal(&EndpointEvent::Task {
            event: "queued".into(),
            ts: record.queued_at,
            task_id: task_id.clone(),
            run_id,
            function_id: Some(function_id.to_string()),
            slots_required: Some(slots_required),
            slots: None,
            state: None,
            queued_at: None,
            started: None,
            finished: None,
            error: None,
        });
        self.inner
            .tasks
            .lock()
            .expect("tasks poisoned")
            .insert(task_id.clone(), record);
        self.inner
            .queue
            .lock()
            .expect("queue poisoned")
            .push_back(task_id.clone());
        self.inner.queue_cv.notify_one();
        self.maybe_allocate();
        Ok(task_id)
    }

    pub fn get_task(&self, task_id: &str) -> Result<TaskRecord, EndpointError> {
        self.inner
            .tasks
            .lock()
            .expect("tasks poisoned")
            .get(task_id)
            .cloned()
            .ok_or_else(|| EndpointError::UnknownTask(task_id.to_string()))
    }

    /// Block until the task is done or failed.
    pub fn await_task(&self, task_id: &str) -> Result<TaskRecord, EndpointError> {
        let mut tasks = self.inner.tasks.lock().expect("tasks poisoned");
        loop {
            match tasks.get(task_id) {
                None => return Err(EndpointError::UnknownTask(task_id.to_string())),
                Some(t) if t.state == TaskState::Done || t.state == TaskState::Failed => {
                    return Ok(t.clone())
                }
                Some(_) => tasks = self.inner.tasks_cv.wait(tasks).expect("tasks poisoned"),
            }
        }
    }

    /// Snapshot of all node allocations in request order.
    pub fn nodes(&self) -> Vec<NodeAllocation> {
        self.inner.nodes.lock().expect("nodes poisoned").clone()
    }

    /// Stop workers after their current task; queued tasks stay queued.
    pub fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.queue_cv.notify_all();
        let threads: Vec<_> = self
            .inner
            .threads
            .lock()
            .expect("threads poisoned")
            .drain(..)
            .collect();
        for t in threads {
            let _ = t.join();
        }
    }

    /// Request one node through the configured queue-delay model. The
    /// allocation is returned in `queued` state; its slots appear in the
    /// slot file and its workers start once the delay elapses.
    pub fn allocate_node(&self) -> Result<NodeAllocation, EndpointError> {
        let allocation = {
            let mut nodes = self.inner.nodes.lock().expect("nodes poisoned");
            if nodes.len() >= self.inner.config.max_nodes {
                return Err(EndpointError::AllocationDenied {
                    max_nodes: self.inner.config.max_nodes,
                });
            }
            let delay = self
                .inner
                .config
                .queue_delay
                .sample(&mut self.inner.rng.lock().expect("rng poisoned"));
            let allocation = NodeAllocation {
                node_id: format!("node{}", nodes.len()),
                slots: self.inner.config.slots_per_node,
                state: NodeState::Queued,
                queue_delay: delay,
                requested_at: now_s(),
                activated_at: None,
            };
            nodes.push(allocation.clone());
            allocation
        };
        self.journal(&EndpointEvent::Node {
            event: "requested".into(),
            ts: allocation.requested_at,
            node_id: allocation.node_id.clone(),
            queue_delay: Some(allocation.queue_delay),
            slots: Some(allocation.slots),
        });

        let endpoint = self.clone();
        let node = allocation.clone();
        let handle = std::thread::spawn(move || endpoint.activate_node(node));
        self.inner
            .threads
            .lock()
            .expect("threads poisoned")
            .push(handle);
        Ok(allocation)
    }

    fn activate_node(&self, node: NodeAllocation) {
        if node.queue_delay > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(node.queue_delay));
        }
        if let Err(e) = add_node_slots(&self.inner.config.slot_file, &node.node_id, node.slots) {
            log::error!("{}: adding slots failed: {e}", node.node_id);
            self.inner.allocating.store(false, Ordering::SeqCst);
            return;
        }
        let ts = now_s();
        {
            let mut nodes = self.inner.nodes.lock().expect("nodes poisoned");
            if let Some(entry) = nodes.iter_mut().find(|n| n.node_id == node.node_id) {
                entry.state = NodeState::Active;
                entry.activated_at = Some(ts);
            }
        }
        self.journal(&EndpointEvent::Node {
            event: "active".into(),
            ts,
            node_id: node.node_id.clone(),
            queue_delay: None,
            slots: Some(node.slots),
        });
        // The pending-allocation gate opens only once the node is usable.
        self.inner.allocating.store(false, Ordering::SeqCst);

        let mut threads = self.inner.threads.lock().expect("threads poisoned");
        for w in 0..node.slots {
            let endpoint = self.clone();
            let node_id = node.node_id.clone();
            let handle = std::thread::Builder::new()
                .name(format!("{}-w{w}", node.node_id))
                .spawn(move || endpoint.run_worker(node_id))
                .expect("spawn worker");
            threads.push(handle);
        }
    }

    /// Node-granular allocation policy: request a node only when the task at
    /// the head of the queue cannot be placed on any single node's currently
    /// free slots, and no allocation is already pending. Re-checked on
    /// invoke, task start, and task finish.
    fn maybe_allocate(&self) {
        let head_required = {
            let queue = self.inner.queue.lock().expect("queue poisoned");
            let tasks = self.inner.tasks.lock().expect("tasks poisoned");
            queue
                .front()
                .and_then(|id| tasks.get(id))
                .map(|t| t.slots_required)
        };
        let Some(required) = head_required else { return };
        match read_slots(&self.inner.config.slot_file) {
            Ok(table) if table.max_free_on_one_node() >= required => return,
            Ok(_) => {}
            Err(e) => {
                log::error!("slot file read failed in scheduler: {e}");
                return;
            }
        }
        if self.inner.allocating.swap(true, Ordering::SeqCst) {
            return;
        }
        match self.allocate_node() {
            Ok(_) => {}
            Err(EndpointError::AllocationDenied { max_nodes }) => {
                self.inner.allocating.store(false, Ordering::SeqCst);
                log::info!("allocation denied at the {max_nodes}-node cap; tasks stay queued");
                self.journal(&EndpointEvent::Node {
                    event: "denied".into(),
                    ts: now_s(),
                    node_id: String::new(),
                    queue_delay: None,
                    slots: None,
                });
            }
            Err(e) => {
                self.inner.allocating.store(false, Ordering::SeqCst);
                log::error!("node allocation failed: {e}");
            }
        }
    }

    fn run_worker(&self, node_id: String) {
        loop {
            let task_id = {
                let mut queue = self.inner.queue.lock().expect("queue poisoned");
                loop {
                    if self.inner.shutdown.load(Ordering::SeqCst) {
                        return;
                    }
                    if let Some(id) = queue.pop_front() {
                        break id;
                    }
                    queue = self.inner.queue_cv.wait(queue).expect("queue poisoned");
                }
            };
            let (function_id, args, required, run_id) = {
                let tasks = self.inner.tasks.lock().expect("tasks poisoned");
                let t = &tasks[&task_id];
                (
                    t.function_id.clone(),
                    t.args.clone(),
                    t.slots_required,
                    t.run_id.clone(),
                )
            };

            let acquired = acquire_slots(
                &self.inner.config.slot_file,
                &task_id,
                required,
                Some(&node_id),
                || !self.inner.shutdown.load(Ordering::SeqCst),
            );
            let (slots, started) = match acquired {
                Ok(Some(acquired)) => (acquired.slots, acquired.at),
                Ok(None) => {
                    // Shutdown while waiting: the task goes back to the queue.
                    self.inner
                        .queue
                        .lock()
                        .expect("queue poisoned")
                        .push_front(task_id);
                    return;
                }
                Err(e) => {
                    log::error!("{task_id}: slot acquisition failed: {e}");
                    self.finish_task(&task_id, Err(format!("slot acquisition failed: {e}")), run_id);
                    continue;
                }
            };

            {
                let mut tasks = self.inner.tasks.lock().expect("tasks poisoned");
                let t = tasks.get_mut(&task_id).expect("task exists");
                t.state = TaskState::Running;
                t.started = Some(started);
                t.slots = slots.clone();
            }
            self.journal(&EndpointEvent::Task {
                event: "started".into(),
                ts: started,
                task_id: task_id.clone(),
                run_id: run_id.clone(),
                function_id: None,
                slots_required: None,
                slots: Some(slots.clone()),
                state: None,
                queued_at: None,
                started: None,
                finished: None,
                error: None,
            });
            self.maybe_allocate();

            let body = self
                .inner
                .registry
                .body(&function_id)
                .expect("function validated at invoke");
            let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                body.run(&args, &slots)
            }));
            let outcome = match result {
                Ok(Ok(outputs)) => Ok(outputs),
                Ok(Err(reason)) => Err(reason),
                Err(_) => Err("function body panicked".to_string()),
            };

            if let Err(e) = release_slots(&self.inner.config.slot_file, &task_id) {
                log::error!("{task_id}: slot release failed: {e}");
            }
            self.finish_task(&task_id, outcome, run_id);
            self.maybe_allocate();
        }
    }

    fn finish_task(&self, task_id: &str, outcome: Result<Value, String>, run_id: Option<String>) {
        let ts = now_s();
        let (state, queued_at, started) = {
            let mut tasks = self.inner.tasks.lock().expect("tasks poisoned");
            let t = tasks.get_mut(task_id).expect("task exists");
            t.finished = Some(ts);
            t.slots.clear();
            match outcome {
                Ok(outputs) => {
                    t.state = TaskState::Done;
                    t.outputs = Some(outputs);
                }
                Err(reason) => {
                    t.state = TaskState::Failed;
                    t.error = Some(reason);
                }
            }
            (t.state, t.queued_at, t.started)
        };
        let error = self
            .get_task(task_id)
            .ok()
            .and_then(|t| t.error);
        self.journal(&EndpointEvent::Task {
            event: "finished".into(),
            ts,
            task_id: task_id.to_string(),
            run_id,
            function_id: None,
            slots_required: None,
            slots: None,
            state: Some(state),
            queued_at: Some(queued_at),
            started,
            finished: Some(ts),
            error,
        });
        self.inner.tasks_cv.notify_all();
    }

    fn journal(&self, event: &EndpointEvent) {
        let Some(path) = &self.inner.config.journal else {
            return;
        };
        let _guard = self.inner.journal.lock().expect("journal poisoned");
        let write = || -> std::io::Result<()> {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut text = serde_json::to_string(event).expect("event serializes");
            text.push('\n');
            file.write_all(text.as_bytes())
        };
        if let Err(e) = write() {
            log::warn!("endpoint journal write failed: {e}");
        }
    }
}
