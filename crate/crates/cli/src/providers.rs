//! Action providers that connect flow states to the facility transfer layer
//! and the compute endpoint, plus the reconstruction function body that runs
//! on endpoint workers.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value};

use compute_endpoint::{ComputeEndpoint, TaskState};
use facility_sim::{
    transfer_with_hook, Deployment, EndpointRole, EventLog, FacilityEvent, Location, TransferState,
};
use flow_engine::{ActionOutcome, ActionProvider};
use ptycho_core::{load_dataset, reconstruct, save_recon, Complex64, ComplexField2D, ReconConfig};

/// Version tag hashed into the reconstruction function id; bump when the
/// body's observable behavior changes.
const RECON_BODY_TAG: &str = "reconstruct-view/v1: gradient descent, partitions = granted slots";

fn str_param<'a>(parameters: &'a Value, key: &str) -> Result<&'a str, String> {
    parameters
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing or non-string parameter '{key}'"))
}

/// Executes `transfer` actions between deployment endpoints. Failed transfers
/// (checksum mismatch, missing source, bad token) are retryable; referencing
/// an endpoint the deployment does not know is fatal.
pub struct TransferProvider {
    pub deployment: Arc<Deployment>,
    pub token: String,
    pub log: Arc<EventLog>,
    /// Fault injection: corrupt the destination of outbound (to-beamline)
    /// transfers whose `scan_id` parameter matches.
    pub corrupt_scan: Option<String>,
}

impl ActionProvider for TransferProvider {
    fn invoke(&self, parameters: &Value, _attempt_id: &str) -> ActionOutcome {
        let (src, dst) = match (|| {
            let src = Location::new(
                str_param(parameters, "src_endpoint")?,
                str_param(parameters, "src_path")?,
            );
            let dst = Location::new(
                str_param(parameters, "dst_endpoint")?,
                str_param(parameters, "dst_path")?,
            );
            Ok::<_, String>((src, dst))
        })() {
            Ok(pair) => pair,
            Err(e) => return ActionOutcome::Fatal(e),
        };

        let corrupt_here = match (&self.corrupt_scan, parameters.get("scan_id")) {
            (Some(target), Some(scan)) => {
                scan.as_str() == Some(target.as_str())
                    && self
                        .deployment
                        .endpoint(&dst.endpoint)
                        .map(|e| e.role == EndpointRole::Beamline)
                        .unwrap_or(false)
            }
            _ => false,
        };
        let mut hook = |path: &Path| corrupt_first_file(path);

        let result = transfer_with_hook(
            &self.deployment,
            &self.token,
            &src,
            &dst,
            corrupt_here.then_some(&mut hook as &mut dyn FnMut(&Path) -> std::io::Result<()>),
        );
        match result {
            Ok(task) => {
                let event = FacilityEvent::Transfer {
                    ts: facility_sim::now_s(),
                    task: task.clone(),
                };
                if let Err(e) = self.log.append(&event) {
                    log::warn!("transfer event not journaled: {e}");
                }
                match task.state {
                    TransferState::Succeeded => ActionOutcome::Success(json!({
                        "bytes": task.bytes,
                        "checksum": task.checksum,
                    })),
                    _ => ActionOutcome::Retryable(
                        task.error.unwrap_or_else(|| "transfer failed".into()),
                    ),
                }
            }
            Err(e) => ActionOutcome::Fatal(e.to_string()),
        }
    }
}

/// Flips one byte in the first file under `root` (or in `root` itself when it
/// is a file), breaking the post-copy checksum.
fn corrupt_first_file(root: &Path) -> std::io::Result<()> {
    let target = first_file(root)?.ok_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::NotFound, "nothing to corrupt")
    })?;
    let mut bytes = std::fs::read(&target)?;
    match bytes.first_mut() {
        Some(b) => *b ^= 0xff,
        None => bytes.push(0xff),
    }
    std::fs::write(&target, bytes)
}

fn first_file(root: &Path) -> std::io::Result<Option<PathBuf>> {
    if root.is_file() {
        return Ok(Some(root.to_path_buf()));
    }
    let mut entries: Vec<_> = std::fs::read_dir(root)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_file() {
            return Ok(Some(path));
        }
        if let Some(found) = first_file(&path)? {
            return Ok(Some(found));
        }
    }
    Ok(None)
}

/// Executes `compute` actions by submitting a registered function to the
/// compute endpoint and waiting for the task to finish. The flow run id is
/// attached to the task arguments so journals can be joined later.
pub struct ComputeProvider {
    pub endpoint: ComputeEndpoint,
    /// Function name -> registered function id.
    pub functions: HashMap<String, String>,
}

impl ActionProvider for ComputeProvider {
    fn invoke(&self, parameters: &Value, attempt_id: &str) -> ActionOutcome {
        let name = match str_param(parameters, "function") {
            Ok(n) => n,
            Err(e) => return ActionOutcome::Fatal(e),
        };
        let function_id = match self.functions.get(name) {
            Some(id) => id,
            None => return ActionOutcome::Fatal(format!("function '{name}' is not registered")),
        };
        let slots = parameters
            .get("slots")
            .and_then(Value::as_u64)
            .unwrap_or(1) as usize;
        let run_id = attempt_id.split('.').next().unwrap_or(attempt_id);

        let mut args = parameters.get("args").cloned().unwrap_or_else(|| json!({}));
        if let Some(map) = args.as_object_mut() {
            map.insert("run_id".into(), json!(run_id));
        }

        let task_id = match self.endpoint.invoke(function_id, args, slots) {
            Ok(id) => id,
            Err(e) => return ActionOutcome::Fatal(e.to_string()),
        };
        match self.endpoint.await_task(&task_id) {
            Ok(task) if task.state == TaskState::Done => {
                let mut outputs = task.outputs.unwrap_or_else(|| json!({}));
                if let Some(map) = outputs.as_object_mut() {
                    map.insert("task_id".into(), json!(task_id));
                }
                ActionOutcome::Success(outputs)
            }
            Ok(task) => ActionOutcome::Fatal(
                task.error
                    .unwrap_or_else(|| format!("task {task_id} failed")),
            ),
            Err(e) => ActionOutcome::Fatal(e.to_string()),
        }
    }
}

/// Registers the per-view reconstruction function on an endpoint. The body
/// loads `args.input` relative to the endpoint's data root, reconstructs with
/// as many solver partitions as slots were granted, and writes the result to
/// `args.output`. Returns the function id.
pub fn register_recon_function(endpoint: &ComputeEndpoint, data_root: PathBuf) -> String {
    let body = move |args: &Value, slots: &[String]| -> Result<Value, String> {
        let input = args
            .get("input")
            .and_then(Value::as_str)
            .ok_or("missing 'input' argument")?;
        let output = args
            .get("output")
            .and_then(Value::as_str)
            .ok_or("missing 'output' argument")?;
        let iterations = args.get("iterations").and_then(Value::as_u64).unwrap_or(100) as usize;
        let seed = args.get("seed").and_then(Value::as_u64).unwrap_or(0);

        let loaded = load_dataset(&data_root.join(input)).map_err(|e| e.to_string())?;
        let probe = loaded.probe.ok_or("dataset carries no probe estimate")?;
        let object = ComplexField2D::filled(loaded.dataset.object_shape, Complex64::new(1.0, 0.0));
        let config = ReconConfig {
            iterations,
            partitions: slots.len().max(1).min(loaded.dataset.count()),
            seed,
            ..ReconConfig::default()
        };
        let result = reconstruct(&loaded.dataset, &object, &probe, &config)
            .map_err(|e| e.to_string())?;
        save_recon(&data_root.join(output), &result).map_err(|e| e.to_string())?;
        Ok(json!({
            "iterations_run": result.iterations_run,
            "residual_initial": result.residual_history.first(),
            "residual_final": result.residual_history.last(),
        }))
    };
    endpoint.register_function("reconstruct-view", RECON_BODY_TAG, Arc::new(body))
}
