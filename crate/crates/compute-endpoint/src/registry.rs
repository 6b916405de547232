use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The executable side of a registered function. `args` are the invoke-time
/// arguments; `slots` are the accelerator slots assigned for this task (the
/// reconstruction body sets its partition count to `slots.len()`).
pub trait TaskBody: Send + Sync {
    fn run(&self, args: &serde_json::Value, slots: &[String]) -> Result<serde_json::Value, String>;
}

impl<F> TaskBody for F
where
    F: Fn(&serde_json::Value, &[String]) -> Result<serde_json::Value, String> + Send + Sync,
{
    fn run(&self, args: &serde_json::Value, slots: &[String]) -> Result<serde_json::Value, String> {
        self(args, slots)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub function_id: String,
    pub name: String,
    /// Digest of the body source; what makes registration idempotent.
    pub body_hash: String,
    pub registered_at: f64,
}

/// In-process function registry. Ids are content-addressed on
/// (name, body source), so re-registering an identical function returns the
/// original id and record.
#[derive(Default)]
pub struct Registry {
    records: Mutex<HashMap<String, FunctionRecord>>,
    bodies: Mutex<HashMap<String, Arc<dyn TaskBody>>>,
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    /// `body_source` stands in for serialized function code: the stable text
    /// the id is derived from. Same (name, source) → same id.
    pub fn register(&self, name: &str, body_source: &str, body: Arc<dyn TaskBody>) -> String {
        let mut hasher = Sha256::new();
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(body_source.as_bytes());
        let digest = hex::encode(hasher.finalize());
        let function_id = format!("fn-{}", &digest[..16]);

        let mut records = self.records.lock().expect("registry poisoned");
        records.entry(function_id.clone()).or_insert_with(|| FunctionRecord {
            function_id: function_id.clone(),
            name: name.to_string(),
            body_hash: digest,
            registered_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .expect("clock before epoch")
                .as_secs_f64(),
        });
        self.bodies
            .lock()
            .expect("registry poisoned")
            .insert(function_id.clone(), body);
        function_id
    }

    pub fn record(&self, function_id: &str) -> Option<FunctionRecord> {
        self.records
            .lock()
            .expect("registry poisoned")
            .get(function_id)
            .cloned()
    }

    pub fn body(&self, function_id: &str) -> Option<Arc<dyn TaskBody>> {
        self.bodies
            .lock()
            .expect("registry poisoned")
            .get(function_id)
            .cloned()
    }
}
