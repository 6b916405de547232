use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::FacilityError;
use crate::transfer::TransferTask;

/// Seconds since the Unix epoch as a float, the timestamp unit used in all
/// journals.
pub fn now_s() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock before epoch")
        .as_secs_f64()
}

/// One line in the facility event journal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FacilityEvent {
    /// A scan directory appeared at the beamline endpoint.
    Replay {
        ts: f64,
        scan: String,
        path: String,
        sequence: usize,
    },
    /// A transfer between endpoints completed (either way).
    Transfer {
        ts: f64,
        #[serde(flatten)]
        task: TransferTask,
    },
}

/// Append-only JSONL journal, safe to share across threads.
pub struct EventLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<Self, FacilityError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| FacilityError::io(parent, e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| FacilityError::io(path, e))?;
        Ok(EventLog {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn append<T: Serialize>(&self, event: &T) -> Result<(), FacilityError> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        let mut file = self.file.lock().expect("event log poisoned");
        file.write_all(line.as_bytes())
            .map_err(|e| FacilityError::io(&self.path, e))?;
        file.flush().map_err(|e| FacilityError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip_as_tagged_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let log = EventLog::open(&dir.path().join("events.jsonl")).unwrap();
        log.append(&FacilityEvent::Replay {
            ts: 12.5,
            scan: "scan3".into(),
            path: "/data/scan3".into(),
            sequence: 2,
        })
        .unwrap();
        let text = std::fs::read_to_string(log.path()).unwrap();
        assert_eq!(text.lines().count(), 1);
        let value: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(value["type"], "replay");
        assert_eq!(value["scan"], "scan3");
        let parsed: FacilityEvent = serde_json::from_value(value).unwrap();
        match parsed {
            FacilityEvent::Replay { sequence, .. } => assert_eq!(sequence, 2),
            other => panic!("wrong variant: {other:?}"),
        }
    }

    #[test]
    fn append_accumulates_lines() {
        let dir = tempfile::tempdir().unwrap();
        let log = EventLog::open(&dir.path().join("sub/events.jsonl")).unwrap();
        for i in 0..5 {
            log.append(&serde_json::json!({ "type": "marker", "i": i })).unwrap();
        }
        let text = std::fs::read_to_string(log.path()).unwrap();
        assert_eq!(text.lines().count(), 5);
    }
}
