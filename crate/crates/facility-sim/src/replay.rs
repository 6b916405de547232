use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::config::Endpoint;
use crate::error::FacilityError;
use crate::events::{now_s, EventLog, FacilityEvent};

/// Notification that one scan directory has fully appeared at the endpoint.
#[derive(Debug, Clone)]
pub struct ReplayEvent {
    pub scan: String,
    pub path: PathBuf,
    pub sequence: usize,
    pub ts: f64,
}

#[derive(Debug)]
pub struct ReplayHandle {
    pub events: mpsc::Receiver<ReplayEvent>,
    handle: JoinHandle<Result<usize, FacilityError>>,
}

impl ReplayHandle {
    /// Wait for the replay thread; returns the number of scans published.
    pub fn join(self) -> Result<usize, FacilityError> {
        drop(self.events);
        self.handle.join().expect("replay thread panicked")
    }
}

/// Re-enact an acquisition: publish each view directory from `dataset_root`
/// into the endpoint's root, one every `interval_s` seconds. Each scan is
/// staged under a hidden name and renamed into place, so consumers never see
/// a partially written scan. Missing views fail upfront, before anything is
/// published.
pub fn replay_acquisition(
    dataset_root: &Path,
    endpoint: &Endpoint,
    interval_s: f64,
    views: &[String],
    log: Option<Arc<EventLog>>,
) -> Result<ReplayHandle, FacilityError> {
    for view in views {
        let src = dataset_root.join(view);
        if !src.is_dir() {
            return Err(FacilityError::MissingSource(src));
        }
    }
    fs::create_dir_all(&endpoint.root).map_err(|e| FacilityError::io(&endpoint.root, e))?;

    let dataset_root = dataset_root.to_path_buf();
    let root = endpoint.root.clone();
    let views = views.to_vec();
    let (tx, rx) = mpsc::channel();

    let handle = std::thread::spawn(move || {
        for (sequence, view) in views.iter().enumerate() {
            if sequence > 0 && interval_s > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(interval_s));
            }
            let final_path = root.join(view);
            publish_scan(&dataset_root.join(view), &root, &final_path)?;
            let event = ReplayEvent {
                scan: view.clone(),
                path: final_path.clone(),
                sequence,
                ts: now_s(),
            };
            if let Some(log) = &log {
                log.append(&FacilityEvent::Replay {
                    ts: event.ts,
                    scan: event.scan.clone(),
                    path: final_path.display().to_string(),
                    sequence,
                })?;
            }
            // A dropped receiver just means nobody is watching the beamline.
            let _ = tx.send(event);
        }
        Ok(views.len())
    });

    Ok(ReplayHandle { events: rx, handle })
}

/// Copy `src` into a hidden staging directory next to `final_path`, then
/// rename it into place so the scan appears atomically.
fn publish_scan(src: &Path, root: &Path, final_path: &Path) -> Result<(), FacilityError> {
    let name = final_path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("scan");
    let staging = root.join(format!(".staging-{name}"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| FacilityError::io(&staging, e))?;
    }
    copy_dir(src, &staging)?;
    if final_path.exists() {
        fs::remove_dir_all(final_path).map_err(|e| FacilityError::io(final_path, e))?;
    }
    fs::rename(&staging, final_path).map_err(|e| FacilityError::io(final_path, e))
}

fn copy_dir(src: &Path, dst: &Path) -> Result<(), FacilityError> {
    fs::create_dir_all(dst).map_err(|e| FacilityError::io(dst, e))?;
    for entry in walkdir::WalkDir::new(src) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(src).to_path_buf();
            FacilityError::io(path, e.into())
        })?;
        let rel = entry
            .path()
            .strip_prefix(src)
            .expect("walkdir yields paths under src");
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).map_err(|e| FacilityError::io(&target, e))?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &target).map_err(|e| FacilityError::io(&target, e))?;
        }
    }
    Ok(())
}

/// Scan id used for remote directory naming: the trailing decimal digits of
/// the folder name, kept verbatim (leading zeros survive).
pub fn extract_scan_id(folder_name: &str) -> Result<String, FacilityError> {
    let prefix = folder_name.trim_end_matches(|c: char| c.is_ascii_digit());
    let id = &folder_name[prefix.len()..];
    if id.is_empty() {
        return Err(FacilityError::NoScanId(folder_name.to_string()));
    }
    Ok(id.to_string())
}

/// Create `<root>/input/<id>` and `<root>/recon/<id>` at the endpoint.
/// Idempotent; returns both paths.
pub fn prepare_remote_dirs(
    endpoint: &Endpoint,
    scan_id: &str,
) -> Result<(PathBuf, PathBuf), FacilityError> {
    let input = endpoint.root.join("input").join(scan_id);
    let recon = endpoint.root.join("recon").join(scan_id);
    for dir in [&input, &recon] {
        fs::create_dir_all(dir).map_err(|e| FacilityError::io(dir, e))?;
    }
    Ok((input, recon))
}
