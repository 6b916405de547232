use std::fs::{File, OpenOptions};
use std::io::Write;
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::EndpointError;

pub const SLOT_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotState {
    Free,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub slot_id: String,
    pub node_id: String,
    pub state: SlotState,
    pub holder: Option<String>,
}

/// On-disk accelerator-slot table. The file is UTF-8 JSON, rewritten
/// atomically (temp + rename) and only ever mutated under an exclusive
/// OS-level lock on the sibling `.lock` file, so separate worker processes
/// coordinate correctly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFile {
    pub version: u32,
    pub slots: Vec<SlotEntry>,
}

impl SlotFile {
    pub fn empty() -> SlotFile {
        SlotFile {
            version: SLOT_FILE_VERSION,
            slots: Vec::new(),
        }
    }

    pub fn free_per_node(&self, node_id: &str) -> usize {
        self.slots
            .iter()
            .filter(|s| s.node_id == node_id && s.state == SlotState::Free)
            .count()
    }

    pub fn free_total(&self) -> usize {
        self.slots.iter().filter(|s| s.state == SlotState::Free).count()
    }

    pub fn busy_total(&self) -> usize {
        self.slots.iter().filter(|s| s.state == SlotState::Busy).count()
    }

    pub fn node_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.slots.iter().map(|s| s.node_id.clone()).collect();
        ids.dedup();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Largest free-slot count available on any one node (single-node
    /// placement is the allocation unit).
    pub fn max_free_on_one_node(&self) -> usize {
        self.node_ids()
            .iter()
            .map(|n| self.free_per_node(n))
            .max()
            .unwrap_or(0)
    }
}

fn lock_path(slot_path: &Path) -> PathBuf {
    let mut name = slot_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "slots".to_string());
    name.push_str(".lock");
    slot_path.with_file_name(name)
}

/// Held exclusive advisory lock; released when dropped.
pub struct SlotLock {
    _file: File,
}

/// Block until the exclusive lock on the sibling `.lock` file is ours.
/// Interrupted waits are retried.
pub fn lock_exclusive(slot_path: &Path) -> Result<SlotLock, EndpointError> {
    let path = lock_path(slot_path);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .open(&path)
        .map_err(|e| EndpointError::io(&path, e))?;
    loop {
        let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX) };
        if rc == 0 {
            return Ok(SlotLock { _file: file });
        }
        let err = std::io::Error::last_os_error();
        if err.raw_os_error() != Some(libc::EINTR) {
            return Err(EndpointError::io(&path, err));
        }
    }
}

pub fn read_slots(path: &Path) -> Result<SlotFile, EndpointError> {
    let text = std::fs::read_to_string(path).map_err(|e| EndpointError::io(path, e))?;
    let parsed: SlotFile = serde_json::from_str(&text).map_err(|e| EndpointError::SlotFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if parsed.version != SLOT_FILE_VERSION {
        return Err(EndpointError::SlotFormat {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported version {} (expected {SLOT_FILE_VERSION})",
                parsed.version
            ),
        });
    }
    Ok(parsed)
}

/// Write the table to a sibling temp file, then rename over the target, so
/// readers never observe a torn write.
pub fn write_slots_atomic(path: &Path, table: &SlotFile) -> Result<(), EndpointError> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    let text = serde_json::to_string(table)?;
    {
        let mut file = File::create(&tmp).map_err(|e| EndpointError::io(&tmp, e))?;
        file.write_all(text.as_bytes())
            .map_err(|e| EndpointError::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| EndpointError::io(path, e))
}

/// Create the slot file (and its lock sibling) holding an empty table.
pub fn init_slot_file(path: &Path) -> Result<(), EndpointError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| EndpointError::io(parent, e))?;
        }
    }
    let _lock = lock_exclusive(path)?;
    write_slots_atomic(path, &SlotFile::empty())
}

/// Run `f` on the table with the exclusive lock held, then write the result
/// back atomically before releasing.
pub fn with_slots_locked<T>(
    path: &Path,
    f: impl FnOnce(&mut SlotFile) -> T,
) -> Result<T, EndpointError> {
    let _lock = lock_exclusive(path)?;
    let mut table = read_slots(path)?;
    let out = f(&mut table);
    write_slots_atomic(path, &table)?;
    Ok(out)
}

/// Append `slots` fresh entries for a node. Slot ids are `<node>-s<k>`.
pub fn add_node_slots(path: &Path, node_id: &str, slots: usize) -> Result<(), EndpointError> {
    with_slots_locked(path, |table| {
        for k in 0..slots {
            table.slots.push(SlotEntry {
                slot_id: format!("{node_id}-s{k}"),
                node_id: node_id.to_string(),
                state: SlotState::Free,
                holder: None,
            });
        }
    })
}

/// A successful acquisition: the slot ids now held, and the instant the
/// table was mutated (taken while the lock was still held, so it orders
/// correctly against any later read of the file).
#[derive(Debug, Clone)]
pub struct Acquired {
    pub slots: Vec<String>,
    pub at: f64,
}

/// One locked attempt: if some single node (optionally a specific one) has
/// at least `n` free slots, mark `n` of them busy for `task_id` and return
/// their ids. Otherwise leave the table untouched.
pub fn try_acquire(
    path: &Path,
    task_id: &str,
    n: usize,
    node_filter: Option<&str>,
) -> Result<Option<Acquired>, EndpointError> {
    with_slots_locked(path, |table| {
        let mut nodes = table.node_ids();
        if let Some(only) = node_filter {
            nodes.retain(|id| id == only);
        }
        let Some(node) = nodes.into_iter().find(|id| table.free_per_node(id) >= n) else {
            return None;
        };
        let mut taken = Vec::with_capacity(n);
        for entry in &mut table.slots {
            if taken.len() == n {
                break;
            }
            if entry.node_id == node && entry.state == SlotState::Free {
                entry.state = SlotState::Busy;
                entry.holder = Some(task_id.to_string());
                taken.push(entry.slot_id.clone());
            }
        }
        Some(Acquired {
            slots: taken,
            at: crate::now_s(),
        })
    })
}

/// Milliseconds to wait after the given 1-based failed attempt.
pub fn backoff_ms(attempt: u32) -> u64 {
    (10 * attempt as u64).min(200)
}

/// Block until `n` slots on one node are acquired for `task_id`, backing off
/// between attempts (10 ms × attempt, capped at 200 ms). `keep_waiting` is
/// consulted between attempts so callers can abandon the wait; `None` means
/// the wait was abandoned.
pub fn acquire_slots(
    path: &Path,
    task_id: &str,
    n: usize,
    node_filter: Option<&str>,
    keep_waiting: impl Fn() -> bool,
) -> Result<Option<Acquired>, EndpointError> {
    let mut attempt = 0u32;
    loop {
        if let Some(acquired) = try_acquire(path, task_id, n, node_filter)? {
            return Ok(Some(acquired));
        }
        if !keep_waiting() {
            return Ok(None);
        }
        attempt += 1;
        std::thread::sleep(Duration::from_millis(backoff_ms(attempt)));
    }
}

/// Free every slot held by `task_id`. Returns how many were released; zero
/// releases are logged as a warning but are not errors (idempotence).
pub fn release_slots(path: &Path, task_id: &str) -> Result<usize, EndpointError> {
    let released = with_slots_locked(path, |table| {
        let mut count = 0;
        for entry in &mut table.slots {
            if entry.holder.as_deref() == Some(task_id) {
                entry.state = SlotState::Free;
                entry.holder = None;
                count += 1;
            }
        }
        count
    })?;
    if released == 0 {
        log::warn!("release for task {task_id} matched no held slots");
    }
    Ok(released)
}

/// Forcibly free busy entries — the manual recovery path for slots left
/// behind by killed workers. With a holder given, only that holder's slots
/// are freed; otherwise every busy slot is. Returns the number repaired.
pub fn repair(path: &Path, holder: Option<&str>) -> Result<usize, EndpointError> {
    with_slots_locked(path, |table| {
        let mut count = 0;
        for entry in &mut table.slots {
            let matches = match holder {
                Some(h) => entry.holder.as_deref() == Some(h),
                None => entry.state == SlotState::Busy,
            };
            if matches && entry.state == SlotState::Busy {
                entry.state = SlotState::Free;
                entry.holder = None;
                count += 1;
            }
        }
        count
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
    use std::sync::Arc;

    fn new_slot_file(slots: &[(&str, usize)]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slots.json");
        init_slot_file(&path).unwrap();
        for (node, count) in slots {
            add_node_slots(&path, node, *count).unwrap();
        }
        (dir, path)
    }

    #[test]
    fn init_and_read_round_trip() {
        let (_dir, path) = new_slot_file(&[("node0", 8)]);
        let table = read_slots(&path).unwrap();
        assert_eq!(table.version, 1);
        assert_eq!(table.slots.len(), 8);
        assert!(table.slots.iter().all(|s| s.state == SlotState::Free));
        assert_eq!(table.slots[3].slot_id, "node0-s3");
        assert_eq!(table.free_per_node("node0"), 8);
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let (_dir, path) = new_slot_file(&[]);
        std::fs::write(&path, r#"{"version":2,"slots":[]}"#).unwrap();
        let err = read_slots(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn acquire_release_round_trips_byte_for_byte() {
        let (_dir, path) = new_slot_file(&[("node0", 8)]);
        let initial = std::fs::read(&path).unwrap();
        let acquired = try_acquire(&path, "task-1", 1, None).unwrap().unwrap();
        assert_eq!(acquired.slots.len(), 1);
        let table = read_slots(&path).unwrap();
        assert_eq!(table.busy_total(), 1);
        assert_eq!(table.free_total(), 7);
        let held: Vec<&SlotEntry> = table
            .slots
            .iter()
            .filter(|s| s.holder.as_deref() == Some("task-1"))
            .collect();
        assert_eq!(held.len(), 1);
        assert_eq!(held[0].state, SlotState::Busy);

        assert_eq!(release_slots(&path, "task-1").unwrap(), 1);
        assert_eq!(std::fs::read(&path).unwrap(), initial);
        // Double release is a logged no-op.
        assert_eq!(release_slots(&path, "task-1").unwrap(), 0);
        assert_eq!(std::fs::read(&path).unwrap(), initial);
    }

    #[test]
    fn insufficient_free_slots_acquires_nothing() {
        let (_dir, path) = new_slot_file(&[("node0", 2)]);
        try_acquire(&path, "hog", 2, None).unwrap().unwrap();
        let before = std::fs::read(&path).unwrap();
        assert!(try_acquire(&path, "task-2", 1, None).unwrap().is_none());
        assert!(try_acquire(&path, "task-3", 3, None).unwrap().is_none());
        assert_eq!(std::fs::read(&path).unwrap(), before, "failed attempt must not mutate");
    }

    #[test]
    fn split_free_slots_across_nodes_do_not_satisfy_a_two_slot_request() {
        let (_dir, path) = new_slot_file(&[("node0", 2), ("node1", 2)]);
        try_acquire(&path, "a", 1, Some("node0")).unwrap().unwrap();
        try_acquire(&path, "b", 1, Some("node1")).unwrap().unwrap();
        // 1 + 1 free across two nodes: a 2-slot request must wait.
        assert!(try_acquire(&path, "c", 2, None).unwrap().is_none());
        release_slots(&path, "a").unwrap();
        let got = try_acquire(&path, "c", 2, None).unwrap().unwrap();
        assert_eq!(got.slots.len(), 2);
        let table = read_slots(&path).unwrap();
        for slot_id in &got.slots {
            let entry = table.slots.iter().find(|s| &s.slot_id == slot_id).unwrap();
            assert_eq!(entry.node_id, "node0", "placement must be single-node");
        }
    }

    #[test]
    fn node_filter_restricts_placement() {
        let (_dir, path) = new_slot_file(&[("node0", 1), ("node1", 1)]);
        try_acquire(&path, "x", 1, Some("node0")).unwrap().unwrap();
        assert!(try_acquire(&path, "y", 1, Some("node0")).unwrap().is_none());
        assert!(try_acquire(&path, "y", 1, Some("node1")).unwrap().is_some());
    }

    #[test]
    fn contended_stress_never_oversubscribes() {
        let (_dir, path) = new_slot_file(&[("node0", 8)]);
        let initial = std::fs::read(&path).unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let cycles = Arc::new(AtomicUsize::new(0));

        let sampler = {
            let path = path.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                let mut max_busy = 0usize;
                let mut samples = 0usize;
                while !stop.load(Ordering::Relaxed) {
                    let table = read_slots(&path).expect("every read parses (atomic writes)");
                    let mut holders: Vec<&str> =
                        table.slots.iter().filter_map(|s| s.holder.as_deref()).collect();
                    let busy = table.busy_total();
                    assert_eq!(busy, holders.len(), "busy ⇔ holder set");
                    holders.sort_unstable();
                    let before = holders.len();
                    holders.dedup();
                    // A task may hold several slots; what must never happen
                    // is one SLOT with two holders, which the map structure
                    // rules out, or busy count above capacity.
                    assert!(before >= holders.len());
                    assert!(busy <= 8, "{busy} busy slots on an 8-slot node");
                    max_busy = max_busy.max(busy);
                    samples += 1;
                }
                (max_busy, samples)
            })
        };

        let workers: Vec<_> = (0..16)
            .map(|w| {
                let path = path.clone();
                let cycles = cycles.clone();
                std::thread::spawn(move || {
                    for i in 0..64 {
                        let task = format!("w{w}-c{i}");
                        let got = acquire_slots(&path, &task, 1, None, || true)
                            .unwrap()
                            .expect("keep_waiting never abandons");
                        assert_eq!(got.slots.len(), 1);
                        std::thread::sleep(Duration::from_micros(200));
                        assert_eq!(release_slots(&path, &task).unwrap(), 1);
                        cycles.fetch_add(1, Ordering::Relaxed);
                    }
                })
            })
            .collect();
        for w in workers {
            w.join().unwrap();
        }
        stop.store(true, Ordering::Relaxed);
        let (max_busy, samples) = sampler.join().unwrap();
        assert_eq!(cycles.load(Ordering::Relaxed), 1024);
        assert!(samples > 50, "sampler only ran {samples} times");
        assert!(max_busy <= 8);
        assert_eq!(std::fs::read(&path).unwrap(), initial, "all slots restored");
    }

    #[test]
    fn release_unblocks_a_waiter_within_the_backoff_bound() {
        let (_dir, path) = new_slot_file(&[("node0", 8)]);
        try_acquire(&path, "hog", 8, None).unwrap().unwrap();
        let waiter = {
            let path = path.clone();
            std::thread::spawn(move || {
                let got = acquire_slots(&path, "waiter", 1, None, || true).unwrap();
                (got, std::time::Instant::now())
            })
        };
        std::thread::sleep(Duration::from_millis(120));
        let released_at = std::time::Instant::now();
        release_slots(&path, "hog").unwrap();
        let (got, acquired_at) = waiter.join().unwrap();
        assert!(got.is_some());
        let lag = acquired_at.duration_since(released_at);
        assert!(lag <= Duration::from_millis(400), "waiter lagged {lag:?} after release");
    }

    #[test]
    fn abandoned_wait_returns_none_and_leaves_table_clean() {
        let (_dir, path) = new_slot_file(&[("node0", 1)]);
        try_acquire(&path, "hog", 1, None).unwrap().unwrap();
        let before = std::fs::read(&path).unwrap();
        let got = acquire_slots(&path, "quitter", 1, None, || false).unwrap();
        assert!(got.is_none());
        assert_eq!(std::fs::read(&path).unwrap(), before);
    }

    #[test]
    fn repair_frees_stale_holders() {
        let (_dir, path) = new_slot_file(&[("node0", 4)]);
        try_acquire(&path, "dead-task", 2, None).unwrap().unwrap();
        try_acquire(&path, "live-task", 1, None).unwrap().unwrap();
        assert_eq!(repair(&path, Some("dead-task")).unwrap(), 2);
        let table = read_slots(&path).unwrap();
        assert_eq!(table.busy_total(), 1);
        assert_eq!(repair(&path, None).unwrap(), 1);
        assert_eq!(read_slots(&path).unwrap().busy_total(), 0);
    }
}
