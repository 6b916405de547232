use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::checksum::{tree_checksum, CHECKSUM_ALGORITHM};
use crate::config::{Deployment, LinkModel};
use crate::error::FacilityError;
use crate::events::now_s;

/// A path relative to a named endpoint's root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub endpoint: String,
    pub path: PathBuf,
}

impl Location {
    pub fn new(endpoint: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Location {
            endpoint: endpoint.into(),
            path: path.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferState {
    Pending,
    Active,
    Succeeded,
    Failed,
}

/// Record of one endpoint-to-endpoint copy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferTask {
    pub src: Location,
    pub dst: Location,
    pub state: TransferState,
    pub bytes: u64,
    pub started: f64,
    pub finished: f64,
    /// Digest of the source tree, verified equal on the destination side.
    pub checksum: Option<String>,
    pub algorithm: String,
    pub error: Option<String>,
}

/// Copy a tree (or single file) between endpoints, verify it by checksum on
/// both sides, and pace the call so it lasts at least the link's simulated
/// wire time. Data problems (missing source, bad token, digest mismatch)
/// come back as a failed task; only deployment misuse is a hard error.
pub fn transfer(
    deployment: &Deployment,
    token: &str,
    src: &Location,
    dst: &Location,
) -> Result<TransferTask, FacilityError> {
    transfer_with_hook(deployment, token, src, dst, None)
}

/// `transfer` with a fault-injection hook run after the copy but before the
/// destination checksum, so tests can corrupt data in flight.
pub fn transfer_with_hook(
    deployment: &Deployment,
    token: &str,
    src: &Location,
    dst: &Location,
    hook: Option<&mut dyn FnMut(&Path) -> std::io::Result<()>>,
) -> Result<TransferTask, FacilityError> {
    let src_root = deployment.endpoint(&src.endpoint)?.root.clone();
    let dst_root = deployment.endpoint(&dst.endpoint)?.root.clone();
    let link = deployment.link_between(&src.endpoint, &dst.endpoint);

    let mut task = TransferTask {
        src: src.clone(),
        dst: dst.clone(),
        state: TransferState::Active,
        bytes: 0,
        started: now_s(),
        finished: 0.0,
        checksum: None,
        algorithm: CHECKSUM_ALGORITHM.to_string(),
        error: None,
    };

    if !deployment.check_token(token) {
        return Ok(fail(task, "authorization rejected: bad bearer token".into()));
    }

    let src_abs = src_root.join(&src.path);
    let dst_abs = dst_root.join(&dst.path);
    if !src_abs.exists() {
        return Ok(fail(
            task,
            format!("source {} does not exist", src_abs.display()),
        ));
    }

    match copy_tree(&src_abs, &dst_abs) {
        Ok(bytes) => task.bytes = bytes,
        Err(e) => return Ok(fail(task, format!("copy failed: {e}"))),
    }

    let src_digest = match tree_checksum(&src_abs) {
        Ok(d) => d,
        Err(e) => return Ok(fail(task, format!("source checksum failed: {e}"))),
    };

    if let Some(hook) = hook {
        if let Err(e) = hook(&dst_abs) {
            return Ok(fail(task, format!("fault hook failed: {e}")));
        }
    }

    let dst_digest = match tree_checksum(&dst_abs) {
        Ok(d) => d,
        Err(e) => return Ok(fail(task, format!("destination checksum failed: {e}"))),
    };
    if src_digest != dst_digest {
        task.checksum = Some(src_digest.clone());
        return Ok(fail(
            task,
            format!("checksum mismatch after copy: src={src_digest} dst={dst_digest}"),
        ));
    }

    let target = link.duration_s(task.bytes);
    let elapsed = now_s() - task.started;
    if target > elapsed {
        std::thread::sleep(Duration::from_secs_f64(target - elapsed));
    }

    task.checksum = Some(src_digest);
    task.state = TransferState::Succeeded;
    task.finished = now_s();
    Ok(task)
}

fn fail(mut task: TransferTask, reason: String) -> TransferTask {
    task.state = TransferState::Failed;
    task.error = Some(reason);
    task.finished = now_s();
    task
}

/// Recursive copy. An existing destination is removed first so retries
/// converge on an exact replica of the source. Returns bytes copied.
fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<u64> {
    if dst.exists() {
        if dst.is_dir() {
            fs::remove_dir_all(dst)?;
        } else {
            fs::remove_file(dst)?;
        }
    }
    if src.is_file() {
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent)?;
        }
        return fs::copy(src, dst);
    }
    let mut bytes = 0;
    fs::create_dir_all(dst)?;
    for entry in walkdir::WalkDir::new(src) {
        let entry = entry?;
        let rel = entry
            .path()
            .strip_prefix(src)
            .expect("walkdir yields paths under src");
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)?;
            }
            bytes += fs::copy(entry.path(), &target)?;
        }
    }
    Ok(bytes)
}

/// Expected wall-clock duration for `bytes` over `link`; exposed so tests and
/// reports can compare measured spans against the model.
pub fn modeled_duration_s(link: &LinkModel, bytes: u64) -> f64 {
    link.duration_s(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Endpoint, EndpointRole, LinkSpec};
    use proptest::prelude::*;
    use std::fs;

    fn deployment(a: &Path, b: &Path, bandwidth_bytes_per_s: f64, latency_s: f64) -> Deployment {
        Deployment {
            endpoints: vec![
                Endpoint {
                    id: "beamline".into(),
                    root: a.to_path_buf(),
                    role: EndpointRole::Beamline,
                },
                Endpoint {
                    id: "compute".into(),
                    root: b.to_path_buf(),
                    role: EndpointRole::Compute,
                },
            ],
            links: vec![LinkSpec {
                src: "beamline".into(),
                dst: "compute".into(),
                bandwidth_bytes_per_s,
                latency_s,
            }],
            token: "tok".into(),
        }
    }

    #[test]
    fn empty_directory_succeeds_with_latency_only() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        fs::create_dir(a.path().join("scan1")).unwrap();
        let d = deployment(a.path(), b.path(), 10e6, 0.05);
        let task = transfer(
            &d,
            "tok",
            &Location::new("beamline", "scan1"),
            &Location::new("compute", "input/1"),
        )
        .unwrap();
        assert_eq!(task.state, TransferState::Succeeded);
        assert_eq!(task.bytes, 0);
        let duration = task.finished - task.started;
        assert!(duration >= 0.05, "duration {duration} below latency");
        assert!(duration < 0.5, "duration {duration} unreasonably long");
        assert!(b.path().join("input/1").is_dir());
    }

    #[test]
    fn pacing_enforces_modeled_duration() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mb = 1024 * 1024;
        fs::create_dir(a.path().join("big")).unwrap();
        fs::write(a.path().join("big/payload.bin"), vec![7u8; 10 * mb]).unwrap();
        let d = deployment(a.path(), b.path(), (10 * mb) as f64, 0.0);
        let task = transfer(
            &d,
            "tok",
            &Location::new("beamline", "big"),
            &Location::new("compute", "big"),
        )
        .unwrap();
        assert_eq!(task.state, TransferState::Succeeded);
        assert_eq!(task.bytes, (10 * mb) as u64);
        let duration = task.finished - task.started;
        assert!(
            (1.0..1.2).contains(&duration),
            "10 MB over a 10 MB/s link took {duration} s, expected within [1.0, 1.2)"
        );
    }

    #[test]
    fn corruption_between_copy_and_verify_fails_with_mismatch() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        fs::create_dir(a.path().join("scan1")).unwrap();
        fs::write(a.path().join("scan1/frames.bin"), [1u8, 2, 3, 4]).unwrap();
        let d = deployment(a.path(), b.path(), 10e6, 0.0);
        let mut corrupt = |dst: &Path| fs::write(dst.join("frames.bin"), [9u8, 9, 9, 9]);
        let task = transfer_with_hook(
            &d,
            "tok",
            &Location::new("beamline", "scan1"),
            &Location::new("compute", "input/1"),
            Some(&mut corrupt),
        )
        .unwrap();
        assert_eq!(task.state, TransferState::Failed);
        let reason = task.error.unwrap();
        assert!(reason.contains("checksum mismatch"), "reason: {reason}");
    }

    #[test]
    fn missing_source_and_bad_token_fail_softly() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let d = deployment(a.path(), b.path(), 10e6, 0.0);
        let task = transfer(
            &d,
            "tok",
            &Location::new("beamline", "absent"),
            &Location::new("compute", "x"),
        )
        .unwrap();
        assert_eq!(task.state, TransferState::Failed);
        assert!(task.error.unwrap().contains("does not exist"));

        fs::create_dir(a.path().join("scan1")).unwrap();
        let task = transfer(
            &d,
            "wrong",
            &Location::new("beamline", "scan1"),
            &Location::new("compute", "x"),
        )
        .unwrap();
        assert_eq!(task.state, TransferState::Failed);
        assert!(task.error.unwrap().contains("authorization"));
    }

    #[test]
    fn unknown_endpoint_is_a_hard_error() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let d = deployment(a.path(), b.path(), 10e6, 0.0);
        let err = transfer(
            &d,
            "tok",
            &Location::new("mars", "scan1"),
            &Location::new("compute", "x"),
        )
        .unwrap_err();
        assert!(matches!(err, FacilityError::UnknownEndpoint(_)));
    }

    #[test]
    fn retry_overwrites_and_converges_to_source() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        fs::create_dir(a.path().join("scan1")).unwrap();
        fs::write(a.path().join("scan1/frames.bin"), [1u8, 2, 3]).unwrap();
        // Stale partial copy with an extra file from an interrupted attempt.
        fs::create_dir_all(b.path().join("input/1")).unwrap();
        fs::write(b.path().join("input/1/leftover.bin"), [9u8]).unwrap();
        let d = deployment(a.path(), b.path(), 10e6, 0.0);
        for _ in 0..2 {
            let task = transfer(
                &d,
                "tok",
                &Location::new("beamline", "scan1"),
                &Location::new("compute", "input/1"),
            )
            .unwrap();
            assert_eq!(task.state, TransferState::Succeeded);
        }
        assert!(!b.path().join("input/1/leftover.bin").exists());
        assert_eq!(
            tree_checksum(&a.path().join("scan1")).unwrap(),
            tree_checksum(&b.path().join("input/1")).unwrap()
        );
    }

    #[test]
    fn single_file_payload_is_supported() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        fs::write(a.path().join("report.csv"), b"n,time_s\n1,2.0\n").unwrap();
        let d = deployment(a.path(), b.path(), 10e6, 0.0);
        let task = transfer(
            &d,
            "tok",
            &Location::new("beamline", "report.csv"),
            &Location::new("compute", "reports/report.csv"),
        )
        .unwrap();
        assert_eq!(task.state, TransferState::Succeeded);
        assert_eq!(task.bytes, 15);
        assert_eq!(
            fs::read(b.path().join("reports/report.csv")).unwrap(),
            b"n,time_s\n1,2.0\n"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// No transfer ever reports success with unequal trees: clean copies
        /// succeed with matching digests, corrupted ones always fail.
        #[test]
        fn succeeded_implies_equal_checksums(
            files in proptest::collection::vec(
                ("[a-c][a-z]{0,3}", proptest::collection::vec(any::<u8>(), 0..64)),
                1..5,
            ),
            corrupt in any::<bool>(),
        ) {
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            let tree = a.path().join("scan9");
            fs::create_dir(&tree).unwrap();
            for (name, bytes) in &files {
                fs::write(tree.join(name), bytes).unwrap();
            }
            let d = deployment(a.path(), b.path(), 1e9, 0.0);
            let mut hook = |dst: &Path| fs::write(dst.join("zzz-injected.bin"), [0u8; 3]);
            let task = transfer_with_hook(
                &d,
                "tok",
                &Location::new("beamline", "scan9"),
                &Location::new("compute", "input/9"),
                if corrupt { Some(&mut hook) } else { None },
            ).unwrap();
            let src_digest = tree_checksum(&tree).unwrap();
            let dst_digest = tree_checksum(&b.path().join("input/9")).unwrap();
            if task.state == TransferState::Succeeded {
                prop_assert_eq!(&src_digest, &dst_digest);
                prop_assert_eq!(task.checksum.as_deref(), Some(src_digest.as_str()));
            } else {
                prop_assert!(corrupt, "clean transfer failed: {:?}", task.error);
                prop_assert_ne!(&src_digest, &dst_digest);
            }
        }
    }
}
