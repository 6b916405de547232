use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::FacilityError;

pub const CHECKSUM_ALGORITHM: &str = "sha256";

/// Hex SHA-256 digest of a directory tree: the bytes of every regular file,
/// concatenated in sorted relative-path order. A plain file hashes to the
/// digest of its own bytes, so single-file payloads work too.
pub fn tree_checksum(root: &Path) -> Result<String, FacilityError> {
    let mut hasher = Sha256::new();
    if root.is_file() {
        hash_file(root, &mut hasher)?;
        return Ok(hex::encode(hasher.finalize()));
    }
    for path in sorted_files(root)? {
        hash_file(&root.join(&path), &mut hasher)?;
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Relative paths of all regular files under `root`, sorted.
pub fn sorted_files(root: &Path) -> Result<Vec<PathBuf>, FacilityError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            FacilityError::io(path.clone(), e.into())
        })?;
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(root)
                .expect("walkdir yields paths under root")
                .to_path_buf();
            files.push(rel);
        }
    }
    files.sort();
    Ok(files)
}

fn hash_file(path: &Path, hasher: &mut Sha256) -> Result<(), FacilityError> {
    let file = File::open(path).map_err(|e| FacilityError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf).map_err(|e| FacilityError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(())
}

/// Total size in bytes of all regular files under `root`.
pub fn tree_bytes(root: &Path) -> Result<u64, FacilityError> {
    if root.is_file() {
        let meta = std::fs::metadata(root).map_err(|e| FacilityError::io(root, e))?;
        return Ok(meta.len());
    }
    let mut total = 0;
    for rel in sorted_files(root)? {
        let path = root.join(rel);
        let meta = std::fs::metadata(&path).map_err(|e| FacilityError::io(&path, e))?;
        total += meta.len();
    }
    Ok(total)
}
