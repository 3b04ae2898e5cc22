//! Content-hash keys for stage outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MARKER: &str = "stage.json";

/// Completion record written into a stage directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMarker {
    pub stage: String,
    pub key: String,
    pub seconds: f64,
    pub summary: serde_json::Value,
}

fn walk(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(path, e)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == MARKER) {
                continue;
            }
            walk(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// SHA-256 over a label, a JSON config section and the bytes of every file
/// under `inputs` (directories walked in sorted order, markers skipped).
pub fn stage_key(label: &str, config: &serde_json::Value, inputs: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config)?);
    for root in inputs {
        let mut files = Vec::new();
        walk(root, &mut files)?;
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// The marker in `dir` if its key equals `key`.
pub fn cached(dir: &Path, key: &str) -> Option<StageMarker> {
    let text = std::fs::read_to_string(dir.join(MARKER)).ok()?;
    let marker: StageMarker = serde_json::from_str(&text).ok()?;
    (marker.key == key).then_some(marker)
}

pub fn mark_done(dir: &Path, marker: &StageMarker) -> Result<()> {
    let path = dir.join(MARKER);
    std::fs::write(&path, serde_json::to_string_pretty(marker)?).map_err(|e| Error::io(&path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_tracks_content_and_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"one").unwrap();
        let cfg = serde_json::json!({"x": 1});
        let k1 = stage_key("s", &cfg, &[dir.path()]).unwrap();
        assert_eq!(k1, stage_key("s", &cfg, &[dir.path()]).unwrap());
        mark_done(
            dir.path(),
            &StageMarker {
                stage: "s".into(),
                key: k1.clone(),
                seconds: 0.0,
                summary: serde_json::Value::Null,
            },
        )
        .unwrap();
        assert_eq!(k1, stage_key("s", &cfg, &[dir.path()]).unwrap());
        assert!(cached(dir.path(), &k1).is_some());
        std::fs::write(dir.path().join("a.txt"), b"two").unwrap();
        assert_ne!(k1, stage_key("s", &cfg, &[dir.path()]).unwrap());
        assert_ne!(
            k1,
            stage_key("s", &serde_json::json!({"x": 2}), &[dir.path()]).unwrap()
        );
        assert!(cached(dir.path(), "other").is_none());
    }
}
