//! On-disk tensor archive shared by the GAN and SR checkpoints.
//!
//! A checkpoint is a directory holding `header.json` and one little-endian
//! `f32` blob per tensor under `tensors/`. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const FORMAT: &str = "impasto-checkpoint/1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub kind: String,
    pub tensors: Vec<TensorEntry>,
    pub meta: serde_json::Value,
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Write named groups of tensors plus free-form metadata.
///
/// Tensor names are `<group>/<param name>`.
pub fn write(
    dir: &Path,
    kind: &str,
    groups: &[(&str, &ParamSet<f32>)],
    meta: serde_json::Value,
) -> Result<()> {
    let tensor_dir = dir.join("tensors");
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
    let mut entries = Vec::new();
    for (group, params) in groups {
        for (name, t) in params.iter() {
            let full = format!("{group}/{name}");
            let file = format!("tensors/{group}.{name}.bin");
            let mut bytes = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            entries.push(TensorEntry {
                name: full,
                shape: t.shape().to_vec(),
                dtype: "f32-le".into(),
                file,
            });
        }
    }
    let header = Header {
        format: FORMAT.into(),
        kind: kind.into(),
        tensors: entries,
        meta,
    };
    let path = dir.join("header.json");
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Read a checkpoint directory; returns the header and the tensors of each group.
pub fn read(dir: &Path, kind: &str) -> Result<(Header, Vec<(String, ParamSet<f32>)>)> {
    let path = dir.join("header.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: Header = serde_json::from_str(&text)?;
    if header.format != FORMAT {
        return Err(ckpt_err(dir, format!("unknown format {}", header.format)));
    }
    if header.kind != kind {
        return Err(ckpt_err(
            dir,
            format!("expected a {kind} checkpoint, found {}", header.kind),
        ));
    }
    let mut groups: Vec<(String, ParamSet<f32>)> = Vec::new();
    for entry in &header.tensors {
        if entry.dtype != "f32-le" {
            return Err(ckpt_err(dir, format!("unsupported dtype {}", entry.dtype)));
        }
        let (group, name) = entry
            .name
            .split_once('/')
            .ok_or_else(|| ckpt_err(dir, format!("bad tensor name {}", entry.name)))?;
        let blob_path = dir.join(&entry.file);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let expected: usize = entry.shape.iter().product();
        if bytes.len() != expected * 4 {
            return Err(ckpt_err(
                dir,
                format!(
                    "{} holds {} bytes, expected {}",
                    entry.file,
                    bytes.len(),
                    expected * 4
                ),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::from_vec(&entry.shape, data)?;
        match groups.iter_mut().find(|(g, _)| g == group) {
            Some((_, set)) => set.insert(name, t),
            None => {
                let mut set = ParamSet::new();
                set.insert(name, t);
                groups.push((group.to_string(), set));
            }
        }
    }
    Ok((header, groups))
}

pub(crate) fn take_group(groups: &mut Vec<(String, ParamSet<f32>)>, name: &str) -> ParamSet<f32> {
    groups
        .iter()
        .position(|(g, _)| g == name)
        .map(|i| groups.remove(i).1)
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.insert(
            "a.w",
            Tensor::from_vec(&[2, 2], vec![0.1f32, -0.0, f32::MIN_POSITIVE, 3.5e-12]).unwrap(),
        );
        p.insert("b", Tensor::from_vec(&[1], vec![7.0f32]).unwrap());
        write(
            dir.path(),
            "test",
            &[("params", &p)],
            serde_json::json!({"x": 1}),
        )
        .unwrap();
        let (header, mut groups) = read(dir.path(), "test").unwrap();
        assert_eq!(header.meta["x"], 1);
        let back = take_group(&mut groups, "params");
        for (name, t) in p.iter() {
            let u = back.get(name).unwrap();
            assert_eq!(t.shape(), u.shape());
            let bits: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let ubits: Vec<u32> = u.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, ubits);
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "gan", &[], serde_json::Value::Null).unwrap();
        assert!(matches!(
            read(dir.path(), "sr"),
            Err(Error::Checkpoint { .. })
        ));
    }
}
