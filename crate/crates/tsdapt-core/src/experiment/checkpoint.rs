//! Binary checkpoint format.
//!
//! Layout: 8-byte magic `TSDAPT01`, u32 format version, a
//! length-prefixed JSON header (architecture, optimizer config, step
//! counter), a count of named arrays, each array as
//! `(name, rank, dims, little-endian f64 data)`, and a trailing CRC32
//! of everything before it. Round trips are bit-exact.

use crate::models::{ModelParameters, PARAM_NAMES};
use crate::tensor::{AdamConfig, AdamState, Array};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSDAPT01";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: crate::models::ArchitectureConfig,
    optimizer: AdamConfig,
    step: u64,
}

fn push_array(buf: &mut Vec<u8>, name: &str, array: &Array) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(array.shape().len() as u32).to_le_bytes());
    for &d in array.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in array.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes parameters and optimizer state to `path`.
pub fn save_checkpoint(
    params: &ModelParameters,
    optimizer: &AdamState,
    path: &Path,
) -> Result<(), CheckpointError> {
    let header = Header {
        arch: params.arch().clone(),
        optimizer: *optimizer.config(),
        step: optimizer.step_count(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);

    let (first, second) = optimizer.moments();
    let count = (params.arrays().len() * 3) as u32;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, array) in params.named_arrays() {
        push_array(&mut buf, name, array);
    }
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        push_array(&mut buf, &format!("adam.m.{name}"), &first[i]);
    }
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        push_array(&mut buf, &format!("adam.v.{name}"), &second[i]);
    }

    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, &buf).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.at + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated at byte {} (needed {n} more)",
                self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint, verifying magic, version, and checksum.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParameters, AdamState), CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(CheckpointError::Corrupt("file shorter than any checkpoint".into()));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut cur = Cursor { bytes: body, at: 8 };
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let header_len = cur.u64()? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| CheckpointError::Corrupt(format!("bad header: {e}")))?;

    let count = cur.u32()? as usize;
    let mut arrays: BTreeMap<String, Array> = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("array name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let array = Array::new(shape, data)
            .map_err(|e| CheckpointError::Corrupt(format!("array {name}: {e}")))?;
        arrays.insert(name, array);
    }
    if cur.at != body.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after the last array",
            body.len() - cur.at
        )));
    }

    let params = ModelParameters::from_named(header.arch, |name| arrays.get(name).cloned())
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut first = Vec::with_capacity(PARAM_NAMES.len());
    let mut second = Vec::with_capacity(PARAM_NAMES.len());
    for name in PARAM_NAMES {
        first.push(
            arrays
                .get(&format!("adam.m.{name}"))
                .cloned()
                .ok_or_else(|| CheckpointError::Corrupt(format!("missing adam.m.{name}")))?,
        );
        second.push(
            arrays
                .get(&format!("adam.v.{name}"))
                .cloned()
                .ok_or_else(|| CheckpointError::Corrupt(format!("missing adam.v.{name}")))?,
        );
    }
    let optimizer = AdamState::from_parts(header.optimizer, first, second, header.step);
    Ok((params, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ArchitectureConfig;
    use tempfile::tempdir;

    fn small_model() -> (ModelParameters, AdamState) {
        let arch = ArchitectureConfig {
            channels: 2,
            num_classes: 3,
            num_domains: 3,
            conv_filters: [3, 4, 3],
            kernel_widths: [8, 5, 3],
            domain_hidden: 5,
        };
        let params = ModelParameters::init(arch, 77).unwrap();
        let mut opt = AdamState::new(params.arrays(), AdamConfig::default());
        // make the state non-trivial
        let mut p = params.clone();
        let g: Vec<Array> = p.arrays().iter().map(|a| Array::full(a.shape(), 0.25)).collect();
        let refs: Vec<Option<&Array>> = g.iter().map(Some).collect();
        opt.step(p.arrays_mut(), &refs).unwrap();
        (p, opt)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (params, opt) = small_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &opt, &path).unwrap();
        let (p2, o2) = load_checkpoint(&path).unwrap();
        assert_eq!(params, p2);
        assert_eq!(opt.step_count(), o2.step_count());
        assert_eq!(opt.config(), o2.config());
        let (m1, v1) = opt.moments();
        let (m2, v2) = o2.moments();
        assert_eq!(m1, m2);
        assert_eq!(v1, v2);
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let (params, opt) = small_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &opt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::ChecksumMismatch { .. }) | Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let (params, opt) = small_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &opt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn wrong_magic_rejected() {
        let (params, opt) = small_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &opt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0..8].copy_from_slice(b"NOTMAGIC");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn wrong_version_rejected() {
        let (params, opt) = small_model();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &opt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // bump the version field and fix the checksum so only the
        // version check can fail
        bytes[8] = 9;
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }
}
