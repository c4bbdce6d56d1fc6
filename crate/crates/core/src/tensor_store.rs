//! CKPT1 checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0..5    b"CKPT1"
//! 5       version (0x01)
//! 6..14   u64 index length N
//! 14..    N bytes of UTF-8 JSON: [{"name","shape","offset","nbytes"}, ...] sorted by name
//! ...     payload: concatenated f32 data, offsets relative to payload start
//! ```
//!
//! Writing is fully deterministic so two writes of the same map produce the same
//! bytes and the same digest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"CKPT1";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 14;

/// A shaped, row-major f32 array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Build a tensor, checking that `data` holds exactly `prod(shape)` elements.
    /// An empty shape denotes a scalar.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = element_count(&shape);
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = element_count(&shape);
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Named collection of tensors; the parameters of one checkpoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorMap {
    entries: BTreeMap<String, Tensor>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidTensor("tensor name is empty".into()));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidTensor(format!("duplicate tensor name `{name}`")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    /// Iterate entries in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn bit_eq(&self, other: &TensorMap) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }
}

/// Where a checkpoint landed and what its bytes hash to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    /// Parsed from an `epoch_<n>.ckpt` file name; `None` for derived files such as averages.
    pub epoch: Option<u64>,
    pub path: PathBuf,
    /// FNV-1a (64-bit) over the complete file bytes.
    pub content_digest: u64,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<u64>,
    offset: u64,
    nbytes: u64,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Canonical file name for the checkpoint saved after `epoch`.
pub fn epoch_file_name(epoch: u64) -> String {
    format!("epoch_{epoch}.ckpt")
}

/// Inverse of [`epoch_file_name`].
pub fn parse_epoch_file_name(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("epoch_")?.strip_suffix(".ckpt")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Serialize a map into CKPT1 bytes, rejecting non-finite values.
pub fn encode(tm: &TensorMap) -> Result<Vec<u8>> {
    let mut index = Vec::with_capacity(tm.len());
    let mut offset = 0u64;
    for (name, tensor) in tm.iter() {
        if let Some(i) = tensor.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::RejectedValue {
                name: name.to_owned(),
                index: i,
            });
        }
        let nbytes = 4 * tensor.len() as u64;
        index.push(IndexEntry {
            name: name.to_owned(),
            shape: tensor.shape.iter().map(|&d| d as u64).collect(),
            offset,
            nbytes,
        });
        offset += nbytes;
    }
    let index_json = serde_json::to_vec(&index).expect("index serializes");

    let mut out = Vec::with_capacity(HEADER_LEN + index_json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(index_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&index_json);
    for (_, tensor) in tm.iter() {
        for v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse CKPT1 bytes.
pub fn decode(bytes: &[u8]) -> Result<TensorMap> {
    let magic_len = bytes.len().min(MAGIC.len());
    if bytes[..magic_len] != MAGIC[..magic_len] {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            needed: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[5] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[5]));
    }
    let index_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let index_end = (HEADER_LEN as u64).saturating_add(index_len);
    if index_end > bytes.len() as u64 {
        return Err(Error::TruncatedFile {
            needed: usize::try_from(index_end).unwrap_or(usize::MAX),
            found: bytes.len(),
        });
    }
    let index_end = index_end as usize;
    let index: Vec<IndexEntry> = serde_json::from_slice(&bytes[HEADER_LEN..index_end])
        .map_err(|e| Error::IndexMismatch(format!("unreadable index: {e}")))?;

    let payload = &bytes[index_end..];
    let mut expected_offset = 0u64;
    for (i, entry) in index.iter().enumerate() {
        if i > 0 && index[i - 1].name >= entry.name {
            return Err(Error::IndexMismatch(format!(
                "entries not strictly sorted at `{}`",
                entry.name
            )));
        }
        let elements = entry
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::IndexMismatch(format!("shape of `{}` overflows", entry.name)))?;
        if elements.checked_mul(4) != Some(entry.nbytes) {
            return Err(Error::IndexMismatch(format!(
                "`{}` declares {} bytes for shape {:?}",
                entry.name, entry.nbytes, entry.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::IndexMismatch(format!(
                "`{}` at offset {}, expected {}",
                entry.name, entry.offset, expected_offset
            )));
        }
        expected_offset += entry.nbytes;
    }
    let payload_len = payload.len() as u64;
    if payload_len < expected_offset {
        return Err(Error::TruncatedFile {
            needed: index_end + expected_offset as usize,
            found: bytes.len(),
        });
    }
    if payload_len > expected_offset {
        return Err(Error::IndexMismatch(format!(
            "{} trailing payload bytes",
            payload_len - expected_offset
        )));
    }

    let mut tm = TensorMap::new();
    for entry in index {
        let start = entry.offset as usize;
        let end = start + entry.nbytes as usize;
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let shape = entry.shape.iter().map(|&d| d as usize).collect();
        tm.insert(entry.name, Tensor::new(shape, data)?)
            .map_err(|e| Error::IndexMismatch(e.to_string()))?;
    }
    Ok(tm)
}

pub fn write_checkpoint(tm: &TensorMap, path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let bytes = encode(tm)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(CheckpointMeta {
        epoch: epoch_of(path),
        path: path.to_path_buf(),
        content_digest: fnv1a64(&bytes),
    })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Digest an existing checkpoint file without decoding it.
pub fn checkpoint_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(CheckpointMeta {
        epoch: epoch_of(path),
        path: path.to_path_buf(),
        content_digest: fnv1a64(&bytes),
    })
}

fn epoch_of(path: &Path) -> Option<u64> {
    path.file_name()
        .and_then(|n| n.to_str())
        .and_then(parse_epoch_file_name)
}

/// Outcome of a structural comparison between checkpoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CompatibilityReport {
    Compatible,
    /// A name present in one map but absent from another.
    MissingName(String),
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

impl CompatibilityReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, CompatibilityReport::Compatible)
    }
}

impl fmt::Display for CompatibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompatibilityReport::Compatible => write!(f, "compatible"),
            CompatibilityReport::MissingName(n) => write!(f, "missing tensor `{n}`"),
            CompatibilityReport::ShapeMismatch {
                name,
                expected,
                found,
            } => write!(f, "`{name}` has shape {found:?}, expected {expected:?}"),
        }
    }
}

/// Check that every map has the same names and per-name shapes as the first.
/// Reports the first divergence in name order.
pub fn validate_compatible(tms: &[TensorMap]) -> CompatibilityReport {
    let Some((first, rest)) = tms.split_first() else {
        return CompatibilityReport::Compatible;
    };
    rest.iter()
        .map(|other| compare_structure(first, other))
        .find(|r| !r.is_ok())
        .unwrap_or(CompatibilityReport::Compatible)
}

pub(crate) fn compare_structure(reference: &TensorMap, other: &TensorMap) -> CompatibilityReport {
    for (name, tensor) in reference.iter() {
        match other.get(name) {
            None => return CompatibilityReport::MissingName(name.to_owned()),
            Some(t) if t.shape != tensor.shape => {
                return CompatibilityReport::ShapeMismatch {
                    name: name.to_owned(),
                    expected: tensor.shape.clone(),
                    found: t.shape.clone(),
                }
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = other.names().find(|n| reference.get(n).is_none()) {
        return CompatibilityReport::MissingName(extra.to_owned());
    }
    CompatibilityReport::Compatible
}
