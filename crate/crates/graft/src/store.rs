//! `GRAFTCK1` checkpoint container.
//!
//! Layout:
//!
//! ```text
//! [0..8)       magic "GRAFTCK1"
//! [8..16)      header length L, u64 little-endian
//! [16..16+L)   UTF-8 JSON header
//! [16+L..)     data section: concatenated little-endian f32 buffers
//! ```
//!
//! The header maps each tensor name to
//! `{"dtype":"f32","shape":[M,N],"role":"<role>","offsets":[begin,end]}`,
//! with offsets relative to the start of the data section, plus an optional
//! `"__metadata__"` string map. Buffers are written contiguously in tensor
//! order, so tensor order survives a round trip through the offsets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use graft_core::{Checkpoint, Matrix, TensorRole};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GRAFTCK1";
pub const METADATA_KEY: &str = "__metadata__";
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub dtype: String,
    pub shape: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    pub offsets: [u64; 2],
}

/// Parsed header: tensors in data-section order plus metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Header {
    pub tensors: Vec<(String, TensorHeader)>,
    pub metadata: BTreeMap<String, String>,
}

/// Serializes a checkpoint into container bytes. Output is deterministic.
pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut header = Map::new();
    if !ckpt.metadata().is_empty() {
        let meta: Map<String, Value> = ckpt
            .metadata()
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        header.insert(METADATA_KEY.to_string(), Value::Object(meta));
    }

    let mut data = Vec::new();
    for e in ckpt.entries() {
        if e.name == METADATA_KEY {
            return Err(Error::InvalidValue(format!(
                "tensor name `{METADATA_KEY}` is reserved"
            )));
        }
        if let Some(bad) = e.matrix.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "tensor `{}` holds non-finite value {bad}",
                e.name
            )));
        }
        let begin = data.len() as u64;
        for v in e.matrix.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        let info = TensorHeader {
            dtype: "f32".into(),
            shape: vec![e.matrix.rows() as u64, e.matrix.cols() as u64],
            role: Some(e.role.as_str().to_string()),
            offsets: [begin, data.len() as u64],
        };
        header.insert(e.name.clone(), serde_json::to_value(info)?);
    }

    let json = serde_json::to_vec(&Value::Object(header))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

/// Splits container bytes into the parsed header and the data section,
/// checking that the offsets tile the data section exactly.
pub fn parse_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
        return Err(Error::Corrupt("file ends inside the magic bytes".into()));
    }
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::Corrupt("file ends inside the header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| {
            Error::Corrupt(format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            ))
        })? as usize;
    let value: Value = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::Format(format!("header is not valid JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(Error::Format("header must be a JSON object".into()));
    };

    let mut header = Header::default();
    for (name, value) in map {
        if name == METADATA_KEY {
            header.metadata = serde_json::from_value(value)
                .map_err(|e| Error::Format(format!("bad {METADATA_KEY}: {e}")))?;
            continue;
        }
        let info: TensorHeader = serde_json::from_value(value)
            .map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        header.tensors.push((name, info));
    }
    header.tensors.sort_by_key(|(_, t)| t.offsets[0]);

    let data = &bytes[header_end..];
    let mut cursor = 0u64;
    for (name, info) in &header.tensors {
        if info.dtype != "f32" {
            return Err(Error::Format(format!(
                "tensor `{name}` has unsupported dtype `{}`",
                info.dtype
            )));
        }
        let [rows, cols] = info.shape[..] else {
            return Err(Error::Format(format!(
                "tensor `{name}` must be 2-D, got shape {:?}",
                info.shape
            )));
        };
        if rows == 0 || cols == 0 {
            return Err(Error::Format(format!("tensor `{name}` has an empty shape")));
        }
        let [begin, end] = info.offsets;
        if begin != cursor {
            return Err(Error::Corrupt(format!(
                "tensor `{name}` starts at {begin}, expected {cursor} (overlap or gap)"
            )));
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Corrupt(format!("tensor `{name}` is too large")))?;
        if end < begin || end - begin != expected {
            return Err(Error::Corrupt(format!(
                "tensor `{name}` spans [{begin}, {end}) but shape {rows}x{cols} needs {expected} bytes"
            )));
        }
        cursor = end;
    }
    if cursor != data.len() as u64 {
        return Err(Error::Corrupt(format!(
            "header describes {cursor} data bytes, file holds {}",
            data.len()
        )));
    }
    Ok((header, data))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let (header, data) = parse_header(bytes)?;
    let mut ckpt = Checkpoint::new();
    for (name, info) in header.tensors {
        let role = match info.role.as_deref() {
            None => TensorRole::Other,
            Some(r) => r
                .parse()
                .map_err(|_| Error::Format(format!("tensor `{name}` has unknown role `{r}`")))?,
        };
        let [begin, end] = info.offsets.map(|o| o as usize);
        let values: Vec<f32> = data[begin..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "tensor `{name}` holds non-finite value at index {pos}"
            )));
        }
        let matrix = Matrix::new(info.shape[0] as usize, info.shape[1] as usize, values)?;
        ckpt.insert(name, matrix, role)?;
    }
    *ckpt.metadata_mut() = header.metadata;
    Ok(ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes `ckpt` to `path`. Nothing is written if encoding fails.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: impl AsRef<Path>) -> Result<Header> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_header(&bytes).map(|(h, _)| h)
}
