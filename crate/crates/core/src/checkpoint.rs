//! Single-file tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! [u64 header length N][N bytes UTF-8 JSON header][payload]
//! ```
//!
//! The header maps each tensor name to
//! `{"dtype": "F32"|"F16", "shape": [..], "data_offsets": [begin, end]}` with
//! offsets relative to the start of the payload. An optional `__metadata__`
//! entry holds a string → string map.
//!
//! Writes are canonical: header keys sorted, compact JSON, F32 payloads laid
//! out back to back in header order with no padding. The same map always
//! produces the same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{element_count, Tensor, TensorMap, METADATA_KEY};

/// Header metadata (`__metadata__`).
pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    fn parse(name: &str, s: &str) -> Result<Self> {
        match s {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            other => Err(Error::UnsupportedDtype {
                name: name.to_owned(),
                dtype: other.to_owned(),
            }),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

#[derive(Serialize)]
#[serde(untagged)]
enum HeaderValue<'a> {
    Metadata(&'a Metadata),
    Tensor(RawEntry),
}

/// Declared layout of one tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub begin: usize,
    pub end: usize,
}

/// Parsed and bounds-checked header.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub metadata: Metadata,
    /// Tensors in name order.
    pub tensors: Vec<TensorInfo>,
    /// Byte offset of the payload within the file.
    pub payload_start: usize,
}

/// Result of [`validate_header`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HeaderSummary {
    pub tensor_count: usize,
    pub total_bytes: usize,
    pub dtypes: BTreeSet<Dtype>,
    pub metadata: Metadata,
}

/// Parses the header from the first bytes of a container and checks every
/// declared range against `payload_len`.
fn parse_header(prefix: &[u8], file_len: u64) -> Result<Header> {
    if file_len < 8 || prefix.len() < 8 {
        return Err(Error::MalformedHeader(format!(
            "file is {file_len} bytes, shorter than the 8-byte length prefix"
        )));
    }
    let n = u64::from_le_bytes(prefix[..8].try_into().unwrap());
    if n > file_len - 8 {
        return Err(Error::MalformedHeader(format!(
            "header length {n} exceeds file size {file_len}"
        )));
    }
    let n = n as usize;
    let json = prefix
        .get(8..8 + n)
        .ok_or_else(|| Error::MalformedHeader("header truncated".into()))?;
    let json = std::str::from_utf8(json)
        .map_err(|e| Error::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(json)
        .map_err(|e| Error::MalformedHeader(format!("invalid header JSON: {e}")))?;

    let payload_start = 8 + n;
    let payload_len = (file_len - payload_start as u64) as usize;
    let mut metadata = Metadata::new();
    let mut tensors = Vec::with_capacity(raw.len());
    for (name, value) in raw {
        if name == METADATA_KEY {
            metadata = serde_json::from_value(value)
                .map_err(|e| Error::MalformedHeader(format!("bad {METADATA_KEY}: {e}")))?;
            continue;
        }
        if name.is_empty() {
            return Err(Error::MalformedHeader("empty tensor name".into()));
        }
        let entry: RawEntry = serde_json::from_value(value)
            .map_err(|e| Error::MalformedHeader(format!("entry {name:?}: {e}")))?;
        let dtype = Dtype::parse(&name, &entry.dtype)?;
        let [begin, end] = entry.data_offsets;
        if begin > end {
            return Err(Error::MalformedHeader(format!(
                "entry {name:?}: data_offsets [{begin}, {end}] are reversed"
            )));
        }
        let expected = element_count(&entry.shape)
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::MalformedHeader(format!("entry {name:?}: shape overflows")))?;
        if end - begin != expected {
            return Err(Error::shape(
                name,
                format!(
                    "shape {:?} of {dtype:?} needs {expected} bytes, offsets span {}",
                    entry.shape,
                    end - begin
                ),
            ));
        }
        if end > payload_len {
            return Err(Error::shape(
                name,
                format!("data ends at {end} but payload holds {payload_len} bytes"),
            ));
        }
        tensors.push(TensorInfo {
            name,
            dtype,
            shape: entry.shape,
            begin,
            end,
        });
    }

    let mut spans: Vec<(usize, usize, &str)> = tensors
        .iter()
        .filter(|t| t.end > t.begin)
        .map(|t| (t.begin, t.end, t.name.as_str()))
        .collect();
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::MalformedHeader(format!(
                "data of {:?} overlaps {:?}",
                w[1].2, w[0].2
            )));
        }
    }

    Ok(Header {
        metadata,
        tensors,
        payload_start,
    })
}

fn read_prefix(path: &Path) -> Result<(Vec<u8>, u64)> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut len_buf = [0u8; 8];
    if file_len < 8 {
        return Ok((Vec::new(), file_len));
    }
    file.read_exact(&mut len_buf)
        .map_err(|e| Error::io(path, e))?;
    let n = u64::from_le_bytes(len_buf);
    if n > file_len - 8 {
        return Ok((len_buf.to_vec(), file_len));
    }
    let mut prefix = vec![0u8; 8 + n as usize];
    prefix[..8].copy_from_slice(&len_buf);
    file.read_exact(&mut prefix[8..])
        .map_err(|e| Error::io(path, e))?;
    Ok((prefix, file_len))
}

/// Reads and checks only the header; payloads are not loaded.
pub fn read_header(path: impl AsRef<Path>) -> Result<Header> {
    let path = path.as_ref();
    let (prefix, file_len) = read_prefix(path)?;
    parse_header(&prefix, file_len)
}

pub fn validate_header(path: impl AsRef<Path>) -> Result<HeaderSummary> {
    let header = read_header(path)?;
    Ok(HeaderSummary {
        tensor_count: header.tensors.len(),
        total_bytes: header.tensors.iter().map(|t| t.end - t.begin).sum(),
        dtypes: header.tensors.iter().map(|t| t.dtype).collect(),
        metadata: header.metadata,
    })
}

/// Decodes a container held in memory.
pub fn decode(bytes: &[u8]) -> Result<(TensorMap, Metadata)> {
    let header = parse_header(bytes, bytes.len() as u64)?;
    let payload = &bytes[header.payload_start..];
    let mut entries = BTreeMap::new();
    for info in header.tensors {
        let raw = &payload[info.begin..info.end];
        let data: Vec<f32> = match info.dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F16 => raw
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
        };
        let tensor = Tensor::new(info.shape, data).map_err(|e| match e {
            Error::ShapeMismatch { detail, .. } => Error::shape(info.name.clone(), detail),
            other => other,
        })?;
        entries.insert(info.name, tensor);
    }
    Ok((TensorMap::from_entries(entries), header.metadata))
}

/// Canonical encoding of `map` with optional header metadata.
pub fn encode(map: &TensorMap, metadata: &Metadata) -> Vec<u8> {
    let mut header: BTreeMap<&str, HeaderValue<'_>> = BTreeMap::new();
    if !metadata.is_empty() {
        header.insert(METADATA_KEY, HeaderValue::Metadata(metadata));
    }
    let mut offset = 0usize;
    for (name, t) in map {
        let end = offset + t.len() * Dtype::F32.size();
        header.insert(
            name,
            HeaderValue::Tensor(RawEntry {
                dtype: "F32".to_owned(),
                shape: t.shape().to_vec(),
                data_offsets: [offset, end],
            }),
        );
        offset = end;
    }
    let json = serde_json::to_vec(&header).expect("header serialization is infallible");

    let mut out = Vec::with_capacity(8 + json.len() + offset);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in map {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<TensorMap> {
    read_checkpoint_with_metadata(path).map(|(m, _)| m)
}

pub fn read_checkpoint_with_metadata(path: impl AsRef<Path>) -> Result<(TensorMap, Metadata)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_checkpoint(map: &TensorMap, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint_with_metadata(map, &Metadata::new(), path)
}

pub fn write_checkpoint_with_metadata(
    map: &TensorMap,
    metadata: &Metadata,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(map, metadata))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
