//! Reading and writing of safetensors-compatible tensor archives.
//!
//! Layout: an 8-byte little-endian header length `H`, then `H` bytes of
//! UTF-8 JSON mapping each tensor name to its dtype, shape and data span,
//! then the concatenated little-endian payloads. Spans are relative to the
//! end of the header and must tile the data region exactly.
//!
//! Payloads are kept as raw bytes; [`NamedTensor::to_f32`] widens half
//! precision tensors when numerical work needs them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use half::{bf16, f16};
use indexmap::IndexMap;
use serde_json::{Map, Value};

use crate::error::{OatsError, Result};

const METADATA_KEY: &str = "__metadata__";
const HEADER_ALIGN: usize = 8;

/// Scalar element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F16,
    BF16,
    /// Index tensors of compressed artifacts.
    I32,
    I64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F16 | Dtype::BF16 => 2,
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::I64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
            Dtype::I32 => "I32",
            Dtype::I64 => "I64",
        }
    }

    pub fn parse(s: &str) -> Option<Dtype> {
        Some(match s {
            "F32" => Dtype::F32,
            "F16" => Dtype::F16,
            "BF16" => Dtype::BF16,
            "I32" => Dtype::I32,
            "I64" => Dtype::I64,
            _ => return None,
        })
    }

    pub fn is_float(self) -> bool {
        matches!(self, Dtype::F32 | Dtype::F16 | Dtype::BF16)
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named, shaped, row-major tensor holding its little-endian payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    data: Vec<u8>,
}

impl NamedTensor {
    /// Builds a tensor from raw little-endian bytes.
    pub fn from_bytes(
        name: impl Into<String>,
        dtype: Dtype,
        shape: Vec<usize>,
        data: Vec<u8>,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(OatsError::Config("tensor name must be non-empty".into()));
        }
        let expected = numel(&shape) * dtype.size();
        if data.len() != expected {
            return Err(OatsError::Shape(format!(
                "tensor `{name}`: shape {shape:?} of {dtype} needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self {
            name,
            dtype,
            shape,
            data,
        })
    }

    pub fn from_f32(name: impl Into<String>, shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::from_bytes(name, Dtype::F32, shape, data)
    }

    /// Stores `values` in `dtype`, narrowing with round-to-nearest-even when
    /// `dtype` is a half-precision type.
    pub fn from_f32_as(
        name: impl Into<String>,
        dtype: Dtype,
        shape: Vec<usize>,
        values: &[f32],
    ) -> Result<Self> {
        let data: Vec<u8> = match dtype {
            Dtype::F32 => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
            Dtype::F16 => values
                .iter()
                .flat_map(|v| f16::from_f32(*v).to_le_bytes())
                .collect(),
            Dtype::BF16 => values
                .iter()
                .flat_map(|v| bf16::from_f32(*v).to_le_bytes())
                .collect(),
            Dtype::I32 | Dtype::I64 => {
                return Err(OatsError::Config(format!(
                    "cannot store floating values as {dtype}"
                )))
            }
        };
        Self::from_bytes(name, dtype, shape, data)
    }

    pub fn from_i64(name: impl Into<String>, shape: Vec<usize>, values: &[i64]) -> Result<Self> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::from_bytes(name, Dtype::I64, shape, data)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    /// Value-preserving widening to `F32`. An `F32` tensor is returned as is.
    pub fn to_f32(&self) -> Result<NamedTensor> {
        if self.dtype == Dtype::F32 {
            return Ok(self.clone());
        }
        let values = self.f32_values()?;
        Self::from_f32(self.name.clone(), self.shape.clone(), &values)
    }

    /// Decodes the payload of a floating tensor into `f32` scalars.
    pub fn f32_values(&self) -> Result<Vec<f32>> {
        let out = match self.dtype {
            Dtype::F32 => self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F16 => self
                .data
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            Dtype::BF16 => self
                .data
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
            Dtype::I32 | Dtype::I64 => {
                return Err(OatsError::Dtype {
                    name: self.name.clone(),
                    expected: "F32|F16|BF16",
                    found: self.dtype.as_str(),
                })
            }
        };
        Ok(out)
    }

    /// Decodes an integer tensor into `i64` scalars.
    pub fn i64_values(&self) -> Result<Vec<i64>> {
        match self.dtype {
            Dtype::I64 => Ok(self
                .data
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()),
            Dtype::I32 => Ok(self
                .data
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64)
                .collect()),
            other => Err(OatsError::Dtype {
                name: self.name.clone(),
                expected: "I32|I64",
                found: other.as_str(),
            }),
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Ordered collection of tensors plus free-form string metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TensorArchive {
    pub tensors: IndexMap<String, NamedTensor>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor; names must be unique.
    pub fn insert(&mut self, tensor: NamedTensor) -> Result<()> {
        if self.tensors.contains_key(&tensor.name) {
            return Err(OatsError::DuplicateName(tensor.name));
        }
        self.tensors.insert(tensor.name.clone(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors.get(name).ok_or_else(|| OatsError::MissingTensor {
            name: name.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Serializes the archive. Identical archives always produce identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Map::new();
        if !self.metadata.is_empty() {
            let meta: Map<String, Value> = self
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            header.insert(METADATA_KEY.to_string(), Value::Object(meta));
        }
        let mut offset = 0usize;
        for t in self.tensors.values() {
            let end = offset + t.data.len();
            let mut entry = Map::new();
            entry.insert("dtype".into(), Value::String(t.dtype.as_str().into()));
            entry.insert("shape".into(), Value::from(t.shape.clone()));
            entry.insert("data_offsets".into(), Value::from(vec![offset, end]));
            header.insert(t.name.clone(), Value::Object(entry));
            offset = end;
        }
        let mut header_bytes =
            serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        while !header_bytes.len().is_multiple_of(HEADER_ALIGN) {
            header_bytes.push(b' ');
        }

        let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for t in self.tensors.values() {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Parses an archive from its serialized form.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 8 {
            return Err(OatsError::archive(
                buf.len() as u64,
                "truncated file: missing 8-byte header length",
            ));
        }
        let header_len = u64::from_le_bytes(buf[..8].try_into().expect("8 bytes"));
        let data_start = 8u64.checked_add(header_len).filter(|&e| e <= buf.len() as u64);
        let Some(data_start) = data_start else {
            return Err(OatsError::archive(
                buf.len() as u64,
                format!("truncated file: header declares {header_len} bytes"),
            ));
        };
        let data_start = data_start as usize;
        let header_str = std::str::from_utf8(&buf[8..data_start]).map_err(|e| {
            OatsError::archive(8 + e.valid_up_to() as u64, "header is not valid UTF-8")
        })?;
        let header: Value = serde_json::from_str(header_str).map_err(|e| {
            OatsError::archive(8, format!("malformed header JSON: {e}"))
        })?;
        let Value::Object(header) = header else {
            return Err(OatsError::archive(8, "header is not a JSON object"));
        };

        let data = &buf[data_start..];
        let mut archive = TensorArchive::new();
        let mut spans: Vec<(usize, usize, String)> = Vec::new();

        for (name, entry) in header {
            if name == METADATA_KEY {
                let Value::Object(meta) = entry else {
                    return Err(OatsError::archive(8, "__metadata__ must be an object"));
                };
                for (k, v) in meta {
                    let Value::String(s) = v else {
                        return Err(OatsError::archive(
                            8,
                            format!("metadata value for `{k}` is not a string"),
                        ));
                    };
                    archive.metadata.insert(k, s);
                }
                continue;
            }
            let (dtype, shape, begin, end) = parse_entry(&name, &entry)?;
            let abs = |o: usize| data_start as u64 + o as u64;
            if begin > end {
                return Err(OatsError::archive(
                    abs(begin),
                    format!("tensor `{name}`: data_offsets [{begin}, {end}] are reversed"),
                ));
            }
            if end > data.len() {
                return Err(OatsError::archive(
                    abs(end),
                    format!(
                        "tensor `{name}`: span [{begin}, {end}] exceeds data region of {} bytes",
                        data.len()
                    ),
                ));
            }
            let expected = shape
                .iter()
                .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| OatsError::archive(8, format!("tensor `{name}`: shape overflows")))?;
            if end - begin != expected {
                return Err(OatsError::archive(
                    abs(begin),
                    format!(
                        "tensor `{name}`: span holds {} bytes but shape {shape:?} of {dtype} needs {expected}",
                        end - begin
                    ),
                ));
            }
            spans.push((begin, end, name.clone()));
            let tensor = NamedTensor {
                name: name.clone(),
                dtype,
                shape,
                data: data[begin..end].to_vec(),
            };
            archive.insert(tensor)?;
        }

        // Spans must tile [0, data.len()) with no gaps and no overlaps.
        spans.sort();
        let mut cursor = 0usize;
        for (begin, end, name) in &spans {
            let at = data_start as u64 + *begin as u64;
            if *begin < cursor {
                return Err(OatsError::archive(
                    at,
                    format!("tensor `{name}` overlaps the previous tensor"),
                ));
            }
            if *begin > cursor {
                return Err(OatsError::archive(
                    data_start as u64 + cursor as u64,
                    format!("gap of {} bytes before tensor `{name}`", begin - cursor),
                ));
            }
            cursor = *end;
        }
        if cursor != data.len() {
            return Err(OatsError::archive(
                data_start as u64 + cursor as u64,
                format!("{} trailing bytes not covered by any tensor", data.len() - cursor),
            ));
        }
        Ok(archive)
    }
}

fn parse_entry(name: &str, entry: &Value) -> Result<(Dtype, Vec<usize>, usize, usize)> {
    let bad = |msg: String| OatsError::archive(8, format!("tensor `{name}`: {msg}"));
    let obj = entry
        .as_object()
        .ok_or_else(|| bad("entry is not an object".into()))?;
    let dtype_str = obj
        .get("dtype")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing dtype".into()))?;
    let dtype =
        Dtype::parse(dtype_str).ok_or_else(|| bad(format!("unsupported dtype `{dtype_str}`")))?;
    let shape = obj
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing shape".into()))?
        .iter()
        .map(|v| v.as_u64().map(|d| d as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad("shape entries must be non-negative integers".into()))?;
    let offsets = obj
        .get("data_offsets")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2)
        .ok_or_else(|| bad("data_offsets must be a [begin, end] pair".into()))?;
    let begin = offsets[0]
        .as_u64()
        .ok_or_else(|| bad("data_offsets must be integers".into()))? as usize;
    let end = offsets[1]
        .as_u64()
        .ok_or_else(|| bad("data_offsets must be integers".into()))? as usize;
    Ok((dtype, shape, begin, end))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<TensorArchive> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| OatsError::io(path, e))?;
    TensorArchive::from_bytes(&buf)
}

pub fn write_archive(archive: &TensorArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, archive.to_bytes()).map_err(|e| OatsError::io(path, e))
}
