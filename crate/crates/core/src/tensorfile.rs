//! Tensor container shared by weight files (`PLWT`) and centroid files
//! (`PLCS`): magic, `u16` version, `u32` header length, a JSON header with a
//! tensor directory, then raw little-endian tensor data, row-major.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CONTAINER_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

fn default_dtype() -> DType {
    DType::F32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: u64,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
}

#[derive(Default)]
pub struct TensorWriter {
    entries: Vec<TensorEntry>,
    data: Vec<u8>,
}

impl TensorWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: &str, shape: &[usize], values: &[T], dtype: DType) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        self.entries.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.data.len() as u64,
            dtype,
        });
        for &v in values {
            match dtype {
                DType::F32 => self.data.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => self.data.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
        Ok(())
    }

    /// Writes the container; `extra` supplies the non-directory header keys.
    pub fn finish<W: Write>(self, magic: &[u8; 4], mut extra: Map<String, Value>, mut sink: W) -> Result<usize> {
        extra.insert("tensors".into(), serde_json::to_value(&self.entries)?);
        let json = serde_json::to_vec(&Value::Object(extra))?;
        let mut head = Vec::with_capacity(10 + json.len());
        head.extend_from_slice(magic);
        head.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        head.extend_from_slice(&(json.len() as u32).to_le_bytes());
        head.extend_from_slice(&json);
        sink.write_all(&head)?;
        sink.write_all(&self.data)?;
        Ok(head.len() + self.data.len())
    }
}

#[derive(Clone, Debug)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TensorFile {
    /// Header keys other than the tensor directory.
    pub header: Map<String, Value>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl TensorFile {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn tensor_as<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Vec<T>> {
        let t = self.tensor(name)?;
        if t.shape != shape {
            return Err(Error::Shape(format!("tensor {name}: shape {:?}, expected {shape:?}", t.shape)));
        }
        Ok(t.data.iter().map(|&x| T::lit(x)).collect())
    }
}

pub fn read_container<R: Read>(magic: &[u8; 4], mut source: R) -> Result<TensorFile> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < 10 {
        return Err(Error::Format("container shorter than its fixed header".into()));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[..4],
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + hlen {
        return Err(Error::Format("truncated container header".into()));
    }
    let header: Value = serde_json::from_slice(&bytes[10..10 + hlen])
        .map_err(|e| Error::Format(format!("container header: {e}")))?;
    let Value::Object(mut header) = header else {
        return Err(Error::Format("container header is not a JSON object".into()));
    };
    let dir = header
        .remove("tensors")
        .ok_or_else(|| Error::Format("container header has no tensor directory".into()))?;
    let entries: Vec<TensorEntry> =
        serde_json::from_value(dir).map_err(|e| Error::Format(format!("tensor directory: {e}")))?;
    let data = &bytes[10 + hlen..];
    let mut tensors = BTreeMap::new();
    for e in entries {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * e.dtype.width();
        if end > data.len() {
            return Err(Error::Format(format!("truncated tensor block {}", e.name)));
        }
        let raw = &data[start..end];
        let values: Vec<f64> = match e.dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        tensors.insert(e.name, Tensor {
            shape: e.shape,
            data: values,
        });
    }
    Ok(TensorFile { header, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_mixed_dtypes() {
        let mut w = TensorWriter::new();
        w.push("a", &[2, 2], &[1.0f64, 2.0, 3.0, 4.5], DType::F32).unwrap();
        w.push("b", &[3], &[0.1f64, 0.2, 0.3], DType::F64).unwrap();
        let mut extra = Map::new();
        extra.insert("kind".into(), Value::String("test".into()));
        let mut buf = Vec::new();
        w.finish(b"TEST", extra, &mut buf).unwrap();
        let f = read_container(b"TEST", &buf[..]).unwrap();
        assert_eq!(f.header["kind"], "test");
        assert_eq!(f.tensor("a").unwrap().data, vec![1.0, 2.0, 3.0, 4.5]);
        assert_eq!(f.tensor("b").unwrap().data, vec![0.1, 0.2, 0.3]);
        assert!(read_container(b"NOPE", &buf[..]).is_err());
        assert!(read_container(b"TEST", &buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut w = TensorWriter::new();
        assert!(w.push("a", &[2, 2], &[1.0f64], DType::F32).is_err());
    }
}
