//! The `PLTR` trace container.
//!
//! ```text
//! "PLTR" | u16 version | u32 header_len | header JSON
//! records:  u32 position, u32 token_id, u8 role, u8 origin,
//!           f64 surprise, f64 incoming_entropy, f64 predicted_entropy,
//!           k x (u32 token_id, f32 logprob)
//! hidden:   u32 position, u16 layer, d_model x f32     (ordered by position, layer)
//! ```
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HiddenRecord, Origin, Role, TokenRecord, Trace, TraceMeta};
use crate::error::{Error, Result};

pub const TRACE_MAGIC: &[u8; 4] = b"PLTR";
pub const TRACE_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: TraceMeta,
    k: u32,
    record_count: u64,
}

fn record_width(k: usize) -> usize {
    4 + 4 + 1 + 1 + 3 * 8 + k * 8
}

fn hidden_width(d_model: usize) -> usize {
    4 + 2 + 4 * d_model
}

/// Serializes a validated trace. Returns the number of bytes written.
pub fn write_trace<W: Write>(trace: &Trace, mut sink: W) -> Result<usize> {
    trace.validate()?;
    let k = trace.topk_len();
    let header = Header {
        meta: trace.meta.clone(),
        k: k as u32,
        record_count: trace.tokens.len() as u64,
    };
    let json = serde_json::to_vec(&header)?;
    let d_model = trace.meta.d_model as usize;
    let mut buf = Vec::with_capacity(
        10 + json.len() + trace.tokens.len() * record_width(k) + trace.hidden.len() * hidden_width(d_model),
    );
    buf.extend_from_slice(TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for r in &trace.tokens {
        buf.extend_from_slice(&r.position.to_le_bytes());
        buf.extend_from_slice(&r.token_id.to_le_bytes());
        buf.push(r.role.code());
        buf.push(r.origin.code());
        buf.extend_from_slice(&r.surprise.to_le_bytes());
        buf.extend_from_slice(&r.incoming_entropy.to_le_bytes());
        buf.extend_from_slice(&r.predicted_entropy.to_le_bytes());
        for &(id, lp) in &r.topk {
            buf.extend_from_slice(&id.to_le_bytes());
            buf.extend_from_slice(&lp.to_le_bytes());
        }
    }
    for h in &trace.hidden {
        buf.extend_from_slice(&h.position.to_le_bytes());
        buf.extend_from_slice(&h.layer.to_le_bytes());
        for x in &h.vector {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Format(format!("truncated {what} at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }
}

/// Parses and validates a trace container.
pub fn read_trace<R: Read>(mut source: R) -> Result<Trace> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, at: 0 };
    let magic = c.take(4, "magic")?;
    if magic != TRACE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"PLTR\"")));
    }
    let version = c.u16("version")?;
    if version != TRACE_VERSION {
        return Err(Error::Format(format!("unsupported trace version {version}")));
    }
    let hlen = c.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(c.take(hlen, "header")?)
        .map_err(|e| Error::Format(format!("trace header: {e}")))?;
    let k = header.k as usize;
    let n = header.record_count as usize;
    let mut tokens = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let what = format!("token record #{i}");
        let position = c.u32(&what)?;
        let token_id = c.u32(&what)?;
        let role_code = c.u8(&what)?;
        let origin_code = c.u8(&what)?;
        let role = Role::from_code(role_code)
            .ok_or_else(|| Error::Format(format!("{what}: unknown role code {role_code}")))?;
        let origin = Origin::from_code(origin_code)
            .ok_or_else(|| Error::Format(format!("{what}: unknown origin code {origin_code}")))?;
        let surprise = c.f64(&what)?;
        let incoming_entropy = c.f64(&what)?;
        let predicted_entropy = c.f64(&what)?;
        let mut topk = Vec::with_capacity(k);
        for _ in 0..k {
            let id = c.u32(&what)?;
            let lp = c.f32(&what)?;
            topk.push((id, lp));
        }
        tokens.push(TokenRecord {
            position,
            token_id,
            role,
            surprise,
            incoming_entropy,
            predicted_entropy,
            origin,
            topk,
        });
    }
    let d_model = header.meta.d_model as usize;
    let width = hidden_width(d_model);
    if c.remaining() % width != 0 {
        return Err(Error::Format(format!(
            "truncated tensor block: {} trailing bytes is not a multiple of the {width}-byte hidden block",
            c.remaining()
        )));
    }
    let mut hidden = Vec::with_capacity(c.remaining() / width);
    while c.remaining() > 0 {
        let position = c.u32("hidden block")?;
        let layer = c.u16("hidden block")?;
        let mut vector = Vec::with_capacity(d_model);
        for _ in 0..d_model {
            vector.push(c.f32("hidden block")?);
        }
        hidden.push(HiddenRecord {
            position,
            layer,
            vector,
        });
    }
    let trace = Trace {
        meta: header.meta,
        tokens,
        hidden,
    };
    trace.validate()?;
    Ok(trace)
}

pub fn write_trace_file(trace: &Trace, path: impl AsRef<Path>) -> Result<usize> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = write_trace(trace, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<Trace> {
    read_trace(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::test_support::*;

    #[test]
    fn minimal_round_trip() {
        let t = trace_with(vec![record(0, Role::Assistant, 0.0, 0.0, 0.3)]);
        let mut buf = Vec::new();
        let n = write_trace(&t, &mut buf).unwrap();
        assert_eq!(n, buf.len());
        assert_eq!(read_trace(&buf[..]).unwrap(), t);
    }

    #[test]
    fn hidden_blocks_sized_by_d_model() {
        let mut t = trace_with((0..3).map(|p| record(p, Role::User, 0.0, 0.0, 1.0)).collect());
        t.meta.captured_layers = vec![1];
        t.hidden = (0..3)
            .map(|p| HiddenRecord {
                position: p,
                layer: 1,
                vector: vec![p as f32; 4],
            })
            .collect();
        let mut with = Vec::new();
        write_trace(&t, &mut with).unwrap();
        let mut without_t = t.clone();
        without_t.hidden.clear();
        let mut without = Vec::new();
        write_trace(&without_t, &mut without).unwrap();
        assert_eq!(with.len() - without.len(), 3 * (4 + 2 + 4 * 4));
    }

    #[test]
    fn corrupted_magic_rejected() {
        let t = trace_with(vec![record(0, Role::User, 0.0, 0.0, 0.3)]);
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_trace(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let t = trace_with(vec![record(0, Role::User, 0.0, 0.0, 0.3)]);
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        buf[4] = 2;
        assert!(read_trace(&buf[..]).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn truncated_hidden_block_rejected() {
        let mut t = trace_with(vec![record(0, Role::User, 0.0, 0.0, 0.3)]);
        t.hidden.push(HiddenRecord {
            position: 0,
            layer: 1,
            vector: vec![1.0; 4],
        });
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        buf.pop();
        let err = read_trace(&buf[..]).unwrap_err().to_string();
        assert!(err.contains("truncated tensor block"), "{err}");
    }

    #[test]
    fn invalid_record_rejected_on_load() {
        let t = trace_with(vec![record(0, Role::User, 0.0, 0.0, 0.3), record(4, Role::User, 0.5, 1.0, 0.3)]);
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        // patch the second record's surprise to -0.1
        let hlen = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        let off = 10 + hlen + record_width(2) + 10;
        buf[off..off + 8].copy_from_slice(&(-0.1f64).to_le_bytes());
        let err = read_trace(&buf[..]).unwrap_err().to_string();
        assert!(err.contains("position 4") && err.contains("surprise"), "{err}");
    }

    #[test]
    fn writer_rejects_invalid_trace() {
        let t = trace_with(vec![record(0, Role::User, -1.0, 0.0, 0.3)]);
        assert!(write_trace(&t, Vec::new()).is_err());
    }
}
