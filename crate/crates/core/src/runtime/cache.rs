use std::ops::Range;

use super::weights::ModelDims;
use crate::error::{invalid, shape, Result};
use crate::scalar::Scalar;

/// Per-layer key and value store. Keys are stored after rotary encoding, all
/// heads concatenated (`d_model` entries per position).
#[derive(Clone, Debug, PartialEq)]
pub struct KVCache<T> {
    d_model: usize,
    len: usize,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

/// Keys and values of a contiguous span of positions, all layers.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanKv<T> {
    pub len: usize,
    /// `keys[layer]` holds `len * d_model` entries.
    pub keys: Vec<Vec<T>>,
    pub values: Vec<Vec<T>>,
}

/// Replacement of the cache entries of `span` by `donor`. Positions from
/// `onset` on are the first to read the replaced entries.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSpec<T> {
    pub span: Range<usize>,
    pub donor: SpanKv<T>,
    pub onset: usize,
}

impl<T: Scalar> PatchSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.span.start >= self.span.end {
            return Err(invalid(format!("empty patch span {:?}", self.span)));
        }
        if self.donor.len != self.span.len() {
            return Err(shape(format!(
                "donor span holds {} positions, target span {:?} holds {}",
                self.donor.len,
                self.span,
                self.span.len()
            )));
        }
        if self.onset < self.span.end {
            return Err(invalid(format!(
                "onset {} precedes the end of the patched span {}",
                self.onset, self.span.end
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> KVCache<T> {
    pub fn new(dims: &ModelDims) -> Self {
        Self {
            d_model: dims.d_model,
            len: 0,
            keys: vec![Vec::new(); dims.n_layers],
            values: vec![Vec::new(); dims.n_layers],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_layers(&self) -> usize {
        self.keys.len()
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn key(&self, layer: usize, pos: usize) -> &[T] {
        &self.keys[layer][pos * self.d_model..(pos + 1) * self.d_model]
    }

    pub fn value(&self, layer: usize, pos: usize) -> &[T] {
        &self.values[layer][pos * self.d_model..(pos + 1) * self.d_model]
    }

    /// Appends one position's entries at `layer`. The length counter advances
    /// via [`KVCache::commit`] once every layer has been written.
    pub(crate) fn push(&mut self, layer: usize, k: &[T], v: &[T]) {
        self.keys[layer].extend_from_slice(k);
        self.values[layer].extend_from_slice(v);
    }

    pub(crate) fn commit(&mut self, added: usize) {
        self.len += added;
        debug_assert!(self.keys.iter().all(|k| k.len() == self.len * self.d_model));
    }

    /// Drops every position from `len` on.
    pub fn truncate(&mut self, len: usize) {
        if len < self.len {
            for l in 0..self.keys.len() {
                self.keys[l].truncate(len * self.d_model);
                self.values[l].truncate(len * self.d_model);
            }
            self.len = len;
        }
    }

    pub fn span(&self, span: Range<usize>) -> Result<SpanKv<T>> {
        if span.start > span.end || span.end > self.len {
            return Err(invalid(format!("span {span:?} outside cache of length {}", self.len)));
        }
        let r = span.start * self.d_model..span.end * self.d_model;
        Ok(SpanKv {
            len: span.len(),
            keys: self.keys.iter().map(|k| k[r.clone()].to_vec()).collect(),
            values: self.values.iter().map(|v| v[r.clone()].to_vec()).collect(),
        })
    }

    /// Overwrites the span at every layer.
    pub fn write_span(&mut self, start: usize, donor: &SpanKv<T>) -> Result<()> {
        if start + donor.len > self.len {
            return Err(invalid(format!(
                "span {}..{} outside cache of length {}",
                start,
                start + donor.len,
                self.len
            )));
        }
        if donor.keys.len() != self.keys.len() || donor.values.len() != self.values.len() {
            return Err(shape(format!(
                "donor has {} layers, cache has {}",
                donor.keys.len(),
                self.keys.len()
            )));
        }
        let r = start * self.d_model..(start + donor.len) * self.d_model;
        for l in 0..self.keys.len() {
            if donor.keys[l].len() != r.len() || donor.values[l].len() != r.len() {
                return Err(shape(format!("donor layer {l} has the wrong number of entries")));
            }
            if donor.keys[l].iter().chain(&donor.values[l]).any(|x| !x.is_finite()) {
                return Err(invalid(format!("donor layer {l} has non-finite entries")));
            }
            self.keys[l][r.clone()].copy_from_slice(&donor.keys[l]);
            self.values[l][r.clone()].copy_from_slice(&donor.values[l]);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.keys.iter().chain(&self.values).all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Replaces the span's keys and values at all layers.
///
/// The cache must not yet hold any position at or after the onset: those
/// positions would already have read the original entries.
pub fn apply_patch<T: Scalar>(cache: &mut KVCache<T>, patch: &PatchSpec<T>) -> Result<()> {
    patch.validate()?;
    if cache.len() < patch.span.end {
        return Err(invalid(format!(
            "cache of length {} does not cover span {:?}",
            cache.len(),
            patch.span
        )));
    }
    if cache.len() > patch.onset {
        return Err(invalid(format!(
            "cache already holds {} positions, past onset {}",
            cache.len(),
            patch.onset
        )));
    }
    cache.write_span(patch.span.start, &patch.donor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(n: usize, offset: f64) -> KVCache<f64> {
        let dims = ModelDims {
            d_model: 2,
            n_heads: 1,
            d_head: 2,
            d_ff: 2,
            n_layers: 2,
            vocab: 4,
            max_context: 16,
            rope_base: 10_000.0,
            norm_eps: 1e-6,
        };
        let mut c = KVCache::new(&dims);
        for p in 0..n {
            for l in 0..2 {
                let x = offset + (p * 10 + l) as f64;
                c.push(l, &[x, x], &[-x, -x]);
            }
            c.commit(1);
        }
        c
    }

    #[test]
    fn span_round_trip() {
        let a = filled(5, 0.0);
        let b = filled(5, 100.0);
        let mut c = a.clone();
        let patch = PatchSpec {
            span: 1..3,
            donor: b.span(1..3).unwrap(),
            onset: 5,
        };
        apply_patch(&mut c, &patch).unwrap();
        assert_eq!(c.key(1, 2), b.key(1, 2));
        assert_eq!(c.value(0, 1), b.value(0, 1));
        assert_eq!(c.key(1, 3), a.key(1, 3));
        assert_eq!(c.key(0, 0), a.key(0, 0));
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = filled(5, 0.0);
        let mut c = a.clone();
        let patch = PatchSpec {
            span: 1..3,
            donor: a.span(1..4).unwrap(),
            onset: 5,
        };
        assert!(apply_patch(&mut c, &patch).is_err());
    }

    #[test]
    fn onset_must_follow_span_and_cache() {
        let a = filled(5, 0.0);
        let mut c = a.clone();
        let early = PatchSpec {
            span: 1..3,
            donor: a.span(1..3).unwrap(),
            onset: 2,
        };
        assert!(apply_patch(&mut c, &early).is_err());
        let stale = PatchSpec {
            span: 1..3,
            donor: a.span(1..3).unwrap(),
            onset: 4,
        };
        assert!(apply_patch(&mut c, &stale).is_err());
    }

    #[test]
    fn truncate_drops_tail() {
        let mut c = filled(5, 0.0);
        c.truncate(2);
        assert_eq!(c.len(), 2);
        assert!(c.span(0..3).is_err());
        assert_eq!(c, filled(2, 0.0));
    }
}
