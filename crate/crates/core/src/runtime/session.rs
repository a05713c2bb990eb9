use super::cache::KVCache;
use super::forward::{forward, AttentionFilter, DeltaRecord, ForwardOutput, Hooks, SteeringSpec};
use super::weights::ModelWeights;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// A decoding session: borrowed weights, an owned cache and the hooks that
/// apply to every call.
#[derive(Clone, Debug)]
pub struct Session<'w, T> {
    weights: &'w ModelWeights<T>,
    cache: KVCache<T>,
    last_logits: Option<Vec<T>>,
    taps: Vec<usize>,
    steering: Option<SteeringSpec<T>>,
    filter: Option<AttentionFilter<T>>,
    record_deltas: bool,
    deltas: Vec<DeltaRecord<T>>,
}

/// A restorable point in a session's history.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    len: usize,
    last_logits: Option<Vec<T>>,
    deltas: usize,
}

impl<'w, T: Scalar> Session<'w, T> {
    pub fn new(weights: &'w ModelWeights<T>) -> Self {
        Self {
            weights,
            cache: KVCache::new(&weights.dims),
            last_logits: None,
            taps: Vec::new(),
            steering: None,
            filter: None,
            record_deltas: false,
            deltas: Vec::new(),
        }
    }

    pub fn weights(&self) -> &'w ModelWeights<T> {
        self.weights
    }

    pub fn cache(&self) -> &KVCache<T> {
        &self.cache
    }

    /// Direct cache access, e.g. for [`super::apply_patch`]. Logits cached by
    /// the session are not recomputed.
    pub fn cache_mut(&mut self) -> &mut KVCache<T> {
        &mut self.cache
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.weights.dims.max_context - self.cache.len()
    }

    pub fn set_taps(&mut self, taps: Vec<usize>) {
        self.taps = taps;
    }

    pub fn set_steering(&mut self, steering: Option<SteeringSpec<T>>) -> Result<()> {
        if let Some(s) = &steering {
            s.validate(self.weights.dims.d_model, self.weights.dims.n_layers)?;
        }
        self.steering = steering;
        Ok(())
    }

    pub fn steering(&self) -> Option<&SteeringSpec<T>> {
        self.steering.as_ref()
    }

    pub fn set_filter(&mut self, filter: Option<AttentionFilter<T>>, record_deltas: bool) -> Result<()> {
        if let Some(f) = &filter {
            f.validate(self.weights.dims.d_model, self.weights.dims.n_layers)?;
        }
        self.filter = filter;
        self.record_deltas = record_deltas;
        Ok(())
    }

    /// Deltas recorded by the attention filter so far.
    pub fn deltas(&self) -> &[DeltaRecord<T>] {
        &self.deltas
    }

    /// Runs `tokens` after the current context.
    pub fn feed(&mut self, tokens: &[u32]) -> Result<ForwardOutput<T>> {
        if tokens.is_empty() {
            return Err(invalid("no tokens to feed"));
        }
        let hooks = Hooks {
            taps: &self.taps,
            steering: self.steering.as_ref(),
            filter: self.filter.as_ref(),
            record_deltas: self.record_deltas,
        };
        let mut out = forward(self.weights, tokens, &mut self.cache, &hooks)?;
        self.last_logits = out.logits.last().cloned();
        self.deltas.append(&mut out.deltas);
        Ok(out)
    }

    /// Logits predicted at the last fed position.
    pub fn next_logits(&self) -> Option<&[T]> {
        self.last_logits.as_deref()
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            len: self.cache.len(),
            last_logits: self.last_logits.clone(),
            deltas: self.deltas.len(),
        }
    }

    /// Rewinds to a checkpoint taken earlier in this session.
    pub fn restore(&mut self, cp: &Checkpoint<T>) -> Result<()> {
        if cp.len > self.cache.len() {
            return Err(invalid(format!(
                "checkpoint at length {} is ahead of the session ({})",
                cp.len,
                self.cache.len()
            )));
        }
        self.cache.truncate(cp.len);
        self.last_logits = cp.last_logits.clone();
        self.deltas.truncate(cp.deltas);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.cache.truncate(0);
        self.last_logits = None;
        self.deltas.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::weights::ModelDims;

    #[test]
    fn restore_rewinds_cache_and_logits() {
        let dims = ModelDims {
            vocab: 20,
            ..ModelDims::tiny(20)
        };
        let w = ModelWeights::<f64>::random(dims, 5).unwrap();
        let mut s = Session::new(&w);
        s.feed(&[1, 2, 3]).unwrap();
        let cp = s.checkpoint();
        let cache = s.cache().clone();
        let logits = s.next_logits().unwrap().to_vec();
        s.feed(&[7, 8]).unwrap();
        assert_ne!(s.next_logits().unwrap(), &logits[..]);
        s.restore(&cp).unwrap();
        assert_eq!(s.cache(), &cache);
        assert_eq!(s.next_logits().unwrap(), &logits[..]);
        assert!(s.feed(&[]).is_err());
    }
}
