use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::cache::{KVCache, SpanKv};
use super::weights::ModelWeights;
use crate::error::{invalid, shape, Error, Result};
use crate::linalg::{axpy, dot};
use crate::scalar::Scalar;

/// Which positions a steering vector is added at.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSelector {
    /// Every position `>= p`.
    From(usize),
    Explicit(Vec<usize>),
    /// The last position of each forward call.
    LastOnly,
}

/// Adds `coefficient * vector` to the residual stream after the block output
/// of every layer in `lo..=hi`, at the selected positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeringSpec<T> {
    pub lo: usize,
    pub hi: usize,
    pub positions: PositionSelector,
    pub vector: Vec<T>,
    pub coefficient: T,
}

impl<T: Scalar> SteeringSpec<T> {
    pub fn validate(&self, d_model: usize, n_layers: usize) -> Result<()> {
        if self.lo > self.hi || self.hi >= n_layers {
            return Err(invalid(format!(
                "steering layers {}..={} invalid for {n_layers} layers",
                self.lo, self.hi
            )));
        }
        if self.vector.len() != d_model {
            return Err(shape(format!("steering vector has length {}, d_model is {d_model}", self.vector.len())));
        }
        if self.vector.iter().any(|x| !x.is_finite()) || !self.coefficient.is_finite() {
            return Err(invalid("steering vector and coefficient must be finite"));
        }
        Ok(())
    }

    fn applies(&self, layer: usize, pos: usize, last: usize) -> bool {
        if layer < self.lo || layer > self.hi {
            return false;
        }
        match &self.positions {
            PositionSelector::From(p) => pos >= *p,
            PositionSelector::Explicit(ps) => ps.contains(&pos),
            PositionSelector::LastOnly => pos == last,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMode {
    Full,
    InSpan,
    Complement,
}

/// Subspace-filtered patching. At every layer and every query position from
/// `onset` on, attention output (after the output projection) is computed
/// against the cached entries and again with `span` read from `donor`; the
/// residual stream receives the original output plus the selected part of
/// the difference.
#[derive(Clone, Debug)]
pub struct AttentionFilter<T> {
    pub span: Range<usize>,
    pub donor: SpanKv<T>,
    pub onset: usize,
    /// Orthonormal vectors of length `d_model`.
    pub basis: Vec<Vec<T>>,
    pub mode: FilterMode,
}

impl<T: Scalar> AttentionFilter<T> {
    pub fn validate(&self, d_model: usize, n_layers: usize) -> Result<()> {
        if self.donor.len != self.span.len() {
            return Err(shape(format!(
                "donor span holds {} positions, target span {:?}",
                self.donor.len, self.span
            )));
        }
        if self.onset < self.span.end {
            return Err(invalid("onset precedes the end of the patched span"));
        }
        if self.donor.keys.len() != n_layers {
            return Err(shape("donor layer count differs from the model"));
        }
        if let Some(b) = self.basis.iter().find(|b| b.len() != d_model) {
            return Err(shape(format!("basis vector has length {}, d_model is {d_model}", b.len())));
        }
        Ok(())
    }

    fn project(&self, delta: &[T]) -> Vec<T> {
        let mut p = vec![T::zero(); delta.len()];
        for q in &self.basis {
            axpy(dot(q, delta), q, &mut p);
        }
        p
    }

    fn select(&self, delta: &[T]) -> Vec<T> {
        match self.mode {
            FilterMode::Full => delta.to_vec(),
            FilterMode::InSpan => self.project(delta),
            FilterMode::Complement => {
                let p = self.project(delta);
                delta.iter().zip(&p).map(|(&d, &x)| d - x).collect()
            }
        }
    }
}

/// Instrumentation for one forward call.
#[derive(Clone, Copy, Debug)]
pub struct Hooks<'a, T> {
    /// Layers whose post-block residual is returned.
    pub taps: &'a [usize],
    pub steering: Option<&'a SteeringSpec<T>>,
    pub filter: Option<&'a AttentionFilter<T>>,
    /// Record the attention-output deltas a filter produces.
    pub record_deltas: bool,
}

impl<T> Default for Hooks<'_, T> {
    fn default() -> Self {
        Self {
            taps: &[],
            steering: None,
            filter: None,
            record_deltas: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TappedState<T> {
    pub position: usize,
    pub layer: usize,
    pub vector: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaRecord<T> {
    pub layer: usize,
    pub position: usize,
    /// `out(donor span) − out(original)`.
    pub full: Vec<T>,
    /// The part added to the residual stream.
    pub applied: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// One logit vector per new position.
    pub logits: Vec<Vec<T>>,
    /// Ordered by position, then layer.
    pub hidden: Vec<TappedState<T>>,
    pub deltas: Vec<DeltaRecord<T>>,
}

pub(crate) fn rms_norm<T: Scalar>(x: &[T], gain: &[T], eps: T) -> Vec<T> {
    let ms = x.iter().map(|&v| v * v).sum::<T>() / T::lit(x.len() as f64);
    let inv = T::one() / (ms + eps).sqrt();
    x.iter().zip(gain).map(|(&v, &g)| v * inv * g).collect()
}

pub(crate) fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

/// Rotates consecutive pairs `(2i, 2i+1)` of every head by `pos * θ_i`,
/// `θ_i = base^(−2i/d_head)`.
pub(crate) fn rope<T: Scalar>(x: &mut [T], pos: usize, d_head: usize, base: f64) {
    let half = d_head / 2;
    for head in x.chunks_mut(d_head) {
        for i in 0..half {
            let theta = base.powf(-2.0 * i as f64 / d_head as f64);
            let (sin, cos) = (pos as f64 * theta).sin_cos();
            let (s, c) = (T::lit(sin), T::lit(cos));
            let (a, b) = (head[2 * i], head[2 * i + 1]);
            head[2 * i] = a * c - b * s;
            head[2 * i + 1] = a * s + b * c;
        }
    }
}

struct Attend<'c, T> {
    cache: &'c KVCache<T>,
    layer: usize,
    n_heads: usize,
    d_head: usize,
}

impl<T: Scalar> Attend<'_, T> {
    /// Causal attention of a query at `pos` over positions `0..=pos`; `swap`
    /// substitutes a span of keys and values.
    fn run(&self, q: &[T], pos: usize, swap: Option<(&Range<usize>, &SpanKv<T>)>) -> Vec<T> {
        let d = self.n_heads * self.d_head;
        let scale = T::one() / T::lit(self.d_head as f64).sqrt();
        let kv = |j: usize| -> (&[T], &[T]) {
            if let Some((span, donor)) = swap {
                if span.contains(&j) {
                    let off = (j - span.start) * d;
                    return (
                        &donor.keys[self.layer][off..off + d],
                        &donor.values[self.layer][off..off + d],
                    );
                }
            }
            (self.cache.key(self.layer, j), self.cache.value(self.layer, j))
        };
        let mut out = vec![T::zero(); d];
        let mut scores = vec![T::zero(); pos + 1];
        for h in 0..self.n_heads {
            let r = h * self.d_head..(h + 1) * self.d_head;
            let qh = &q[r.clone()];
            let mut m = T::neg_infinity();
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qh, &kv(j).0[r.clone()]) * scale;
                m = m.max(*s);
            }
            let mut z = T::zero();
            for s in scores.iter_mut() {
                *s = (*s - m).exp();
                z += *s;
            }
            let oh = &mut out[r.clone()];
            for (j, &s) in scores.iter().enumerate() {
                axpy(s / z, &kv(j).1[r.clone()], oh);
            }
        }
        out
    }
}

/// Runs `tokens` through the model, reading and extending `cache`. New
/// positions start at `cache.len()`.
pub fn forward<T: Scalar>(
    weights: &ModelWeights<T>,
    tokens: &[u32],
    cache: &mut KVCache<T>,
    hooks: &Hooks<'_, T>,
) -> Result<ForwardOutput<T>> {
    let dims = &weights.dims;
    let start = cache.len();
    if start + tokens.len() > dims.max_context {
        return Err(Error::ContextOverflow {
            needed: start + tokens.len(),
            max: dims.max_context,
        });
    }
    if cache.n_layers() != dims.n_layers || cache.d_model() != dims.d_model {
        return Err(shape("cache geometry does not match the model"));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= dims.vocab) {
        return Err(invalid(format!("token id {t} >= vocab {}", dims.vocab)));
    }
    if let Some(&l) = hooks.taps.iter().find(|&&l| l >= dims.n_layers) {
        return Err(invalid(format!("tap layer {l} >= n_layers {}", dims.n_layers)));
    }
    if let Some(s) = hooks.steering {
        s.validate(dims.d_model, dims.n_layers)?;
    }
    if let Some(f) = hooks.filter {
        f.validate(dims.d_model, dims.n_layers)?;
        if f.span.end > start {
            return Err(invalid("filtered span must already be cached"));
        }
    }
    let n = tokens.len();
    let eps = T::lit(dims.norm_eps);
    let last = start + n.saturating_sub(1);
    let mut x: Vec<Vec<T>> = tokens.iter().map(|&t| weights.embed.row(t as usize).to_vec()).collect();
    let mut hidden = Vec::new();
    let mut deltas = Vec::new();
    for (l, lw) in weights.layers.iter().enumerate() {
        let mut qs = Vec::with_capacity(n);
        for (i, xi) in x.iter().enumerate() {
            let a = rms_norm(xi, &lw.attn_norm, eps);
            let mut q = lw.wq.matvec(&a);
            let mut k = lw.wk.matvec(&a);
            let v = lw.wv.matvec(&a);
            rope(&mut q, start + i, dims.d_head, dims.rope_base);
            rope(&mut k, start + i, dims.d_head, dims.rope_base);
            cache.push(l, &k, &v);
            qs.push(q);
        }
        let att = Attend {
            cache: &*cache,
            layer: l,
            n_heads: dims.n_heads,
            d_head: dims.d_head,
        };
        for (i, xi) in x.iter_mut().enumerate() {
            let pos = start + i;
            let o = lw.wo.matvec(&att.run(&qs[i], pos, None));
            match hooks.filter {
                Some(f) if pos >= f.onset => {
                    let o2 = lw.wo.matvec(&att.run(&qs[i], pos, Some((&f.span, &f.donor))));
                    let full: Vec<T> = o2.iter().zip(&o).map(|(&b, &a)| b - a).collect();
                    let applied = f.select(&full);
                    for ((r, &a), &d) in xi.iter_mut().zip(&o).zip(&applied) {
                        *r += a + d;
                    }
                    if hooks.record_deltas {
                        deltas.push(DeltaRecord {
                            layer: l,
                            position: pos,
                            full,
                            applied,
                        });
                    }
                }
                _ => {
                    for (r, &a) in xi.iter_mut().zip(&o) {
                        *r += a;
                    }
                }
            }
        }
        for (i, xi) in x.iter_mut().enumerate() {
            let m = rms_norm(xi, &lw.mlp_norm, eps);
            let h: Vec<T> = lw.w_in.matvec(&m).into_iter().map(silu).collect();
            let out = lw.w_out.matvec(&h);
            for (r, &o) in xi.iter_mut().zip(&out) {
                *r += o;
            }
            let pos = start + i;
            if let Some(s) = hooks.steering {
                if s.applies(l, pos, last) {
                    axpy(s.coefficient, &s.vector, xi);
                }
            }
        }
        if hooks.taps.contains(&l) {
            for (i, xi) in x.iter().enumerate() {
                hidden.push(TappedState {
                    position: start + i,
                    layer: l,
                    vector: xi.clone(),
                });
            }
        }
    }
    cache.commit(n);
    let logits = x
        .iter()
        .map(|xi| {
            let f = rms_norm(xi, &weights.final_norm, eps);
            let mut lg = weights.unembed.matvec(&f);
            for (v, &b) in lg.iter_mut().zip(&weights.unembed_bias) {
                *v += b;
            }
            lg
        })
        .collect();
    hidden.sort_by_key(|h| (h.position, h.layer));
    Ok(ForwardOutput { logits, hidden, deltas })
}
