//! Crafted weights with planted mechanisms, used to check that the
//! interventional protocols detect effects that are known to exist.

use super::weights::{ModelDims, ModelWeights};
use crate::error::{invalid, Result};
use crate::tokenizer::WordTokenizer;

fn small_dims(vocab: usize, d_ff: usize, n_layers: usize, max_context: usize) -> ModelDims {
    ModelDims {
        d_model: 8,
        n_heads: 2,
        d_head: 4,
        d_ff,
        n_layers,
        vocab,
        max_context,
        rope_base: 10_000.0,
        norm_eps: 1e-6,
    }
}

/// A model whose output entropy is controlled by one residual direction.
///
/// Blocks are zero, every token embeds as `e0 + 2 e1`, and token 0 unembeds
/// along `e0` with a bias of 3, so logits are `(x0 / rms(x) + 3, 0, …, 0)`.
/// Since `|x0 / rms(x)| < √8 < 3` the first logit stays positive and grows
/// with `x0`; the entropy is therefore strictly decreasing along the
/// returned direction `e0`.
pub fn entropy_direction_model(vocab: usize, n_layers: usize) -> Result<(ModelWeights<f64>, Vec<f64>)> {
    let mut w = ModelWeights::zeros(small_dims(vocab, 8, n_layers, 64))?;
    for t in 0..vocab {
        w.embed.set(t, 0, 1.0);
        w.embed.set(t, 1, 2.0);
    }
    w.unembed.set(0, 0, 1.0);
    w.unembed_bias[0] = 3.0;
    let mut dir = vec![0.0; 8];
    dir[0] = 1.0;
    Ok((w, dir))
}

/// Topic words whose lowercase form marks the request ("intent") and whose
/// capitalized form marks response content.
pub const INTENT_PAIRS: [(&str, &str); 4] = [
    ("haggis", "Haggis"),
    ("hockey", "Hockey"),
    ("mercury", "Mercury"),
    ("sculpture", "Sculpture"),
];

/// A one-layer model that answers the verdict question by comparing the
/// topic the user asked about with the topic present in the response.
///
/// Attention is uniform (zero queries and keys) and copies two residual
/// coordinates: `e0` (a topic named in the request) and `e1` (a topic named
/// in the response). Two MLP units compute `|e1 − e0|` into `e2`, which
/// drives the `PREFILLED` logit; a constant `e7` drives `NOT`, and the `NOT`
/// embedding carries `e3`, which makes `PREFILLED` the likely next token.
/// Matching request and response give a low verdict probability, a mismatch
/// a high one.
pub fn intent_model(tok: &WordTokenizer) -> Result<ModelWeights<f64>> {
    let id = |w: &str| tok.id(w).ok_or_else(|| invalid(format!("word {w:?} missing from the vocabulary")));
    let prefilled = id("PREFILLED")? as usize;
    let not = id("NOT")? as usize;
    let mut w = ModelWeights::zeros(small_dims(tok.vocab_size(), 2, 1, 512))?;
    for t in 0..tok.vocab_size() {
        w.embed.set(t, 7, 1.0);
    }
    for (intent, content) in INTENT_PAIRS {
        w.embed.set(id(intent)? as usize, 0, 1.0);
        w.embed.set(id(content)? as usize, 1, 1.0);
    }
    w.embed.set(not, 3, 3.0);
    let l = &mut w.layers[0];
    l.wv.set(0, 0, 1.0);
    l.wv.set(1, 1, 1.0);
    l.wo.set(0, 0, 1.0);
    l.wo.set(1, 1, 1.0);
    let k = 400.0;
    l.w_in.set(0, 1, k);
    l.w_in.set(0, 0, -k);
    l.w_in.set(1, 0, k);
    l.w_in.set(1, 1, -k);
    l.w_out.set(2, 0, 0.2);
    l.w_out.set(2, 1, 0.2);
    w.unembed.set(prefilled, 2, 3.0);
    w.unembed.set(prefilled, 3, 4.0);
    w.unembed.set(not, 7, 1.5);
    w.validate()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::entropy_of;
    use crate::runtime::{forward, Hooks, KVCache};

    #[test]
    fn entropy_falls_along_planted_direction() {
        let (mut w, dir) = entropy_direction_model(16, 2).unwrap();
        let mut last = f64::INFINITY;
        for shift in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            for t in 0..16 {
                w.embed.set(t, 0, 1.0 + shift * dir[0]);
            }
            let mut c = KVCache::new(&w.dims);
            let out = forward(&w, &[3], &mut c, &Hooks::default()).unwrap();
            let h = entropy_of(&out.logits[0], 1.0).unwrap();
            assert!(h < last);
            last = h;
        }
    }
}
