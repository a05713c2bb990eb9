use serde::{Deserialize, Serialize};

use crate::analytics::log_softmax;
use crate::error::{invalid, Result};
use crate::prompts::{NEGATIVE_CONTINUATION, POSITIVE_CONTINUATION, VERDICT_CUE};
use crate::runtime::Session;
use crate::scalar::{cast_slice, Scalar};
use crate::tokenizer::WordTokenizer;

/// Token sequences read at the verdict cue.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictTokens {
    pub cue: Vec<u32>,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
}

impl VerdictTokens {
    pub fn new(tok: &WordTokenizer) -> Result<Self> {
        Ok(Self {
            cue: tok.encode_strict(VERDICT_CUE)?,
            positive: tok.encode_strict(POSITIVE_CONTINUATION)?,
            negative: tok.encode_strict(NEGATIVE_CONTINUATION)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictReadout {
    pub p_prefilled: f64,
    /// Summed log-probability of the positive continuation.
    pub logprob_positive: f64,
    pub logprob_negative: f64,
}

/// Total log-probability of `tokens` as the continuation of the session's
/// context. The session is left as it was.
pub fn sequence_logprob<T: Scalar>(session: &mut Session<'_, T>, tokens: &[u32]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(invalid("empty continuation"));
    }
    let first = session
        .next_logits()
        .ok_or_else(|| invalid("continuation scored against an empty context"))?;
    let mut total = log_softmax(&cast_slice::<T, f64>(first))?[tokens[0] as usize];
    if tokens.len() > 1 {
        let cp = session.checkpoint();
        let out = session.feed(&tokens[..tokens.len() - 1]);
        session.restore(&cp)?;
        for (logits, &t) in out?.logits.iter().zip(&tokens[1..]) {
            total += log_softmax(&cast_slice::<T, f64>(logits))?[t as usize];
        }
    }
    Ok(total)
}

/// `P(positive) / (P(positive) + P(negative))` over the two continuations of
/// a context that ends at the verdict cue.
pub fn verdict_probability<T: Scalar>(
    session: &mut Session<'_, T>,
    positive: &[u32],
    negative: &[u32],
) -> Result<VerdictReadout> {
    let lp = sequence_logprob(session, positive)?;
    let ln = sequence_logprob(session, negative)?;
    Ok(VerdictReadout {
        // logistic form avoids overflow for large gaps
        p_prefilled: 1.0 / (1.0 + (ln - lp).exp()),
        logprob_positive: lp,
        logprob_negative: ln,
    })
}

/// Length of `transcript` up to and including the first occurrence of `cue`
/// at or after `from`.
pub fn cue_end(transcript: &[u32], cue: &[u32], from: usize) -> Result<usize> {
    if cue.is_empty() {
        return Err(invalid("empty verdict cue"));
    }
    (from..=transcript.len().saturating_sub(cue.len()))
        .find(|&i| transcript[i..].starts_with(cue))
        .map(|i| i + cue.len())
        .ok_or_else(|| invalid("transcript has no verdict cue after the response start"))
}

/// Verdict for a full transcript: everything after the first cue past
/// `from` is ignored.
pub fn transcript_verdict<T: Scalar>(
    session: &mut Session<'_, T>,
    transcript: &[u32],
    from: usize,
    tokens: &VerdictTokens,
) -> Result<VerdictReadout> {
    let end = cue_end(transcript, &tokens.cue, from)?;
    session.reset();
    session.feed(&transcript[..end])?;
    verdict_probability(session, &tokens.positive, &tokens.negative)
}
