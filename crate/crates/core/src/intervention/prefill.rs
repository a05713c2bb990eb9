use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::verdict::{verdict_probability, VerdictTokens};
use crate::error::{invalid, Error, Result};
use crate::geometry::SubspaceBasis;
use crate::prompts::{PromptPair, DETECTION_SYSTEM_PROMPT};
use crate::rng::{rng_from_seed, substream_seed, LabRng};
use crate::runtime::{
    apply_patch, sample_next, AttentionFilter, DeltaRecord, FilterMode, ModelWeights, PatchSpec, Session, SpanKv,
};
use crate::scalar::Scalar;
use crate::tokenizer::{chat_prompt, Prompt, WordTokenizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// No prefill; the request is patched to the specific prompt, so the
    /// model's own answer no longer matches its apparent intent.
    InduceFalsePositive,
    /// Specific-topic prefill; the request is patched to the matching
    /// specific prompt, so the prefill now looks intended.
    SuppressTruePositive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    PrefillOnly,
    PrefillPlusPatch,
    NoPrefill,
    NoPrefillPlusPatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchMode {
    None,
    Full,
    InSpan,
    Complement,
}

impl From<FilterMode> for PatchMode {
    fn from(m: FilterMode) -> Self {
        match m {
            FilterMode::Full => PatchMode::Full,
            FilterMode::InSpan => PatchMode::InSpan,
            FilterMode::Complement => PatchMode::Complement,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefillConfig {
    /// Patch onset, counted in generated tokens: 0 is the first generated
    /// token, `gen_tokens` the verdict cue.
    pub onset: usize,
    /// Tokens generated before the verdict cue.
    pub gen_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub system_prompt: bool,
}

fn yes() -> bool {
    true
}

impl Default for PrefillConfig {
    fn default() -> Self {
        Self {
            onset: 0,
            gen_tokens: 8,
            temperature: 0.0,
            seed: 0,
            system_prompt: true,
        }
    }
}

/// How the patched arms rewrite the user span.
#[derive(Clone, Debug, PartialEq)]
pub enum PatchKind<T> {
    /// Replace the cached keys and values.
    Plain,
    /// Keep the cache and add back only part of each attention-output delta.
    Filtered { basis: Vec<Vec<T>>, mode: FilterMode },
}

/// Decoded context with byte ranges of its parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub text: String,
    pub user: Range<usize>,
    pub prefill: Option<Range<usize>>,
    pub generated: Range<usize>,
    pub cue: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictResult {
    pub domain: String,
    pub condition: Arm,
    pub p_prefilled: f64,
    pub logprob_positive: f64,
    pub logprob_negative: f64,
    pub onset: usize,
    /// Absolute position of the first query that reads the patch.
    pub onset_position: usize,
    pub patch_mode: PatchMode,
    /// The patch went through the attention filter.
    pub filtered: bool,
    pub tokens: Vec<u32>,
    pub transcript: Transcript,
}

/// One arm with the filter deltas it recorded.
#[derive(Clone, Debug)]
pub struct ArmRun<T> {
    pub result: VerdictResult,
    pub deltas: Vec<DeltaRecord<T>>,
}

#[derive(Clone, Debug)]
pub struct PrefillExperiment<T> {
    pub domain: String,
    pub direction: Direction,
    /// PrefillOnly, PrefillPlusPatch, NoPrefill, NoPrefillPlusPatch.
    pub arms: Vec<ArmRun<T>>,
}

impl<T> PrefillExperiment<T> {
    pub fn arm(&self, arm: Arm) -> &VerdictResult {
        &self.arms.iter().find(|a| a.result.condition == arm).expect("all four arms run").result
    }

    /// Change in verdict probability caused by the patch in the arm pair the
    /// direction is about.
    pub fn effect(&self) -> f64 {
        match self.direction {
            Direction::InduceFalsePositive => {
                self.arm(Arm::NoPrefillPlusPatch).p_prefilled - self.arm(Arm::NoPrefill).p_prefilled
            }
            Direction::SuppressTruePositive => {
                self.arm(Arm::PrefillPlusPatch).p_prefilled - self.arm(Arm::PrefillOnly).p_prefilled
            }
        }
    }

    pub fn results(&self) -> Vec<VerdictResult> {
        self.arms.iter().map(|a| a.result.clone()).collect()
    }
}

/// Contexts of one pair: the underspecified request with and without the
/// prefill, and the specific request's cached user span.
pub struct PairContexts<T> {
    pub with_prefill: Prompt,
    pub without_prefill: Prompt,
    pub donor: SpanKv<T>,
    pub user_span: Range<usize>,
}

pub fn pair_contexts<T: Scalar>(
    weights: &ModelWeights<T>,
    tok: &WordTokenizer,
    pair: &PromptPair,
    system_prompt: bool,
) -> Result<PairContexts<T>> {
    let (under, specific, prefill) = pair.encode(tok)?;
    let system = if system_prompt {
        Some(tok.encode_strict(DETECTION_SYSTEM_PROMPT)?)
    } else {
        None
    };
    let without_prefill = chat_prompt(system.as_deref(), &under, &[]);
    let with_prefill = chat_prompt(system.as_deref(), &under, &prefill);
    let donor_prompt = chat_prompt(system.as_deref(), &specific, &[]);
    if donor_prompt.user_span != without_prefill.user_span {
        return Err(invalid(format!(
            "domain {}: user spans differ ({} vs {} tokens); paired prompts must match token for token",
            pair.domain,
            without_prefill.user_span.len(),
            donor_prompt.user_span.len()
        )));
    }
    let span = donor_prompt.user_span.clone();
    let mut s = Session::new(weights);
    s.feed(&donor_prompt.tokens[..span.end])?;
    Ok(PairContexts {
        with_prefill,
        without_prefill,
        donor: s.cache().span(span.clone())?,
        user_span: span,
    })
}

struct Run<'w, T> {
    session: Session<'w, T>,
    rng: LabRng,
    tokens: Vec<u32>,
}

impl<T: Scalar> Run<'_, T> {
    fn generate(&mut self, n: usize, temperature: f64) -> Result<()> {
        for _ in 0..n {
            let logits = self.session.next_logits().expect("context is nonempty");
            let t = sample_next(logits, temperature, &mut self.rng)?;
            self.session.feed(&[t])?;
            self.tokens.push(t);
        }
        Ok(())
    }
}

fn byte_range(spans: &[Range<usize>], tokens: Range<usize>) -> Range<usize> {
    if tokens.is_empty() {
        let at = spans.get(tokens.start).map_or_else(|| spans.last().map_or(0, |s| s.end), |s| s.start);
        return at..at;
    }
    spans[tokens.start].start..spans[tokens.end - 1].end
}

/// Runs one prefill state with and without the patch. Both arms share every
/// position before the onset: the patched arm is forked from the unpatched
/// one, cache and sampler state included, when the onset is reached.
#[allow(clippy::too_many_arguments)]
pub fn run_arm_pair<'w, T: Scalar>(
    weights: &'w ModelWeights<T>,
    tok: &WordTokenizer,
    domain: &str,
    prompt: &Prompt,
    ctx: &PairContexts<T>,
    cfg: &PrefillConfig,
    patch: &PatchKind<T>,
    seed: u64,
) -> Result<(ArmRun<T>, ArmRun<T>)> {
    if cfg.onset > cfg.gen_tokens {
        return Err(invalid(format!(
            "onset {} is past the verdict cue at generated token {}",
            cfg.onset, cfg.gen_tokens
        )));
    }
    let vt = VerdictTokens::new(tok)?;
    let needed = prompt.len() + cfg.gen_tokens + vt.cue.len() + vt.positive.len().max(vt.negative.len()) - 1;
    if needed > weights.dims.max_context {
        return Err(Error::ContextOverflow {
            needed,
            max: weights.dims.max_context,
        });
    }
    let mut plain = Run {
        session: Session::new(weights),
        rng: rng_from_seed(seed),
        tokens: prompt.tokens.clone(),
    };
    plain.session.feed(&prompt.tokens)?;
    plain.generate(cfg.onset, cfg.temperature)?;
    let onset_position = plain.session.len();
    let mut patched = Run {
        session: plain.session.clone(),
        rng: plain.rng.clone(),
        tokens: plain.tokens.clone(),
    };
    let (mode, filtered) = match patch {
        PatchKind::Plain => {
            let spec = PatchSpec {
                span: ctx.user_span.clone(),
                donor: ctx.donor.clone(),
                onset: onset_position,
            };
            apply_patch(patched.session.cache_mut(), &spec)?;
            (PatchMode::Full, false)
        }
        PatchKind::Filtered { basis, mode } => {
            let filter = AttentionFilter {
                span: ctx.user_span.clone(),
                donor: ctx.donor.clone(),
                onset: onset_position,
                basis: basis.clone(),
                mode: *mode,
            };
            patched.session.set_filter(Some(filter), true)?;
            ((*mode).into(), true)
        }
    };
    let has_prefill = !prompt.response_span.is_empty();
    let arms = if has_prefill {
        (Arm::PrefillOnly, Arm::PrefillPlusPatch)
    } else {
        (Arm::NoPrefill, Arm::NoPrefillPlusPatch)
    };
    let finish = |mut run: Run<'w, T>, arm: Arm, patch_mode: PatchMode, filtered: bool| -> Result<ArmRun<T>> {
        run.generate(cfg.gen_tokens - cfg.onset, cfg.temperature)?;
        let gen = prompt.len()..run.tokens.len();
        run.session.feed(&vt.cue)?;
        run.tokens.extend_from_slice(&vt.cue);
        let r = verdict_probability(&mut run.session, &vt.positive, &vt.negative)?;
        let (text, spans) = tok.decode_with_offsets(&run.tokens);
        let transcript = Transcript {
            user: byte_range(&spans, prompt.user_span.clone()),
            prefill: has_prefill.then(|| byte_range(&spans, prompt.response_span.clone())),
            generated: byte_range(&spans, gen.clone()),
            cue: byte_range(&spans, gen.end..run.tokens.len()),
            text,
        };
        Ok(ArmRun {
            result: VerdictResult {
                domain: domain.to_string(),
                condition: arm,
                p_prefilled: r.p_prefilled,
                logprob_positive: r.logprob_positive,
                logprob_negative: r.logprob_negative,
                onset: cfg.onset,
                onset_position,
                patch_mode,
                filtered,
                tokens: run.tokens,
                transcript,
            },
            deltas: run.session.deltas().to_vec(),
        })
    };
    let a = finish(plain, arms.0, PatchMode::None, false)?;
    let b = finish(patched, arms.1, mode, filtered)?;
    Ok((a, b))
}

/// Runs all four arms (prefill × patch) of one prompt pair. The underspecified
/// request is the base context in every arm; the donor is the specific
/// request's user span. Each prefill state samples from its own named
/// substream of the configured seed.
pub fn prefill_experiment<T: Scalar>(
    weights: &ModelWeights<T>,
    tok: &WordTokenizer,
    pair: &PromptPair,
    direction: Direction,
    cfg: &PrefillConfig,
    patch: &PatchKind<T>,
) -> Result<PrefillExperiment<T>> {
    if !(cfg.temperature >= 0.0 && cfg.temperature.is_finite()) {
        return Err(invalid("temperature must be finite and nonnegative"));
    }
    let ctx = pair_contexts(weights, tok, pair, cfg.system_prompt)?;
    let mut arms = Vec::with_capacity(4);
    for (prompt, name) in [(&ctx.with_prefill, "prefill"), (&ctx.without_prefill, "no_prefill")] {
        let seed = substream_seed(cfg.seed, &format!("{}/{name}", pair.domain));
        let (a, b) = run_arm_pair(weights, tok, &pair.domain, prompt, &ctx, cfg, patch, seed)?;
        arms.push(a);
        arms.push(b);
    }
    Ok(PrefillExperiment {
        domain: pair.domain.clone(),
        direction,
        arms,
    })
}

/// The four-arm experiment with the patch filtered through a subspace.
pub fn subspace_filtered_patch<T: Scalar>(
    weights: &ModelWeights<T>,
    tok: &WordTokenizer,
    pair: &PromptPair,
    direction: Direction,
    cfg: &PrefillConfig,
    basis: &SubspaceBasis<T>,
    mode: FilterMode,
) -> Result<PrefillExperiment<T>> {
    if basis.d_model != weights.dims.d_model {
        return Err(crate::error::shape(format!(
            "basis lives in {} dimensions, model has {}",
            basis.d_model, weights.dims.d_model
        )));
    }
    let patch = PatchKind::Filtered {
        basis: basis.vectors.clone(),
        mode,
    };
    prefill_experiment(weights, tok, pair, direction, cfg, &patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::prompt_pair;
    use crate::runtime::planted::intent_model;

    #[test]
    fn planted_intent_model_shows_both_effects() {
        let tok = WordTokenizer::bundled();
        let w = intent_model(&tok).unwrap();
        let cfg = PrefillConfig {
            gen_tokens: 4,
            ..Default::default()
        };
        for domain in ["food", "sport", "element", "art_form"] {
            let pair = prompt_pair(domain).unwrap();
            let e = prefill_experiment(&w, &tok, &pair, Direction::SuppressTruePositive, &cfg, &PatchKind::Plain).unwrap();
            let p = |a| e.arm(a).p_prefilled;
            assert!(p(Arm::PrefillOnly) > 0.5, "{domain}");
            assert!(p(Arm::PrefillPlusPatch) < p(Arm::PrefillOnly) - 0.2, "{domain}");
            assert!(p(Arm::NoPrefill) < 0.5, "{domain}");
            assert!(p(Arm::NoPrefillPlusPatch) > p(Arm::NoPrefill) + 0.2, "{domain}");
        }
    }

    #[test]
    fn self_donor_is_a_no_op() {
        let tok = WordTokenizer::bundled();
        let w = intent_model(&tok).unwrap();
        let mut pair = prompt_pair("food").unwrap();
        pair.specific = pair.underspecified.clone();
        let e = prefill_experiment(&w, &tok, &pair, Direction::InduceFalsePositive, &PrefillConfig::default(), &PatchKind::Plain)
            .unwrap();
        assert_eq!(e.arm(Arm::NoPrefill).p_prefilled, e.arm(Arm::NoPrefillPlusPatch).p_prefilled);
        assert_eq!(e.arm(Arm::PrefillOnly).p_prefilled, e.arm(Arm::PrefillPlusPatch).p_prefilled);
        assert_eq!(e.effect(), 0.0);
    }

    #[test]
    fn unequal_spans_rejected() {
        let tok = WordTokenizer::bundled();
        let w = intent_model(&tok).unwrap();
        let mut pair = prompt_pair("food").unwrap();
        pair.specific = "Describe haggis and explain why you find it interesting.".into();
        assert!(prefill_experiment(&w, &tok, &pair, Direction::InduceFalsePositive, &PrefillConfig::default(), &PatchKind::Plain).is_err());
    }

    #[test]
    fn transcript_marks_prefill_bytes() {
        let tok = WordTokenizer::bundled();
        let w = intent_model(&tok).unwrap();
        let pair = prompt_pair("sport").unwrap();
        let e = prefill_experiment(&w, &tok, &pair, Direction::SuppressTruePositive, &PrefillConfig::default(), &PatchKind::Plain)
            .unwrap();
        let t = &e.arm(Arm::PrefillOnly).transcript;
        assert_eq!(&t.text[t.prefill.clone().unwrap()], "Hockey is an");
        assert_eq!(&t.text[t.cue.clone()], "VERDICT:");
        assert!(t.text[t.user.clone()].starts_with("Think of a sport"));
        assert!(e.arm(Arm::NoPrefill).transcript.prefill.is_none());
    }
}
