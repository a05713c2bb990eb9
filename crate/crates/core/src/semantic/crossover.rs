use serde::{Deserialize, Serialize};

use crate::analytics::body_entropy;
use crate::error::{invalid, Error, Result};
use crate::prompts::{PromptPair, DETECTION_SYSTEM_PROMPT};
use crate::rng::substream_seed;
use crate::runtime::{generate, GenerateConfig, ModelWeights, TraceLabels};
use crate::scalar::Scalar;
use crate::tokenizer::{chat_prompt, WordTokenizer};
use crate::trace::Trace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossoverConfig {
    /// Generations per arm.
    pub n: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
    #[serde(default = "body_start")]
    pub body_start: usize,
    #[serde(default = "body_end")]
    pub body_end: usize,
    #[serde(default)]
    pub system_prompt: bool,
}

fn body_start() -> usize {
    crate::analytics::BODY_START
}

fn body_end() -> usize {
    crate::analytics::BODY_END
}

impl Default for CrossoverConfig {
    fn default() -> Self {
        Self {
            n: 10,
            max_new_tokens: 40,
            temperature: 1.0,
            seed: 0,
            body_start: body_start(),
            body_end: body_end(),
            system_prompt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmEntropy {
    /// Body entropy of each usable generation.
    pub body_h: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Generations too short for the body window.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverResult {
    pub domain: String,
    pub on_policy: ArmEntropy,
    pub off_policy: ArmEntropy,
    /// `off_policy.mean − on_policy.mean`.
    pub gap: f64,
}

pub fn arm_entropy(traces: &[Trace], start: usize, end: usize) -> Result<ArmEntropy> {
    let mut body_h = Vec::new();
    let mut excluded = 0;
    for t in traces {
        match body_entropy(t, start, end) {
            Ok(b) => body_h.push(b.mean),
            Err(Error::Undefined(_)) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if body_h.is_empty() {
        return Err(Error::Undefined(format!("all {} generations are shorter than the body window", traces.len())));
    }
    let n = body_h.len() as f64;
    let mean = body_h.iter().sum::<f64>() / n;
    let std = (body_h.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / n).sqrt();
    Ok(ArmEntropy {
        body_h,
        mean,
        std,
        excluded,
    })
}

/// Arm statistics from already generated traces.
pub fn crossover_from_traces(
    domain: &str,
    on_policy: &[Trace],
    off_policy: &[Trace],
    start: usize,
    end: usize,
) -> Result<CrossoverResult> {
    let on = arm_entropy(on_policy, start, end)?;
    let off = arm_entropy(off_policy, start, end)?;
    Ok(CrossoverResult {
        domain: domain.to_string(),
        gap: off.mean - on.mean,
        on_policy: on,
        off_policy: off,
    })
}

/// Traces of both arms: the prefill after the matching specific request
/// (on-policy) and after the underspecified request (off-policy).
/// Generation `i` of both arms uses the same seed.
pub fn crossover_traces<T: Scalar>(
    weights: &ModelWeights<T>,
    tok: &WordTokenizer,
    pair: &PromptPair,
    cfg: &CrossoverConfig,
) -> Result<(Vec<Trace>, Vec<Trace>)> {
    if cfg.n == 0 {
        return Err(invalid("crossover needs at least one generation per arm"));
    }
    let (under, specific, prefill) = pair.encode(tok)?;
    let system = if cfg.system_prompt {
        Some(tok.encode_strict(DETECTION_SYSTEM_PROMPT)?)
    } else {
        None
    };
    let on_prompt = chat_prompt(system.as_deref(), &specific, &prefill);
    let off_prompt = chat_prompt(system.as_deref(), &under, &prefill);
    let mut on = Vec::with_capacity(cfg.n);
    let mut off = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let g = GenerateConfig {
            max_new_tokens: cfg.max_new_tokens,
            temperature: cfg.temperature,
            seed: substream_seed(cfg.seed, &format!("{}/generation/{i}", pair.domain)),
            ..GenerateConfig::greedy(cfg.max_new_tokens)
        };
        let labels = TraceLabels {
            persona: Some(format!("{}/on_policy", pair.domain)),
            ..TraceLabels::default()
        };
        on.push(generate(weights, &on_prompt, &g, &labels, None)?.trace);
        let labels = TraceLabels {
            persona: Some(format!("{}/off_policy", pair.domain)),
            ..TraceLabels::default()
        };
        off.push(generate(weights, &off_prompt, &g, &labels, None)?.trace);
    }
    Ok((on, off))
}

pub fn crossover_experiment<T: Scalar>(
    weights: &ModelWeights<T>,
    tok: &WordTokenizer,
    pair: &PromptPair,
    cfg: &CrossoverConfig,
) -> Result<CrossoverResult> {
    let (on, off) = crossover_traces(weights, tok, pair, cfg)?;
    crossover_from_traces(&pair.domain, &on, &off, cfg.body_start, cfg.body_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::prompt_pair;
    use crate::runtime::ModelDims;

    #[test]
    fn identical_contexts_give_zero_gap() {
        let tok = WordTokenizer::bundled();
        let w = ModelWeights::<f64>::random(ModelDims::tiny(tok.vocab_size()), 3).unwrap();
        let mut pair = prompt_pair("food").unwrap();
        pair.specific = pair.underspecified.clone();
        let cfg = CrossoverConfig {
            n: 3,
            max_new_tokens: 12,
            ..Default::default()
        };
        let r = crossover_experiment(&w, &tok, &pair, &cfg).unwrap();
        assert_eq!(r.gap, 0.0);
        assert_eq!(r.on_policy, r.off_policy);
    }
}
