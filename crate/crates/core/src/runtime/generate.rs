use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forward::{SteeringSpec, TappedState};
use super::session::Session;
use super::weights::ModelWeights;
use crate::analytics::kernel::Distribution;
use crate::error::{invalid, Error, Result};
use crate::rng::{rng_from_seed, LabRng};
use crate::scalar::{cast_slice, Scalar};
use crate::tokenizer::{Prompt, TEMPLATE_TOKENS};
use crate::trace::{HiddenRecord, Origin, Role, TemplateCondition, TokenRecord, Trace, TraceMeta, DEFAULT_TOPK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub max_new_tokens: usize,
    /// Zero means greedy decoding.
    pub temperature: f64,
    pub seed: u64,
    #[serde(default = "default_topk")]
    pub topk: usize,
    /// Layers whose residual stream is stored in the trace.
    #[serde(default)]
    pub taps: Vec<usize>,
    #[serde(default)]
    pub stop_token: Option<u32>,
}

fn default_topk() -> usize {
    DEFAULT_TOPK
}

impl GenerateConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            temperature: 0.0,
            seed: 0,
            topk: DEFAULT_TOPK,
            taps: Vec::new(),
            stop_token: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(invalid("max_new_tokens must be >= 1"));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(invalid(format!("temperature {} must be finite and >= 0", self.temperature)));
        }
        if self.topk == 0 {
            return Err(invalid("topk must be >= 1"));
        }
        Ok(())
    }
}

/// Identity fields copied into a generated trace's metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLabels {
    pub model_id: String,
    pub generator_id: String,
    pub evaluator_id: String,
    pub condition: TemplateCondition,
    pub persona: Option<String>,
}

impl Default for TraceLabels {
    fn default() -> Self {
        Self {
            model_id: "micro".into(),
            generator_id: "micro".into(),
            evaluator_id: "micro".into(),
            condition: TemplateCondition::AssistantField,
            persona: None,
        }
    }
}

/// Draws the next token. Temperature zero takes the argmax (lowest id on
/// ties); otherwise one uniform draw is inverted through the cumulative
/// distribution of `softmax(logits / T)`.
pub fn sample_next<T: Scalar>(logits: &[T], temperature: f64, rng: &mut LabRng) -> Result<u32> {
    let l: Vec<f64> = cast_slice(logits);
    if temperature == 0.0 {
        return Ok(Distribution::from_logits(&l, 1.0)?.argmax() as u32);
    }
    let probs = Distribution::from_logits(&l, temperature)?.probs();
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        cum += p;
        if u < cum {
            return Ok(i as u32);
        }
    }
    Ok(last_nonzero as u32)
}

/// Accumulates token records as positions are fed. Entropy and surprise are
/// always taken from the temperature-one model distribution.
#[derive(Clone, Debug)]
pub struct TraceBuilder {
    meta: TraceMeta,
    topk: usize,
    tokens: Vec<TokenRecord>,
    hidden: Vec<HiddenRecord>,
    prev: Option<Distribution<f64>>,
}

impl TraceBuilder {
    pub fn new<T: Scalar>(weights: &ModelWeights<T>, labels: &TraceLabels, temperature: f64, taps: &[usize], topk: usize) -> Self {
        let dims = &weights.dims;
        let mut captured: Vec<u32> = taps.iter().map(|&l| l as u32).collect();
        captured.sort_unstable();
        captured.dedup();
        Self {
            meta: TraceMeta {
                model_id: labels.model_id.clone(),
                vocab_size: dims.vocab as u32,
                d_model: dims.d_model as u32,
                n_layers: dims.n_layers as u32,
                captured_layers: captured,
                template_condition: labels.condition,
                generator_id: labels.generator_id.clone(),
                evaluator_id: labels.evaluator_id.clone(),
                persona: labels.persona.clone(),
                temperature,
                special_token_ids: TEMPLATE_TOKENS.to_vec(),
                truncated: false,
            },
            topk: topk.min(dims.vocab),
            tokens: Vec::new(),
            hidden: Vec::new(),
            prev: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Records one fed position: its token, the logits it produced and any
    /// hidden states tapped there.
    pub fn push<T: Scalar>(
        &mut self,
        position: usize,
        token: u32,
        role: Role,
        origin: Origin,
        logits: &[T],
        hidden: &[TappedState<T>],
    ) -> Result<()> {
        let dist = Distribution::from_logits(&cast_slice::<T, f64>(logits), 1.0)?;
        let (surprise, incoming) = match &self.prev {
            Some(p) => (p.surprise(token as usize), p.entropy()),
            None => (0.0, 0.0),
        };
        let topk = dist
            .ranked()
            .into_iter()
            .take(self.topk)
            .map(|i| (i as u32, dist.logprob(i) as f32))
            .collect();
        self.tokens.push(TokenRecord {
            position: position as u32,
            token_id: token,
            role,
            surprise,
            incoming_entropy: incoming,
            predicted_entropy: dist.entropy(),
            origin,
            topk,
        });
        for h in hidden.iter().filter(|h| h.position == position) {
            self.hidden.push(HiddenRecord {
                position: position as u32,
                layer: h.layer as u16,
                vector: h.vector.iter().map(|x| x.as_f64() as f32).collect(),
            });
        }
        self.prev = Some(dist);
        Ok(())
    }

    /// Records every position of a multi-token feed.
    pub fn push_all<T: Scalar>(
        &mut self,
        start: usize,
        tokens: &[u32],
        roles: &[Role],
        origins: &[Origin],
        logits: &[Vec<T>],
        hidden: &[TappedState<T>],
    ) -> Result<()> {
        for i in 0..tokens.len() {
            self.push(start + i, tokens[i], roles[i], origins[i], &logits[i], hidden)?;
        }
        Ok(())
    }

    pub fn mark_truncated(&mut self) {
        self.meta.truncated = true;
    }

    pub fn finish(self) -> Result<Trace> {
        let t = Trace {
            meta: self.meta,
            tokens: self.tokens,
            hidden: self.hidden,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Result of a generation: the trace and the sampled continuation.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub trace: Trace,
    pub generated: Vec<u32>,
}

/// Feeds `prompt` into a fresh context of `session`, then samples.
///
/// Running into the context limit stops generation and sets the trace's
/// `truncated` flag; a prompt that does not fit at all is an error.
pub fn generate_in<T: Scalar>(
    session: &mut Session<'_, T>,
    prompt: &Prompt,
    cfg: &GenerateConfig,
    labels: &TraceLabels,
) -> Result<Generation> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(invalid("empty prompt"));
    }
    let weights = session.weights();
    if prompt.len() > weights.dims.max_context {
        return Err(Error::ContextOverflow {
            needed: prompt.len(),
            max: weights.dims.max_context,
        });
    }
    session.reset();
    session.set_taps(cfg.taps.clone());
    let mut builder = TraceBuilder::new(weights, labels, cfg.temperature, &cfg.taps, cfg.topk);
    let out = session.feed(&prompt.tokens)?;
    builder.push_all(0, &prompt.tokens, &prompt.roles, &prompt.origins, &out.logits, &out.hidden)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut generated = Vec::with_capacity(cfg.max_new_tokens);
    for _ in 0..cfg.max_new_tokens {
        if session.remaining() == 0 {
            builder.mark_truncated();
            break;
        }
        let logits = session.next_logits().expect("context is nonempty");
        let tok = sample_next(logits, cfg.temperature, &mut rng)?;
        let pos = session.len();
        let out = session.feed(&[tok])?;
        builder.push(pos, tok, Role::Assistant, Origin::Sampled, &out.logits[0], &out.hidden)?;
        generated.push(tok);
        if cfg.stop_token == Some(tok) {
            break;
        }
    }
    Ok(Generation {
        trace: builder.finish()?,
        generated,
    })
}

/// Teacher-forces `prompt` through a fresh session and records every
/// position, as when an evaluator reads text it did not write.
pub fn score<T: Scalar>(
    weights: &ModelWeights<T>,
    prompt: &Prompt,
    labels: &TraceLabels,
    taps: &[usize],
    topk: usize,
) -> Result<Trace> {
    if prompt.is_empty() {
        return Err(invalid("empty prompt"));
    }
    if topk == 0 {
        return Err(invalid("topk must be >= 1"));
    }
    let mut s = Session::new(weights);
    s.set_taps(taps.to_vec());
    let mut b = TraceBuilder::new(weights, labels, 1.0, taps, topk);
    let out = s.feed(&prompt.tokens)?;
    b.push_all(0, &prompt.tokens, &prompt.roles, &prompt.origins, &out.logits, &out.hidden)?;
    b.finish()
}

/// Generates from a fresh session, optionally steered.
pub fn generate<T: Scalar>(
    weights: &ModelWeights<T>,
    prompt: &Prompt,
    cfg: &GenerateConfig,
    labels: &TraceLabels,
    steering: Option<SteeringSpec<T>>,
) -> Result<Generation> {
    let mut s = Session::new(weights);
    s.set_steering(steering)?;
    generate_in(&mut s, prompt, cfg, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::weights::ModelDims;
    use crate::tokenizer::chat_prompt;

    fn model() -> ModelWeights<f64> {
        let mut d = ModelDims::tiny(40);
        d.max_context = 24;
        ModelWeights::random(d, 11).unwrap()
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let w = model();
        let p = chat_prompt(None, &[10, 11, 12], &[]);
        let a = generate(&w, &p, &GenerateConfig::greedy(8), &TraceLabels::default(), None).unwrap();
        let mut cfg = GenerateConfig::greedy(8);
        cfg.seed = 99;
        let b = generate(&w, &p, &cfg, &TraceLabels::default(), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.generated.len(), 8);
        for r in &a.trace.tokens[p.len()..] {
            assert!(r.excess_surprise() <= 0.0);
        }
    }

    #[test]
    fn overflow_truncates_with_flag() {
        let w = model();
        let p = chat_prompt(None, &[10, 11, 12], &[]);
        let g = generate(&w, &p, &GenerateConfig::greedy(100), &TraceLabels::default(), None).unwrap();
        assert!(g.trace.meta.truncated);
        assert_eq!(g.trace.tokens.len(), 24);
        let long = chat_prompt(None, &[10; 30], &[]);
        assert!(matches!(
            generate(&w, &long, &GenerateConfig::greedy(1), &TraceLabels::default(), None),
            Err(Error::ContextOverflow { .. })
        ));
    }

    #[test]
    fn sampling_uses_one_draw_per_token() {
        let logits = [0.0f64, 1.0, 2.0];
        let mut a = rng_from_seed(3);
        let mut b = rng_from_seed(3);
        let t = sample_next(&logits, 1.0, &mut a).unwrap();
        let u: f64 = b.random();
        let e: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        let expect = if u < e[0] / z {
            0
        } else if u < (e[0] + e[1]) / z {
            1
        } else {
            2
        };
        assert_eq!(t, expect);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn greedy_ties_pick_lowest_id() {
        let mut r = rng_from_seed(0);
        assert_eq!(sample_next(&[1.0f64, 3.0, 3.0], 0.0, &mut r).unwrap(), 1);
    }
}
