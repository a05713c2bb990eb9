//! Trace data model: per-token entropy/surprise records, optional hidden
//! states and capture metadata. Traces are the exchange object between the
//! runtime, the capture adapter and every analysis.

mod features;
mod format;

pub use features::{derive_feature, ema, EmaDirection, Feature, FeatureParams, FeatureSeries};
pub use format::{read_trace, read_trace_file, write_trace, write_trace_file, TRACE_MAGIC, TRACE_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of top-k entries stored per record.
pub const DEFAULT_TOPK: usize = 32;

/// Entropy floor (nats) below which ratio quantities are not formed.
pub const ENTROPY_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    System,
    User,
    Assistant,
    Untagged,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::System, Role::User, Role::Assistant, Role::Untagged];

    pub fn code(self) -> u8 {
        match self {
            Role::System => 0,
            Role::User => 1,
            Role::Assistant => 2,
            Role::Untagged => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Role::System,
            1 => Role::User,
            2 => Role::Assistant,
            3 => Role::Untagged,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Untagged => "untagged",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    TeacherForced,
    Sampled,
    Prefilled,
}

impl Origin {
    pub fn code(self) -> u8 {
        match self {
            Origin::TeacherForced => 0,
            Origin::Sampled => 1,
            Origin::Prefilled => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Origin::TeacherForced,
            1 => Origin::Sampled,
            2 => Origin::Prefilled,
            _ => return None,
        })
    }
}

/// Where evaluated text sits relative to the chat template.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateCondition {
    AssistantField,
    UserField,
    NoTemplate,
}

impl TemplateCondition {
    pub fn name(self) -> &'static str {
        match self {
            TemplateCondition::AssistantField => "assistant",
            TemplateCondition::UserField => "user",
            TemplateCondition::NoTemplate => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub model_id: String,
    pub vocab_size: u32,
    pub d_model: u32,
    pub n_layers: u32,
    pub captured_layers: Vec<u32>,
    pub template_condition: TemplateCondition,
    pub generator_id: String,
    pub evaluator_id: String,
    pub persona: Option<String>,
    pub temperature: f64,
    /// Template and control token ids; analytics skip these by default.
    #[serde(default)]
    pub special_token_ids: Vec<u32>,
    /// Set when generation stopped early at the context limit.
    #[serde(default)]
    pub truncated: bool,
}

/// One token position.
///
/// `surprise` and `incoming_entropy` describe the distribution predicted at
/// the previous position (the one this token was drawn from or scored
/// under); `predicted_entropy` describes the distribution this position
/// emits. The first record of a trace has no predecessor and stores zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenRecord {
    pub position: u32,
    pub token_id: u32,
    pub role: Role,
    pub surprise: f64,
    pub incoming_entropy: f64,
    pub predicted_entropy: f64,
    pub origin: Origin,
    /// Top-k of this position's predicted distribution, best first.
    pub topk: Vec<(u32, f32)>,
}

impl TokenRecord {
    /// `S − H`, the excess surprise of the incoming token.
    pub fn excess_surprise(&self) -> f64 {
        self.surprise - self.incoming_entropy
    }

    /// Incoming entropy below the ratio floor.
    pub fn is_low_entropy(&self) -> bool {
        self.incoming_entropy < ENTROPY_FLOOR
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenRecord {
    pub position: u32,
    pub layer: u16,
    pub vector: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub tokens: Vec<TokenRecord>,
    /// Ordered by `(position, layer)`; empty when no hidden states were captured.
    pub hidden: Vec<HiddenRecord>,
}

impl Trace {
    /// Number of top-k pairs per record (taken from the first record).
    pub fn topk_len(&self) -> usize {
        self.tokens.first().map_or(0, |r| r.topk.len())
    }

    pub fn is_special(&self, token_id: u32) -> bool {
        self.meta.special_token_ids.contains(&token_id)
    }

    /// Hidden vectors captured at `layer`, keyed by position.
    pub fn hidden_at_layer(&self, layer: u16) -> impl Iterator<Item = &HiddenRecord> {
        self.hidden.iter().filter(move |h| h.layer == layer)
    }

    /// Checks every invariant, naming the first failing record.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        let bad = |msg: String| Err(Error::InvalidTrace(msg));
        if m.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", m.vocab_size));
        }
        if m.d_model == 0 || m.n_layers == 0 {
            return bad("d_model and n_layers must be positive".into());
        }
        if !(m.temperature.is_finite() && m.temperature >= 0.0) {
            return bad(format!("temperature {} must be finite and >= 0", m.temperature));
        }
        if let Some(l) = m.captured_layers.iter().find(|&&l| l >= m.n_layers) {
            return bad(format!("captured layer {l} outside [0, {})", m.n_layers));
        }
        if self.tokens.is_empty() {
            return bad("trace has no token records".into());
        }
        let k = self.topk_len();
        let mut prev: Option<&TokenRecord> = None;
        for (i, r) in self.tokens.iter().enumerate() {
            let at = |msg: String| -> Result<()> {
                Err(Error::InvalidTrace(format!("token record #{i} (position {}): {msg}", r.position)))
            };
            if let Some(p) = prev {
                if r.position <= p.position {
                    return at(format!("position not greater than previous {}", p.position));
                }
            }
            if r.token_id >= m.vocab_size {
                return at(format!("token id {} >= vocab size {}", r.token_id, m.vocab_size));
            }
            for (name, v) in [
                ("surprise", r.surprise),
                ("incoming entropy", r.incoming_entropy),
                ("predicted entropy", r.predicted_entropy),
            ] {
                if !v.is_finite() || v < 0.0 {
                    return at(format!("{name} {v} must be finite and >= 0"));
                }
            }
            if r.topk.len() != k {
                return at(format!("top-k length {} differs from {k}", r.topk.len()));
            }
            let mut last = 0.0f32;
            for (j, &(id, lp)) in r.topk.iter().enumerate() {
                if id >= m.vocab_size {
                    return at(format!("top-k id {id} >= vocab size"));
                }
                if !lp.is_finite() || lp > 0.0 {
                    return at(format!("top-k logprob {lp} must be finite and <= 0"));
                }
                if j > 0 && lp > last {
                    return at("top-k logprobs not nonincreasing".into());
                }
                last = lp;
            }
            // -log p_max <= H whenever the realized token is the predecessor's argmax
            if let Some(p) = prev {
                if p.position + 1 == r.position
                    && p.topk.first().is_some_and(|&(id, _)| id == r.token_id)
                    && r.surprise > r.incoming_entropy + 1e-9 * r.incoming_entropy.max(1.0)
                {
                    return at(format!(
                        "argmax token has surprise {} above incoming entropy {}",
                        r.surprise, r.incoming_entropy
                    ));
                }
            }
            prev = Some(r);
        }
        let mut last_key: Option<(u32, u16)> = None;
        let mut tok_iter = self.tokens.iter().map(|r| r.position).peekable();
        for (i, h) in self.hidden.iter().enumerate() {
            let at = |msg: String| -> Result<()> {
                Err(Error::InvalidTrace(format!(
                    "hidden record #{i} (position {}, layer {}): {msg}",
                    h.position, h.layer
                )))
            };
            let key = (h.position, h.layer);
            if last_key.is_some_and(|lk| key <= lk) {
                return at("hidden records must be strictly ordered by (position, layer)".into());
            }
            last_key = Some(key);
            if !m.captured_layers.contains(&(h.layer as u32)) {
                return at("layer not in captured_layers".into());
            }
            if h.vector.len() != m.d_model as usize {
                return at(format!("vector length {} != d_model {}", h.vector.len(), m.d_model));
            }
            if h.vector.iter().any(|x| !x.is_finite()) {
                return at("non-finite entry".into());
            }
            while tok_iter.peek().is_some_and(|&p| p < h.position) {
                tok_iter.next();
            }
            if tok_iter.peek() != Some(&h.position) {
                return at("position has no token record".into());
            }
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn valid_trace_passes() {
        let t = trace_with(vec![record(0, Role::User, 0.0, 0.0, 1.0), record(1, Role::User, 1.0, 1.0, 1.0)]);
        t.validate().unwrap();
    }

    #[test]
    fn negative_surprise_names_position() {
        let t = trace_with(vec![record(0, Role::User, 0.0, 0.0, 1.0), record(5, Role::User, -0.1, 1.0, 1.0)]);
        let err = t.validate().unwrap_err().to_string();
        assert!(err.contains("position 5"), "{err}");
        assert!(err.contains("surprise"), "{err}");
    }

    #[test]
    fn positions_must_increase() {
        let t = trace_with(vec![record(3, Role::User, 0.0, 0.0, 1.0), record(3, Role::User, 0.0, 0.0, 1.0)]);
        assert!(t.validate().is_err());
    }

    #[test]
    fn topk_must_be_sorted() {
        let mut r = record(0, Role::User, 0.0, 0.0, 1.0);
        r.topk = vec![(1, -2.0), (2, -1.0)];
        assert!(trace_with(vec![r]).validate().is_err());
    }

    #[test]
    fn argmax_surprise_bound_checked() {
        let a = record(0, Role::User, 0.0, 0.0, 1.0);
        let mut b = record(1, Role::User, 2.0, 1.0, 1.0);
        b.token_id = 99; // predecessor argmax
        assert!(trace_with(vec![a, b]).validate().is_err());
    }

    #[test]
    fn hidden_layer_must_be_captured() {
        let mut t = trace_with(vec![record(0, Role::User, 0.0, 0.0, 1.0)]);
        t.hidden.push(HiddenRecord {
            position: 0,
            layer: 0,
            vector: vec![0.0; 4],
        });
        assert!(t.validate().is_err());
        t.hidden[0].layer = 1;
        t.validate().unwrap();
        t.hidden[0].position = 7;
        assert!(t.validate().is_err());
    }

    #[test]
    fn empty_trace_rejected() {
        assert!(trace_with(vec![]).validate().is_err());
    }
}
