//! Word-level tokenizer over a bundled corpus, and the generic role-tagging
//! chat template.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use crate::error::{invalid, Result};
use crate::trace::{Origin, Role, TemplateCondition};

pub const BOS: u32 = 0;
pub const SYSTEM: u32 = 1;
pub const USER: u32 = 2;
pub const ASSISTANT: u32 = 3;
pub const END: u32 = 4;
pub const UNK: u32 = 5;

const SPECIALS: [&str; 6] = ["<|bos|>", "<|system|>", "<|user|>", "<|assistant|>", "<|end|>", "<|unk|>"];

/// Template tokens; analytics exclude them by default.
pub const TEMPLATE_TOKENS: [u32; 5] = [BOS, SYSTEM, USER, ASSISTANT, END];

pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.txt");

/// Splits text into words (letters, digits, inner apostrophes) and single
/// punctuation characters.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = None;
        for (i, c) in chunk.char_indices() {
            let wordy = c.is_alphanumeric() || (c == '\'' && start.is_some());
            match (wordy, start) {
                (true, None) => start = Some(i),
                (true, Some(_)) => {}
                (false, s) => {
                    if let Some(s) = s {
                        out.push(&chunk[s..i]);
                        start = None;
                    }
                    out.push(&chunk[i..i + c.len_utf8()]);
                }
            }
        }
        if let Some(s) = start {
            out.push(&chunk[s..]);
        }
    }
    out
}

fn attaches_left(word: &str) -> bool {
    matches!(word, "." | "," | "?" | "!" | ":" | ";" | "%" | ")")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordTokenizer {
    words: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl WordTokenizer {
    /// Specials first, then the sorted distinct words of `corpus`.
    pub fn from_corpus(corpus: &str) -> Self {
        let distinct: BTreeSet<&str> = split_words(corpus).into_iter().collect();
        let words: Vec<String> = SPECIALS
            .iter()
            .copied()
            .chain(distinct.into_iter().filter(|w| !SPECIALS.contains(w)))
            .map(String::from)
            .collect();
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { words, ids }
    }

    pub fn bundled() -> Self {
        Self::from_corpus(BUNDLED_CORPUS)
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text).into_iter().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Encodes text that must be fully in-vocabulary.
    pub fn encode_strict(&self, text: &str) -> Result<Vec<u32>> {
        split_words(text)
            .into_iter()
            .map(|w| self.id(w).ok_or_else(|| invalid(format!("word {w:?} is not in the vocabulary"))))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        self.decode_with_offsets(ids).0
    }

    /// Decoded text plus the byte range each token occupies in it.
    pub fn decode_with_offsets(&self, ids: &[u32]) -> (String, Vec<Range<usize>>) {
        let mut text = String::new();
        let mut spans = Vec::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            let w = self.word(id).unwrap_or(SPECIALS[UNK as usize]);
            if i > 0 && !attaches_left(w) {
                text.push(' ');
            }
            let s = text.len();
            text.push_str(w);
            spans.push(s..text.len());
        }
        (text, spans)
    }
}

/// A tokenized, role-tagged context.
#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub tokens: Vec<u32>,
    pub roles: Vec<Role>,
    pub origins: Vec<Origin>,
    /// Positions of the user message text, template markers excluded.
    pub user_span: Range<usize>,
    /// Positions of prefilled or teacher-forced response text.
    pub response_span: Range<usize>,
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn push(&mut self, ids: &[u32], role: Role, origin: Origin) {
        self.tokens.extend_from_slice(ids);
        self.roles.extend(std::iter::repeat_n(role, ids.len()));
        self.origins.extend(std::iter::repeat_n(origin, ids.len()));
    }

    /// Appends teacher-forced tokens with the given role.
    pub fn extend(&mut self, ids: &[u32], role: Role) {
        self.push(ids, role, Origin::TeacherForced);
    }
}

/// Lays out a conversation in one of the three formatting conditions.
///
/// Response text is tagged `Assistant` in every condition: the tag names the
/// text's author, the condition records where it was placed.
pub fn build_prompt(
    condition: TemplateCondition,
    system: Option<&[u32]>,
    user: &[u32],
    response: &[u32],
    response_origin: Origin,
) -> Prompt {
    let mut p = Prompt {
        tokens: Vec::new(),
        roles: Vec::new(),
        origins: Vec::new(),
        user_span: 0..0,
        response_span: 0..0,
    };
    p.push(&[BOS], Role::Untagged, Origin::TeacherForced);
    match condition {
        TemplateCondition::AssistantField | TemplateCondition::UserField => {
            if let Some(sys) = system {
                p.push(&[SYSTEM], Role::System, Origin::TeacherForced);
                p.push(sys, Role::System, Origin::TeacherForced);
                p.push(&[END], Role::System, Origin::TeacherForced);
            }
            p.push(&[USER], Role::User, Origin::TeacherForced);
            let s = p.len();
            p.push(user, Role::User, Origin::TeacherForced);
            p.user_span = s..p.len();
            if condition == TemplateCondition::AssistantField {
                p.push(&[END], Role::User, Origin::TeacherForced);
                p.push(&[ASSISTANT], Role::Assistant, Origin::TeacherForced);
                let s = p.len();
                p.push(response, Role::Assistant, response_origin);
                p.response_span = s..p.len();
            } else {
                let s = p.len();
                p.push(response, Role::Assistant, response_origin);
                p.response_span = s..p.len();
                p.push(&[END], Role::User, Origin::TeacherForced);
                p.push(&[ASSISTANT], Role::Assistant, Origin::TeacherForced);
            }
        }
        TemplateCondition::NoTemplate => {
            if let Some(sys) = system {
                p.push(sys, Role::System, Origin::TeacherForced);
            }
            let s = p.len();
            p.push(user, Role::User, Origin::TeacherForced);
            p.user_span = s..p.len();
            let s = p.len();
            p.push(response, Role::Assistant, response_origin);
            p.response_span = s..p.len();
        }
    }
    p
}

/// A chat context ready for generation: system and user turns, then the
/// assistant marker and an optional prefill.
pub fn chat_prompt(system: Option<&[u32]>, user: &[u32], prefill: &[u32]) -> Prompt {
    build_prompt(TemplateCondition::AssistantField, system, user, prefill, Origin::Prefilled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitting_keeps_apostrophes_and_separates_punctuation() {
        assert_eq!(split_words("What's the best way?"), vec!["What's", "the", "best", "way", "?"]);
        assert_eq!(split_words("VERDICT: NOT"), vec!["VERDICT", ":", "NOT"]);
        assert_eq!(split_words("'quoted' self-aware"), vec!["'", "quoted'", "self", "-", "aware"]);
    }

    #[test]
    fn bundled_vocab_is_stable() {
        let t = WordTokenizer::bundled();
        assert_eq!(t.word(0), Some("<|bos|>"));
        assert_eq!(t.word(UNK), Some("<|unk|>"));
        assert!(t.id("haggis").is_some() && t.id("Haggis").is_some());
        assert_eq!(t, WordTokenizer::bundled());
        assert_eq!(t.encode("zzyzx"), vec![UNK]);
        assert!(t.encode_strict("zzyzx").is_err());
    }

    #[test]
    fn decode_offsets_cover_tokens() {
        let t = WordTokenizer::bundled();
        let ids = t.encode("Haggis is a dish.");
        let (text, spans) = t.decode_with_offsets(&ids);
        assert_eq!(text, "Haggis is a dish.");
        assert_eq!(&text[spans[0].clone()], "Haggis");
        assert_eq!(&text[spans[4].clone()], ".");
    }

    #[test]
    fn template_spans() {
        let p = chat_prompt(Some(&[10, 11]), &[20, 21, 22], &[30]);
        assert_eq!(p.tokens, vec![BOS, SYSTEM, 10, 11, END, USER, 20, 21, 22, END, ASSISTANT, 30]);
        assert_eq!(p.user_span, 6..9);
        assert_eq!(p.response_span, 11..12);
        assert_eq!(p.origins[11], Origin::Prefilled);
        assert_eq!(p.roles[3], Role::System);
        let u = build_prompt(TemplateCondition::UserField, None, &[20], &[30, 31], Origin::TeacherForced);
        assert_eq!(u.tokens, vec![BOS, USER, 20, 30, 31, END, ASSISTANT]);
        assert_eq!(u.response_span, 3..5);
        let n = build_prompt(TemplateCondition::NoTemplate, None, &[20], &[30], Origin::TeacherForced);
        assert_eq!(n.tokens, vec![BOS, 20, 30]);
    }
}
