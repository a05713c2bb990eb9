use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tokenizer::split_words;

pub const BUNDLED_LEXICON: &str = include_str!("../../data/lexicon.json");

/// Default classification window, in words and punctuation marks.
pub const TOPIC_WINDOW: usize = 50;

/// Topic keywords of one domain, case-folded and split into words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainLexicon {
    pub domain: String,
    /// `(keyword words, topic)` sorted by keyword.
    keywords: Vec<(Vec<String>, String)>,
}

fn fold(word: &str) -> String {
    word.to_lowercase()
}

impl DomainLexicon {
    pub fn new(domain: &str, topics: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        if topics.is_empty() {
            return Err(invalid(format!("domain {domain:?} has no topics")));
        }
        let mut owner: BTreeMap<Vec<String>, String> = BTreeMap::new();
        for (topic, kws) in topics {
            if kws.is_empty() {
                return Err(invalid(format!("topic {topic:?} in {domain:?} has no keywords")));
            }
            for kw in kws {
                let words: Vec<String> = split_words(kw).into_iter().map(fold).collect();
                if words.is_empty() {
                    return Err(invalid(format!("empty keyword for topic {topic:?} in {domain:?}")));
                }
                if let Some(prev) = owner.insert(words, topic.clone()) {
                    if prev != *topic {
                        return Err(invalid(format!(
                            "keyword {kw:?} maps to both {prev:?} and {topic:?} in {domain:?}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            domain: domain.to_string(),
            keywords: owner.into_iter().collect(),
        })
    }

    pub fn topics(&self) -> Vec<&str> {
        let mut t: Vec<&str> = self.keywords.iter().map(|(_, t)| t.as_str()).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    pub(crate) fn keywords(&self) -> &[(Vec<String>, String)] {
        &self.keywords
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopicLexicon {
    domains: BTreeMap<String, DomainLexicon>,
}

impl TopicLexicon {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, BTreeMap<String, Vec<String>>> =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("lexicon: {e}")))?;
        let domains = raw
            .iter()
            .map(|(d, topics)| Ok((d.clone(), DomainLexicon::new(d, topics)?)))
            .collect::<Result<_>>()?;
        Ok(Self { domains })
    }

    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn domain(&self, name: &str) -> Result<&DomainLexicon> {
        self.domains
            .get(name)
            .ok_or_else(|| invalid(format!("lexicon does not cover domain {name:?}")))
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domains.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_covers_all_pair_domains() {
        let lex = TopicLexicon::bundled();
        for p in crate::prompts::prompt_pairs() {
            assert!(lex.domain(&p.domain).is_ok(), "{}", p.domain);
        }
    }

    #[test]
    fn conflicting_keyword_rejected() {
        let bad = r#"{"d": {"a": ["x"], "b": ["X"]}}"#;
        assert!(TopicLexicon::from_json(bad).is_err());
        assert!(TopicLexicon::from_json(r#"{"d": {"a": []}}"#).is_err());
    }
}
