use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lexicon::DomainLexicon;
use crate::error::{invalid, Error, Result};
use crate::tokenizer::split_words;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicLabel {
    Topic(String),
    Unclassified,
}

impl TopicLabel {
    pub fn topic(&self) -> Option<&str> {
        match self {
            TopicLabel::Topic(t) => Some(t),
            TopicLabel::Unclassified => None,
        }
    }
}

/// The topic of the earliest keyword found within the first `window` words
/// of `text`; on a shared start the longer keyword wins. Matching is
/// case-folded and whole-word.
pub fn topic_classify(text: &str, lexicon: &DomainLexicon, window: usize) -> Result<TopicLabel> {
    if text.trim().is_empty() {
        return Err(invalid("cannot classify empty text"));
    }
    let words: Vec<String> = split_words(text).into_iter().take(window).map(|w| w.to_lowercase()).collect();
    for start in 0..words.len() {
        let rest = &words[start..];
        let hit = lexicon
            .keywords()
            .iter()
            .filter(|(kw, _)| rest.starts_with(kw))
            .max_by_key(|(kw, _)| kw.len());
        if let Some((_, topic)) = hit {
            return Ok(TopicLabel::Topic(topic.clone()));
        }
    }
    Ok(TopicLabel::Unclassified)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitmentStats {
    pub domain: String,
    pub n_samples: usize,
    /// Most common topic; ties go to the lexicographically smallest label.
    pub mode_topic: String,
    pub mode_count: usize,
    /// `mode_count` over classified samples.
    pub mode_fraction: f64,
    pub distinct_topics: usize,
    pub unclassified_count: usize,
    pub counts: BTreeMap<String, usize>,
}

pub fn commitment_stats<S: AsRef<str>>(samples: &[S], lexicon: &DomainLexicon, window: usize) -> Result<CommitmentStats> {
    if samples.is_empty() {
        return Err(invalid("commitment statistics of no samples"));
    }
    let labels = samples
        .iter()
        .map(|s| topic_classify(s.as_ref(), lexicon, window))
        .collect::<Result<Vec<_>>>()?;
    stats_from_labels(&lexicon.domain, &labels)
}

pub fn stats_from_labels(domain: &str, labels: &[TopicLabel]) -> Result<CommitmentStats> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in labels.iter().filter_map(TopicLabel::topic) {
        *counts.entry(t.to_string()).or_default() += 1;
    }
    let classified: usize = counts.values().sum();
    if classified == 0 {
        return Err(Error::Undefined(format!(
            "all {} samples of {domain} are unclassified",
            labels.len()
        )));
    }
    let (mode_topic, mode_count) = counts
        .iter()
        .fold(None::<(&String, usize)>, |best, (t, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((t, c)),
        })
        .expect("nonempty");
    Ok(CommitmentStats {
        domain: domain.to_string(),
        n_samples: labels.len(),
        mode_topic: mode_topic.clone(),
        mode_count,
        mode_fraction: mode_count as f64 / classified as f64,
        distinct_topics: counts.len(),
        unclassified_count: labels.len() - classified,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::lexicon::{TopicLexicon, TOPIC_WINDOW};

    #[test]
    fn earliest_then_longest() {
        let lex = TopicLexicon::bundled();
        let food = lex.domain("food").unwrap();
        let l = topic_classify("Haggis is a traditional Scottish dish, unlike pizza.", food, TOPIC_WINDOW).unwrap();
        assert_eq!(l, TopicLabel::Topic("haggis".into()));
        assert_eq!(topic_classify("Nothing here.", food, TOPIC_WINDOW).unwrap(), TopicLabel::Unclassified);
        let tech = lex.domain("technology").unwrap();
        let l = topic_classify("Artificial intelligence is everywhere.", tech, TOPIC_WINDOW).unwrap();
        assert_eq!(l.topic(), Some("ai"));
        let custom = TopicLexicon::from_json(r#"{"d": {"a": ["black"], "b": ["black pudding"]}}"#).unwrap();
        let l = topic_classify("Black pudding is dark.", custom.domain("d").unwrap(), TOPIC_WINDOW).unwrap();
        assert_eq!(l.topic(), Some("b"));
        assert!(topic_classify("  ", food, TOPIC_WINDOW).is_err());
    }

    #[test]
    fn window_limits_search() {
        let lex = TopicLexicon::bundled();
        let food = lex.domain("food").unwrap();
        let text = format!("{} pizza", "word ".repeat(50));
        assert_eq!(topic_classify(&text, food, 50).unwrap(), TopicLabel::Unclassified);
        assert_eq!(topic_classify(&text, food, 51).unwrap().topic(), Some("pizza"));
    }

    #[test]
    fn mode_and_ties() {
        let lex = TopicLexicon::bundled();
        let food = lex.domain("food").unwrap();
        let mut s = vec!["haggis"; 48];
        s.extend(["pizza", "pizza"]);
        let st = commitment_stats(&s, food, TOPIC_WINDOW).unwrap();
        assert_eq!((st.mode_fraction, st.distinct_topics), (0.96, 2));
        let st = commitment_stats(&["sushi", "curry", "nothing"], food, TOPIC_WINDOW).unwrap();
        assert_eq!(st.mode_topic, "curry");
        assert_eq!(st.unclassified_count, 1);
        assert_eq!(st.mode_fraction, 0.5);
        assert!(matches!(commitment_stats(&["nothing"], food, TOPIC_WINDOW), Err(Error::Undefined(_))));
    }
}
