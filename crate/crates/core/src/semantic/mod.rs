//! Topic commitment on underspecified prompts and the on/off-policy prefill
//! crossover.

mod commitment;
mod crossover;
mod lexicon;

pub use commitment::{commitment_stats, stats_from_labels, topic_classify, CommitmentStats, TopicLabel};
pub use crossover::{
    arm_entropy, crossover_experiment, crossover_from_traces, crossover_traces, ArmEntropy, CrossoverConfig,
    CrossoverResult,
};
pub use lexicon::{DomainLexicon, TopicLexicon, BUNDLED_LEXICON, TOPIC_WINDOW};
