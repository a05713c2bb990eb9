//! Interventional protocols on the micro-runtime: centroid steering, verdict
//! readout and the prefill-detection patching experiments.

mod prefill;
mod steering;
mod verdict;

pub use prefill::{
    pair_contexts, prefill_experiment, run_arm_pair, subspace_filtered_patch, Arm, ArmRun, Direction, PairContexts,
    PatchKind, PatchMode, PrefillConfig, PrefillExperiment, Transcript, VerdictResult,
};
pub use steering::{steering_sweep, steering_vectors, MeasurePosition, SteeredBin, SteeringContext, SteeringSweep};
pub use verdict::{cue_end, sequence_logprob, transcript_verdict, verdict_probability, VerdictReadout, VerdictTokens};
