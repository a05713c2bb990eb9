//! Instrumented decoder-only transformer: pre-norm blocks with RMS norm,
//! rotary positions and a SiLU MLP.

mod cache;
mod forward;
mod generate;
pub mod planted;
mod session;
mod weights;

pub use cache::{apply_patch, KVCache, PatchSpec, SpanKv};
pub use forward::{
    forward, AttentionFilter, DeltaRecord, FilterMode, ForwardOutput, Hooks, PositionSelector, SteeringSpec,
    TappedState,
};
pub use generate::{generate, generate_in, sample_next, score, GenerateConfig, Generation, TraceBuilder, TraceLabels};
pub use session::{Checkpoint, Session};
pub use weights::{LayerWeights, ModelDims, ModelWeights, WEIGHTS_MAGIC};
