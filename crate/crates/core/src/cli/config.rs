//! Per-subcommand configuration files: strict JSON, versioned, with paths
//! resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::geometry::MatchMode;
use crate::intervention::{Direction, MeasurePosition};
use crate::trace::Feature;

pub const SCHEMA_VERSION: u32 = 1;

fn v1() -> u32 {
    SCHEMA_VERSION
}

fn join(base: &Path, p: &mut PathBuf) {
    if p.as_os_str().is_empty() {
        return;
    }
    let joined = if p.is_relative() { base.join(&*p) } else { p.clone() };
    *p = std::path::absolute(&joined).unwrap_or(joined);
}

/// Common behaviour of subcommand configs.
pub trait Config: Serialize + DeserializeOwned + Default {
    fn schema_version(&self) -> u32;
    /// Makes relative paths relative to `base`.
    fn resolve(&mut self, base: &Path);
    /// Files that must exist before the run starts.
    fn inputs(&self) -> Vec<PathBuf>;
}

/// Which weights to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Random weights of the small default shape over the bundled vocabulary.
    Random {
        #[serde(default)]
        seed: u64,
    },
    /// Crafted verdict model that compares request and response topics.
    Intent,
    /// Crafted model whose output entropy follows one residual direction.
    EntropyDirection {
        #[serde(default = "two")]
        n_layers: usize,
    },
    /// A `PLWT` weights file.
    File { path: PathBuf },
}

fn two() -> usize {
    2
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Random { seed: 0 }
    }
}

impl ModelConfig {
    fn resolve(&mut self, base: &Path) {
        if let ModelConfig::File { path } = self {
            join(base, path);
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            ModelConfig::File { path } => vec![path.clone()],
            _ => Vec::new(),
        }
    }
}

macro_rules! config_impl {
    ($t:ty, |$s:ident, $b:ident| $resolve:block, |$s2:ident| $inputs:expr) => {
        impl Config for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }

            fn resolve(&mut self, base: &Path) {
                let $s = self;
                let $b = base;
                $resolve
            }

            fn inputs(&self) -> Vec<PathBuf> {
                let $s2 = self;
                $inputs
            }
        }
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    #[serde(default)]
    pub traces: Vec<PathBuf>,
    #[serde(default)]
    pub include_special: bool,
    /// Histogram edges in nats; default 0 to 8 in steps of 0.25.
    #[serde(default)]
    pub histogram_edges: Option<Vec<f64>>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            traces: Vec::new(),
            include_special: false,
            histogram_edges: None,
        }
    }
}

config_impl!(AnalyzeConfig, |s, b| { s.traces.iter_mut().for_each(|p| join(b, p)) }, |s| s.traces.clone());

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    #[serde(default)]
    pub traces: Vec<PathBuf>,
    #[serde(default)]
    pub include_special: bool,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            traces: Vec::new(),
            include_special: false,
        }
    }
}

config_impl!(MatrixConfig, |s, b| { s.traces.iter_mut().for_each(|p| join(b, p)) }, |s| s.traces.clone());

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelConfig,
    /// User messages placed in the chat template; default the twenty
    /// controlled prompts.
    #[serde(default)]
    pub contexts: Option<Vec<String>>,
    /// Ranks `0..ranks` are swept.
    #[serde(default = "twenty")]
    pub ranks: usize,
}

fn twenty() -> usize {
    20
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::default(),
            contexts: None,
            ranks: 20,
        }
    }
}

config_impl!(SweepConfig, |s, b| { s.model.resolve(b) }, |s| s.model.inputs());

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    /// Sweep records as written by `sweep`.
    #[serde(default)]
    pub input: PathBuf,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            input: PathBuf::new(),
        }
    }
}

config_impl!(FitConfig, |s, b| { join(b, &mut s.input) }, |s| vec![s.input.clone()]);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionTraces {
    pub condition: String,
    pub traces: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentroidsConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    #[serde(default)]
    pub sets: Vec<ConditionTraces>,
    #[serde(default = "default_features")]
    pub features: Vec<Feature>,
    /// Layers to bin; default every captured layer of the first trace.
    #[serde(default)]
    pub layers: Option<Vec<u32>>,
    #[serde(default = "twenty")]
    pub bins: usize,
    #[serde(default = "halflife")]
    pub halflife: f64,
    #[serde(default)]
    pub include_special: bool,
}

pub fn default_features() -> Vec<Feature> {
    vec![
        Feature::PredEntropy,
        Feature::IncomingSurprise,
        Feature::EmaEntropyBack,
        Feature::EmaSurpriseBack,
    ]
}

fn halflife() -> f64 {
    5.0
}

impl Default for CentroidsConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sets: Vec::new(),
            features: default_features(),
            layers: None,
            bins: 20,
            halflife: 5.0,
            include_special: false,
        }
    }
}

config_impl!(
    CentroidsConfig,
    |s, b| {
        for set in &mut s.sets {
            set.traces.iter_mut().for_each(|p| join(b, p));
        }
    },
    |s| s.sets.iter().flat_map(|c| c.traces.clone()).collect()
);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    /// Centroid container written by `centroids`.
    #[serde(default)]
    pub input: PathBuf,
    #[serde(default)]
    pub match_mode: MatchMode,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            input: PathBuf::new(),
            match_mode: MatchMode::Index,
        }
    }
}

config_impl!(GeometryConfig, |s, b| { join(b, &mut s.input) }, |s| vec![s.input.clone()]);

/// One set of a centroid container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentroidSelector {
    pub path: PathBuf,
    #[serde(default)]
    pub feature: Option<Feature>,
    #[serde(default)]
    pub condition: Option<String>,
    #[serde(default)]
    pub layer: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelConfig,
    /// Without a selector, centroids are synthesized along the model's
    /// planted direction (entropy-direction model only).
    #[serde(default)]
    pub centroids: Option<CentroidSelector>,
    #[serde(default = "half")]
    pub frac: f64,
    /// Inclusive layer range.
    #[serde(default)]
    pub layers: Option<(usize, usize)>,
    #[serde(default)]
    pub contexts: Option<Vec<String>>,
    #[serde(default)]
    pub measure: MeasurePosition,
    /// Bins of synthesized centroids.
    #[serde(default = "twenty")]
    pub bins: usize,
}

fn half() -> f64 {
    0.5
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::default(),
            centroids: None,
            frac: 0.5,
            layers: None,
            contexts: None,
            measure: MeasurePosition::Last,
            bins: 20,
        }
    }
}

config_impl!(
    SteerConfig,
    |s, b| {
        s.model.resolve(b);
        if let Some(c) = &mut s.centroids {
            join(b, &mut c.path);
        }
    },
    |s| {
        let mut v = s.model.inputs();
        v.extend(s.centroids.iter().map(|c| c.path.clone()));
        v
    }
);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchModeConfig {
    #[default]
    Plain,
    Full,
    InSpan,
    Complement,
}

/// Basis for subspace-filtered patching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisConfig {
    /// Span of centered centroids of every set at `layer`.
    Centroids { path: PathBuf, layer: u32 },
    /// Coordinate axes.
    Axes { dims: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KvPatchConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    #[serde(default = "intent")]
    pub model: ModelConfig,
    /// Default: all bundled pairs.
    #[serde(default)]
    pub domains: Option<Vec<String>>,
    #[serde(default = "suppress")]
    pub direction: Direction,
    #[serde(default)]
    pub onset: usize,
    #[serde(default = "eight")]
    pub gen_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub patch_mode: PatchModeConfig,
    #[serde(default)]
    pub basis: Option<BasisConfig>,
    #[serde(default = "yes")]
    pub system_prompt: bool,
}

fn intent() -> ModelConfig {
    ModelConfig::Intent
}

fn suppress() -> Direction {
    Direction::SuppressTruePositive
}

fn eight() -> usize {
    8
}

fn yes() -> bool {
    true
}

impl Default for KvPatchConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: intent(),
            domains: None,
            direction: suppress(),
            onset: 0,
            gen_tokens: 8,
            temperature: 0.0,
            seed: 0,
            patch_mode: PatchModeConfig::Plain,
            basis: None,
            system_prompt: true,
        }
    }
}

config_impl!(
    KvPatchConfig,
    |s, b| {
        s.model.resolve(b);
        if let Some(BasisConfig::Centroids { path, .. }) = &mut s.basis {
            join(b, path);
        }
    },
    |s| {
        let mut v = s.model.inputs();
        if let Some(BasisConfig::Centroids { path, .. }) = &s.basis {
            v.push(path.clone());
        }
        v
    }
);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossoverSection {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub domains: Option<Vec<String>>,
    #[serde(default = "ten")]
    pub n: usize,
    #[serde(default = "forty")]
    pub max_new_tokens: usize,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "body_start")]
    pub body_start: usize,
    #[serde(default = "body_end")]
    pub body_end: usize,
    #[serde(default)]
    pub system_prompt: bool,
}

fn ten() -> usize {
    10
}

fn forty() -> usize {
    40
}

fn one() -> f64 {
    1.0
}

fn body_start() -> usize {
    crate::analytics::BODY_START
}

fn body_end() -> usize {
    crate::analytics::BODY_END
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    /// JSON object mapping each domain to its sampled completions.
    #[serde(default)]
    pub samples: Option<PathBuf>,
    /// Topic lexicon; default the bundled one.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default = "window")]
    pub window: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub crossover: Option<CrossoverSection>,
}

fn window() -> usize {
    crate::semantic::TOPIC_WINDOW
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            samples: None,
            lexicon: None,
            window: window(),
            seed: 0,
            crossover: None,
        }
    }
}

config_impl!(
    SemanticConfig,
    |s, b| {
        if let Some(p) = &mut s.samples {
            join(b, p);
        }
        if let Some(p) = &mut s.lexicon {
            join(b, p);
        }
        if let Some(c) = &mut s.crossover {
            c.model.resolve(b);
        }
    },
    |s| {
        let mut v: Vec<PathBuf> = s.samples.iter().chain(&s.lexicon).cloned().collect();
        if let Some(c) = &s.crossover {
            v.extend(c.model.inputs());
        }
        v
    }
);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    #[serde(default)]
    pub traces: Vec<PathBuf>,
    #[serde(default = "ten")]
    pub window: usize,
    #[serde(default = "body_start")]
    pub body_start: usize,
    #[serde(default = "body_end")]
    pub body_end: usize,
}

impl Default for TrajectConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            traces: Vec::new(),
            window: 10,
            body_start: body_start(),
            body_end: body_end(),
        }
    }
}

config_impl!(TrajectConfig, |s, b| { s.traces.iter_mut().for_each(|p| join(b, p)) }, |s| s.traces.clone());

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default = "v1")]
    pub schema_version: u32,
    /// Output directory of an earlier run.
    #[serde(default)]
    pub input: PathBuf,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            input: PathBuf::new(),
        }
    }
}

config_impl!(ReportConfig, |s, b| { join(b, &mut s.input) }, |s| vec![s.input.join("manifest.json")]);
