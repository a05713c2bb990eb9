//! Deterministic fixture files under `fixtures/`. `tests/fixtures.rs`
//! checks the committed copies against a fresh build and rewrites them when
//! `POLICYLAB_REGEN` is set.

use std::collections::BTreeMap;
use std::path::PathBuf;

use policylab::analytics::SweepRecord;
use policylab::geometry::{build_centroids, write_centroids};
use policylab::prompts::CONTROLLED_PROMPTS;
use policylab::report::csv_string;
use policylab::rng::substream_seed;
use policylab::runtime::{generate, score, GenerateConfig, ModelDims, ModelWeights, TraceLabels};
use policylab::tokenizer::{build_prompt, chat_prompt, WordTokenizer};
use policylab::trace::{write_trace, Feature, FeatureParams, Origin, TemplateCondition, Trace};
use policylab::Weights;

pub const MODELS: [(&str, u64); 3] = [("m1", 11), ("m2", 12), ("m3", 13)];
pub const TAPS: [usize; 2] = [1, 3];

pub fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn model(seed: u64) -> Weights {
    let tok = WordTokenizer::bundled();
    ModelWeights::random(ModelDims::tiny(tok.vocab_size()), seed).unwrap()
}

pub fn trace_name(generator: &str, evaluator: &str, prompt: usize) -> String {
    format!("traces/{generator}_read_by_{evaluator}_p{prompt}.pltr")
}

/// Every generator answers two prompts; every evaluator reads every answer.
/// Only `m1` records hidden states.
pub fn traces() -> Vec<(String, Trace)> {
    let tok = WordTokenizer::bundled();
    let models: Vec<(&str, Weights)> = MODELS.iter().map(|&(n, s)| (n, model(s))).collect();
    let mut out = Vec::new();
    for p in 0..2 {
        let user = tok.encode_strict(CONTROLLED_PROMPTS[p]).unwrap();
        for (g, gw) in &models {
            let cfg = GenerateConfig {
                max_new_tokens: 24,
                temperature: 1.0,
                seed: substream_seed(2024, &format!("fixture/{g}/{p}")),
                topk: 4,
                taps: Vec::new(),
                stop_token: None,
            };
            let response = generate(gw, &chat_prompt(None, &user, &[]), &cfg, &TraceLabels::default(), None)
                .unwrap()
                .generated;
            for (e, ew) in &models {
                let origin = if g == e { Origin::Sampled } else { Origin::TeacherForced };
                let prompt = build_prompt(TemplateCondition::AssistantField, None, &user, &response, origin);
                let labels = TraceLabels {
                    model_id: e.to_string(),
                    generator_id: g.to_string(),
                    evaluator_id: e.to_string(),
                    condition: TemplateCondition::AssistantField,
                    persona: None,
                };
                let taps: &[usize] = if *e == "m1" { &TAPS } else { &[] };
                out.push((trace_name(g, e, p), score(ew, &prompt, &labels, taps, 4).unwrap()));
            }
        }
    }
    out
}

/// Records lying exactly on `ΔH/H = 0.5·x − 0.2` with `H = 1`.
pub fn synthetic_sweep() -> Vec<SweepRecord> {
    (0..21)
        .map(|i| {
            let x = -1.0 + 0.1 * i as f64;
            SweepRecord::new("synthetic", 1.0, i, i as u32, 1.0 + x, 1.0 + 0.5 * x - 0.2)
        })
        .collect()
}

fn on_off(traces: &[(String, Trace)]) -> (Vec<Trace>, Vec<Trace>) {
    let read_by_m1 = traces.iter().filter(|(_, t)| t.meta.evaluator_id == "m1");
    let (on, off): (Vec<_>, Vec<_>) = read_by_m1.partition(|(_, t)| t.meta.generator_id == "m1");
    (on.into_iter().map(|x| x.1.clone()).collect(), off.into_iter().map(|x| x.1.clone()).collect())
}

fn centroid_file(traces: &[(String, Trace)]) -> Vec<u8> {
    let (on, off) = on_off(traces);
    let params = FeatureParams { halflife: 5.0 };
    let mut sets = Vec::new();
    for feature in [Feature::PredEntropy, Feature::IncomingSurprise] {
        for layer in [1u32, 3] {
            sets.push(build_centroids(&on, feature, params, layer, 8, "on_policy", false).unwrap());
            sets.push(build_centroids(&off, feature, params, layer, 8, "off_policy", false).unwrap());
        }
    }
    let mut buf = Vec::new();
    write_centroids(&sets, &mut buf).unwrap();
    buf
}

fn json(v: serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(&v).unwrap();
    s.push('\n');
    s.into_bytes()
}

fn configs(traces: &[(String, Trace)]) -> BTreeMap<String, Vec<u8>> {
    use serde_json::json;
    let all: Vec<String> = traces.iter().map(|(n, _)| format!("../{n}")).collect();
    let by = |g: &dyn Fn(&Trace) -> bool| -> Vec<String> {
        traces.iter().filter(|(_, t)| g(t)).map(|(n, _)| format!("../{n}")).collect()
    };
    let on = by(&|t| t.meta.evaluator_id == "m1" && t.meta.generator_id == "m1");
    let off = by(&|t| t.meta.evaluator_id == "m1" && t.meta.generator_id != "m1");
    let mut m = BTreeMap::new();
    let mut put = |name: &str, v: serde_json::Value| {
        m.insert(format!("configs/{name}.json"), json(v));
    };
    put("analyze", json!({"schema_version": 1, "traces": all}));
    put("matrix", json!({"schema_version": 1, "traces": all}));
    put("sweep", json!({"schema_version": 1, "model": {"kind": "random", "seed": 11}, "ranks": 12}));
    put("fit", json!({"schema_version": 1, "input": "../sweep_synthetic.csv"}));
    put(
        "centroids",
        json!({
            "schema_version": 1,
            "sets": [{"condition": "on_policy", "traces": on}, {"condition": "off_policy", "traces": off}],
            "layers": [1, 3],
            "bins": 8
        }),
    );
    put("geometry", json!({"schema_version": 1, "input": "../centroids.plcs", "match_mode": "interpolate"}));
    put("steer", json!({"schema_version": 1, "model": {"kind": "entropy_direction"}, "bins": 10, "frac": 0.5}));
    put(
        "steer_centroids",
        json!({
            "schema_version": 1,
            "model": {"kind": "random", "seed": 11},
            "centroids": {"path": "../centroids.plcs", "feature": "pred_entropy", "condition": "on_policy", "layer": 3},
            "layers": [3, 3],
            "frac": 1.0
        }),
    );
    put("kv_patch", json!({"schema_version": 1, "domains": ["food", "sport"], "gen_tokens": 4}));
    put(
        "kv_patch_filtered",
        json!({
            "schema_version": 1,
            "domains": ["element"],
            "gen_tokens": 4,
            "onset": 2,
            "patch_mode": "in_span",
            "basis": {"kind": "axes", "dims": [0, 1]}
        }),
    );
    put(
        "semantic",
        json!({
            "schema_version": 1,
            "samples": "../semantic_samples.json",
            "seed": 5,
            "crossover": {"model": {"kind": "random", "seed": 11}, "domains": ["food"], "n": 3, "max_new_tokens": 10, "body_start": 2}
        }),
    );
    put("traject", json!({"schema_version": 1, "traces": on, "window": 5, "body_start": 2}));
    m
}

/// Every generated fixture file, keyed by path relative to [`dir`]. The
/// hand-written semantic samples are not included.
pub fn files() -> BTreeMap<String, Vec<u8>> {
    let traces = traces();
    let mut m = configs(&traces);
    for (name, t) in &traces {
        let mut buf = Vec::new();
        write_trace(t, &mut buf).unwrap();
        m.insert(name.clone(), buf);
    }
    m.insert("centroids.plcs".into(), centroid_file(&traces));
    m.insert("sweep_synthetic.csv".into(), csv_string(&synthetic_sweep()).unwrap().into_bytes());
    m
}
