use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::*;
use super::{check_inputs, load_config, Artifacts, CliError, CliResult, Command, CommonArgs, Format};
use crate::analytics::{
    cross_matrices, default_edges, fit_feedback, role_stats, self_advantages, single_step_sweep, body_entropy,
    trace_trajectory, CrossMatrix, FeedbackFit, RoleStats, SweepRecord,
};
use crate::error::{invalid, shape};
use crate::geometry::{
    build_centroids, linear_cka, matched_cosine, pca_top3, procrustes_similarity, read_centroids_file, span_basis,
    write_centroids, CentroidSet, PcaProjection, SubspaceBasis,
};
use crate::intervention::{
    prefill_experiment, steering_sweep, PatchKind, PrefillConfig, SteeringContext, SteeringSweep, VerdictResult,
};
use crate::linalg::Matrix;
use crate::prompts::{prompt_pair, prompt_pairs, CONTROLLED_PROMPTS};
use crate::report::{csv_string, figures, json_string, jsonl_string, read_csv};
use crate::runtime::planted::{entropy_direction_model, intent_model};
use crate::runtime::{FilterMode, ModelDims, ModelWeights, Session};
use crate::semantic::{commitment_stats, crossover_experiment, topic_classify, CrossoverConfig, TopicLexicon};
use crate::tokenizer::{chat_prompt, WordTokenizer};
use crate::trace::{read_trace_file, FeatureParams, Trace};
use crate::Weights;

pub(super) fn dispatch(cmd: &Command) -> CliResult<String> {
    let a = cmd.args();
    match cmd {
        Command::Analyze(_) => analyze(a),
        Command::Matrix(_) => matrix(a),
        Command::Sweep(_) => sweep(a),
        Command::Fit(_) => fit(a),
        Command::Centroids(_) => centroids(a),
        Command::Geometry(_) => geometry(a),
        Command::Steer(_) => steer(a),
        Command::KvPatch(_) => kv_patch(a),
        Command::Semantic(_) => semantic(a),
        Command::Traject(_) => traject(a),
        Command::Report(_) => report(a),
    }
}

/// Flags a subcommand accepts besides `--config`, `--out` and `--format`.
fn allow(sub: &str, a: &CommonArgs, allowed: &[&str]) -> CliResult<()> {
    let given = [
        ("seed", a.seed.is_some()),
        ("trace", !a.traces.is_empty()),
        ("weights", a.weights.is_some()),
        ("input", a.input.is_some()),
        ("layers", a.layers.is_some()),
        ("bins", a.bins.is_some()),
        ("frac", a.frac.is_some()),
        ("ranks", a.ranks.is_some()),
    ];
    match given.iter().find(|(n, set)| *set && !allowed.contains(n)) {
        Some((n, _)) => Err(CliError::Usage(format!("--{n} does not apply to {sub}"))),
        None => Ok(()),
    }
}

fn formats(a: &CommonArgs) -> Vec<Format> {
    let mut f = if a.format.is_empty() {
        vec![Format::Csv, Format::Json]
    } else {
        a.format.clone()
    };
    f.sort();
    f.dedup();
    f
}

fn abs(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn abs_all(ps: &[PathBuf]) -> Vec<PathBuf> {
    ps.iter().map(|p| abs(p)).collect()
}

/// Output directory plus the formats requested.
struct Out {
    art: Artifacts,
    formats: Vec<Format>,
}

impl Out {
    fn new(a: &CommonArgs) -> CliResult<Self> {
        Ok(Self {
            art: Artifacts::create(&a.out)?,
            formats: formats(a),
        })
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> CliResult<()> {
        if self.wants(Format::Csv) {
            self.art.write(name, csv_string(rows)?)?;
        }
        Ok(())
    }

    fn json<V: Serialize + ?Sized>(&mut self, name: &str, v: &V) -> CliResult<()> {
        if self.wants(Format::Json) {
            self.art.write(name, json_string(v)?)?;
        }
        Ok(())
    }

    fn svg(&mut self, name: &str, render: impl FnOnce() -> crate::Result<String>) -> CliResult<()> {
        if self.wants(Format::Svg) {
            self.art.write(name, render()?)?;
        }
        Ok(())
    }

    fn finish<C: Config>(mut self, sub: &str, seed: Option<u64>, cfg: &C, summary: String) -> CliResult<String> {
        self.art.write("config.json", json_string(cfg)?)?;
        let failed = self.art.failed_checks();
        let value = serde_json::to_value(cfg).map_err(crate::Error::from)?;
        self.art.finish(sub, seed, value, &cfg.inputs())?;
        if failed.is_empty() {
            Ok(summary)
        } else {
            Err(CliError::ChecksFailed(failed))
        }
    }
}

fn read_traces(paths: &[PathBuf]) -> CliResult<Vec<Trace>> {
    if paths.is_empty() {
        return Err(CliError::Usage("no traces given (--trace or config traces)".into()));
    }
    paths
        .iter()
        .map(|p| read_trace_file(p).map_err(|e| CliError::Failed(invalid(format!("{}: {e}", p.display())))))
        .collect()
}

fn trace_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn load_model(m: &ModelConfig, tok: &WordTokenizer) -> CliResult<Weights> {
    let w = match m {
        ModelConfig::Random { seed } => ModelWeights::random(ModelDims::tiny(tok.vocab_size()), *seed)?,
        ModelConfig::Intent => intent_model(tok)?,
        ModelConfig::EntropyDirection { n_layers } => entropy_direction_model(tok.vocab_size(), *n_layers)?.0,
        ModelConfig::File { path } => ModelWeights::read_file(path)?,
    };
    if w.dims.vocab != tok.vocab_size() {
        return Err(CliError::Failed(shape(format!(
            "model vocabulary {} differs from the bundled tokenizer's {}",
            w.dims.vocab,
            tok.vocab_size()
        ))));
    }
    Ok(w)
}

fn chat_contexts(tok: &WordTokenizer, texts: Option<&Vec<String>>) -> CliResult<Vec<SteeringContext>> {
    let owned: Vec<String>;
    let texts: Vec<&str> = match texts {
        Some(t) => {
            owned = t.clone();
            owned.iter().map(String::as_str).collect()
        }
        None => CONTROLLED_PROMPTS.to_vec(),
    };
    if texts.is_empty() {
        return Err(CliError::Usage("no contexts configured".into()));
    }
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let user = tok.encode_strict(t)?;
            Ok(SteeringContext {
                id: format!("ctx{i:02}"),
                tokens: chat_prompt(None, &user, &[]).tokens,
            })
        })
        .collect()
}

// analyze

#[derive(Serialize)]
struct RoleCsv {
    role: &'static str,
    n: usize,
    mean: Option<f64>,
    median: Option<f64>,
    std: Option<f64>,
    min: Option<f64>,
    max: Option<f64>,
}

#[derive(Serialize)]
struct HistCsv {
    role: &'static str,
    lo: f64,
    hi: f64,
    count: usize,
}

fn analyze(a: &CommonArgs) -> CliResult<String> {
    allow("analyze", a, &["trace"])?;
    let mut cfg: AnalyzeConfig = load_config(a.config.as_deref())?;
    if !a.traces.is_empty() {
        cfg.traces = abs_all(&a.traces);
    }
    check_inputs(&cfg.inputs())?;
    let traces = read_traces(&cfg.traces)?;
    let edges = cfg.histogram_edges.clone().unwrap_or_else(default_edges);
    let stats = role_stats(&traces, cfg.include_special, &edges)?;
    let mut out = Out::new(a)?;
    let rows: Vec<RoleCsv> = stats
        .rows
        .iter()
        .map(|r| RoleCsv {
            role: r.role.name(),
            n: r.summary.as_ref().map_or(0, |s| s.n),
            mean: r.summary.as_ref().map(|s| s.mean),
            median: r.summary.as_ref().map(|s| s.median),
            std: r.summary.as_ref().map(|s| s.std),
            min: r.summary.as_ref().map(|s| s.min),
            max: r.summary.as_ref().map(|s| s.max),
        })
        .collect();
    let hist: Vec<HistCsv> = stats
        .rows
        .iter()
        .flat_map(|r| {
            r.histogram.iter().enumerate().map(|(i, &c)| HistCsv {
                role: r.role.name(),
                lo: stats.bin_edges[i],
                hi: stats.bin_edges[i + 1],
                count: c,
            })
        })
        .collect();
    out.csv("role_stats.csv", &rows)?;
    out.csv("role_histogram.csv", &hist)?;
    out.json("role_stats.json", &stats)?;
    out.svg("role_bars.svg", || figures::role_bars(&stats))?;
    let finite = stats.rows.iter().filter_map(|r| r.summary.as_ref()).all(|s| s.mean.is_finite() && s.median.is_finite());
    out.art.check("finite_role_means", finite, "role means and medians are finite");
    let hist_ok = stats.rows.iter().all(|r| r.histogram.iter().sum::<usize>() <= r.summary.as_ref().map_or(0, |s| s.n));
    out.art.check("histogram_counts", hist_ok, "histogram counts do not exceed role token counts");
    out.art.note("template tokens excluded unless include_special");
    out.art.note("user-turn entropies come from the evaluating model reading the text teacher-forced");
    let mut summary = String::new();
    for r in &rows {
        match r.mean {
            Some(m) => writeln!(summary, "{}: n = {} mean = {m} median = {}", r.role, r.n, r.median.unwrap()).unwrap(),
            None => writeln!(summary, "{}: absent", r.role).unwrap(),
        }
    }
    out.finish("analyze", None, &cfg, summary)
}

// matrix

#[derive(Serialize)]
struct MatrixCsv<'a> {
    generator: &'a str,
    evaluator: &'a str,
    condition: &'static str,
    mean_nats: f64,
    n_tokens: usize,
    persona: Option<&'a str>,
}

#[derive(Serialize)]
struct FlagCsv<'a> {
    condition: &'static str,
    persona: Option<&'a str>,
    evaluator: &'a str,
    diagonal_minimum: &'static str,
}

#[derive(Serialize)]
struct AdvantageCsv<'a> {
    condition: &'static str,
    persona: Option<&'a str>,
    evaluator: &'a str,
    self_h: Option<f64>,
    cross_mean: Option<f64>,
    cross_min: Option<f64>,
    cross_max: Option<f64>,
    advantage: Option<f64>,
    status: String,
}

fn matrix(a: &CommonArgs) -> CliResult<String> {
    allow("matrix", a, &["trace"])?;
    let mut cfg: MatrixConfig = load_config(a.config.as_deref())?;
    if !a.traces.is_empty() {
        cfg.traces = abs_all(&a.traces);
    }
    check_inputs(&cfg.inputs())?;
    let traces = read_traces(&cfg.traces)?;
    let mats = cross_matrices(&traces, cfg.include_special)?;
    let mut out = Out::new(a)?;
    let mut cells = Vec::new();
    let mut flags = Vec::new();
    let mut advs = Vec::new();
    let mut summary = String::new();
    for m in &mats {
        let cond = m.condition.name();
        let persona = m.persona.as_deref();
        for (g, gname) in m.generators.iter().enumerate() {
            for (e, ename) in m.evaluators.iter().enumerate() {
                if let Some(v) = m.cells[g][e] {
                    cells.push(MatrixCsv {
                        generator: gname,
                        evaluator: ename,
                        condition: cond,
                        mean_nats: v,
                        n_tokens: m.counts[g][e],
                        persona,
                    });
                }
            }
        }
        for (e, f) in m.evaluators.iter().zip(m.diagonal_minimum_flags()) {
            let flag = match f {
                Some(true) => "true",
                Some(false) => "false",
                None => "indeterminate",
            };
            writeln!(summary, "{cond} {e}: diagonal minimum {flag}").unwrap();
            flags.push(FlagCsv {
                condition: cond,
                persona,
                evaluator: e,
                diagonal_minimum: flag,
            });
        }
        for (e, r) in self_advantages(m) {
            let e = m.evaluators.iter().find(|x| **x == e).unwrap();
            advs.push(match r {
                Ok(s) => AdvantageCsv {
                    condition: cond,
                    persona,
                    evaluator: e,
                    self_h: Some(s.self_h),
                    cross_mean: Some(s.cross_mean),
                    cross_min: Some(s.cross_min),
                    cross_max: Some(s.cross_max),
                    advantage: Some(s.advantage()),
                    status: "ok".into(),
                },
                Err(msg) => AdvantageCsv {
                    condition: cond,
                    persona,
                    evaluator: e,
                    self_h: None,
                    cross_mean: None,
                    cross_min: None,
                    cross_max: None,
                    advantage: None,
                    status: msg,
                },
            });
        }
    }
    out.csv("matrix.csv", &cells)?;
    out.csv("diagonal_flags.csv", &flags)?;
    out.csv("self_advantage.csv", &advs)?;
    out.json("matrices.json", &mats)?;
    for (i, m) in mats.iter().enumerate() {
        out.svg(&format!("matrix_{i}.svg"), || figures::matrix_heatmap(m))?;
    }
    let counts_ok = mats.iter().all(|m| {
        m.cells.iter().flatten().zip(m.counts.iter().flatten()).all(|(c, &n)| c.is_none() || n >= 1)
    });
    out.art.check("reported_cells_have_tokens", counts_ok, "every reported cell pools at least one token");
    out.finish("matrix", None, &cfg, summary)
}

// sweep and fit

#[derive(Serialize, Deserialize)]
struct SweepDoc {
    records: Vec<SweepRecord>,
    fit: Option<FeedbackFit>,
}

fn sweep(a: &CommonArgs) -> CliResult<String> {
    allow("sweep", a, &["weights", "seed", "ranks"])?;
    let mut cfg: SweepConfig = load_config(a.config.as_deref())?;
    if let Some(w) = &a.weights {
        cfg.model = ModelConfig::File { path: abs(w) };
    }
    if let Some(s) = a.seed {
        match &mut cfg.model {
            ModelConfig::Random { seed } => *seed = s,
            _ => return Err(CliError::Usage("--seed only selects random weights for sweep".into())),
        }
    }
    if let Some(r) = a.ranks {
        cfg.ranks = r;
    }
    check_inputs(&cfg.inputs())?;
    let tok = WordTokenizer::bundled();
    let w = load_model(&cfg.model, &tok)?;
    let contexts = chat_contexts(&tok, cfg.contexts.as_ref())?;
    let ranks: Vec<usize> = (0..cfg.ranks).collect();
    let mut records = Vec::new();
    let mut restored = true;
    let mut ordered = true;
    for c in &contexts {
        let mut s = Session::new(&w);
        s.feed(&c.tokens)?;
        let before = s.next_logits().map(<[f64]>::to_vec);
        let len = s.len();
        let r = single_step_sweep(&mut s, &c.id, &[], &ranks)?;
        restored &= s.next_logits().map(<[f64]>::to_vec) == before && s.len() == len;
        ordered &= r.windows(2).all(|p| p[1].surprise >= p[0].surprise);
        records.extend(r);
    }
    let fit = fit_feedback(&records).ok();
    let mut out = Out::new(a)?;
    out.csv("sweep.csv", &records)?;
    let doc = SweepDoc { records, fit: fit.clone() };
    out.json("sweep.json", &doc)?;
    if let Some(f) = &fit {
        out.svg("sweep_scatter.svg", || figures::sweep_scatter(&doc.records, f))?;
    }
    out.art.check("session_restored", restored, "baseline logits identical before and after each sweep");
    out.art.check("surprise_follows_rank", ordered, "higher rank never has lower surprise");
    let summary = match &fit {
        Some(f) => format!("{} records, a = {}, beta = {}\n", doc.records.len(), f.a, f.beta),
        None => format!("{} records, fit undefined\n", doc.records.len()),
    };
    let seed = match cfg.model {
        ModelConfig::Random { seed } => Some(seed),
        _ => None,
    };
    out.finish("sweep", seed, &cfg, summary)
}

fn fit(a: &CommonArgs) -> CliResult<String> {
    allow("fit", a, &["input"])?;
    let mut cfg: FitConfig = load_config(a.config.as_deref())?;
    if let Some(i) = &a.input {
        cfg.input = abs(i);
    }
    check_inputs(&cfg.inputs())?;
    let records: Vec<SweepRecord> = read_csv(&cfg.input)?;
    let f = fit_feedback(&records)?;
    let mut out = Out::new(a)?;
    out.csv("fit.csv", std::slice::from_ref(&f))?;
    out.json("fit.json", &f)?;
    out.svg("sweep_scatter.svg", || figures::sweep_scatter(&records, &f))?;
    out.art.check("fit_well_formed", f.n_points >= 2 && f.rmse >= 0.0, "at least two points, nonnegative rmse");
    out.finish("fit", None, &cfg, format!("a = {}\nbeta = {}\nrmse = {}\nn = {}\n", f.a, f.beta, f.rmse, f.n_points))
}

// centroids and geometry

#[derive(Serialize)]
struct CentroidCsv<'a> {
    feature: &'static str,
    layer: u32,
    condition: &'a str,
    bin: usize,
    bin_feature_mean: f64,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct CentroidSummary {
    feature: String,
    layer: u32,
    condition: String,
    bins: usize,
    d_model: usize,
    bin_feature_means: Vec<f64>,
    counts: Vec<usize>,
}

fn centroids(a: &CommonArgs) -> CliResult<String> {
    allow("centroids", a, &["trace", "layers", "bins"])?;
    let mut cfg: CentroidsConfig = load_config(a.config.as_deref())?;
    if !a.traces.is_empty() {
        cfg.sets = vec![ConditionTraces {
            condition: "default".into(),
            traces: abs_all(&a.traces),
        }];
    }
    if let Some(l) = a.layers {
        cfg.layers = Some((l.lo as u32..=l.hi as u32).collect());
    }
    if let Some(b) = a.bins {
        cfg.bins = b;
    }
    if cfg.sets.is_empty() {
        return Err(CliError::Usage("no trace sets given (--trace or config sets)".into()));
    }
    check_inputs(&cfg.inputs())?;
    let loaded: Vec<(String, Vec<Trace>)> = cfg
        .sets
        .iter()
        .map(|s| Ok((s.condition.clone(), read_traces(&s.traces)?)))
        .collect::<CliResult<_>>()?;
    let layers = match &cfg.layers {
        Some(l) => l.clone(),
        None => loaded[0].1[0].meta.captured_layers.clone(),
    };
    let params = FeatureParams { halflife: cfg.halflife };
    let mut sets = Vec::new();
    for &feature in &cfg.features {
        for &layer in &layers {
            for (cond, traces) in &loaded {
                sets.push(build_centroids(traces, feature, params, layer, cfg.bins, cond, cfg.include_special)?);
            }
        }
    }
    let mut out = Out::new(a)?;
    let mut plcs = Vec::new();
    write_centroids(&sets, &mut plcs)?;
    out.art.write("centroids.plcs", &plcs)?;
    let rows: Vec<CentroidCsv> = sets
        .iter()
        .flat_map(|s| {
            (0..s.bins()).map(move |b| CentroidCsv {
                feature: s.feature.name(),
                layer: s.layer,
                condition: &s.condition,
                bin: b,
                bin_feature_mean: s.bin_feature_means[b],
                count: s.counts[b],
            })
        })
        .collect();
    out.csv("centroids.csv", &rows)?;
    let summaries: Vec<CentroidSummary> = sets.iter().map(summarize).collect();
    out.json("centroids.json", &summaries)?;
    let balanced = sets.iter().all(|s| {
        let (lo, hi) = (s.counts.iter().min().unwrap(), s.counts.iter().max().unwrap());
        hi - lo <= 1
    });
    out.art.check("bins_balanced", balanced, "bin populations differ by at most one");
    let ordered = sets.iter().all(|s| s.bin_feature_means.windows(2).all(|w| w[0] <= w[1]));
    out.art.check("bins_ordered", ordered, "bin feature means are nondecreasing");
    out.finish("centroids", None, &cfg, format!("{} centroid sets\n", sets.len()))
}

fn summarize(s: &CentroidSet<f64>) -> CentroidSummary {
    CentroidSummary {
        feature: s.feature.name().into(),
        layer: s.layer,
        condition: s.condition.clone(),
        bins: s.bins(),
        d_model: s.d_model(),
        bin_feature_means: s.bin_feature_means.clone(),
        counts: s.counts.clone(),
    }
}

#[derive(Serialize, Deserialize)]
struct PcaEntry {
    feature: String,
    layer: u32,
    condition: String,
    bin_feature_means: Vec<f64>,
    projection: PcaProjection,
}

#[derive(Serialize)]
struct PcaCsv<'a> {
    feature: &'a str,
    layer: u32,
    condition: &'a str,
    component: usize,
    explained: f64,
    bin: usize,
    coord: f64,
    rank_deficient: bool,
}

#[derive(Serialize, Deserialize)]
struct SimilarityRow {
    feature: String,
    layer: u32,
    condition_a: String,
    condition_b: String,
    metric: String,
    value: Option<f64>,
    excluded: usize,
    centering: String,
    status: String,
}

fn geometry(a: &CommonArgs) -> CliResult<String> {
    allow("geometry", a, &["input"])?;
    let mut cfg: GeometryConfig = load_config(a.config.as_deref())?;
    if let Some(i) = &a.input {
        cfg.input = abs(i);
    }
    check_inputs(&cfg.inputs())?;
    let sets: Vec<CentroidSet<f64>> = read_centroids_file(&cfg.input)?;
    if sets.is_empty() {
        return Err(CliError::Failed(invalid("centroid file holds no sets")));
    }
    let mut entries = Vec::new();
    for s in &sets {
        entries.push(PcaEntry {
            feature: s.feature.name().into(),
            layer: s.layer,
            condition: s.condition.clone(),
            bin_feature_means: s.bin_feature_means.clone(),
            projection: pca_top3(s)?,
        });
    }
    let mut sims = Vec::new();
    for (i, x) in sets.iter().enumerate() {
        for y in &sets[i + 1..] {
            if x.feature != y.feature || x.layer != y.layer {
                continue;
            }
            let row = |metric: &str, r: crate::Result<(f64, usize)>| {
                let (value, excluded, status) = match r {
                    Ok((v, e)) => (Some(v), e, "ok".to_string()),
                    Err(e) => (None, 0, e.to_string()),
                };
                SimilarityRow {
                    feature: x.feature.name().into(),
                    layer: x.layer,
                    condition_a: x.condition.clone(),
                    condition_b: y.condition.clone(),
                    metric: metric.into(),
                    value,
                    excluded,
                    centering: "per_set".into(),
                    status,
                }
            };
            sims.push(row("matched_cosine", matched_cosine(x, y, cfg.match_mode).map(|c| (c.mean, c.excluded))));
            sims.push(row("linear_cka", linear_cka(&x.matrix, &y.matrix).map(|v| (v, 0))));
            sims.push(row("procrustes", procrustes_similarity(&x.matrix, &y.matrix).map(|v| (v, 0))));
        }
    }
    let mut out = Out::new(a)?;
    let pca_rows: Vec<PcaCsv> = entries
        .iter()
        .flat_map(|e| {
            e.projection.components.iter().enumerate().flat_map(move |(k, c)| {
                c.coords.iter().enumerate().map(move |(b, &v)| PcaCsv {
                    feature: &e.feature,
                    layer: e.layer,
                    condition: &e.condition,
                    component: k + 1,
                    explained: c.explained,
                    bin: b,
                    coord: v,
                    rank_deficient: e.projection.rank_deficient,
                })
            })
        })
        .collect();
    out.csv("pca.csv", &pca_rows)?;
    out.json("pca.json", &entries)?;
    out.csv("similarity.csv", &sims)?;
    out.json("similarity.json", &sims)?;
    if out.wants(Format::Svg) {
        for (name, svg) in pc_figures(&entries)? {
            out.art.write(&name, svg)?;
        }
    }
    let in_range = sims.iter().all(|r| match (r.metric.as_str(), r.value) {
        (_, None) => true,
        ("matched_cosine", Some(v)) => (-1.0..=1.0).contains(&v),
        (_, Some(v)) => (0.0..=1.0).contains(&v),
    });
    out.art.check("similarity_in_range", in_range, "cosine in [-1, 1], CKA and Procrustes in [0, 1]");
    let explained = entries
        .iter()
        .all(|e| e.projection.components.iter().map(|c| c.explained).sum::<f64>() <= 1.0 + 1e-9);
    out.art.check("explained_at_most_one", explained, "explained variance fractions sum to at most one");
    out.art.note("centroids centered on their own set's count-weighted mean before cosine, CKA and Procrustes");
    out.finish("geometry", None, &cfg, format!("{} sets, {} similarity rows\n", sets.len(), sims.len()))
}

fn pc_figures(entries: &[PcaEntry]) -> CliResult<Vec<(String, String)>> {
    let mut layers: Vec<u32> = entries.iter().map(|e| e.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    layers
        .into_iter()
        .map(|l| {
            let panels: Vec<figures::PcPanel> = entries
                .iter()
                .filter(|e| e.layer == l)
                .map(|e| figures::PcPanel {
                    feature: &e.feature,
                    condition: &e.condition,
                    layer: e.layer,
                    projection: &e.projection,
                })
                .collect();
            Ok((format!("pc_curves_layer{l}.svg"), figures::pc_curves(&panels)?))
        })
        .collect()
}

// steer

/// Centroids along the planted direction: bin `b` sits at
/// `(1 − 2b/(B−1)) · dir`, with feature value `b/(B−1)`.
fn planted_centroids(dir: &[f64], bins: usize) -> CliResult<CentroidSet<f64>> {
    if bins < 2 {
        return Err(CliError::Usage("need at least 2 bins".into()));
    }
    let rows: Vec<Vec<f64>> = (0..bins)
        .map(|b| {
            let t = 1.0 - 2.0 * b as f64 / (bins - 1) as f64;
            dir.iter().map(|d| t * d).collect()
        })
        .collect();
    Ok(CentroidSet {
        feature: crate::trace::Feature::PredEntropy,
        layer: 0,
        condition: "planted".into(),
        bin_feature_means: (0..bins).map(|b| b as f64 / (bins - 1) as f64).collect(),
        matrix: Matrix::from_rows(&rows)?,
        counts: vec![1; bins],
    })
}

#[derive(Serialize)]
struct SteerCsv {
    bin: usize,
    bin_feature_mean: f64,
    mean: f64,
    std: f64,
    frac: f64,
    layer_lo: usize,
    layer_hi: usize,
}

fn steer(a: &CommonArgs) -> CliResult<String> {
    allow("steer", a, &["weights", "seed", "layers", "frac", "input", "bins"])?;
    let mut cfg: SteerConfig = load_config(a.config.as_deref())?;
    if let Some(w) = &a.weights {
        cfg.model = ModelConfig::File { path: abs(w) };
    }
    if let Some(s) = a.seed {
        match &mut cfg.model {
            ModelConfig::Random { seed } => *seed = s,
            _ => return Err(CliError::Usage("--seed only selects random weights for steer".into())),
        }
    }
    if let Some(l) = a.layers {
        cfg.layers = Some((l.lo, l.hi));
    }
    if let Some(f) = a.frac {
        cfg.frac = f;
    }
    if let Some(b) = a.bins {
        cfg.bins = b;
    }
    if let Some(i) = &a.input {
        match &mut cfg.centroids {
            Some(c) => c.path = abs(i),
            None => {
                cfg.centroids = Some(CentroidSelector {
                    path: abs(i),
                    feature: None,
                    condition: None,
                    layer: None,
                })
            }
        }
    }
    check_inputs(&cfg.inputs())?;
    let tok = WordTokenizer::bundled();
    let w = load_model(&cfg.model, &tok)?;
    let mut notes = Vec::new();
    let set = match (&cfg.centroids, &cfg.model) {
        (Some(sel), _) => {
            let sets: Vec<CentroidSet<f64>> = read_centroids_file(&sel.path)?;
            sets.into_iter()
                .find(|s| {
                    sel.feature.is_none_or(|f| f == s.feature)
                        && sel.condition.as_ref().is_none_or(|c| *c == s.condition)
                        && sel.layer.is_none_or(|l| l == s.layer)
                })
                .ok_or_else(|| CliError::Failed(invalid("no centroid set matches the selector")))?
        }
        (None, ModelConfig::EntropyDirection { n_layers }) => {
            let (_, dir) = entropy_direction_model(tok.vocab_size(), *n_layers)?;
            notes.push("centroids synthesized along the planted entropy direction".to_string());
            planted_centroids(&dir, cfg.bins)?
        }
        (None, _) => {
            return Err(CliError::Usage(
                "steer needs centroids (config centroids or --input) unless the model is entropy_direction".into(),
            ))
        }
    };
    let layers = cfg.layers.unwrap_or((0, w.dims.n_layers - 1));
    let contexts = chat_contexts(&tok, cfg.contexts.as_ref())?;
    let sweep = steering_sweep(&w, &contexts, &set, cfg.frac, layers, cfg.measure)?;
    let mut out = Out::new(a)?;
    let rows: Vec<SteerCsv> = sweep
        .bins
        .iter()
        .map(|b| SteerCsv {
            bin: b.bin,
            bin_feature_mean: b.bin_feature_mean,
            mean: b.mean,
            std: b.std,
            frac: sweep.frac,
            layer_lo: sweep.layer_lo,
            layer_hi: sweep.layer_hi,
        })
        .collect();
    out.csv("steering.csv", &rows)?;
    out.json("steering.json", &sweep)?;
    out.svg("steering.svg", || figures::steering_lines(&sweep))?;
    for n in notes {
        out.art.note(n);
    }
    out.art.note("steering vector added after the block output at every position of the layer range");
    let ordered = sweep.bins.windows(2).all(|p| p[0].bin_feature_mean <= p[1].bin_feature_mean);
    out.art.check("bins_ordered", ordered, "bins ordered by feature mean");
    if cfg.frac == 0.0 {
        let same = sweep.bins.iter().all(|b| b.entropies == sweep.baseline_h0);
        out.art.check("zero_frac_is_baseline", same, "frac 0 reproduces the unsteered entropy");
    }
    let summary = format!(
        "{} bins, slope = {}, movement = {}\n",
        sweep.bins.len(),
        sweep.slope.map_or("undefined".to_string(), |s| s.to_string()),
        sweep.movement
    );
    let seed = match cfg.model {
        ModelConfig::Random { seed } => Some(seed),
        _ => None,
    };
    out.finish("steer", seed, &cfg, summary)
}

// kv-patch

#[derive(Serialize)]
struct VerdictCsv<'a> {
    domain: &'a str,
    condition: String,
    patch_mode: String,
    filtered: bool,
    onset: usize,
    onset_position: usize,
    p_prefilled: f64,
    logprob_positive: f64,
    logprob_negative: f64,
}

#[derive(Serialize)]
struct EffectCsv {
    domain: String,
    direction: String,
    effect: f64,
}

fn snake(s: &str) -> String {
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if c.is_uppercase() {
            if i > 0 {
                out.push('_');
            }
            out.extend(c.to_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

fn basis_from(cfg: &BasisConfig, d_model: usize) -> CliResult<SubspaceBasis<f64>> {
    match cfg {
        BasisConfig::Axes { dims } => {
            if let Some(d) = dims.iter().find(|&&d| d >= d_model) {
                return Err(CliError::Failed(shape(format!("axis {d} outside d_model {d_model}"))));
            }
            Ok(SubspaceBasis {
                d_model,
                vectors: dims
                    .iter()
                    .map(|&d| {
                        let mut v = vec![0.0; d_model];
                        v[d] = 1.0;
                        v
                    })
                    .collect(),
            })
        }
        BasisConfig::Centroids { path, layer } => {
            let sets: Vec<CentroidSet<f64>> = read_centroids_file(path)?;
            let chosen: Vec<&CentroidSet<f64>> = sets.iter().filter(|s| s.layer == *layer).collect();
            Ok(span_basis(&chosen)?)
        }
    }
}

fn kv_patch(a: &CommonArgs) -> CliResult<String> {
    allow("kv-patch", a, &["weights", "seed"])?;
    let mut cfg: KvPatchConfig = load_config(a.config.as_deref())?;
    if let Some(w) = &a.weights {
        cfg.model = ModelConfig::File { path: abs(w) };
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    check_inputs(&cfg.inputs())?;
    let tok = WordTokenizer::bundled();
    let w = load_model(&cfg.model, &tok)?;
    let pairs = match &cfg.domains {
        Some(d) => d.iter().map(|x| prompt_pair(x)).collect::<crate::Result<Vec<_>>>()?,
        None => prompt_pairs(),
    };
    let patch = match cfg.patch_mode {
        PatchModeConfig::Plain => PatchKind::Plain,
        m => {
            let mode = match m {
                PatchModeConfig::Full => FilterMode::Full,
                PatchModeConfig::InSpan => FilterMode::InSpan,
                _ => FilterMode::Complement,
            };
            let basis = match &cfg.basis {
                Some(b) => basis_from(b, w.dims.d_model)?,
                None if mode == FilterMode::Full => SubspaceBasis {
                    d_model: w.dims.d_model,
                    vectors: Vec::new(),
                },
                None => return Err(CliError::Usage("in_span and complement modes need a basis".into())),
            };
            PatchKind::Filtered {
                basis: basis.vectors,
                mode,
            }
        }
    };
    let pcfg = PrefillConfig {
        onset: cfg.onset,
        gen_tokens: cfg.gen_tokens,
        temperature: cfg.temperature,
        seed: cfg.seed,
        system_prompt: cfg.system_prompt,
    };
    let mut out = Out::new(a)?;
    let mut results: Vec<VerdictResult> = Vec::new();
    let mut effects = Vec::new();
    let mut causal = true;
    let mut summary = String::new();
    for pair in &pairs {
        let e = prefill_experiment(&w, &tok, pair, cfg.direction, &pcfg, &patch)?;
        for chunk in e.arms.chunks(2) {
            let (u, p) = (&chunk[0].result, &chunk[1].result);
            causal &= u.tokens[..u.onset_position] == p.tokens[..p.onset_position];
        }
        writeln!(summary, "{}: effect {}", pair.domain, e.effect()).unwrap();
        effects.push(EffectCsv {
            domain: pair.domain.clone(),
            direction: snake(&format!("{:?}", cfg.direction)),
            effect: e.effect(),
        });
        results.extend(e.results());
    }
    for r in &results {
        out.art.write(
            &format!("transcripts/{}_{}.txt", r.domain, snake(&format!("{:?}", r.condition))),
            &r.transcript.text,
        )?;
    }
    let rows: Vec<VerdictCsv> = results
        .iter()
        .map(|r| VerdictCsv {
            domain: &r.domain,
            condition: snake(&format!("{:?}", r.condition)),
            patch_mode: snake(&format!("{:?}", r.patch_mode)),
            filtered: r.filtered,
            onset: r.onset,
            onset_position: r.onset_position,
            p_prefilled: r.p_prefilled,
            logprob_positive: r.logprob_positive,
            logprob_negative: r.logprob_negative,
        })
        .collect();
    out.csv("verdicts.csv", &rows)?;
    out.csv("effects.csv", &effects)?;
    if out.wants(Format::Json) {
        out.art.write("results.jsonl", jsonl_string(&results)?)?;
    }
    out.svg("verdicts.svg", || figures::verdict_bars(&results))?;
    let in_unit = results.iter().all(|r| (0.0..=1.0).contains(&r.p_prefilled));
    out.art.check("probability_in_unit_interval", in_unit, "every verdict probability lies in [0, 1]");
    out.art.check("onset_causality", causal, "patched and unpatched arms agree on every token before the onset");
    out.art.note("keys and values of the user span are replaced at every layer");
    out.finish("kv-patch", Some(cfg.seed), &cfg, summary)
}

// semantic

#[derive(Serialize)]
struct CommitmentCsv {
    domain: String,
    n_samples: usize,
    mode_topic: Option<String>,
    mode_count: Option<usize>,
    mode_fraction: Option<f64>,
    distinct_topics: Option<usize>,
    unclassified_count: usize,
    counts: String,
    status: String,
}

#[derive(Serialize)]
struct LabelCsv<'a> {
    domain: &'a str,
    index: usize,
    label: String,
}

#[derive(Serialize)]
struct CrossoverCsv {
    domain: String,
    on_policy_mean: f64,
    on_policy_std: f64,
    on_policy_n: usize,
    on_policy_excluded: usize,
    off_policy_mean: f64,
    off_policy_std: f64,
    off_policy_n: usize,
    off_policy_excluded: usize,
    gap: f64,
}

fn semantic(a: &CommonArgs) -> CliResult<String> {
    allow("semantic", a, &["input", "weights", "seed"])?;
    let mut cfg: SemanticConfig = load_config(a.config.as_deref())?;
    if let Some(i) = &a.input {
        cfg.samples = Some(abs(i));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(wp) = &a.weights {
        match &mut cfg.crossover {
            Some(c) => c.model = ModelConfig::File { path: abs(wp) },
            None => return Err(CliError::Usage("--weights needs a crossover section in the config".into())),
        }
    }
    if cfg.samples.is_none() && cfg.crossover.is_none() {
        return Err(CliError::Usage("semantic needs samples (--input) or a crossover section".into()));
    }
    check_inputs(&cfg.inputs())?;
    let lex = match &cfg.lexicon {
        Some(p) => TopicLexicon::read_file(p)?,
        None => TopicLexicon::bundled(),
    };
    let mut out = Out::new(a)?;
    let mut summary = String::new();
    if let Some(path) = &cfg.samples {
        let text = fs::read_to_string(path).map_err(crate::Error::from)?;
        let samples: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| CliError::Failed(invalid(format!("samples file: {e}"))))?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut ok = true;
        for (domain, texts) in &samples {
            let dl = lex.domain(domain)?;
            for (i, t) in texts.iter().enumerate() {
                let l = topic_classify(t, dl, cfg.window)?;
                labels.push(LabelCsv {
                    domain,
                    index: i,
                    label: l.topic().unwrap_or("unclassified").to_string(),
                });
            }
            match commitment_stats(texts, dl, cfg.window) {
                Ok(s) => {
                    let classified = s.n_samples - s.unclassified_count;
                    let product = s.mode_fraction * classified as f64;
                    ok &= (product - product.round()).abs() < 1e-9;
                    if s.unclassified_count == 0 {
                        ok &= s.mode_fraction >= 1.0 / s.distinct_topics as f64;
                    }
                    writeln!(summary, "{domain}: mode {} {} of {classified}", s.mode_topic, s.mode_fraction).unwrap();
                    rows.push(CommitmentCsv {
                        domain: domain.clone(),
                        n_samples: s.n_samples,
                        mode_topic: Some(s.mode_topic),
                        mode_count: Some(s.mode_count),
                        mode_fraction: Some(s.mode_fraction),
                        distinct_topics: Some(s.distinct_topics),
                        unclassified_count: s.unclassified_count,
                        counts: s.counts.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";"),
                        status: "ok".into(),
                    });
                }
                Err(crate::Error::Undefined(m)) => rows.push(CommitmentCsv {
                    domain: domain.clone(),
                    n_samples: texts.len(),
                    mode_topic: None,
                    mode_count: None,
                    mode_fraction: None,
                    distinct_topics: None,
                    unclassified_count: texts.len(),
                    counts: String::new(),
                    status: m,
                }),
                Err(e) => return Err(e.into()),
            }
        }
        out.csv("commitment.csv", &rows)?;
        out.csv("topic_labels.csv", &labels)?;
        out.art.check("commitment_invariants", ok, "mode counts are whole and at least 1/distinct of classified samples");
    }
    if let Some(c) = &cfg.crossover {
        let tok = WordTokenizer::bundled();
        let w = load_model(&c.model, &tok)?;
        let pairs = match &c.domains {
            Some(d) => d.iter().map(|x| prompt_pair(x)).collect::<crate::Result<Vec<_>>>()?,
            None => prompt_pairs(),
        };
        let ccfg = CrossoverConfig {
            n: c.n,
            max_new_tokens: c.max_new_tokens,
            temperature: c.temperature,
            seed: cfg.seed,
            body_start: c.body_start,
            body_end: c.body_end,
            system_prompt: c.system_prompt,
        };
        let mut results = Vec::new();
        for p in &pairs {
            let r = crossover_experiment(&w, &tok, p, &ccfg)?;
            writeln!(summary, "{}: gap {}", r.domain, r.gap).unwrap();
            results.push(r);
        }
        let rows: Vec<CrossoverCsv> = results
            .iter()
            .map(|r| CrossoverCsv {
                domain: r.domain.clone(),
                on_policy_mean: r.on_policy.mean,
                on_policy_std: r.on_policy.std,
                on_policy_n: r.on_policy.body_h.len(),
                on_policy_excluded: r.on_policy.excluded,
                off_policy_mean: r.off_policy.mean,
                off_policy_std: r.off_policy.std,
                off_policy_n: r.off_policy.body_h.len(),
                off_policy_excluded: r.off_policy.excluded,
                gap: r.gap,
            })
            .collect();
        out.csv("crossover.csv", &rows)?;
        out.json("crossover.json", &results)?;
        let finite = results.iter().all(|r| r.gap.is_finite());
        out.art.check("finite_gaps", finite, "crossover gaps are finite");
    }
    out.finish("semantic", Some(cfg.seed), &cfg, summary)
}

// traject

#[derive(Serialize)]
struct TrajectoryCsv<'a> {
    trace: &'a str,
    index: usize,
    value: f64,
    smoothed: f64,
}

#[derive(Serialize, Deserialize)]
struct TrendRow {
    trace: String,
    n: usize,
    window: usize,
    slope: f64,
    intercept: f64,
    body_mean: Option<f64>,
    body_start: usize,
    body_end: Option<usize>,
}

fn traject(a: &CommonArgs) -> CliResult<String> {
    allow("traject", a, &["trace"])?;
    let mut cfg: TrajectConfig = load_config(a.config.as_deref())?;
    if !a.traces.is_empty() {
        cfg.traces = abs_all(&a.traces);
    }
    check_inputs(&cfg.inputs())?;
    let traces = read_traces(&cfg.traces)?;
    let names: Vec<String> = cfg.traces.iter().map(|p| trace_name(p)).collect();
    let mut points = Vec::new();
    let mut trends = Vec::new();
    for (t, name) in traces.iter().zip(&names) {
        let tr = trace_trajectory(t, cfg.window)?;
        for (i, (&v, &s)) in tr.values.iter().zip(&tr.smoothed).enumerate() {
            points.push(TrajectoryCsv {
                trace: name,
                index: i,
                value: v,
                smoothed: s,
            });
        }
        let body = body_entropy(t, cfg.body_start, cfg.body_end).ok();
        trends.push(TrendRow {
            trace: name.clone(),
            n: tr.values.len(),
            window: tr.window,
            slope: tr.slope,
            intercept: tr.intercept,
            body_mean: body.as_ref().map(|b| b.mean),
            body_start: cfg.body_start,
            body_end: body.as_ref().map(|b| b.end),
        });
    }
    let mut out = Out::new(a)?;
    out.csv("trajectory.csv", &points)?;
    out.csv("trends.csv", &trends)?;
    out.json("trends.json", &trends)?;
    let finite = trends.iter().all(|t| t.slope.is_finite() && t.intercept.is_finite());
    out.art.check("finite_trends", finite, "trend slopes and intercepts are finite");
    let mut summary = String::new();
    for t in &trends {
        writeln!(summary, "{}: slope {} nats/token", t.trace, t.slope).unwrap();
    }
    out.finish("traject", None, &cfg, summary)
}

// report

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> CliResult<T> {
    let p = dir.join(name);
    let text = fs::read_to_string(&p).map_err(|_| CliError::MissingInput(p.clone()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Failed(invalid(format!("{}: {e}", p.display()))))
}

/// Figures for the results in `dir`, chosen by the subcommand recorded in
/// its manifest.
pub fn render_figures(dir: &Path) -> CliResult<Vec<(String, String)>> {
    let manifest: serde_json::Value = read_json(dir, "manifest.json")?;
    let sub = manifest["subcommand"].as_str().unwrap_or_default().to_string();
    let figs = match sub.as_str() {
        "analyze" => {
            let s: RoleStats = read_json(dir, "role_stats.json")?;
            vec![("role_bars.svg".to_string(), figures::role_bars(&s)?)]
        }
        "matrix" => {
            let ms: Vec<CrossMatrix> = read_json(dir, "matrices.json")?;
            ms.iter()
                .enumerate()
                .map(|(i, m)| Ok((format!("matrix_{i}.svg"), figures::matrix_heatmap(m)?)))
                .collect::<CliResult<_>>()?
        }
        "sweep" => {
            let d: SweepDoc = read_json(dir, "sweep.json")?;
            let f = d.fit.ok_or_else(|| CliError::Failed(invalid("sweep results carry no fit")))?;
            vec![("sweep_scatter.svg".to_string(), figures::sweep_scatter(&d.records, &f)?)]
        }
        "fit" => {
            let f: FeedbackFit = read_json(dir, "fit.json")?;
            let input = manifest["config"]["input"].as_str().unwrap_or_default();
            let records: Vec<SweepRecord> = read_csv(input).map_err(|_| CliError::MissingInput(input.into()))?;
            vec![("sweep_scatter.svg".to_string(), figures::sweep_scatter(&records, &f)?)]
        }
        "geometry" => {
            let e: Vec<PcaEntry> = read_json(dir, "pca.json")?;
            pc_figures(&e)?
        }
        "steer" => {
            let s: SteeringSweep = read_json(dir, "steering.json")?;
            vec![("steering.svg".to_string(), figures::steering_lines(&s)?)]
        }
        "kv-patch" => {
            let p = dir.join("results.jsonl");
            let text = fs::read_to_string(&p).map_err(|_| CliError::MissingInput(p.clone()))?;
            let results = text
                .lines()
                .map(|l| serde_json::from_str(l).map_err(|e| CliError::Failed(invalid(format!("results.jsonl: {e}")))))
                .collect::<CliResult<Vec<VerdictResult>>>()?;
            vec![("verdicts.svg".to_string(), figures::verdict_bars(&results)?)]
        }
        other => return Err(CliError::Failed(invalid(format!("no figures for {other:?} results")))),
    };
    Ok(figs)
}

fn report(a: &CommonArgs) -> CliResult<String> {
    allow("report", a, &["input"])?;
    let mut cfg: ReportConfig = load_config(a.config.as_deref())?;
    if let Some(i) = &a.input {
        cfg.input = abs(i);
    }
    check_inputs(&cfg.inputs())?;
    let figs = render_figures(&cfg.input)?;
    let mut out = Out::new(a)?;
    for (name, svg) in &figs {
        out.art.write(name, svg)?;
    }
    out.art.check("figures_emitted", !figs.is_empty(), "at least one figure");
    let names: Vec<&str> = figs.iter().map(|(n, _)| n.as_str()).collect();
    out.finish("report", None, &cfg, format!("{}\n", names.join("\n")))
}
