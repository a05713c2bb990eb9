use serde::{Deserialize, Serialize};

use super::kernel::Distribution;
use crate::error::{invalid, Error, Result};
use crate::runtime::Session;
use crate::scalar::{cast_slice, Scalar};
use crate::trace::ENTROPY_FLOOR;

/// One appended token of a single-step sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub context_id: String,
    /// Entropy `H` of the next-token distribution at the fixed context.
    pub baseline_h: f64,
    pub rank: usize,
    pub token_id: u32,
    /// Surprise `S` of the appended token under that distribution.
    pub surprise: f64,
    /// Entropy `H′` predicted after the appended token.
    pub next_h: f64,
    /// `(S − H) / H`; absent below the entropy floor.
    pub rel_excess: Option<f64>,
    /// `(H′ − H) / H`; absent below the entropy floor.
    pub rel_delta: Option<f64>,
}

impl SweepRecord {
    pub fn new(context_id: &str, baseline_h: f64, rank: usize, token_id: u32, surprise: f64, next_h: f64) -> Self {
        let (rel_excess, rel_delta) = if baseline_h >= ENTROPY_FLOOR {
            (Some((surprise - baseline_h) / baseline_h), Some((next_h - baseline_h) / baseline_h))
        } else {
            (None, None)
        };
        Self {
            context_id: context_id.to_string(),
            baseline_h,
            rank,
            token_id,
            surprise,
            next_h,
            rel_excess,
            rel_delta,
        }
    }
}

/// The first twenty ranks.
pub fn default_ranks() -> Vec<usize> {
    (0..20).collect()
}

/// Appends each requested rank of the next-token distribution in turn and
/// measures the entropy predicted after it.
///
/// `context` is fed first when nonempty; otherwise the session's current
/// context is used. The session is returned to its prior state, including
/// when an error occurs mid-sweep.
pub fn single_step_sweep<T: Scalar>(
    session: &mut Session<'_, T>,
    context_id: &str,
    context: &[u32],
    ranks: &[usize],
) -> Result<Vec<SweepRecord>> {
    let vocab = session.weights().dims.vocab;
    if let Some(&r) = ranks.iter().find(|&&r| r >= vocab) {
        return Err(invalid(format!("rank {r} >= vocab {vocab}")));
    }
    let outer = session.checkpoint();
    let result = sweep_inner(session, context_id, context, ranks);
    session.restore(&outer)?;
    result
}

fn sweep_inner<T: Scalar>(
    session: &mut Session<'_, T>,
    context_id: &str,
    context: &[u32],
    ranks: &[usize],
) -> Result<Vec<SweepRecord>> {
    if !context.is_empty() {
        session.feed(context)?;
    }
    let logits = session
        .next_logits()
        .ok_or_else(|| invalid("sweep needs a nonempty context"))?;
    let dist = Distribution::from_logits(&cast_slice::<T, f64>(logits), 1.0)?;
    let baseline = dist.entropy();
    let order = dist.ranked();
    let cp = session.checkpoint();
    let mut out = Vec::with_capacity(ranks.len());
    for &r in ranks {
        let tok = order[r];
        let surprise = dist.surprise(tok);
        let fed = session.feed(&[tok as u32]);
        let next_h = fed.and_then(|o| Ok(Distribution::from_logits(&cast_slice::<T, f64>(&o.logits[0]), 1.0)?.entropy()));
        session.restore(&cp)?;
        out.push(SweepRecord::new(context_id, baseline, r, tok as u32, surprise, next_h?));
    }
    Ok(out)
}

/// Least-squares line through `(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub rmse: f64,
    pub n_points: usize,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(invalid(format!("x has {} points, y has {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(invalid(format!("a line fit needs at least 2 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite value in fit data"));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Undefined("slope undefined: all x values are equal".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    Ok(LineFit {
        slope,
        intercept,
        rmse: (sse / n).sqrt(),
        n_points: x.len(),
    })
}

/// `ΔH/H ≈ a·(S − H)/H + β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackFit {
    pub a: f64,
    pub beta: f64,
    pub rmse: f64,
    pub n_points: usize,
}

/// Ordinary least squares of relative entropy change on relative excess
/// surprise, over the records that carry both ratios.
pub fn fit_feedback(records: &[SweepRecord]) -> Result<FeedbackFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter_map(|r| Some((r.rel_excess?, r.rel_delta?)))
        .unzip();
    let f = fit_line(&x, &y)?;
    Ok(FeedbackFit {
        a: f.slope,
        beta: f.intercept,
        rmse: f.rmse,
        n_points: f.n_points,
    })
}
