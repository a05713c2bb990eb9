use serde::{Deserialize, Serialize};

use crate::analytics::{entropy_of, fit_line};
use crate::error::{invalid, shape, Result};
use crate::geometry::CentroidSet;
use crate::runtime::{ModelWeights, PositionSelector, Session, SteeringSpec};
use crate::scalar::{cast_slice, Scalar};

/// Where output entropy is read after a steered forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurePosition {
    /// Final context position.
    #[default]
    Last,
    Index(usize),
}

impl MeasurePosition {
    fn resolve(self, len: usize) -> Result<usize> {
        match self {
            MeasurePosition::Last if len > 0 => Ok(len - 1),
            MeasurePosition::Index(i) if i < len => Ok(i),
            _ => Err(invalid(format!("measurement position {self:?} outside a {len}-token context"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringContext {
    pub id: String,
    pub tokens: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeredBin {
    pub bin: usize,
    pub bin_feature_mean: f64,
    /// Output entropy per context, in context order.
    pub entropies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over contexts.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringSweep {
    pub context_ids: Vec<String>,
    /// Unsteered output entropy per context.
    pub baseline_h0: Vec<f64>,
    pub frac: f64,
    pub layer_lo: usize,
    pub layer_hi: usize,
    /// Ordered by bin feature mean.
    pub bins: Vec<SteeredBin>,
    /// Least-squares slope of mean output entropy on bin feature value;
    /// `None` when all bin values coincide.
    pub slope: Option<f64>,
    /// Largest minus smallest bin mean.
    pub movement: f64,
}

/// `frac · (centroid_b − grand mean)` for every bin.
pub fn steering_vectors<T: Scalar>(set: &CentroidSet<T>, frac: f64) -> Vec<Vec<T>> {
    let mean = set.grand_mean();
    set.matrix
        .row_iter()
        .map(|r| r.iter().zip(&mean).map(|(&c, &m)| T::lit(frac) * (c - m)).collect())
        .collect()
}

fn output_entropy<T: Scalar>(
    weights: &ModelWeights<T>,
    tokens: &[u32],
    steering: Option<SteeringSpec<T>>,
    measure: MeasurePosition,
) -> Result<f64> {
    let at = measure.resolve(tokens.len())?;
    let mut s = Session::new(weights);
    s.set_steering(steering)?;
    let out = s.feed(&tokens[..=at])?;
    entropy_of(&cast_slice::<T, f64>(&out.logits[at]), 1.0)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Steers every position of each context at layers `lo..=hi` towards each
/// centroid in turn and records the output entropy at the measurement
/// position.
pub fn steering_sweep<T: Scalar>(
    weights: &ModelWeights<T>,
    contexts: &[SteeringContext],
    set: &CentroidSet<T>,
    frac: f64,
    layers: (usize, usize),
    measure: MeasurePosition,
) -> Result<SteeringSweep> {
    if set.d_model() != weights.dims.d_model {
        return Err(shape(format!(
            "centroids of width {} for a model with d_model {}",
            set.d_model(),
            weights.dims.d_model
        )));
    }
    if contexts.is_empty() {
        return Err(invalid("steering sweep without contexts"));
    }
    if !frac.is_finite() {
        return Err(invalid("steering fraction must be finite"));
    }
    let (lo, hi) = layers;
    let baseline_h0 = contexts
        .iter()
        .map(|c| output_entropy(weights, &c.tokens, None, measure))
        .collect::<Result<Vec<_>>>()?;
    let mut bins = Vec::with_capacity(set.bins());
    for (b, vector) in steering_vectors(set, frac).into_iter().enumerate() {
        let spec = SteeringSpec {
            lo,
            hi,
            positions: PositionSelector::From(0),
            vector,
            coefficient: T::one(),
        };
        let entropies = contexts
            .iter()
            .map(|c| output_entropy(weights, &c.tokens, Some(spec.clone()), measure))
            .collect::<Result<Vec<_>>>()?;
        let (mean, std) = mean_std(&entropies);
        bins.push(SteeredBin {
            bin: b,
            bin_feature_mean: set.bin_feature_means[b],
            entropies,
            mean,
            std,
        });
    }
    let x: Vec<f64> = bins.iter().map(|b| b.bin_feature_mean).collect();
    let y: Vec<f64> = bins.iter().map(|b| b.mean).collect();
    let slope = fit_line(&x, &y).ok().map(|f| f.slope);
    let movement = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) - y.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SteeringSweep {
        context_ids: contexts.iter().map(|c| c.id.clone()).collect(),
        baseline_h0,
        frac,
        layer_lo: lo,
        layer_hi: hi,
        bins,
        slope,
        movement,
    })
}
