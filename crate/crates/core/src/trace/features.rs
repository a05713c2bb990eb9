//! Per-position conditioning features derived from a trace's entropy and
//! surprise fields.

use serde::{Deserialize, Serialize};

use super::Trace;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// Entropy of the distribution this position predicts, `H_{t+1}`.
    PredEntropy,
    /// Entropy predicted one position later, `H_{t+2}`.
    NextPredEntropy,
    /// Entropy of the distribution the incoming token came from, `H_t`.
    IncomingEntropy,
    /// Surprise of the incoming token, `S_t`.
    IncomingSurprise,
    /// `S_{t-1}`.
    PrevSurprise,
    EmaEntropyBack,
    EmaEntropyFwd,
    EmaSurpriseBack,
    EmaSurpriseFwd,
    /// `S_t − H_t`.
    ExcessSurprise,
}

impl Feature {
    pub const ALL: [Feature; 10] = [
        Feature::PredEntropy,
        Feature::NextPredEntropy,
        Feature::IncomingEntropy,
        Feature::IncomingSurprise,
        Feature::PrevSurprise,
        Feature::EmaEntropyBack,
        Feature::EmaEntropyFwd,
        Feature::EmaSurpriseBack,
        Feature::EmaSurpriseFwd,
        Feature::ExcessSurprise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::PredEntropy => "pred_entropy",
            Feature::NextPredEntropy => "next_pred_entropy",
            Feature::IncomingEntropy => "incoming_entropy",
            Feature::IncomingSurprise => "incoming_surprise",
            Feature::PrevSurprise => "prev_surprise",
            Feature::EmaEntropyBack => "ema_entropy_back",
            Feature::EmaEntropyFwd => "ema_entropy_fwd",
            Feature::EmaSurpriseBack => "ema_surprise_back",
            Feature::EmaSurpriseFwd => "ema_surprise_fwd",
            Feature::ExcessSurprise => "excess_surprise",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    fn ema_direction(self) -> Option<EmaDirection> {
        match self {
            Feature::EmaEntropyBack | Feature::EmaSurpriseBack => Some(EmaDirection::Backward),
            Feature::EmaEntropyFwd | Feature::EmaSurpriseFwd => Some(EmaDirection::Forward),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmaDirection {
    /// Causal: averages the past.
    Backward,
    /// Anti-causal: the same recursion run over the reversed series.
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    /// EMA halflife in tokens.
    pub halflife: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self { halflife: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub feature: Feature,
    /// Trace positions the values are defined at.
    pub positions: Vec<u32>,
    pub values: Vec<f64>,
    /// `(direction, halflife)` for EMA features.
    pub ema: Option<(EmaDirection, f64)>,
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Exponential moving average `e_t = α x_t + (1 − α) e_{t−1}`, `e_0 = x_0`,
/// with `α = 1 − 2^(−1/halflife)`.
pub fn ema<T: Scalar>(values: &[T], halflife: T, direction: EmaDirection) -> Result<Vec<T>> {
    if !(halflife > T::zero()) {
        return Err(invalid(format!("EMA halflife must be > 0, got {halflife}")));
    }
    let alpha = T::one() - T::lit(2.0).powf(-T::one() / halflife);
    let run = |xs: &mut dyn Iterator<Item = T>| -> Vec<T> {
        let mut out = Vec::with_capacity(values.len());
        let mut prev: Option<T> = None;
        for x in xs {
            let e = match prev {
                None => x,
                Some(p) => alpha * x + (T::one() - alpha) * p,
            };
            out.push(e);
            prev = Some(e);
        }
        out
    };
    Ok(match direction {
        EmaDirection::Backward => run(&mut values.iter().copied()),
        EmaDirection::Forward => {
            let mut rev = run(&mut values.iter().rev().copied());
            rev.reverse();
            rev
        }
    })
}

/// Derives one feature series over a trace's token records.
///
/// Entropy EMAs smooth the predicted entropy `H_{t+1}`; surprise EMAs smooth
/// `S_t`. `PrevSurprise` starts at the second record and `NextPredEntropy`
/// stops one record early; every other feature covers all records.
pub fn derive_feature(trace: &Trace, feature: Feature, params: FeatureParams) -> Result<FeatureSeries> {
    let recs = &trace.tokens;
    let all_pos: Vec<u32> = recs.iter().map(|r| r.position).collect();
    let pred: Vec<f64> = recs.iter().map(|r| r.predicted_entropy).collect();
    let surprise: Vec<f64> = recs.iter().map(|r| r.surprise).collect();
    let ema_dir = feature.ema_direction();
    if ema_dir.is_some() && !(params.halflife > 0.0) {
        return Err(invalid(format!("EMA halflife must be > 0, got {}", params.halflife)));
    }
    let (positions, values) = match feature {
        Feature::PredEntropy => (all_pos, pred),
        Feature::NextPredEntropy => {
            let n = recs.len().saturating_sub(1);
            (all_pos[..n].to_vec(), pred[1..].to_vec())
        }
        Feature::IncomingEntropy => (all_pos, recs.iter().map(|r| r.incoming_entropy).collect()),
        Feature::IncomingSurprise => (all_pos, surprise),
        Feature::PrevSurprise => {
            let n = recs.len().saturating_sub(1);
            (all_pos[1..].to_vec(), surprise[..n].to_vec())
        }
        Feature::EmaEntropyBack | Feature::EmaEntropyFwd => {
            (all_pos, ema(&pred, params.halflife, ema_dir.unwrap())?)
        }
        Feature::EmaSurpriseBack | Feature::EmaSurpriseFwd => {
            (all_pos, ema(&surprise, params.halflife, ema_dir.unwrap())?)
        }
        Feature::ExcessSurprise => (all_pos, recs.iter().map(|r| r.surprise - r.incoming_entropy).collect()),
    };
    Ok(FeatureSeries {
        feature,
        positions,
        values,
        ema: ema_dir.map(|d| (d, params.halflife)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::test_support::*;
    use crate::trace::Role;

    #[test]
    fn constant_series_is_fixed_point() {
        for dir in [EmaDirection::Backward, EmaDirection::Forward] {
            for hl in [0.5, 1.0, 5.0, 40.0] {
                let e = ema(&[2.5f64; 17], hl, dir).unwrap();
                assert!(e.iter().all(|&x| (x - 2.5).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn impulse_matches_direct_recursion() {
        let mut x = vec![0.0f64; 12];
        x[0] = 1.0;
        let e = ema(&x, 5.0, EmaDirection::Backward).unwrap();
        // reference: independent recursion with alpha spelled out
        let alpha = 1.0 - 0.5f64.powf(1.0 / 5.0);
        let mut expect = vec![1.0];
        for t in 1..12 {
            let prev: f64 = expect[t - 1];
            expect.push(alpha * x[t] + (1.0 - alpha) * prev);
        }
        for (a, b) in e.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
        // geometric decay with ratio 1 - alpha, halving every 5 steps
        assert!((e[5] / e[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn forward_is_reversed_backward() {
        let x = [1.0, 3.0, 2.0, 5.0, 4.0];
        let f = ema(&x, 2.0, EmaDirection::Forward).unwrap();
        let mut rx = x;
        rx.reverse();
        let mut b = ema(&rx, 2.0, EmaDirection::Backward).unwrap();
        b.reverse();
        assert_eq!(f, b);
        assert_eq!(f[4], 4.0);
    }

    #[test]
    fn nonpositive_halflife_rejected() {
        assert!(ema(&[1.0f64], 0.0, EmaDirection::Backward).is_err());
        let t = trace_with(vec![record(0, Role::User, 0.0, 0.0, 1.0)]);
        assert!(derive_feature(&t, Feature::EmaEntropyBack, FeatureParams { halflife: -1.0 }).is_err());
    }

    #[test]
    fn excess_surprise_is_s_minus_h() {
        let t = trace_with(vec![record(0, Role::User, 2.0, 1.0, 1.0), record(1, Role::User, 2.0, 3.0, 1.0)]);
        let f = derive_feature(&t, Feature::ExcessSurprise, FeatureParams::default()).unwrap();
        assert_eq!(f.values, vec![1.0, -1.0]);
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn shifted_features_align_positions() {
        let t = trace_with(vec![
            record(0, Role::User, 0.0, 0.0, 1.0),
            record(1, Role::User, 2.0, 1.0, 2.0),
            record(2, Role::User, 3.0, 2.0, 3.0),
        ]);
        let next = derive_feature(&t, Feature::NextPredEntropy, FeatureParams::default()).unwrap();
        assert_eq!(next.positions, vec![0, 1]);
        assert_eq!(next.values, vec![2.0, 3.0]);
        let prev = derive_feature(&t, Feature::PrevSurprise, FeatureParams::default()).unwrap();
        assert_eq!(prev.positions, vec![1, 2]);
        assert_eq!(prev.values, vec![0.0, 2.0]);
    }

    #[test]
    fn monotone_series_keeps_direction() {
        let up: Vec<f64> = (0..30).map(|i| (i as f64).sqrt()).collect();
        let e = ema(&up, 3.0, EmaDirection::Backward).unwrap();
        assert!(e.windows(2).all(|w| w[1] >= w[0]));
    }
}
