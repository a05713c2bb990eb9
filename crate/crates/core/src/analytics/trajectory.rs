use serde::{Deserialize, Serialize};

use super::sweep::fit_line;
use crate::error::{invalid, Error, Result};
use crate::trace::{Role, Trace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Window actually used after clamping to the series length.
    pub window: usize,
    /// Least-squares slope of the raw series, nats per token.
    pub slope: f64,
    pub intercept: f64,
}

/// Centered moving average. Position `i` averages `i − (w−1)/2 ..= i + w/2`,
/// cut at the ends of the series.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let w = window.clamp(1, n.max(1));
    let (left, right) = ((w - 1) / 2, w / 2);
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right + 1).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Smooths a series and fits a linear trend against the index. A single
/// value has trend zero.
pub fn trajectory(values: &[f64], window: usize) -> Result<Trajectory> {
    if values.is_empty() {
        return Err(invalid("trajectory of an empty series"));
    }
    let w = window.clamp(1, values.len());
    let (slope, intercept) = if values.len() == 1 {
        (0.0, values[0])
    } else {
        let x: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
        let f = fit_line(&x, values)?;
        (f.slope, f.intercept)
    };
    Ok(Trajectory {
        values: values.to_vec(),
        smoothed: moving_average(values, w),
        window: w,
        slope,
        intercept,
    })
}

/// Predicted entropy of the assistant-tagged, non-template tokens in order.
pub fn assistant_entropies(trace: &Trace) -> Vec<f64> {
    trace
        .tokens
        .iter()
        .filter(|r| r.role == Role::Assistant && !trace.is_special(r.token_id))
        .map(|r| r.predicted_entropy)
        .collect()
}

pub fn trace_trajectory(trace: &Trace, window: usize) -> Result<Trajectory> {
    trajectory(&assistant_entropies(trace), window)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyEntropy {
    pub mean: f64,
    /// Window `[start, end)` over assistant-token ordinals actually used.
    pub start: usize,
    pub end: usize,
    pub n: usize,
}

pub const BODY_START: usize = 6;
pub const BODY_END: usize = 300;

/// Mean predicted entropy over assistant tokens `start..min(end, len)`,
/// counted from the first token of the response.
pub fn body_entropy(trace: &Trace, start: usize, end: usize) -> Result<BodyEntropy> {
    let h = assistant_entropies(trace);
    let end = end.min(h.len());
    if start >= end {
        return Err(Error::Undefined(format!(
            "no assistant tokens in window [{start}, {end}) of a {}-token response",
            h.len()
        )));
    }
    let w = &h[start..end];
    Ok(BodyEntropy {
        mean: w.iter().sum::<f64>() / w.len() as f64,
        start,
        end,
        n: w.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::test_support::*;

    #[test]
    fn constant_and_linear_trends() {
        let t = trajectory(&[0.7; 9], 3).unwrap();
        assert_eq!(t.slope, 0.0);
        assert!(t.smoothed.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let lin: Vec<f64> = (0..10).map(|i| 2.0 - 0.25 * i as f64).collect();
        let t = trajectory(&lin, 4).unwrap();
        assert!((t.slope + 0.25).abs() < 1e-14);
        assert!((t.intercept - 2.0).abs() < 1e-14);
    }

    #[test]
    fn window_clamped() {
        let t = trajectory(&[1.0, 2.0, 3.0], 50).unwrap();
        assert_eq!(t.window, 3);
        assert_eq!(t.smoothed, vec![1.5, 2.0, 2.5]);
    }

    #[test]
    fn moving_average_interior() {
        let s = moving_average(&[0.0, 3.0, 6.0, 9.0, 12.0], 3);
        assert_eq!(s, vec![1.5, 3.0, 6.0, 9.0, 10.5]);
    }

    #[test]
    fn body_window() {
        let t = trace_with((0..10).map(|p| record(p, Role::Assistant, 0.0, 0.0, 0.4)).collect());
        let b = body_entropy(&t, BODY_START, BODY_END).unwrap();
        assert_eq!((b.start, b.end, b.n), (6, 10, 4));
        assert!((b.mean - 0.4).abs() < 1e-15);
        let short = trace_with((0..6).map(|p| record(p, Role::Assistant, 0.0, 0.0, 0.4)).collect());
        assert!(body_entropy(&short, 6, 300).is_err());
    }
}
