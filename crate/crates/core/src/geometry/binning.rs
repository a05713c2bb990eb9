use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Equal-population bins over a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    /// Bin index per input value.
    pub assignment: Vec<usize>,
    /// `edges[b]` is the smallest value in bin `b`; the last entry is the
    /// overall maximum.
    pub edges: Vec<f64>,
    pub sizes: Vec<usize>,
}

/// Quantile binning. Values are ranked by `(value, index)`, so ties fall in
/// input order, and bin `b` takes ranks `⌊b·n/B⌋ .. ⌊(b+1)·n/B⌋`. Bin sizes
/// differ by at most one.
pub fn quantile_bin(values: &[f64], bins: usize) -> Result<Binning> {
    if bins < 2 {
        return Err(invalid(format!("need at least 2 bins, got {bins}")));
    }
    let n = values.len();
    if n < bins {
        return Err(invalid(format!("{n} values cannot fill {bins} bins")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite value in binning input"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut assignment = vec![0; n];
    let mut sizes = vec![0; bins];
    let mut edges = Vec::with_capacity(bins + 1);
    for b in 0..bins {
        let (lo, hi) = (b * n / bins, (b + 1) * n / bins);
        edges.push(values[order[lo]]);
        for &i in &order[lo..hi] {
            assignment[i] = b;
        }
        sizes[b] = hi - lo;
    }
    edges.push(values[order[n - 1]]);
    Ok(Binning {
        assignment,
        edges,
        sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_into_twenty() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let b = quantile_bin(&v, 20).unwrap();
        assert!(b.sizes.iter().all(|&s| s == 5));
        assert_eq!(b.assignment[0], 0);
        assert_eq!(b.assignment[99], 19);
        assert_eq!(b.edges[1], 6.0);
    }

    #[test]
    fn ties_fall_in_input_order() {
        let b = quantile_bin(&[1.0; 7], 3).unwrap();
        assert_eq!(b.sizes, vec![2, 2, 3]);
        assert_eq!(b.assignment, vec![0, 0, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn errors() {
        assert!(quantile_bin(&[1.0, 2.0], 1).is_err());
        assert!(quantile_bin(&[1.0, 2.0], 3).is_err());
        assert!(quantile_bin(&[1.0, f64::NAN], 2).is_err());
    }
}
