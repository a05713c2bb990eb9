use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::trace::{Role, Trace};

/// Summary of a set of per-token values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Some(Self {
            n,
            mean,
            median,
            std: var.sqrt(),
            min: sorted[0],
            max: sorted[n - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleRow {
    pub role: Role,
    /// Absent when no token carries the role.
    pub summary: Option<Summary>,
    /// Counts per histogram bin (see [`RoleStats::bin_edges`]).
    pub histogram: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleStats {
    pub bin_edges: Vec<f64>,
    pub rows: Vec<RoleRow>,
    pub include_special: bool,
}

impl RoleStats {
    pub fn get(&self, role: Role) -> Option<&Summary> {
        self.rows.iter().find(|r| r.role == role).and_then(|r| r.summary.as_ref())
    }
}

/// Counts values into bins `[e_i, e_{i+1})`; the last bin is closed and
/// values outside the edges are dropped.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Vec<usize>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("histogram edges must be strictly increasing, at least two"));
    }
    let mut counts = vec![0; edges.len() - 1];
    let last = *edges.last().unwrap();
    for &v in values {
        if v < edges[0] || v > last {
            continue;
        }
        let i = if v == last {
            counts.len() - 1
        } else {
            edges.partition_point(|&e| e <= v) - 1
        };
        counts[i] += 1;
    }
    Ok(counts)
}

/// Default histogram edges: 0 to 8 nats in steps of 0.25.
pub fn default_edges() -> Vec<f64> {
    (0..=32).map(|i| i as f64 * 0.25).collect()
}

/// Predicted entropy grouped by the role of the emitting position.
/// Template tokens are skipped unless `include_special`.
pub fn role_values(traces: &[Trace], include_special: bool) -> BTreeMap<Role, Vec<f64>> {
    let mut groups: BTreeMap<Role, Vec<f64>> = BTreeMap::new();
    for t in traces {
        for r in &t.tokens {
            if !include_special && t.is_special(r.token_id) {
                continue;
            }
            groups.entry(r.role).or_default().push(r.predicted_entropy);
        }
    }
    groups
}

pub fn role_stats(traces: &[Trace], include_special: bool, edges: &[f64]) -> Result<RoleStats> {
    let groups = role_values(traces, include_special);
    let mut rows = Vec::new();
    for role in Role::ALL {
        let values = groups.get(&role).map(Vec::as_slice).unwrap_or(&[]);
        rows.push(RoleRow {
            role,
            summary: Summary::of(values),
            histogram: histogram(values, edges)?,
        });
    }
    Ok(RoleStats {
        bin_edges: edges.to_vec(),
        rows,
        include_special,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::test_support::*;

    #[test]
    fn constant_roles() {
        let mut recs = Vec::new();
        for p in 0..6 {
            let role = if p % 2 == 0 { Role::Assistant } else { Role::User };
            let h = if role == Role::Assistant { 0.1 } else { 1.0 };
            recs.push(record(p, role, 0.0, 0.0, h));
        }
        let s = role_stats(&[trace_with(recs)], false, &default_edges()).unwrap();
        assert!((s.get(Role::Assistant).unwrap().mean - 0.1).abs() < 1e-15);
        assert!((s.get(Role::User).unwrap().median - 1.0).abs() < 1e-15);
        assert!(s.get(Role::System).is_none());
    }

    #[test]
    fn special_tokens_skipped_by_default() {
        let mut t = trace_with(vec![record(0, Role::User, 0.0, 0.0, 5.0), record(1, Role::User, 0.0, 0.0, 1.0)]);
        t.meta.special_token_ids = vec![t.tokens[0].token_id];
        t.tokens[1].token_id = 7;
        let s = role_stats(std::slice::from_ref(&t), false, &default_edges()).unwrap();
        assert_eq!(s.get(Role::User).unwrap().n, 1);
        let s = role_stats(&[t], true, &default_edges()).unwrap();
        assert_eq!(s.get(Role::User).unwrap().n, 2);
    }

    #[test]
    fn histogram_edges() {
        let c = histogram(&[0.0, 0.5, 1.0, 1.5, 2.0, 9.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(c, vec![2, 3]);
        assert!(histogram(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn even_median() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert!(Summary::of(&[]).is_none());
    }
}
