use serde::{Deserialize, Serialize};

use super::centroids::CentroidSet;
use crate::error::{invalid, shape, Result};
use crate::linalg::{axpy, dot, pivoted_orthonormal_basis};
use crate::scalar::Scalar;

pub const SPAN_REL_TOL: f64 = 1e-8;

/// Orthonormal basis of a subspace of the residual stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis<T> {
    pub d_model: usize,
    pub vectors: Vec<Vec<T>>,
}

impl<T: Scalar> SubspaceBasis<T> {
    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    /// `(P v, v − P v)`.
    pub fn decompose(&self, v: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if v.len() != self.d_model {
            return Err(shape(format!("vector of length {} in a {}-dim space", v.len(), self.d_model)));
        }
        let mut inside = vec![T::zero(); v.len()];
        for b in &self.vectors {
            axpy(dot(b, v), b, &mut inside);
        }
        let outside = v.iter().zip(&inside).map(|(&a, &b)| a - b).collect();
        Ok((inside, outside))
    }

    pub fn project(&self, v: &[T]) -> Result<Vec<T>> {
        Ok(self.decompose(v)?.0)
    }
}

/// Span of the mean-centered centroids of every set, all from one layer.
pub fn span_basis<T: Scalar>(sets: &[&CentroidSet<T>]) -> Result<SubspaceBasis<T>> {
    let d = sets.first().ok_or_else(|| invalid("span of no centroid sets"))?.d_model();
    let mut rows = Vec::new();
    for s in sets {
        if s.d_model() != d {
            return Err(shape(format!("centroid sets of width {d} and {}", s.d_model())));
        }
        let m = s.grand_mean();
        rows.extend(s.matrix.row_iter().map(|r| r.iter().zip(&m).map(|(&x, &c)| x - c).collect::<Vec<T>>()));
    }
    Ok(SubspaceBasis {
        d_model: d,
        vectors: pivoted_orthonormal_basis(&rows, T::lit(SPAN_REL_TOL)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, Matrix};
    use crate::trace::Feature;

    #[test]
    fn decomposition_is_orthogonal_and_complete() {
        let s = CentroidSet {
            feature: Feature::PredEntropy,
            layer: 0,
            condition: "t".into(),
            bin_feature_means: vec![0.0, 1.0, 2.0],
            matrix: Matrix::<f64>::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![2.0, 2.0, 0.0, 0.0]])
                .unwrap(),
            counts: vec![1, 1, 1],
        };
        let basis = span_basis(&[&s]).unwrap();
        assert_eq!(basis.rank(), 2);
        let v = [0.3f64, -1.2, 0.7, 2.0];
        let (p, c) = basis.decompose(&v).unwrap();
        assert!(dot(&p, &c).abs() < 1e-14);
        assert!(p.iter().zip(&c).zip(&v).all(|((a, b), x)| (a + b - x).abs() < 1e-15));
        assert!((norm(&c) - (0.49f64 + 4.0).sqrt()).abs() < 1e-14);
    }
}
