use serde::{Deserialize, Serialize};

use super::centroids::CentroidSet;
use crate::error::{invalid, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::scalar::Scalar;

/// Eigenvalues below this fraction of the largest one count as zero.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Share of the total centered variance.
    pub explained: f64,
    /// Projection of each centroid onto the component, one per bin.
    pub coords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub components: Vec<Component>,
    /// Fewer than the requested components carry variance.
    pub rank_deficient: bool,
}

/// Principal components of the centroid rows, centered on their
/// count-weighted mean.
///
/// Computed from the bins x bins Gram matrix, so the cost does not depend on
/// `d_model`. Signs are fixed so that the largest-magnitude coordinate of
/// each component is positive (first such bin on ties).
pub fn pca<T: Scalar>(set: &CentroidSet<T>, k: usize) -> Result<PcaProjection> {
    let b = set.bins();
    if b < 2 {
        return Err(invalid(format!("pca needs at least 2 centroids, got {b}")));
    }
    let mean = set.grand_mean();
    let mut c = set.matrix.clone();
    for i in 0..b {
        for (x, &m) in c.row_mut(i).iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    let g: Matrix<f64> = Matrix::from_vec(b, b, c.gram().as_slice().iter().map(|x| x.as_f64()).collect())?;
    let eig = symmetric_eigen(&g)?;
    let total: f64 = (0..b).map(|i| g.get(i, i)).sum();
    let top = eig.values.first().copied().unwrap_or(0.0);
    let mut components = Vec::new();
    for j in 0..k.min(b) {
        let lambda = eig.values[j];
        if !(total > 0.0) || lambda <= top * RANK_TOL {
            break;
        }
        let mut coords: Vec<f64> = eig.vector(j).iter().map(|u| u * lambda.sqrt()).collect();
        let lead = coords
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > coords[best].abs() { i } else { best });
        if coords[lead] < 0.0 {
            coords.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(Component {
            explained: lambda / total,
            coords,
        });
    }
    Ok(PcaProjection {
        rank_deficient: components.len() < k,
        components,
    })
}

pub fn pca_top3<T: Scalar>(set: &CentroidSet<T>) -> Result<PcaProjection> {
    pca(set, 3)
}
