use serde::{Deserialize, Serialize};

use super::centroids::CentroidSet;
use crate::error::{invalid, shape, Error, Result};
use crate::linalg::{dot, norm, pivoted_orthonormal_basis, singular_values, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Row `i` against row `i`; needs equal bin counts.
    #[default]
    Index,
    /// Both sets resampled by linear interpolation in feature value onto a
    /// common grid spanning the overlap of their feature ranges.
    Interpolate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineResult {
    pub mean: f64,
    pub per_row: Vec<Option<f64>>,
    /// Rows skipped because a centered centroid had zero norm.
    pub excluded: usize,
}

fn centered_rows<T: Scalar>(s: &CentroidSet<T>) -> Vec<Vec<T>> {
    let m = s.grand_mean();
    s.matrix
        .row_iter()
        .map(|r| r.iter().zip(&m).map(|(&x, &c)| x - c).collect())
        .collect()
}

/// Rows of `s` resampled at feature values `grid`.
fn resample<T: Scalar>(s: &CentroidSet<T>, rows: &[Vec<T>], grid: &[f64]) -> Vec<Vec<T>> {
    let x = &s.bin_feature_means;
    grid.iter()
        .map(|&g| {
            let mut j = 0;
            while j + 2 < x.len() && !(g <= x[j + 1] && x[j + 1] > x[j]) {
                j += 1;
            }
            let span = x[j + 1] - x[j];
            let t = if span > 0.0 { ((g - x[j]) / span).clamp(0.0, 1.0) } else { 0.0 };
            let t = T::lit(t);
            rows[j]
                .iter()
                .zip(&rows[j + 1])
                .map(|(&a, &b)| a + (b - a) * t)
                .collect()
        })
        .collect()
}

/// Mean cosine between matched centroids after centering each set on its
/// own mean.
pub fn matched_cosine<T: Scalar>(a: &CentroidSet<T>, b: &CentroidSet<T>, mode: MatchMode) -> Result<CosineResult> {
    if a.d_model() != b.d_model() {
        return Err(shape(format!("d_model {} vs {}", a.d_model(), b.d_model())));
    }
    let (ra, rb) = (centered_rows(a), centered_rows(b));
    let (ra, rb) = match mode {
        MatchMode::Index => {
            if a.bins() != b.bins() {
                return Err(shape(format!("{} bins vs {} bins", a.bins(), b.bins())));
            }
            (ra, rb)
        }
        MatchMode::Interpolate => {
            let lo = a.bin_feature_means[0].max(b.bin_feature_means[0]);
            let hi = a.bin_feature_means[a.bins() - 1].min(b.bin_feature_means[b.bins() - 1]);
            if !(lo < hi) {
                return Err(Error::Undefined(format!("feature ranges do not overlap ({lo} >= {hi})")));
            }
            let n = a.bins().min(b.bins());
            let grid: Vec<f64> = (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect();
            (resample(a, &ra, &grid), resample(b, &rb, &grid))
        }
    };
    let tiny = |rows: &[Vec<T>]| {
        let top = rows.iter().map(|r| norm(r)).fold(T::zero(), T::max);
        top * T::epsilon() * T::lit(16.0)
    };
    let (ta, tb) = (tiny(&ra), tiny(&rb));
    let mut per_row = Vec::with_capacity(ra.len());
    for (x, y) in ra.iter().zip(&rb) {
        let (nx, ny) = (norm(x), norm(y));
        per_row.push(if nx <= ta || ny <= tb {
            None
        } else {
            Some((dot(x, y) / (nx * ny)).as_f64().clamp(-1.0, 1.0))
        });
    }
    let used: Vec<f64> = per_row.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::Undefined("every matched pair has a zero-norm centroid".into()));
    }
    Ok(CosineResult {
        mean: used.iter().sum::<f64>() / used.len() as f64,
        excluded: per_row.len() - used.len(),
        per_row,
    })
}

fn check_rows<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(shape(format!("{} rows vs {} rows", x.rows(), y.rows())));
    }
    if x.rows() < 2 {
        return Err(invalid("similarity needs at least 2 rows"));
    }
    Ok(())
}

/// Linear CKA between two row-matched representations:
/// `⟨Kx, Ky⟩ / (‖Kx‖ ‖Ky‖)` with `K = X Xᵀ` on column-centered data.
pub fn linear_cka<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>) -> Result<f64> {
    check_rows(x, y)?;
    let kx = x.centered().gram();
    let ky = y.centered().gram();
    let num: T = kx.as_slice().iter().zip(ky.as_slice()).map(|(&a, &b)| a * b).sum();
    let den = kx.frobenius_norm() * ky.frobenius_norm();
    if !(den > T::zero()) {
        return Err(Error::Undefined("CKA of a constant representation".into()));
    }
    Ok((num / den).as_f64().clamp(0.0, 1.0))
}

/// Orthogonal Procrustes similarity: after column centering and scaling to
/// unit Frobenius norm, `max_R ⟨A R, B⟩` over orthogonal `R`, which is the
/// nuclear norm of `Aᵀ B`. Lies in `[0, 1]`; reflections are allowed.
pub fn procrustes_similarity<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    check_rows(a, b)?;
    if a.cols() != b.cols() {
        return Err(shape(format!("{} columns vs {} columns", a.cols(), b.cols())));
    }
    let mut ac = a.centered();
    let mut bc = b.centered();
    let (na, nb) = (ac.frobenius_norm(), bc.frobenius_norm());
    if !(na > T::zero() && nb > T::zero()) {
        return Err(Error::Undefined("Procrustes similarity of a constant representation".into()));
    }
    ac.scale(T::one() / na);
    bc.scale(T::one() / nb);
    // Aᵀ B only acts on the row space of A and B, which has dimension at
    // most 2n; reduce to it before the SVD.
    let mut rows = ac.to_rows();
    rows.extend(bc.to_rows());
    let q = pivoted_orthonormal_basis(&rows, T::epsilon() * T::lit(64.0));
    let project = |m: &Matrix<T>| -> Result<Matrix<T>> {
        let data = m
            .row_iter()
            .flat_map(|r| q.iter().map(move |qv| dot(r, qv)))
            .collect();
        Matrix::from_vec(m.rows(), q.len(), data)
    };
    let (pa, pb) = (project(&ac)?, project(&bc)?);
    let m = pa.transpose().matmul(&pb)?;
    let nuclear: T = singular_values(&m).into_iter().sum();
    Ok(nuclear.as_f64().clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Feature;

    fn set(rows: Vec<Vec<f64>>, means: Vec<f64>) -> CentroidSet<f64> {
        let n = rows.len();
        CentroidSet {
            feature: Feature::PredEntropy,
            layer: 0,
            condition: "t".into(),
            bin_feature_means: means,
            matrix: Matrix::from_rows(&rows).unwrap(),
            counts: vec![1; n],
        }
    }

    fn sample() -> Vec<Vec<f64>> {
        vec![
            vec![1.0, 0.2, -0.3],
            vec![0.1, 1.5, 0.0],
            vec![-0.7, 0.4, 2.0],
            vec![0.3, -1.1, 0.9],
        ]
    }

    #[test]
    fn self_similarity_is_one() {
        let m = Matrix::from_rows(&sample()).unwrap();
        assert!((linear_cka(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        assert!((procrustes_similarity(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        let s = set(sample(), vec![0.0, 1.0, 2.0, 3.0]);
        let c = matched_cosine(&s, &s, MatchMode::Index).unwrap();
        assert!((c.mean - 1.0).abs() < 1e-12);
        let c = matched_cosine(&s, &s, MatchMode::Interpolate).unwrap();
        assert!((c.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_invariance() {
        let m = Matrix::from_rows(&sample()).unwrap();
        let (c, s) = (0.6f64, 0.8f64);
        let r = Matrix::from_rows(&[vec![c, -s, 0.0], vec![s, c, 0.0], vec![0.0, 0.0, -1.0]]).unwrap();
        let mr = m.matmul(&r).unwrap();
        assert!((procrustes_similarity(&m, &mr).unwrap() - 1.0).abs() < 1e-12);
        assert!((linear_cka(&m, &mr).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_is_undefined() {
        let z = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(linear_cka(&z, &m), Err(Error::Undefined(_))));
        assert!(matches!(procrustes_similarity(&m, &z), Err(Error::Undefined(_))));
    }

    #[test]
    fn zero_rows_excluded() {
        // the middle row sits at the mean, so its centered norm is zero
        let s = set(vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![-1.0, 0.0]], vec![0.0, 1.0, 2.0]);
        let c = matched_cosine(&s, &s, MatchMode::Index).unwrap();
        assert_eq!(c.excluded, 1);
        assert_eq!(c.per_row[1], None);
    }

    #[test]
    fn interpolation_needs_overlap() {
        let a = set(sample(), vec![0.0, 1.0, 2.0, 3.0]);
        let b = set(sample(), vec![4.0, 5.0, 6.0, 7.0]);
        assert!(matches!(matched_cosine(&a, &b, MatchMode::Interpolate), Err(Error::Undefined(_))));
        assert!(matched_cosine(&a, &b, MatchMode::Index).is_ok());
    }
}
