use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::binning::quantile_bin;
use crate::error::{invalid, shape, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::tensorfile::{read_container, DType, TensorWriter};
use crate::trace::{derive_feature, Feature, FeatureParams, Trace};

pub const CENTROID_MAGIC: &[u8; 4] = b"PLCS";

/// Bin-averaged hidden states of one (feature, layer, condition).
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet<T> {
    pub feature: Feature,
    pub layer: u32,
    pub condition: String,
    /// Mean feature value per bin, nats.
    pub bin_feature_means: Vec<f64>,
    /// `bins x d_model`
    pub matrix: Matrix<T>,
    pub counts: Vec<usize>,
}

impl<T: Scalar> CentroidSet<T> {
    pub fn bins(&self) -> usize {
        self.matrix.rows()
    }

    pub fn d_model(&self) -> usize {
        self.matrix.cols()
    }

    pub fn sample_count(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Count-weighted mean of the rows, i.e. the mean of every source
    /// activation.
    pub fn grand_mean(&self) -> Vec<T> {
        let total = T::lit(self.sample_count() as f64);
        let mut m = vec![T::zero(); self.d_model()];
        for (row, &c) in self.matrix.row_iter().zip(&self.counts) {
            for (a, &x) in m.iter_mut().zip(row) {
                *a += x * T::lit(c as f64);
            }
        }
        m.iter_mut().for_each(|a| *a /= total);
        m
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bins();
        if self.bin_feature_means.len() != b || self.counts.len() != b {
            return Err(shape(format!(
                "centroid set has {b} rows, {} feature means and {} counts",
                self.bin_feature_means.len(),
                self.counts.len()
            )));
        }
        if self.bin_feature_means.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(invalid("bin feature means must be nondecreasing"));
        }
        if self.counts.contains(&0) {
            return Err(invalid("empty bin in centroid set"));
        }
        if !self.matrix.is_finite() {
            return Err(invalid("non-finite centroid entry"));
        }
        Ok(())
    }

    /// Same set with converted scalar type.
    pub fn cast<U: Scalar>(&self) -> CentroidSet<U> {
        CentroidSet {
            feature: self.feature,
            layer: self.layer,
            condition: self.condition.clone(),
            bin_feature_means: self.bin_feature_means.clone(),
            matrix: Matrix::from_vec(
                self.matrix.rows(),
                self.matrix.cols(),
                self.matrix.as_slice().iter().map(|&x| U::lit(x.as_f64())).collect(),
            )
            .expect("same shape"),
            counts: self.counts.clone(),
        }
    }
}

/// Bins `values` into `bins` quantiles and averages the paired vectors and
/// values within each bin.
pub fn centroids_from_samples<T: Scalar>(
    values: &[f64],
    vectors: &[Vec<T>],
    bins: usize,
    feature: Feature,
    layer: u32,
    condition: &str,
) -> Result<CentroidSet<T>> {
    if values.len() != vectors.len() {
        return Err(shape(format!("{} feature values for {} vectors", values.len(), vectors.len())));
    }
    let d = vectors.first().map_or(0, Vec::len);
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(shape("vectors must be nonempty and of equal length"));
    }
    let binning = quantile_bin(values, bins)?;
    let mut matrix = Matrix::zeros(bins, d);
    let mut sums = vec![0.0; bins];
    let mut lo = vec![f64::INFINITY; bins];
    let mut hi = vec![f64::NEG_INFINITY; bins];
    for (i, &b) in binning.assignment.iter().enumerate() {
        for (acc, &x) in matrix.row_mut(b).iter_mut().zip(&vectors[i]) {
            *acc += x;
        }
        sums[b] += values[i];
        lo[b] = lo[b].min(values[i]);
        hi[b] = hi[b].max(values[i]);
    }
    let mut means = Vec::with_capacity(bins);
    for b in 0..bins {
        let c = binning.sizes[b] as f64;
        matrix.row_mut(b).iter_mut().for_each(|x| *x /= T::lit(c));
        // clamp so rounding cannot break the ordering between tied bins
        means.push((sums[b] / c).clamp(lo[b], hi[b]));
    }
    let set = CentroidSet {
        feature,
        layer,
        condition: condition.to_string(),
        bin_feature_means: means,
        matrix,
        counts: binning.sizes,
    };
    set.validate()?;
    Ok(set)
}

/// Pairs of (feature value, hidden vector at `layer`) pooled over traces,
/// in trace order then position order. Template tokens are skipped unless
/// `include_special`.
pub fn collect_samples(
    traces: &[Trace],
    feature: Feature,
    params: FeatureParams,
    layer: u32,
    include_special: bool,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for t in traces {
        if !t.meta.captured_layers.contains(&layer) {
            return Err(invalid(format!(
                "trace of {} did not capture layer {layer}",
                t.meta.model_id
            )));
        }
        let series = derive_feature(t, feature, params)?;
        let by_pos: BTreeMap<u32, f64> = series.positions.iter().copied().zip(series.values.iter().copied()).collect();
        let token_at: BTreeMap<u32, u32> = t.tokens.iter().map(|r| (r.position, r.token_id)).collect();
        for h in t.hidden_at_layer(layer as u16) {
            if !include_special && token_at.get(&h.position).is_some_and(|&id| t.is_special(id)) {
                continue;
            }
            if let Some(&v) = by_pos.get(&h.position) {
                values.push(v);
                vectors.push(h.vector.iter().map(|&x| x as f64).collect());
            }
        }
    }
    Ok((values, vectors))
}

#[allow(clippy::too_many_arguments)]
pub fn build_centroids(
    traces: &[Trace],
    feature: Feature,
    params: FeatureParams,
    layer: u32,
    bins: usize,
    condition: &str,
    include_special: bool,
) -> Result<CentroidSet<f64>> {
    let (values, vectors) = collect_samples(traces, feature, params, layer, include_special)?;
    centroids_from_samples(&values, &vectors, bins, feature, layer, condition)
}

#[derive(Serialize, Deserialize)]
struct SetHeader {
    feature: Feature,
    layer: u32,
    condition: String,
    bin_feature_means: Vec<f64>,
    counts: Vec<usize>,
    tensor: String,
}

/// Writes several sets into one `PLCS` container (`f64` tensors).
pub fn write_centroids<T: Scalar, W: Write>(sets: &[CentroidSet<T>], sink: W) -> Result<usize> {
    let mut w = TensorWriter::new();
    let mut headers = Vec::new();
    for (i, s) in sets.iter().enumerate() {
        s.validate()?;
        let name = format!("set.{i}");
        w.push(&name, &[s.bins(), s.d_model()], s.matrix.as_slice(), DType::F64)?;
        headers.push(SetHeader {
            feature: s.feature,
            layer: s.layer,
            condition: s.condition.clone(),
            bin_feature_means: s.bin_feature_means.clone(),
            counts: s.counts.clone(),
            tensor: name,
        });
    }
    let mut extra = Map::new();
    extra.insert("sets".into(), serde_json::to_value(&headers)?);
    w.finish(CENTROID_MAGIC, extra, sink)
}

pub fn read_centroids<T: Scalar, R: Read>(source: R) -> Result<Vec<CentroidSet<T>>> {
    let f = read_container(CENTROID_MAGIC, source)?;
    let headers: Vec<SetHeader> = serde_json::from_value(
        f.header
            .get("sets")
            .cloned()
            .ok_or_else(|| Error::Format("centroid header has no sets".into()))?,
    )
    .map_err(|e| Error::Format(format!("centroid header: {e}")))?;
    let mut out = Vec::with_capacity(headers.len());
    for h in headers {
        let t = f.tensor(&h.tensor)?;
        if t.shape.len() != 2 {
            return Err(Error::Format(format!("tensor {} is not a matrix", h.tensor)));
        }
        let set = CentroidSet {
            feature: h.feature,
            layer: h.layer,
            condition: h.condition,
            bin_feature_means: h.bin_feature_means,
            matrix: Matrix::from_vec(t.shape[0], t.shape[1], t.data.iter().map(|&x| T::lit(x)).collect())?,
            counts: h.counts,
        };
        set.validate()?;
        out.push(set);
    }
    Ok(out)
}

pub fn write_centroids_file<T: Scalar>(sets: &[CentroidSet<T>], path: impl AsRef<Path>) -> Result<usize> {
    let mut out = BufWriter::new(File::create(path)?);
    let n = write_centroids(sets, &mut out)?;
    out.flush()?;
    Ok(n)
}

pub fn read_centroids_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<CentroidSet<T>>> {
    read_centroids(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bin_means() {
        let values = [0.0, 1.0, 5.0, 6.0];
        let vectors = vec![vec![0.0, 0.0], vec![2.0, 2.0], vec![4.0, 4.0], vec![4.0, 4.0]];
        let s = centroids_from_samples(&values, &vectors, 2, Feature::PredEntropy, 0, "x").unwrap();
        assert_eq!(s.matrix.row(0), &[1.0, 1.0]);
        assert_eq!(s.matrix.row(1), &[4.0, 4.0]);
        assert_eq!(s.bin_feature_means, vec![0.5, 5.5]);
        assert_eq!(s.grand_mean(), vec![2.5, 2.5]);
    }

    #[test]
    fn container_round_trip() {
        let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let vectors: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 1.0 / (i as f64 + 1.0), 0.3]).collect();
        let s = centroids_from_samples(&values, &vectors, 4, Feature::EmaSurpriseBack, 3, "on").unwrap();
        let mut buf = Vec::new();
        write_centroids(&[s.clone(), s.clone()], &mut buf).unwrap();
        let back: Vec<CentroidSet<f64>> = read_centroids(&buf[..]).unwrap();
        assert_eq!(back, vec![s.clone(), s]);
    }

    #[test]
    fn tied_values_keep_means_ordered() {
        let values = [0.7; 9];
        let vectors: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let s = centroids_from_samples(&values, &vectors, 3, Feature::PredEntropy, 0, "x").unwrap();
        assert!(s.bin_feature_means.iter().all(|&m| m == 0.7));
    }
}
