//! Centroid geometry of hidden states binned by an entropy feature.

mod binning;
mod centroids;
mod pca;
mod similarity;
mod subspace;

pub use binning::{quantile_bin, Binning};
pub use centroids::{
    build_centroids, centroids_from_samples, collect_samples, read_centroids, read_centroids_file, write_centroids,
    write_centroids_file, CentroidSet, CENTROID_MAGIC,
};
pub use pca::{pca, pca_top3, Component, PcaProjection, RANK_TOL};
pub use similarity::{linear_cka, matched_cosine, procrustes_similarity, CosineResult, MatchMode};
pub use subspace::{span_basis, SubspaceBasis, SPAN_REL_TOL};
