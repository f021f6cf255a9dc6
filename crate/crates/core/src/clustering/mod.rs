//! Patch embedding and density clustering: the initial PCA + HDBSCAN pass
//! and the per-cluster split refinement.

mod hdbscan;
mod pca;

pub use hdbscan::{hdbscan, HdbscanConfig};
pub use pca::{fit_pca, project, project_all, PcaModel};

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use thiserror::Error;

pub const NOISE: i32 = -1;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("requested {requested} components but at most {max} are available")]
    TooManyComponents { requested: usize, max: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no points to cluster")]
    Empty,
    #[error("invalid clustering configuration: {0}")]
    InvalidConfig(String),
    #[error("assignment covers {labels} events but {patches} patches were given")]
    LengthMismatch { labels: usize, patches: usize },
}

/// Per-event cluster labels, `-1` for noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<i32>,
    pub n_clusters: usize,
}

impl ClusterAssignment {
    pub fn all_noise(n: usize) -> Self {
        Self {
            labels: vec![NOISE; n],
            n_clusters: 0,
        }
    }

    /// Builds an assignment, renumbering labels densely in order of first
    /// appearance so every label in `0..n_clusters` is used.
    pub fn from_labels(labels: Vec<i32>) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels: Vec<i32> = labels
            .into_iter()
            .map(|l| {
                if l < 0 {
                    NOISE
                } else {
                    let next = map.len() as i32;
                    *map.entry(l).or_insert(next)
                }
            })
            .collect();
        Self {
            n_clusters: map.len(),
            labels,
        }
    }

    pub fn members(&self, cluster: i32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// Stacks patches into an `n × (rows·cols)` matrix, row-major per patch.
pub fn flatten_patches(patches: &[Array2<f64>]) -> Array2<f64> {
    let dim = patches.first().map_or(0, |p| p.len());
    let mut data = Array2::zeros((patches.len(), dim));
    for (mut row, p) in data.rows_mut().into_iter().zip(patches) {
        row.iter_mut().zip(p.iter()).for_each(|(d, s)| *d = *s);
    }
    data
}

/// PCA to three components, then HDBSCAN on the projections.
pub fn initial_clustering(
    data: ArrayView2<f64>,
    cfg: &HdbscanConfig,
) -> Result<(PcaModel, ClusterAssignment), ClusterError> {
    let n_components = 3.min(data.ncols()).min(data.nrows());
    let model = fit_pca(data, n_components)?;
    let coords = project_all(&model, data)?;
    let assignment = hdbscan(coords.view(), cfg)?;
    Ok((model, assignment))
}

/// Outcome of splitting one parent cluster: sub-labels per member, or
/// `None` when the cluster stays whole.
fn split_one(data: ArrayView2<f64>, members: &[usize], cfg: &HdbscanConfig) -> Result<Option<Vec<usize>>, ClusterError> {
    if members.len() < 2 * cfg.min_cluster_size {
        return Ok(None);
    }
    let sub = data.select(Axis(0), members);
    let n_components = 2.min(sub.ncols()).min(sub.nrows());
    let model = fit_pca(sub.view(), n_components)?;
    let coords = project_all(&model, sub.view())?;
    let inner = hdbscan(coords.view(), cfg)?;
    if inner.n_clusters <= 1 {
        return Ok(None);
    }
    // points rejected by the inner pass join the nearest sub-cluster centroid
    let dim = coords.ncols();
    let mut centroids = vec![vec![0.0; dim]; inner.n_clusters];
    let sizes = inner.cluster_sizes();
    for (i, &l) in inner.labels.iter().enumerate() {
        if l >= 0 {
            for d in 0..dim {
                centroids[l as usize][d] += coords[[i, d]] / sizes[l as usize] as f64;
            }
        }
    }
    let sub_labels = inner
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l >= 0 {
                l as usize
            } else {
                let dist = |c: &Vec<f64>| (0..dim).map(|d| (coords[[i, d]] - c[d]).powi(2)).sum::<f64>();
                (0..centroids.len())
                    .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])).then(a.cmp(&b)))
                    .expect("at least two sub-clusters")
            }
        })
        .collect();
    Ok(Some(sub_labels))
}

/// Re-clusters every cluster on its own two leading principal components.
///
/// Sub-clusters are numbered globally in parent order. Noise stays noise;
/// members rejected by an inner pass are kept inside their parent.
pub fn split_clusters(
    data: ArrayView2<f64>,
    assignment: &ClusterAssignment,
    cfg: &HdbscanConfig,
) -> Result<ClusterAssignment, ClusterError> {
    if assignment.labels.len() != data.nrows() {
        return Err(ClusterError::LengthMismatch {
            labels: assignment.labels.len(),
            patches: data.nrows(),
        });
    }
    let parents: Vec<Vec<usize>> = (0..assignment.n_clusters as i32).map(|c| assignment.members(c)).collect();
    let splits: Vec<Option<Vec<usize>>> = parents
        .par_iter()
        .map(|members| split_one(data, members, cfg))
        .collect::<Result<_, _>>()?;

    let mut labels = vec![NOISE; data.nrows()];
    let mut next = 0i32;
    for (members, split) in parents.iter().zip(splits) {
        match split {
            None => {
                for &m in members {
                    labels[m] = next;
                }
                next += 1;
            }
            Some(sub) => {
                let n_sub = sub.iter().max().map_or(0, |m| m + 1) as i32;
                for (&m, &s) in members.iter().zip(&sub) {
                    labels[m] = next + s as i32;
                }
                next += n_sub;
            }
        }
    }
    Ok(ClusterAssignment {
        labels,
        n_clusters: next as usize,
    })
}
