use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ClusterError;

/// Principal axes of a patch collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `n_components × dim`, orthonormal rows.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Fits a PCA by exact singular decomposition of the centred data
/// (`data` is `n_samples × dim`).
///
/// Components are sign-normalised so that each one's entry of largest
/// magnitude is positive.
pub fn fit_pca(data: ArrayView2<f64>, n_components: usize) -> Result<PcaModel, ClusterError> {
    let (n, dim) = data.dim();
    if n < 2 {
        return Err(ClusterError::TooFewSamples { needed: 2, got: n });
    }
    if n_components == 0 || n_components > dim.min(n) {
        return Err(ClusterError::TooManyComponents {
            requested: n_components,
            max: dim.min(n),
        });
    }
    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let centred = DMatrix::from_fn(n, dim, |i, j| data[[i, j]] - mean[j]);
    let svd = centred.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sv = &svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut components = Array2::<f64>::zeros((n_components, dim));
    let mut explained_variance = Vec::with_capacity(n_components);
    for (k, &idx) in order.iter().take(n_components).enumerate() {
        let mut row: Vec<f64> = (0..dim).map(|j| v_t[(idx, j)]).collect();
        let pivot = (0..dim)
            .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.row_mut(k).assign(&Array1::from(row));
        explained_variance.push(sv[idx] * sv[idx] / (n - 1) as f64);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Coordinates of `patch` in the principal basis: `(patch - mean) · componentsᵀ`.
pub fn project(model: &PcaModel, patch: ArrayView1<f64>) -> Result<Array1<f64>, ClusterError> {
    if patch.len() != model.dim() {
        return Err(ClusterError::DimensionMismatch {
            expected: model.dim(),
            got: patch.len(),
        });
    }
    let centred = &patch - &model.mean;
    Ok(model.components.dot(&centred))
}

/// Projects every row of `data`.
pub fn project_all(model: &PcaModel, data: ArrayView2<f64>) -> Result<Array2<f64>, ClusterError> {
    if data.ncols() != model.dim() {
        return Err(ClusterError::DimensionMismatch {
            expected: model.dim(),
            got: data.ncols(),
        });
    }
    let centred = &data - &model.mean.view().insert_axis(Axis(0));
    Ok(centred.dot(&model.components.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rank_one_line() {
        let dir = array![0.6, 0.8];
        let ts = [-2.0, -1.0, 0.5, 1.0, 1.5];
        let data = Array2::from_shape_fn((5, 2), |(i, j)| ts[i] * dir[j]);
        let m = fit_pca(data.view(), 1).unwrap();
        let c = m.components.row(0);
        assert!((c[0] - 0.6).abs() < 1e-12 && (c[1] - 0.8).abs() < 1e-12);
        let mean_t = ts.iter().sum::<f64>() / 5.0;
        let var = ts.iter().map(|t| (t - mean_t).powi(2)).sum::<f64>() / 4.0;
        assert!((m.explained_variance[0] - var).abs() < 1e-12);
    }

    #[test]
    fn isotropic_cross() {
        let data = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let m = fit_pca(data.view(), 2).unwrap();
        assert!((m.explained_variance[0] - m.explained_variance[1]).abs() < 1e-12);
    }

    #[test]
    fn mean_projects_to_zero_and_axes_to_unit() {
        let data = Array2::from_shape_fn((12, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 0.1 * (i * j) as f64);
        let m = fit_pca(data.view(), 3).unwrap();
        let z = project(&m, m.mean.view()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        let p = &m.mean + &m.components.row(0);
        let c = project(&m, p.view()).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let one = Array2::<f64>::zeros((1, 4));
        assert!(matches!(fit_pca(one.view(), 1), Err(ClusterError::TooFewSamples { .. })));
        let few = Array2::<f64>::zeros((3, 4));
        assert!(matches!(fit_pca(few.view(), 4), Err(ClusterError::TooManyComponents { .. })));
        let data = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64);
        let m = fit_pca(data.view(), 2).unwrap();
        assert!(matches!(
            project(&m, Array1::zeros(2).view()),
            Err(ClusterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constant_data_projects_to_zero() {
        let data = Array2::from_elem((6, 4), 2.5);
        let m = fit_pca(data.view(), 3).unwrap();
        let coords = project_all(&m, data.view()).unwrap();
        assert!(coords.iter().all(|&v| v == 0.0));
    }
}
