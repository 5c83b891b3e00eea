use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// `n` clusters of `K` observations on `p` covariates, stored cluster-major:
/// rows `i·K .. (i+1)·K` of the design belong to cluster `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredDataset {
    n: usize,
    k: usize,
    x: Matrix,
    y: Vec<f64>,
    cluster_ids: Vec<String>,
    covariate_names: Vec<String>,
}

impl ClusteredDataset {
    pub fn new(
        k: usize,
        x: Matrix,
        y: Vec<f64>,
        cluster_ids: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("cluster size must be positive".into()));
        }
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} design rows but {} outcomes",
                x.rows(),
                y.len()
            )));
        }
        if x.rows() % k != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} rows is not a multiple of cluster size {k}",
                x.rows()
            )));
        }
        let n = x.rows() / k;
        if cluster_ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} cluster ids for {n} clusters",
                cluster_ids.len()
            )));
        }
        if covariate_names.len() != x.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                x.cols()
            )));
        }
        if y.iter().chain(x.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Self {
            n,
            k,
            x,
            y,
            cluster_ids,
            covariate_names,
        })
    }

    /// Convenience constructor with generated ids (`c0, c1, ...`) and names
    /// (`x1, ..., xp`).
    pub fn from_parts(k: usize, x: Matrix, y: Vec<f64>) -> Result<Self> {
        let n = if k == 0 { 0 } else { x.rows() / k };
        let ids = (0..n).map(|i| format!("c{i}")).collect();
        let names = (1..=x.cols()).map(|j| format!("x{j}")).collect();
        Self::new(k, x, y, ids, names)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    /// Total observation count `n·K`.
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Covariate row for observation `t` of cluster `i`.
    #[inline]
    pub fn row(&self, i: usize, t: usize) -> &[f64] {
        self.x.row(i * self.k + t)
    }

    /// The `K` outcomes of cluster `i`.
    #[inline]
    pub fn cluster_y(&self, i: usize) -> &[f64] {
        &self.y[i * self.k..(i + 1) * self.k]
    }

    /// Column 0 is treated as an intercept when it is identically one.
    pub fn has_intercept(&self) -> bool {
        self.p() > 0 && (0..self.n_obs()).all(|r| self.x[(r, 0)] == 1.0)
    }

    /// Linear predictor `Xβ` for every observation.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.p(), "coefficient length");
        (0..self.n_obs()).map(|r| dot(self.x.row(r), beta)).collect()
    }

    /// `(1/(nK)) Σᵢ Xᵢᵀ v` for a vector `v` over all observations.
    pub fn mean_xt(&self, v: &[f64]) -> Vec<f64> {
        let scale = 1.0 / self.n_obs() as f64;
        self.x.t_matvec(v).into_iter().map(|s| s * scale).collect()
    }

    /// A new dataset holding the listed clusters, in the order given.
    pub fn subset(&self, clusters: &[usize]) -> Self {
        let p = self.p();
        let mut data = Vec::with_capacity(clusters.len() * self.k * p);
        let mut y = Vec::with_capacity(clusters.len() * self.k);
        for &i in clusters {
            for t in 0..self.k {
                data.extend_from_slice(self.row(i, t));
            }
            y.extend_from_slice(self.cluster_y(i));
        }
        let x = Matrix::from_vec(clusters.len() * self.k, p, data).expect("subset shape");
        Self {
            n: clusters.len(),
            k: self.k,
            x,
            y,
            cluster_ids: clusters.iter().map(|&i| self.cluster_ids[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Same clusters with a different outcome vector.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(
            self.k,
            self.x.clone(),
            y,
            self.cluster_ids.clone(),
            self.covariate_names.clone(),
        )
    }

    /// Keeps the listed covariate columns.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.n_obs() * cols.len());
        for r in 0..self.n_obs() {
            let row = self.x.row(r);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        Self {
            n: self.n,
            k: self.k,
            x: Matrix::from_vec(self.n_obs(), cols.len(), data).expect("column subset"),
            y: self.y.clone(),
            cluster_ids: self.cluster_ids.clone(),
            covariate_names: cols.iter().map(|&j| self.covariate_names[j].clone()).collect(),
        }
    }

    /// Centers and scales every non-constant column to unit (population)
    /// variance. Constant columns, including an intercept, are left as is.
    pub fn standardized(&self) -> Self {
        let mut out = self.clone();
        let m = self.n_obs() as f64;
        for j in 0..self.p() {
            let col = self.x.column(j);
            let mean = col.iter().sum::<f64>() / m;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
            if var <= 0.0 {
                continue;
            }
            let sd = var.sqrt();
            for (r, v) in col.iter().enumerate() {
                out.x[(r, j)] = (v - mean) / sd;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ClusteredDataset {
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 3.0], [1.0, 4.0], [1.0, 5.0]]);
        ClusteredDataset::from_parts(2, x, vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn shapes_and_access() {
        let d = toy();
        assert_eq!((d.n(), d.k(), d.p(), d.n_obs()), (2, 2, 2, 4));
        assert_eq!(d.row(1, 0), &[1.0, 4.0]);
        assert_eq!(d.cluster_y(1), &[3.0, 4.0]);
        assert!(d.has_intercept());
        assert_eq!(d.linear_predictor(&[1.0, 1.0]), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn subset_and_columns() {
        let d = toy();
        let s = d.subset(&[1]);
        assert_eq!(s.n(), 1);
        assert_eq!(s.cluster_ids(), &["c1".to_string()]);
        assert_eq!(s.y(), &[3.0, 4.0]);
        let c = d.select_columns(&[1]);
        assert_eq!(c.p(), 1);
        assert!(!c.has_intercept());
    }

    #[test]
    fn standardize() {
        let d = toy().standardized();
        assert_eq!(d.x().column(0), vec![1.0; 4]);
        let c = d.x().column(1);
        assert!(c.iter().sum::<f64>().abs() < 1e-12);
        assert!((c.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_ragged() {
        let x = Matrix::zeros(3, 2);
        assert!(ClusteredDataset::from_parts(2, x, vec![0.0; 3]).is_err());
    }
}
