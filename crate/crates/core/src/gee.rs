//! Working-covariance machinery: residuals, moment estimators of the
//! per-time variances and the working correlation, and the per-cluster
//! weight matrices that enter the projected estimating equation.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::numerics::{spd_inverse, Matrix, SpdMatrix};

/// Largest admissible `|ρ̂|`.
pub const RHO_CLAMP: f64 = 0.99;
/// Floor on the binomial variance `μ(1−μ)`.
pub const GLM_WEIGHT_FLOOR: f64 = 1e-6;
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorrelationKind {
    Independence,
    Ar1,
    Exchangeable,
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationKind::Independence => "ind",
            CorrelationKind::Ar1 => "ar1",
            CorrelationKind::Exchangeable => "exch",
        })
    }
}

impl FromStr for CorrelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ind" | "independence" => Ok(Self::Independence),
            "ar1" | "ar-1" => Ok(Self::Ar1),
            "exch" | "exchangeable" => Ok(Self::Exchangeable),
            other => Err(Error::InvalidInput(format!(
                "unknown correlation structure '{other}' (expected ind, ar1 or exch)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkFunction {
    Identity,
    Logit,
}

impl LinkFunction {
    /// Mean `μ(η)`.
    #[inline]
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Identity => eta,
            LinkFunction::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// `dμ/dη`
    #[inline]
    pub fn derivative(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Logit => {
                let mu = self.mean(eta);
                mu * (1.0 - mu)
            }
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkFunction::Identity => "identity",
            LinkFunction::Logit => "logit",
        })
    }
}

impl FromStr for LinkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Self::Identity),
            "logit" | "logistic" => Ok(Self::Logit),
            other => Err(Error::InvalidInput(format!(
                "unknown link '{other}' (expected identity or logit)"
            ))),
        }
    }
}

/// A correlation structure together with its estimated parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingCorrelation {
    pub kind: CorrelationKind,
    /// `None` for independence.
    pub rho: Option<f64>,
}

/// `Â = diag(σ̂²)`, `R̂`, and `V̂ = Â^{1/2} R̂ Â^{1/2}` with inverses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingCovariance {
    pub correlation: WorkingCorrelation,
    pub a_diag: Vec<f64>,
    pub r: SpdMatrix,
    pub r_inv: SpdMatrix,
    pub v: SpdMatrix,
    pub v_inv: SpdMatrix,
    /// Set when `ρ̂` had to be clamped into `[−0.99, 0.99]`.
    pub clamped: bool,
}

impl WorkingCovariance {
    pub fn k(&self) -> usize {
        self.a_diag.len()
    }

    /// Assembles the covariance from per-time variances and a correlation.
    pub fn from_parts(a_diag: Vec<f64>, correlation: WorkingCorrelation) -> Result<Self> {
        let k = a_diag.len();
        if let Some((time, &variance)) = a_diag
            .iter()
            .enumerate()
            .find(|(_, &s)| !(s > VARIANCE_FLOOR))
        {
            return Err(Error::DegenerateVariance { time, variance });
        }
        let r = correlation_matrix(correlation.kind, correlation.rho.unwrap_or(0.0), k)?;
        let r_inv = spd_inverse(&r)?;
        let sd: Vec<f64> = a_diag.iter().map(|s| s.sqrt()).collect();
        let mut v = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                v[(i, j)] = sd[i] * r[(i, j)] * sd[j];
            }
        }
        let v = SpdMatrix::new(v)?;
        let v_inv = spd_inverse(&v)?;
        Ok(Self {
            correlation,
            a_diag,
            r,
            r_inv,
            v,
            v_inv,
            clamped: false,
        })
    }

    /// Working covariance equal to a known matrix, e.g. the truth in a
    /// simulation or an injected `V̂`.
    pub fn fixed(v: SpdMatrix) -> Result<Self> {
        let k = v.dim();
        let a_diag = v.diag();
        let mut r = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                r[(i, j)] = v[(i, j)] / (a_diag[i] * a_diag[j]).sqrt();
            }
        }
        let r = SpdMatrix::new(r)?;
        let r_inv = spd_inverse(&r)?;
        let v_inv = spd_inverse(&v)?;
        Ok(Self {
            correlation: WorkingCorrelation {
                kind: CorrelationKind::Independence,
                rho: None,
            },
            a_diag,
            r,
            r_inv,
            v,
            v_inv,
            clamped: false,
        })
    }
}

/// The `K×K` correlation matrix of a structure with parameter `rho`.
pub fn correlation_matrix(kind: CorrelationKind, rho: f64, k: usize) -> Result<SpdMatrix> {
    if rho.abs() >= 1.0 {
        return Err(Error::NotPositiveDefinite {
            index: 0,
            pivot: 1.0 - rho.abs(),
        });
    }
    let mut r = Matrix::identity(k);
    match kind {
        CorrelationKind::Independence => {}
        CorrelationKind::Ar1 => {
            for i in 0..k {
                for j in 0..k {
                    r[(i, j)] = rho.powi((i as i32 - j as i32).abs());
                }
            }
        }
        CorrelationKind::Exchangeable => {
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        r[(i, j)] = rho;
                    }
                }
            }
        }
    }
    // Exchangeable is PD only for rho > -1/(K-1).
    SpdMatrix::new(r)
}

/// `ε̂ᵢⱼ = Yᵢⱼ − μ(Xᵢⱼᵀβ)` as an `n×K` matrix.
pub fn residuals(data: &ClusteredDataset, beta: &[f64], link: LinkFunction) -> Matrix {
    let eta = data.linear_predictor(beta);
    let resid: Vec<f64> = data
        .y()
        .iter()
        .zip(&eta)
        .map(|(y, e)| y - link.mean(*e))
        .collect();
    Matrix::from_vec(data.n(), data.k(), resid).expect("residual shape")
}

/// Moment estimators of `Â` and `R̂` from an `n×K` residual matrix.
///
/// Variances are per time point, `σ̂²ⱼ = (1/n)Σᵢ ε̂²ᵢⱼ`. The correlation
/// parameter is the mean product of standardized residuals `ε̂ᵢⱼ/σ̂ⱼ` over
/// adjacent pairs (AR-1) or all distinct pairs (exchangeable).
pub fn estimate_working_cov(resid: &Matrix, kind: CorrelationKind) -> Result<WorkingCovariance> {
    let n = resid.rows();
    let k = resid.cols();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 clusters to estimate a working covariance, got {n}"
        )));
    }
    let a_diag: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| resid[(i, j)].powi(2)).sum::<f64>() / n as f64)
        .collect();
    if let Some((time, &variance)) = a_diag
        .iter()
        .enumerate()
        .find(|(_, &s)| !(s > VARIANCE_FLOOR))
    {
        return Err(Error::DegenerateVariance { time, variance });
    }
    let sd: Vec<f64> = a_diag.iter().map(|s| s.sqrt()).collect();
    let std = |i: usize, j: usize| resid[(i, j)] / sd[j];

    let raw_rho = match kind {
        CorrelationKind::Independence => None,
        CorrelationKind::Ar1 => {
            if k < 2 {
                Some(0.0)
            } else {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..k - 1 {
                        s += std(i, j) * std(i, j + 1);
                    }
                }
                Some(s / (n * (k - 1)) as f64)
            }
        }
        CorrelationKind::Exchangeable => {
            let pairs = k * k.saturating_sub(1) / 2;
            if pairs == 0 {
                Some(0.0)
            } else {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..k {
                        for l in (j + 1)..k {
                            s += std(i, j) * std(i, l);
                        }
                    }
                }
                Some(s / (n * pairs) as f64)
            }
        }
    };

    let mut clamped = false;
    let rho = raw_rho.map(|r| {
        let mut lo = -RHO_CLAMP;
        if kind == CorrelationKind::Exchangeable && k > 1 {
            // keep the exchangeable matrix positive definite
            lo = lo.max(-1.0 / (k - 1) as f64 + 1e-3);
        }
        if r > RHO_CLAMP || r < lo {
            clamped = true;
            warn!("working correlation {r:.4} clamped into [{lo:.3}, {RHO_CLAMP}]");
            r.clamp(lo, RHO_CLAMP)
        } else {
            r
        }
    });
    let mut wc = WorkingCovariance::from_parts(a_diag, WorkingCorrelation { kind, rho })?;
    wc.clamped = clamped;
    Ok(wc)
}

/// Per-cluster binomial variances `μ̂ᵢⱼ(1−μ̂ᵢⱼ)`, floored, as an `n×K` matrix.
/// The identity link has unit weights.
pub fn glm_cluster_weights(data: &ClusteredDataset, beta: &[f64], link: LinkFunction) -> Matrix {
    let eta = data.linear_predictor(beta);
    let w: Vec<f64> = eta
        .iter()
        .map(|&e| match link {
            LinkFunction::Identity => 1.0,
            LinkFunction::Logit => link.derivative(e).max(GLM_WEIGHT_FLOOR),
        })
        .collect();
    Matrix::from_vec(data.n(), data.k(), w).expect("weight shape")
}

/// Weight matrices of the projected estimating equation
///
/// ```text
/// g(β) = (1/(nK)) Σᵢ Xᵢᵀ Wᵢ (Yᵢ − μᵢ(β)),     Gram = (1/(nK)) Σᵢ Xᵢᵀ Mᵢ Xᵢ
/// ```
///
/// For the linear model `Wᵢ = Mᵢ = V̂⁻¹`. For a GLM,
/// `Wᵢ = Dᵢ Âᵢ^{-1/2} R̂⁻¹ Âᵢ^{-1/2}` and `Mᵢ = Wᵢ Dᵢ` with `Dᵢ = diag(dμ/dη)`;
/// under the logit link `Dᵢ = Âᵢ`, giving `Âᵢ^{1/2}R̂⁻¹Âᵢ^{-1/2}` and
/// `Âᵢ^{1/2}R̂⁻¹Âᵢ^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterWeights {
    Shared {
        v_inv: Matrix,
    },
    PerCluster {
        w: Vec<Matrix>,
        m: Vec<Matrix>,
        /// `dμ/dη` per observation (`n×K`).
        deriv: Matrix,
    },
}

impl ClusterWeights {
    pub fn linear(wc: &WorkingCovariance) -> Self {
        ClusterWeights::Shared {
            v_inv: wc.v_inv.matrix().clone(),
        }
    }

    /// Per-cluster weights from variances `a` (`n×K`), derivatives `deriv`
    /// (`n×K`) and an inverse working correlation.
    pub fn per_cluster(a: &Matrix, deriv: &Matrix, r_inv: &Matrix) -> Self {
        let n = a.rows();
        let k = a.cols();
        let mut w = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n);
        for i in 0..n {
            let inv_sd: Vec<f64> = a.row(i).iter().map(|s| 1.0 / s.sqrt()).collect();
            let d = deriv.row(i);
            let mut wi = Matrix::zeros(k, k);
            let mut mi = Matrix::zeros(k, k);
            for s in 0..k {
                for t in 0..k {
                    let base = d[s] * inv_sd[s] * r_inv[(s, t)] * inv_sd[t];
                    wi[(s, t)] = base;
                    mi[(s, t)] = base * d[t];
                }
            }
            w.push(wi);
            m.push(mi);
        }
        ClusterWeights::PerCluster {
            w,
            m,
            deriv: deriv.clone(),
        }
    }

    /// GLM weights evaluated at `beta`.
    pub fn glm(data: &ClusteredDataset, beta: &[f64], link: LinkFunction, r_inv: &Matrix) -> Self {
        let a = glm_cluster_weights(data, beta, link);
        let eta = data.linear_predictor(beta);
        let deriv: Vec<f64> = eta
            .iter()
            .map(|&e| match link {
                LinkFunction::Identity => 1.0,
                LinkFunction::Logit => link.derivative(e).max(GLM_WEIGHT_FLOOR),
            })
            .collect();
        let deriv = Matrix::from_vec(data.n(), data.k(), deriv).expect("derivative shape");
        Self::per_cluster(&a, &deriv, r_inv)
    }

    /// `Wᵢ`
    pub fn w(&self, i: usize) -> &Matrix {
        match self {
            ClusterWeights::Shared { v_inv } => v_inv,
            ClusterWeights::PerCluster { w, .. } => &w[i],
        }
    }

    /// `Mᵢ`
    pub fn m(&self, i: usize) -> &Matrix {
        match self {
            ClusterWeights::Shared { v_inv } => v_inv,
            ClusterWeights::PerCluster { m, .. } => &m[i],
        }
    }

    /// `dμ/dη` for observation `t` of cluster `i`.
    pub fn deriv(&self, i: usize, t: usize) -> f64 {
        match self {
            ClusterWeights::Shared { .. } => 1.0,
            ClusterWeights::PerCluster { deriv, .. } => deriv[(i, t)],
        }
    }

    /// Restricts per-cluster weights to a subset of clusters.
    pub fn subset(&self, clusters: &[usize]) -> Self {
        match self {
            ClusterWeights::Shared { .. } => self.clone(),
            ClusterWeights::PerCluster { w, m, deriv } => {
                let k = deriv.cols();
                let mut d = Vec::with_capacity(clusters.len() * k);
                for &i in clusters {
                    d.extend_from_slice(deriv.row(i));
                }
                ClusterWeights::PerCluster {
                    w: clusters.iter().map(|&i| w[i].clone()).collect(),
                    m: clusters.iter().map(|&i| m[i].clone()).collect(),
                    deriv: Matrix::from_vec(clusters.len(), k, d).expect("subset shape"),
                }
            }
        }
    }
}

/// Working covariance for the GLM path: per-cluster variances `Âᵢ` from the
/// fitted means and a correlation estimated from Pearson residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmWorkingCovariance {
    /// `μ̂(1−μ̂)` per observation, `n×K`.
    pub a: Matrix,
    /// Correlation part; its `a_diag` holds the Pearson residual variances.
    pub pearson: WorkingCovariance,
}

pub fn estimate_glm_working_cov(
    data: &ClusteredDataset,
    beta: &[f64],
    link: LinkFunction,
    kind: CorrelationKind,
) -> Result<GlmWorkingCovariance> {
    let a = glm_cluster_weights(data, beta, link);
    let resid = residuals(data, beta, link);
    let mut pearson = resid.clone();
    for i in 0..data.n() {
        for t in 0..data.k() {
            pearson[(i, t)] /= a[(i, t)].sqrt();
        }
    }
    let pearson = estimate_working_cov(&pearson, kind)?;
    Ok(GlmWorkingCovariance { a, pearson })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_ar_residuals(n: usize, k: usize, rho: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, k);
        for i in 0..n {
            let mut prev: f64 = StandardNormal.sample(&mut rng);
            m[(i, 0)] = prev;
            for t in 1..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                prev = rho * prev + (1.0 - rho * rho).sqrt() * z;
                m[(i, t)] = prev;
            }
        }
        m
    }

    #[test]
    fn residual_examples() {
        let x = Matrix::from_rows(&[[1.0, 0.5], [1.0, -1.0], [1.0, 2.0], [1.0, 0.0]]);
        let beta = [0.3, -0.7];
        let y = x.matvec(&beta);
        let d = ClusteredDataset::from_parts(2, x, y.clone()).unwrap();
        assert!(max_abs(&residuals(&d, &beta, LinkFunction::Identity)) < 1e-15);
        assert_eq!(residuals(&d, &[0.0, 0.0], LinkFunction::Identity).as_slice(), &y[..]);
        let r = residuals(&d, &[0.0, 0.0], LinkFunction::Logit);
        for (r, y) in r.as_slice().iter().zip(&y) {
            assert_abs_diff_eq!(*r, y - 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn perfect_correlation_is_clamped() {
        let mut m = Matrix::zeros(50, 4);
        for i in 0..50 {
            let v = if i % 2 == 0 { 1.0 } else { -1.0 };
            for t in 0..4 {
                m[(i, t)] = v;
            }
        }
        let wc = estimate_working_cov(&m, CorrelationKind::Exchangeable).unwrap();
        assert!(wc.clamped);
        assert_eq!(wc.correlation.rho, Some(RHO_CLAMP));
    }

    #[test]
    fn iid_residuals_give_small_rho() {
        let m = gaussian_ar_residuals(5000, 4, 0.0, 1);
        for kind in [CorrelationKind::Ar1, CorrelationKind::Exchangeable] {
            let rho = estimate_working_cov(&m, kind).unwrap().correlation.rho.unwrap();
            assert!(rho.abs() < 0.05, "{kind}: {rho}");
        }
    }

    #[test]
    fn independence_is_identity() {
        let m = gaussian_ar_residuals(30, 4, 0.8, 2);
        let wc = estimate_working_cov(&m, CorrelationKind::Independence).unwrap();
        assert_eq!(wc.r.matrix(), &Matrix::identity(4));
        assert_eq!(wc.correlation.rho, None);
    }

    #[test]
    fn ar1_recovers_rho() {
        for (rho, seed) in [(0.0, 10), (0.3, 11), (0.5, 12)] {
            let m = gaussian_ar_residuals(2000, 4, rho, seed);
            let est = estimate_working_cov(&m, CorrelationKind::Ar1).unwrap();
            assert!((est.correlation.rho.unwrap() - rho).abs() < 0.05);
        }
    }

    #[test]
    fn covariance_assembly() {
        let m = gaussian_ar_residuals(200, 4, 0.4, 3);
        let wc = estimate_working_cov(&m, CorrelationKind::Ar1).unwrap();
        let k = wc.k();
        for i in 0..k {
            assert_eq!(wc.r[(i, i)], 1.0);
            for j in 0..k {
                let rebuilt = wc.a_diag[i].sqrt() * wc.r[(i, j)] * wc.a_diag[j].sqrt();
                assert_abs_diff_eq!(rebuilt, wc.v[(i, j)], epsilon = 1e-14);
            }
        }
        let prod = wc.v_inv.matmul(wc.v.matrix()).unwrap();
        assert!(max_abs(&prod.sub(&Matrix::identity(k)).unwrap()) < 1e-9);
    }

    #[test]
    fn exchangeable_has_two_values() {
        let m = gaussian_ar_residuals(300, 5, 0.5, 4);
        let wc = estimate_working_cov(&m, CorrelationKind::Exchangeable).unwrap();
        let mut vals: Vec<f64> = wc.r.as_slice().to_vec();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        assert_eq!(vals.len(), 2);
        assert_eq!(vals[1], 1.0);
    }

    #[test]
    fn degenerate_variance() {
        let m = Matrix::zeros(10, 3);
        assert!(matches!(
            estimate_working_cov(&m, CorrelationKind::Ar1),
            Err(Error::DegenerateVariance { time: 0, .. })
        ));
    }

    #[test]
    fn glm_weight_examples() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [1000.0], [-(4.0f64.ln())]]);
        let d = ClusteredDataset::from_parts(2, x, vec![0.0; 4]).unwrap();
        let w = glm_cluster_weights(&d, &[1.0], LinkFunction::Logit);
        assert_abs_diff_eq!(w[(0, 0)], 0.25, epsilon = 1e-15);
        assert_eq!(w[(1, 0)], GLM_WEIGHT_FLOOR);
        // logit(0.2) = -ln 4
        assert_abs_diff_eq!(w[(1, 1)], 0.16, epsilon = 1e-15);
    }

    #[test]
    fn identity_weights_reduce_to_inverse_correlation() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0]]);
        let d = ClusteredDataset::from_parts(2, x, vec![0.0; 4]).unwrap();
        let r_inv = spd_inverse(&correlation_matrix(CorrelationKind::Ar1, 0.3, 2).unwrap()).unwrap();
        let cw = ClusterWeights::glm(&d, &[0.2], LinkFunction::Identity, r_inv.matrix());
        assert_eq!(cw.w(1), r_inv.matrix());
        assert_eq!(cw.m(0), r_inv.matrix());
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("ar1".parse::<CorrelationKind>().unwrap(), CorrelationKind::Ar1);
        assert_eq!("exch".parse::<CorrelationKind>().unwrap(), CorrelationKind::Exchangeable);
        assert_eq!("logit".parse::<LinkFunction>().unwrap(), LinkFunction::Logit);
        assert!("probit".parse::<LinkFunction>().is_err());
    }
}
