//! De-sparsified coordinate estimates, their sandwich variance, intervals,
//! cross-fitting, the leverage-based variance adjustment and BH p-values.
//!
//! For coordinate `j` with projection direction `v̂`, the estimating equation
//! with `βⱼ` replaced by `T` is
//!
//! ```text
//! g(T) = v̂ᵀ (1/(nK)) Σᵢ Xᵢᵀ Wᵢ (Yᵢ − μᵢ(β̂ with βⱼ = T))
//! ```
//!
//! and `T̂` is its root. In the linear model `g` is affine in `T`, so
//! `T̂ = β̂ⱼ + c₀/d` with `c₀ = g(β̂ⱼ)` and `d = v̂ᵀĜe_j`.

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::gee::{ClusterWeights, CorrelationKind, LinkFunction, WorkingCovariance};
use crate::numerics::{dot, LuFactor, Matrix};
use crate::selector::{ClimeColumn, SelectorFit};

/// `|d|` at or below this is treated as a failed projection.
pub const DIRECTION_TOL: f64 = 1e-8;
/// Target `|g(T̂)|` for the iterative GLM root.
pub const GLM_ROOT_TOL: f64 = 1e-8;
const BRACKET_START: f64 = 1.0;
const BRACKET_MAX: f64 = 10.0;
const ROOT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    None,
    CrossFit,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "crossfit" | "cross-fit" | "cross_fit" => Ok(Self::CrossFit),
            other => Err(Error::InvalidInput(format!(
                "unknown split mode '{other}' (expected none or crossfit)"
            ))),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::None => "none",
            SplitMode::CrossFit => "crossfit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda: f64,
    pub lambda_prime: f64,
    pub correlation: CorrelationKind,
    pub link: LinkFunction,
    pub split_mode: SplitMode,
    pub adjust_variance: bool,
    pub ci_level: f64,
    /// Divide `Δ̂` by `d² = (v̂ᵀĜe_j)²`. Off by default.
    pub normalize_by_direction: bool,
    /// Outer linearization cap for the GLM selector.
    pub max_outer: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            lambda_prime: 0.1,
            correlation: CorrelationKind::Ar1,
            link: LinkFunction::Identity,
            split_mode: SplitMode::None,
            adjust_variance: false,
            ci_level: 0.95,
            normalize_by_direction: false,
            max_outer: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "confidence level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidInput(format!("λ must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.lambda_prime >= 0.0) || !self.lambda_prime.is_finite() {
            return Err(Error::InvalidInput(format!(
                "λ′ must be ≥ 0, got {}",
                self.lambda_prime
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateInference {
    pub j: usize,
    pub t_hat: f64,
    pub delta_hat: f64,
    /// `√(Δ̂/n)`
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Studentized statistic for `βⱼ = 0`.
    pub z: f64,
    pub p_value: f64,
    /// Whether `Δ̂` carries the leverage adjustment.
    pub adjusted: bool,
}

impl CoordinateInference {
    pub fn new(j: usize, t_hat: f64, delta_hat: f64, n: usize, level: f64, adjusted: bool) -> Result<Self> {
        let (ci_low, ci_high, p_value) = confidence_interval(t_hat, delta_hat, n, level)?;
        let se = (delta_hat / n as f64).sqrt();
        Ok(Self {
            j,
            t_hat,
            delta_hat,
            se,
            ci_low,
            ci_high,
            z: t_hat / se,
            p_value,
            adjusted,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    pub fn length(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// `Xᵢ v` for every cluster, as an `n×K` matrix.
pub fn cluster_projections(data: &ClusteredDataset, v: &[f64]) -> Matrix {
    let proj = data.linear_predictor(v);
    Matrix::from_vec(data.n(), data.k(), proj).expect("projection shape")
}

fn mat_vec_k(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.matvec(v)
}

/// `(1/(nK)) Σᵢ uᵢᵀ Wᵢ rᵢ` for per-cluster `K`-vectors `u` and `r`.
fn weighted_pairing(u: &Matrix, weights: &ClusterWeights, r: &[f64], use_m: bool) -> f64 {
    let (n, k) = (u.rows(), u.cols());
    let mut s = 0.0;
    for i in 0..n {
        let wi = if use_m { weights.m(i) } else { weights.w(i) };
        let wr = mat_vec_k(wi, &r[i * k..(i + 1) * k]);
        s += dot(u.row(i), &wr);
    }
    s / (n * k) as f64
}

/// `d = v̂ᵀ (1/(nK)) Σᵢ Xᵢᵀ Mᵢ Xᵢ e_j`
pub fn direction_denominator(data: &ClusteredDataset, v: &[f64], weights: &ClusterWeights, j: usize) -> f64 {
    let u = cluster_projections(data, v);
    let xj = data.x().column(j);
    weighted_pairing(&u, weights, &xj, true)
}

/// `g(T)` evaluated directly from its definition.
pub fn estimating_equation(
    data: &ClusteredDataset,
    beta: &[f64],
    v: &[f64],
    weights: &ClusterWeights,
    link: LinkFunction,
    j: usize,
    t: f64,
) -> f64 {
    let mut b = beta.to_vec();
    b[j] = t;
    let eta = data.linear_predictor(&b);
    let r: Vec<f64> = data
        .y()
        .iter()
        .zip(&eta)
        .map(|(y, e)| y - link.mean(*e))
        .collect();
    let u = cluster_projections(data, v);
    weighted_pairing(&u, weights, &r, false)
}

/// Closed-form root `β̂ⱼ + c₀/d` of the affine estimating equation.
fn closed_form_root(
    data: &ClusteredDataset,
    beta: &[f64],
    v: &[f64],
    weights: &ClusterWeights,
    j: usize,
) -> Result<f64> {
    let d = direction_denominator(data, v, weights, j);
    if !(d.abs() > DIRECTION_TOL) {
        return Err(Error::DegenerateDirection(d));
    }
    let c0 = estimating_equation(data, beta, v, weights, LinkFunction::Identity, j, beta[j]);
    Ok(beta[j] + c0 / d)
}

/// De-sparsified estimate `T̂` in the linear model with `Wᵢ = V̂⁻¹`.
pub fn desparsify_linear(
    data: &ClusteredDataset,
    beta_hat: &SelectorFit,
    v_hat: &ClimeColumn,
    wc: &WorkingCovariance,
    j: usize,
) -> Result<f64> {
    closed_form_root(data, &beta_hat.beta, &v_hat.v, &ClusterWeights::linear(wc), j)
}

/// De-sparsified estimate for a GLM: the root of `g(T)` with the weights
/// held at `β̂`. The identity link uses the closed form.
pub fn desparsify_glm(
    data: &ClusteredDataset,
    beta_hat: &SelectorFit,
    v_hat: &ClimeColumn,
    weights: &ClusterWeights,
    link: LinkFunction,
    j: usize,
) -> Result<f64> {
    let beta = &beta_hat.beta;
    let v = &v_hat.v;
    if link == LinkFunction::Identity {
        return closed_form_root(data, beta, v, weights, j);
    }
    let d = direction_denominator(data, v, weights, j);
    if !(d.abs() > DIRECTION_TOL) {
        return Err(Error::DegenerateDirection(d));
    }
    let g = |t: f64| estimating_equation(data, beta, v, weights, link, j, t);
    let center = beta[j];
    let f0 = g(center);
    if f0.abs() <= GLM_ROOT_TOL {
        return Ok(center);
    }

    // Expand a bracket around β̂ⱼ by doubling.
    let mut h = BRACKET_START;
    let (mut a, mut b, mut fa, mut fb);
    loop {
        a = center - h;
        b = center + h;
        fa = g(a);
        fb = g(b);
        if fa.signum() != fb.signum() || fa == 0.0 || fb == 0.0 {
            break;
        }
        if h >= BRACKET_MAX {
            return Err(Error::NoRoot { low: a, high: b });
        }
        h = (2.0 * h).min(BRACKET_MAX);
    }
    // Narrow to the half containing β̂ⱼ's sign change.
    if f0.signum() != fa.signum() {
        b = center;
        fb = f0;
    } else {
        a = center;
        fa = f0;
    }

    // Safeguarded secant: fall back to bisection when the secant step leaves
    // the bracket or fails to halve it.
    let mut width = (b - a).abs();
    for _ in 0..ROOT_MAX_ITER {
        if fa.abs() <= GLM_ROOT_TOL {
            return Ok(a);
        }
        if fb.abs() <= GLM_ROOT_TOL {
            return Ok(b);
        }
        let mut x = b - fb * (b - a) / (fb - fa);
        let lo = a.min(b);
        let hi = a.max(b);
        if !(x > lo && x < hi) || (b - a).abs() > 0.5 * width {
            x = 0.5 * (a + b);
        }
        width = (b - a).abs();
        let fx = g(x);
        if fx.abs() <= GLM_ROOT_TOL {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
        if (b - a).abs() <= f64::EPSILON * center.abs().max(1.0) {
            break;
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

fn check_variance(delta: f64) -> Result<f64> {
    if delta > 0.0 && delta.is_finite() {
        Ok(delta)
    } else {
        Err(Error::NonPositiveVariance(delta))
    }
}

/// Pooled-meat sandwich
/// `Δ̂ = v̂ᵀ (1/n) Σᵢ [(1/K²) Xᵢᵀ V̂⁻¹ S V̂⁻¹ Xᵢ] v̂` with `S = (1/n) Σᵢ ε̂ᵢε̂ᵢᵀ`.
///
/// `resid` is `n×K`.
pub fn variance_linear(
    data: &ClusteredDataset,
    v_hat: &ClimeColumn,
    wc: &WorkingCovariance,
    resid: &Matrix,
) -> Result<f64> {
    pooled_variance(data, &v_hat.v, wc.v_inv.matrix(), resid)
}

fn pooled_variance(data: &ClusteredDataset, v: &[f64], v_inv: &Matrix, resid: &Matrix) -> Result<f64> {
    let (n, k) = (data.n(), data.k());
    check_resid(data, resid)?;
    let mut s = Matrix::zeros(k, k);
    for i in 0..n {
        let e = resid.row(i);
        for a in 0..k {
            for b in 0..k {
                s[(a, b)] += e[a] * e[b];
            }
        }
    }
    let s = s.scale(1.0 / n as f64);
    let u = cluster_projections(data, v);
    let mut total = 0.0;
    for i in 0..n {
        let q = v_inv.matvec(u.row(i));
        total += dot(&q, &s.matvec(&q));
    }
    check_variance(total / (n as f64 * (k * k) as f64))
}

fn check_resid(data: &ClusteredDataset, resid: &Matrix) -> Result<()> {
    if resid.rows() != data.n() || resid.cols() != data.k() {
        return Err(Error::DimensionMismatch(format!(
            "residuals are {}x{}, expected {}x{}",
            resid.rows(),
            resid.cols(),
            data.n(),
            data.k()
        )));
    }
    Ok(())
}

/// Per-cluster-meat sandwich
/// `Δ̂ = (1/n) Σᵢ ((Xᵢv̂)ᵀ Wᵢ ε̂ᵢ)² / K²`.
pub fn variance_glm(
    data: &ClusteredDataset,
    v_hat: &ClimeColumn,
    weights: &ClusterWeights,
    resid: &Matrix,
) -> Result<f64> {
    per_cluster_variance(data, &v_hat.v, weights, resid)
}

fn per_cluster_variance(data: &ClusteredDataset, v: &[f64], weights: &ClusterWeights, resid: &Matrix) -> Result<f64> {
    let (n, k) = (data.n(), data.k());
    check_resid(data, resid)?;
    let u = cluster_projections(data, v);
    let mut total = 0.0;
    for i in 0..n {
        let s = dot(u.row(i), &weights.w(i).matvec(resid.row(i)));
        total += s * s;
    }
    check_variance(total / (n as f64 * (k * k) as f64))
}

/// Which sandwich a fit uses: pooled meat with a shared `V̂⁻¹`, or the
/// per-cluster meat of the GLM path.
pub fn sandwich_variance(
    data: &ClusteredDataset,
    v: &[f64],
    weights: &ClusterWeights,
    resid: &Matrix,
) -> Result<f64> {
    match weights {
        ClusterWeights::Shared { v_inv } => pooled_variance(data, v, v_inv, resid),
        ClusterWeights::PerCluster { .. } => per_cluster_variance(data, v, weights, resid),
    }
}

/// `(T̂ ∓ z_{1−α/2}√(Δ̂/n), two-sided p for βⱼ = 0)`
pub fn confidence_interval(t_hat: f64, delta_hat: f64, n: usize, level: f64) -> Result<(f64, f64, f64)> {
    check_variance(delta_hat)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let se = (delta_hat / n as f64).sqrt();
    let q = normal.inverse_cdf(0.5 + level / 2.0);
    let z = t_hat / se;
    let p = (2.0 * normal.sf(z.abs())).clamp(0.0, 1.0);
    Ok((t_hat - q * se, t_hat + q * se, p))
}

/// Leverage-inflated residuals `ε̃ᵢ = (I − Hᵢ)⁻¹ ε̂ᵢ` with
/// `Hᵢ = Dᵢ X_{iS} (Σₖ X_{kS}ᵀ Mₖ X_{kS})⁻¹ X_{iS}ᵀ Wᵢ` and `S = support ∪ {j}`.
pub fn leverage_adjusted_residuals(
    data: &ClusteredDataset,
    support: &[usize],
    j: usize,
    weights: &ClusterWeights,
    resid: &Matrix,
) -> Result<Matrix> {
    check_resid(data, resid)?;
    let mut s: Vec<usize> = support.to_vec();
    if !s.contains(&j) {
        s.push(j);
    }
    s.sort_unstable();
    let (n, k, m) = (data.n(), data.k(), s.len());
    if m >= data.n_obs() {
        return Err(Error::SupportTooLarge {
            support: m,
            observations: data.n_obs(),
        });
    }
    let xs = |i: usize| -> Matrix {
        let mut out = Matrix::zeros(k, m);
        for t in 0..k {
            let row = data.row(i, t);
            for (c, &col) in s.iter().enumerate() {
                out[(t, c)] = row[col];
            }
        }
        out
    };
    let mut bread = Matrix::zeros(m, m);
    for i in 0..n {
        let xi = xs(i);
        let mx = weights.m(i).matmul(&xi)?;
        let contrib = xi.transpose().matmul(&mx)?;
        for (b, c) in bread.as_mut_slice().iter_mut().zip(contrib.as_slice()) {
            *b += c;
        }
    }
    let lu = LuFactor::new(&bread)?;
    let mut out = Matrix::zeros(n, k);
    for i in 0..n {
        let xi = xs(i);
        // H = D X B⁻¹ Xᵀ W, built column by column
        let xtw = xi.transpose().matmul(weights.w(i))?;
        let mut h = Matrix::zeros(k, k);
        for c in 0..k {
            let col: Vec<f64> = (0..m).map(|r| xtw[(r, c)]).collect();
            let sol = lu.solve(&col);
            let xs_sol = xi.matvec(&sol);
            for r in 0..k {
                h[(r, c)] = weights.deriv(i, r) * xs_sol[r];
            }
        }
        let mut ih = Matrix::identity(k);
        for (a, b) in ih.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *a -= b;
        }
        let adj = LuFactor::new(&ih)?.solve(resid.row(i));
        out.row_mut(i).copy_from_slice(&adj);
    }
    Ok(out)
}

/// Leverage-adjusted `Δ̂`: the same sandwich evaluated on inflated residuals.
#[allow(clippy::too_many_arguments)]
pub fn kc_adjust(
    delta_hat: f64,
    data: &ClusteredDataset,
    beta_hat: &SelectorFit,
    v_hat: &ClimeColumn,
    weights: &ClusterWeights,
    resid: &Matrix,
    enabled: bool,
) -> Result<f64> {
    if !enabled {
        return Ok(delta_hat);
    }
    let adj = leverage_adjusted_residuals(data, &beta_hat.support, v_hat.j, weights, resid)?;
    sandwich_variance(data, &v_hat.v, weights, &adj)
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        let candidate = p_values[i] * m as f64 / (rank + 1) as f64;
        running = running.min(candidate).min(1.0);
        out[i] = running;
    }
    out
}

/// Splits clusters into two halves: sorted by id, dealt alternately.
/// With `n` odd the first half gets the extra cluster.
pub fn split_halves(data: &ClusteredDataset) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.sort_by(|&a, &b| data.cluster_ids()[a].cmp(&data.cluster_ids()[b]).then(a.cmp(&b)));
    if data.n() % 2 == 1 {
        warn!("odd number of clusters ({}); first half gets the extra one", data.n());
    }
    let a = idx.iter().step_by(2).copied().collect();
    let b = idx.iter().skip(1).step_by(2).copied().collect();
    (a, b)
}

/// Cross-fitted inference for coordinate `j`: nuisances from one half,
/// estimation on the other, both ways, averaged.
pub fn cross_fit(data: &ClusteredDataset, config: &FitConfig, j: usize) -> Result<CoordinateInference> {
    let halves = CrossFitHalves::new(data, config)?;
    halves.infer(config, j)
}

/// Both nuisance fits of a cross-fitted analysis, reusable across coordinates.
pub struct CrossFitHalves {
    a: ClusteredDataset,
    b: ClusteredDataset,
    nuisance_a: crate::pipeline::Nuisance,
    nuisance_b: crate::pipeline::Nuisance,
    /// Weights of `b` under `nuisance_a`, and of `a` under `nuisance_b`.
    weights_b: ClusterWeights,
    weights_a: ClusterWeights,
    n: usize,
}

impl CrossFitHalves {
    pub fn new(data: &ClusteredDataset, config: &FitConfig) -> Result<Self> {
        if data.n() < 4 {
            return Err(Error::InvalidInput(format!(
                "cross-fitting needs at least 4 clusters, got {}",
                data.n()
            )));
        }
        let (ia, ib) = split_halves(data);
        let a = data.subset(&ia);
        let b = data.subset(&ib);
        let nuisance_a = crate::pipeline::Nuisance::estimate(&a, config)?;
        let nuisance_b = crate::pipeline::Nuisance::estimate(&b, config)?;
        let weights_b = nuisance_a.weights_for(&b);
        let weights_a = nuisance_b.weights_for(&a);
        Ok(Self {
            a,
            b,
            nuisance_a,
            nuisance_b,
            weights_b,
            weights_a,
            n: data.n(),
        })
    }

    pub fn infer(&self, config: &FitConfig, j: usize) -> Result<CoordinateInference> {
        let ab = self.nuisance_a.estimate_on(&self.b, &self.weights_b, config, j)?;
        let ba = self.nuisance_b.estimate_on(&self.a, &self.weights_a, config, j)?;
        let t_hat = 0.5 * (ab.t_hat + ba.t_hat);
        let delta = 0.5 * (ab.delta_hat + ba.delta_hat);
        CoordinateInference::new(j, t_hat, delta, self.n, config.ci_level, ab.adjusted && ba.adjusted)
    }
}
