//! ℓ1-constrained estimation programs: the initial Dantzig selector, the
//! CLIME projection column, and the GLM Dantzig variant.
//!
//! All three are instances of
//!
//! ```text
//! minimize ‖x‖₁  subject to  ‖target − G x‖∞ ≤ radius
//! ```
//!
//! encoded for the simplex as `x = x⁺ − x⁻` with one slack per side of each
//! two-sided row. The constraint matrix depends only on `G`, so an
//! [`L1Program`] is built once and re-solved for many targets and radii.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::gee::{ClusterWeights, LinkFunction};
use crate::lp::{solve_standard_form, LpOptions, LpSolution, LpStatus};
use crate::numerics::{l1, linf, Matrix, SpdMatrix, SYMMETRY_TOL};

/// Coefficients at or below this magnitude are reported as exact zeros.
pub const SUPPORT_TOL: f64 = 1e-8;
/// Gram entries at or below this magnitude are dropped from the LP.
const COEF_DROP: f64 = 1e-8;
const GLM_FEAS_TOL: f64 = 1e-6;
const GLM_REL_TOL: f64 = 1e-6;
const MAX_MARGIN: f64 = 0.05;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GramKind {
    Linear,
    Glm,
}

/// Symmetric `p×p` weighted Gram `(1/(nK)) Σᵢ Xᵢᵀ Mᵢ Xᵢ`.
///
/// Only symmetric positive semidefinite in general: it is singular whenever
/// `p > nK`, which is the regime CLIME exists for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    g: Matrix,
    kind: GramKind,
}

impl GramMatrix {
    pub fn new(g: Matrix, kind: GramKind) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "Gram must be square, got {}x{}",
                g.rows(),
                g.cols()
            )));
        }
        if g.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gram matrix".into()));
        }
        let asym = g.relative_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::Asymmetric(asym));
        }
        Ok(Self {
            g: g.symmetrized(),
            kind,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.g
    }

    pub fn kind(&self) -> GramKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.g.rows()
    }
}

/// `(1/(nK)) Σᵢ Xᵢᵀ V̂⁻¹ Xᵢ`
pub fn build_gram_linear(data: &ClusteredDataset, vinv: &SpdMatrix) -> Result<GramMatrix> {
    if vinv.dim() != data.k() {
        return Err(Error::DimensionMismatch(format!(
            "V̂⁻¹ is {}x{} but clusters have size {}",
            vinv.dim(),
            vinv.dim(),
            data.k()
        )));
    }
    let g = weighted_gram(data, |_| vinv.matrix());
    GramMatrix::new(g, GramKind::Linear)
}

/// `(1/(nK)) Σᵢ Xᵢᵀ Mᵢ Xᵢ` for arbitrary per-cluster weights.
pub fn build_gram(data: &ClusteredDataset, weights: &ClusterWeights) -> Result<GramMatrix> {
    let kind = match weights {
        ClusterWeights::Shared { v_inv } => {
            if v_inv.rows() != data.k() {
                return Err(Error::DimensionMismatch("shared weight size".into()));
            }
            GramKind::Linear
        }
        ClusterWeights::PerCluster { w, .. } => {
            if w.len() != data.n() {
                return Err(Error::DimensionMismatch(format!(
                    "{} cluster weights for {} clusters",
                    w.len(),
                    data.n()
                )));
            }
            GramKind::Glm
        }
    };
    let g = weighted_gram(data, |i| weights.m(i));
    GramMatrix::new(g, kind)
}

fn weighted_gram<'a>(data: &'a ClusteredDataset, m: impl Fn(usize) -> &'a Matrix) -> Matrix {
    let (n, k, p) = (data.n(), data.k(), data.p());
    let mut g = Matrix::zeros(p, p);
    let mut mx = vec![0.0; k * p];
    for i in 0..n {
        let mi = m(i);
        // mx = Mᵢ Xᵢ
        mx.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..k {
            let out = &mut mx[s * p..(s + 1) * p];
            for t in 0..k {
                let w = mi[(s, t)];
                if w != 0.0 {
                    for (o, x) in out.iter_mut().zip(data.row(i, t)) {
                        *o += w * x;
                    }
                }
            }
        }
        // g += Xᵢᵀ (Mᵢ Xᵢ), upper triangle
        for s in 0..k {
            let xs = data.row(i, s);
            let ms = &mx[s * p..(s + 1) * p];
            for a in 0..p {
                let xa = xs[a];
                if xa == 0.0 {
                    continue;
                }
                let row = g.row_mut(a);
                for b in a..p {
                    row[b] += xa * ms[b];
                }
            }
        }
    }
    let scale = 1.0 / data.n_obs() as f64;
    for a in 0..p {
        for b in a..p {
            let v = g[(a, b)] * scale;
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// Summary of the LP work behind a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: LpStatus,
    pub objective_value: f64,
    /// Simplex pivots, summed over outer iterations.
    pub iterations: usize,
    /// Linearization steps (1 for linear programs).
    pub outer_iterations: usize,
}

impl SolverSummary {
    fn from_lp(sol: &LpSolution) -> Self {
        Self {
            status: sol.status,
            objective_value: sol.objective_value,
            iterations: sol.iterations,
            outer_iterations: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    /// Indices with `|βⱼ| > 1e-8`.
    pub support: Vec<usize>,
    /// `λ` minus the achieved ∞-norm of the constraint.
    pub constraint_slack: f64,
    pub solver: SolverSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimeColumn {
    pub v: Vec<f64>,
    pub j: usize,
    pub lambda_prime: f64,
    /// `λ′ − ‖Ĝv − e_j‖∞`
    pub constraint_slack: f64,
}

/// `min ‖x‖₁ s.t. ‖target − G x‖∞ ≤ radius` for a fixed `G`.
#[derive(Debug, Clone)]
pub struct L1Program {
    p: usize,
    g: Matrix,
    a: Matrix,
    cost: Vec<f64>,
    opts: LpOptions,
}

impl L1Program {
    pub fn new(g: &Matrix) -> Self {
        let p = g.rows();
        let mut a = Matrix::zeros(2 * p, 4 * p);
        for r in 0..p {
            for c in 0..p {
                let v = g[(r, c)];
                if v.abs() > COEF_DROP {
                    a[(r, c)] = v;
                    a[(r, p + c)] = -v;
                    a[(p + r, c)] = -v;
                    a[(p + r, p + c)] = v;
                }
            }
            a[(r, 2 * p + r)] = 1.0;
            a[(p + r, 3 * p + r)] = 1.0;
        }
        let mut cost = vec![0.0; 4 * p];
        cost[..2 * p].iter_mut().for_each(|c| *c = 1.0);
        Self {
            p,
            g: g.clone(),
            a,
            cost,
            opts: LpOptions::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn gram(&self) -> &Matrix {
        &self.g
    }

    /// `‖target − G x‖∞`
    pub fn violation(&self, target: &[f64], x: &[f64]) -> f64 {
        let gx = self.g.matvec(x);
        target
            .iter()
            .zip(&gx)
            .map(|(t, v)| (t - v).abs())
            .fold(0.0, f64::max)
    }

    pub fn solve(&self, target: &[f64], radius: f64) -> Result<(Vec<f64>, LpSolution)> {
        if target.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "target of length {} for a {}-dimensional program",
                target.len(),
                self.p
            )));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidInput(format!("radius must be ≥ 0, got {radius}")));
        }
        let p = self.p;
        let mut b = Vec::with_capacity(2 * p);
        b.extend(target.iter().map(|t| radius + t));
        b.extend(target.iter().map(|t| radius - t));
        let sol = solve_standard_form(&self.cost, &self.a, &b, &self.opts)?.require_optimal()?;
        let x = (0..p)
            .map(|j| {
                let v = sol.x[j] - sol.x[p + j];
                if v.abs() <= SUPPORT_TOL {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        Ok((x, sol))
    }
}

fn support_of(beta: &[f64]) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, b)| b.abs() > SUPPORT_TOL)
        .map(|(j, _)| j)
        .collect()
}

/// The unweighted Dantzig program for one dataset, reusable across `λ`.
#[derive(Debug, Clone)]
pub struct LinearDantzig {
    program: L1Program,
    score: Vec<f64>,
}

impl LinearDantzig {
    pub fn new(data: &ClusteredDataset) -> Self {
        let eye = SpdMatrix::identity(data.k());
        let g = weighted_gram(data, |_| eye.matrix());
        Self {
            program: L1Program::new(&g),
            score: data.mean_xt(data.y()),
        }
    }

    /// `‖(1/(nK)) Σ Xᵢᵀ Yᵢ‖∞`, the smallest `λ` with `β̂ = 0`.
    pub fn lambda_max(&self) -> f64 {
        linf(&self.score)
    }

    pub fn fit(&self, lambda: f64) -> Result<SelectorFit> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("λ must be ≥ 0, got {lambda}")));
        }
        let (beta, sol) = self.program.solve(&self.score, lambda)?;
        let achieved = self.program.violation(&self.score, &beta);
        Ok(SelectorFit {
            support: support_of(&beta),
            beta,
            lambda,
            constraint_slack: lambda - achieved,
            solver: SolverSummary::from_lp(&sol),
        })
    }
}

/// Initial estimator: `min ‖β‖₁ s.t. (1/(nK)) ‖Σᵢ Xᵢᵀ(Yᵢ − Xᵢβ)‖∞ ≤ λ`.
pub fn dantzig_linear(data: &ClusteredDataset, lambda: f64) -> Result<SelectorFit> {
    LinearDantzig::new(data).fit(lambda)
}

/// CLIME column `min ‖v‖₁ s.t. ‖Ĝv − e_j‖∞ ≤ λ′`.
pub fn clime_column(g: &GramMatrix, j: usize, lambda_prime: f64) -> Result<ClimeColumn> {
    clime_with(&L1Program::new(g.matrix()), j, lambda_prime)
}

/// CLIME columns for several coordinates sharing one program, solved in
/// parallel. Results are in the order of `js`.
pub fn clime_columns(g: &GramMatrix, js: &[usize], lambda_prime: f64) -> Vec<Result<ClimeColumn>> {
    let program = L1Program::new(g.matrix());
    js.par_iter()
        .map(|&j| clime_with(&program, j, lambda_prime))
        .collect()
}

/// One CLIME column on a prebuilt program.
pub fn clime_with(program: &L1Program, j: usize, lambda_prime: f64) -> Result<ClimeColumn> {
    let p = program.dim();
    if j >= p {
        return Err(Error::InvalidInput(format!("coordinate {j} out of range for p = {p}")));
    }
    if !(lambda_prime >= 0.0) {
        return Err(Error::InvalidInput(format!("λ′ must be ≥ 0, got {lambda_prime}")));
    }
    let mut e = vec![0.0; p];
    e[j] = 1.0;
    let (v, _) = program.solve(&e, lambda_prime)?;
    let achieved = program.violation(&e, &v);
    Ok(ClimeColumn {
        v,
        j,
        lambda_prime,
        constraint_slack: lambda_prime - achieved,
    })
}

/// `(1/(nK)) Σᵢⱼ Xᵢⱼ (Yᵢⱼ − μ(Xᵢⱼᵀβ))`
pub fn glm_score(data: &ClusteredDataset, link: LinkFunction, beta: &[f64]) -> Vec<f64> {
    let eta = data.linear_predictor(beta);
    let r: Vec<f64> = data
        .y()
        .iter()
        .zip(&eta)
        .map(|(y, e)| y - link.mean(*e))
        .collect();
    data.mean_xt(&r)
}

fn finish_glm(
    data: &ClusteredDataset,
    link: LinkFunction,
    lambda: f64,
    mut beta: Vec<f64>,
    pivots: usize,
    outer: usize,
) -> SelectorFit {
    for b in beta.iter_mut() {
        if b.abs() <= SUPPORT_TOL {
            *b = 0.0;
        }
    }
    let achieved = linf(&glm_score(data, link, &beta));
    SelectorFit {
        support: support_of(&beta),
        constraint_slack: lambda - achieved,
        lambda,
        solver: SolverSummary {
            status: LpStatus::Optimal,
            objective_value: l1(&beta),
            iterations: pivots,
            outer_iterations: outer,
        },
        beta,
    }
}

/// GLM Dantzig selector:
/// `min ‖β‖₁ s.t. (1/(nK)) ‖Σᵢⱼ Xᵢⱼ(Yᵢⱼ − μ(Xᵢⱼᵀβ))‖∞ ≤ λ`,
/// solved by iterated linearization of `μ` with step halving.
pub fn dantzig_glm(
    data: &ClusteredDataset,
    link: LinkFunction,
    lambda: f64,
    max_outer: usize,
) -> Result<SelectorFit> {
    if link == LinkFunction::Identity {
        return dantzig_linear(data, lambda);
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("λ must be ≥ 0, got {lambda}")));
    }
    let p = data.p();
    let nk = data.n_obs();
    let violation = |beta: &[f64]| (linf(&glm_score(data, link, beta)) - lambda).max(0.0);

    let mut beta = vec![0.0; p];
    let mut viol = violation(&beta);
    let mut pivots = 0;
    // Tightening of the linearized radius; grows while proposals overshoot.
    let mut margin = 0.0;
    for outer in 1..=max_outer.max(1) {
        // Linearize μ(η) ≈ μ(η₀) + w (η − η₀)
        let eta = data.linear_predictor(&beta);
        let w: Vec<f64> = eta.iter().map(|&e| link.derivative(e)).collect();
        let mut g = Matrix::zeros(p, p);
        let mut target = vec![0.0; p];
        for r in 0..nk {
            let x = data.x().row(r);
            let wr = w[r];
            let pseudo = data.y()[r] - link.mean(eta[r]) + wr * eta[r];
            for a in 0..p {
                let xa = x[a];
                if xa == 0.0 {
                    continue;
                }
                target[a] += xa * pseudo;
                let wa = wr * xa;
                let row = g.row_mut(a);
                for b in a..p {
                    row[b] += wa * x[b];
                }
            }
        }
        let scale = 1.0 / nk as f64;
        for a in 0..p {
            target[a] *= scale;
            for b in a..p {
                let v = g[(a, b)] * scale;
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        let program = L1Program::new(&g);
        let (proposal, sol) = program.solve(&target, lambda - margin)?;
        pivots += sol.iterations;
        let overshoot = violation(&proposal);
        if overshoot > GLM_FEAS_TOL {
            margin = (margin + overshoot).min(MAX_MARGIN * lambda);
        }

        let blend = |step: f64| -> Vec<f64> {
            beta.iter().zip(&proposal).map(|(b, q)| b + step * (q - b)).collect()
        };
        let feasible = viol <= GLM_FEAS_TOL;
        let current_l1 = l1(&beta);
        // From a feasible point only feasible steps that shrink ‖β‖₁ are
        // taken, so the iterates cannot cycle between linearizations.
        let accept = |cand: &[f64], cand_viol: f64| {
            if feasible {
                cand_viol <= GLM_FEAS_TOL && l1(cand) < current_l1
            } else {
                cand_viol <= viol.max(GLM_FEAS_TOL)
            }
        };
        let mut step = 1.0;
        let mut halvings = 0;
        let mut next = proposal.clone();
        let mut next_viol = overshoot;
        while !accept(&next, next_viol) && halvings < MAX_HALVINGS {
            step *= 0.5;
            halvings += 1;
            next = blend(step);
            next_viol = violation(&next);
        }
        let stalled = !accept(&next, next_viol);
        if stalled && feasible {
            return Ok(finish_glm(data, link, lambda, beta, pivots, outer));
        }
        let change: f64 = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).sum();
        let rel = change / l1(&beta).max(1.0);
        debug!("glm dantzig outer {outer}: step {step}, rel change {rel:.3e}, violation {next_viol:.3e}");
        beta = next;
        viol = next_viol;
        if rel < GLM_REL_TOL && viol <= GLM_FEAS_TOL {
            return Ok(finish_glm(data, link, lambda, beta, pivots, outer));
        }
    }
    Err(Error::NoConvergence(max_outer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{spd_inverse, LuFactor};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_dataset(n: usize, k: usize, p: usize, beta: &[f64], noise: f64, seed: u64) -> ClusteredDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * k * p).map(|_| rng.sample(StandardNormal)).collect();
        let x = Matrix::from_vec(n * k, p, data).unwrap();
        let mut y = x.matvec(beta);
        for v in y.iter_mut() {
            *v += noise * rng.sample::<f64, _>(StandardNormal);
        }
        ClusteredDataset::from_parts(k, x, y).unwrap()
    }

    fn naive_gram(data: &ClusteredDataset, m: &Matrix) -> Matrix {
        let p = data.p();
        let mut g = Matrix::zeros(p, p);
        for i in 0..data.n() {
            for a in 0..p {
                for b in 0..p {
                    for s in 0..data.k() {
                        for t in 0..data.k() {
                            g[(a, b)] += data.row(i, s)[a] * m[(s, t)] * data.row(i, t)[b];
                        }
                    }
                }
            }
        }
        g.scale(1.0 / data.n_obs() as f64)
    }

    /// Minimum ℓ1 over `{β : ‖c − Gβ‖∞ ≤ λ}` by enumerating intersections of
    /// the constraint and coordinate hyperplanes (3-dimensional).
    fn enumerate_min_l1(g: &Matrix, c: &[f64], lambda: f64) -> f64 {
        let p = 3;
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for r in 0..p {
            planes.push((g.row(r).to_vec(), c[r] + lambda));
            planes.push((g.row(r).to_vec(), c[r] - lambda));
            let mut e = vec![0.0; p];
            e[r] = 1.0;
            planes.push((e, 0.0));
        }
        let mut best = f64::INFINITY;
        for a in 0..planes.len() {
            for b in a + 1..planes.len() {
                for d in b + 1..planes.len() {
                    let m = Matrix::from_rows(&[&planes[a].0, &planes[b].0, &planes[d].0]);
                    let Ok(lu) = LuFactor::new(&m) else { continue };
                    let x = lu.solve(&[planes[a].1, planes[b].1, planes[d].1]);
                    let gx = g.matvec(&x);
                    if c.iter().zip(&gx).all(|(c, v)| (c - v).abs() <= lambda + 1e-9) {
                        best = best.min(l1(&x));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn gram_examples() {
        let x = Matrix::from_rows(&[[1.0, 0.0]]);
        let d = ClusteredDataset::from_parts(1, x, vec![0.0]).unwrap();
        let g = build_gram_linear(&d, &SpdMatrix::identity(1)).unwrap();
        assert_eq!(g.matrix(), &Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]));

        let d = random_dataset(5, 3, 4, &[0.0; 4], 1.0, 1);
        let v = SpdMatrix::new(Matrix::from_rows(&[[2.0, 0.5, 0.1], [0.5, 1.0, 0.2], [0.1, 0.2, 1.5]])).unwrap();
        let g = build_gram_linear(&d, &v).unwrap();
        let oracle = naive_gram(&d, v.matrix());
        assert!(crate::numerics::max_abs(&g.matrix().sub(&oracle).unwrap()) < 1e-12);
        let g3 = build_gram_linear(&d, &SpdMatrix::new(v.scale(3.0)).unwrap()).unwrap();
        assert!(crate::numerics::max_abs(&g3.matrix().sub(&g.matrix().scale(3.0)).unwrap()) < 1e-12);
        assert!(build_gram_linear(&d, &SpdMatrix::identity(2)).is_err());
    }

    #[test]
    fn zero_at_lambda_max() {
        let d = random_dataset(10, 2, 5, &[1.0, 0.0, -1.0, 0.0, 0.5], 0.5, 2);
        let sel = LinearDantzig::new(&d);
        let fit = sel.fit(sel.lambda_max()).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        assert!(fit.support.is_empty());
    }

    #[test]
    fn lambda_zero_is_least_squares() {
        let x = Matrix::from_rows(&[[1.0, 0.3], [0.5, -1.0], [2.0, 0.7], [-0.4, 1.1]]);
        let y = vec![1.0, -0.5, 2.2, 0.3];
        let d = ClusteredDataset::from_parts(2, x.clone(), y.clone()).unwrap();
        let fit = dantzig_linear(&d, 0.0).unwrap();
        let xtx = x.transpose().matmul(&x).unwrap();
        let xty = x.t_matvec(&y);
        let det = xtx[(0, 0)] * xtx[(1, 1)] - xtx[(0, 1)] * xtx[(1, 0)];
        let b0 = (xtx[(1, 1)] * xty[0] - xtx[(0, 1)] * xty[1]) / det;
        let b1 = (xtx[(0, 0)] * xty[1] - xtx[(1, 0)] * xty[0]) / det;
        assert_abs_diff_eq!(fit.beta[0], b0, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.beta[1], b1, epsilon = 1e-8);
    }

    #[test]
    fn matches_enumeration() {
        for seed in 0..20 {
            let d = random_dataset(3, 2, 3, &[1.0, -0.5, 0.0], 0.7, 100 + seed);
            let sel = LinearDantzig::new(&d);
            let lambda = 0.5 * sel.lambda_max();
            let fit = sel.fit(lambda).unwrap();
            let oracle = enumerate_min_l1(sel.program.gram(), &sel.score, lambda);
            assert_abs_diff_eq!(l1(&fit.beta), oracle, epsilon = 1e-7);
            assert!(fit.constraint_slack >= -1e-7);
        }
    }

    #[test]
    fn feasibility_minimality_monotonicity() {
        let d = random_dataset(20, 4, 30, &{
            let mut b = vec![0.0; 30];
            b[0] = 1.0;
            b[1] = -1.0;
            b[2] = 0.5;
            b
        }, 1.0, 3);
        let sel = LinearDantzig::new(&d);
        let lmax = sel.lambda_max();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut prev_norm = f64::INFINITY;
        for frac in [0.02, 0.05, 0.1, 0.2, 0.4, 0.8] {
            let fit = sel.fit(frac * lmax).unwrap();
            // independent re-evaluation of the constraint
            let resid: Vec<f64> = d
                .y()
                .iter()
                .zip(d.linear_predictor(&fit.beta))
                .map(|(y, f)| y - f)
                .collect();
            assert!(linf(&d.mean_xt(&resid)) <= fit.lambda + 1e-7);
            let norm = l1(&fit.beta);
            assert!(norm <= prev_norm + 1e-9);
            prev_norm = norm;
            for _ in 0..100 {
                let delta: Vec<f64> = (0..30).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
                let cand: Vec<f64> = fit.beta.iter().zip(&delta).map(|(b, e)| b + e).collect();
                if sel.program.violation(&sel.score, &cand) <= fit.lambda {
                    assert!(l1(&cand) >= norm - 1e-7);
                }
            }
        }
    }

    #[test]
    fn cone_property() {
        let mut truth = vec![0.0; 40];
        truth[0] = 1.0;
        truth[3] = -1.0;
        truth[7] = 0.8;
        let s = [0usize, 3, 7];
        let mut checked = 0;
        for seed in 0..10 {
            let d = random_dataset(25, 4, 40, &truth, 1.0, 200 + seed);
            let sel = LinearDantzig::new(&d);
            let lambda = 0.15 * sel.lambda_max();
            if sel.program.violation(&sel.score, &truth) > lambda {
                continue;
            }
            checked += 1;
            let fit = sel.fit(lambda).unwrap();
            let on: f64 = s.iter().map(|&j| (fit.beta[j] - truth[j]).abs()).sum();
            let off: f64 = (0..40)
                .filter(|j| !s.contains(j))
                .map(|j| (fit.beta[j] - truth[j]).abs())
                .sum();
            assert!(on >= off - 1e-9, "seed {seed}: {on} < {off}");
        }
        assert!(checked > 0);
    }

    #[test]
    fn clime_examples() {
        let g = GramMatrix::new(Matrix::identity(3), GramKind::Linear).unwrap();
        assert_eq!(clime_column(&g, 1, 0.0).unwrap().v, vec![0.0, 1.0, 0.0]);
        assert_eq!(clime_column(&g, 1, 1.0).unwrap().v, vec![0.0; 3]);

        let g = GramMatrix::new(Matrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]), GramKind::Linear).unwrap();
        let c = clime_column(&g, 0, 0.0).unwrap();
        assert_abs_diff_eq!(c.v[0], 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.v[1], -2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn clime_zero_radius_inverts() {
        let d = random_dataset(30, 4, 8, &[0.0; 8], 1.0, 5);
        let v = crate::gee::correlation_matrix(crate::gee::CorrelationKind::Ar1, 0.4, 4).unwrap();
        let g = build_gram_linear(&d, &spd_inverse(&v).unwrap()).unwrap();
        let inv = spd_inverse(&SpdMatrix::new(g.matrix().clone()).unwrap()).unwrap();
        let cols = clime_columns(&g, &(0..8).collect::<Vec<_>>(), 0.0);
        for (j, c) in cols.into_iter().enumerate() {
            let c = c.unwrap();
            for a in 0..8 {
                assert_abs_diff_eq!(c.v[a], inv[(a, j)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn clime_feasible_on_singular_gram() {
        let d = random_dataset(10, 2, 25, &[0.0; 25], 1.0, 6);
        let g = build_gram_linear(&d, &SpdMatrix::identity(2)).unwrap();
        for j in [0, 7, 24] {
            let c = clime_column(&g, j, 0.5).unwrap();
            let mut e = vec![0.0; 25];
            e[j] = 1.0;
            let gv = g.matrix().matvec(&c.v);
            let viol = e.iter().zip(&gv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(viol <= 0.5 + 1e-7);
            assert!(c.constraint_slack >= -1e-7);
        }
        assert!(matches!(clime_column(&g, 0, 0.0), Err(Error::Infeasible)));
    }

    #[test]
    fn glm_identity_reduces() {
        let d = random_dataset(10, 3, 6, &[1.0, 0.0, 0.0, 0.5, 0.0, 0.0], 0.5, 7);
        let a = dantzig_linear(&d, 0.05).unwrap();
        let b = dantzig_glm(&d, LinkFunction::Identity, 0.05, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn glm_logit_zero_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n_obs = 40;
        let xs: Vec<f64> = (0..n_obs * 2)
            .map(|i| if i % 2 == 0 { 1.0 } else { rng.sample(StandardNormal) })
            .collect();
        let x = Matrix::from_vec(n_obs, 2, xs).unwrap();
        let y: Vec<f64> = (0..n_obs)
            .map(|r| {
                let eta = 0.3 + 1.2 * x[(r, 1)];
                let p = LinkFunction::Logit.mean(eta);
                if rng.gen::<f64>() < p { 1.0 } else { 0.0 }
            })
            .collect();
        let d = ClusteredDataset::from_parts(4, x, y.clone()).unwrap();
        let at_zero: Vec<f64> = y.iter().map(|v| v - 0.5).collect();
        let lmax = linf(&d.mean_xt(&at_zero));
        let fit = dantzig_glm(&d, LinkFunction::Logit, lmax, 50).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));

        let lambda = 0.01;
        let fit = dantzig_glm(&d, LinkFunction::Logit, lambda, 100).unwrap();
        // naive evaluation of the nonlinear constraint
        let mut score = [0.0; 2];
        for r in 0..n_obs {
            let eta = fit.beta[0] * d.x()[(r, 0)] + fit.beta[1] * d.x()[(r, 1)];
            let mu = 1.0 / (1.0 + (-eta).exp());
            for a in 0..2 {
                score[a] += d.x()[(r, a)] * (y[r] - mu) / n_obs as f64;
            }
        }
        assert!(score[0].abs().max(score[1].abs()) <= lambda + 1e-6);
        assert!(fit.beta[1] > 0.0);
    }
}
