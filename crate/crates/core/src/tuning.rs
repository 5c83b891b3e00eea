//! Cross-validation of the two penalties: `λ` for the initial selector and
//! `λ′` for the CLIME columns. Folds are always whole clusters.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::gee::{ClusterWeights, LinkFunction, WorkingCovariance};
use crate::numerics::{dot, linf};
use crate::selector::{build_gram, clime_with, dantzig_glm, L1Program, LinearDantzig};

/// Default length of the `λ` grid.
pub const LAMBDA_GRID_SIZE: usize = 50;
/// Smallest grid value as a fraction of `λ_max`.
pub const LAMBDA_MIN_RATIO: f64 = 0.01;
/// Scores within this distance of the minimum count as ties.
pub const TIE_TOL: f64 = 1e-12;
const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    /// Candidates that produced a finite score, in the order evaluated.
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen: f64,
    pub fold_count: usize,
}

impl TuneResult {
    /// Picks the smallest candidate whose score is within [`TIE_TOL`] of the
    /// minimum.
    pub fn from_scores(grid: Vec<f64>, scores: Vec<f64>, fold_count: usize) -> Result<Self> {
        let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return Err(Error::AllInfeasible("no grid point produced a finite score".into()));
        }
        let chosen = grid
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| s <= best + TIE_TOL)
            .map(|(&g, _)| g)
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            grid,
            scores,
            chosen,
            fold_count,
        })
    }
}

/// `‖(1/(nK)) Σᵢ Xᵢᵀ(Yᵢ − μ(0))‖∞`: the smallest `λ` at which `β̂ = 0`.
pub fn lambda_max(data: &ClusteredDataset, link: LinkFunction) -> f64 {
    let mu0 = link.mean(0.0);
    let r: Vec<f64> = data.y().iter().map(|y| y - mu0).collect();
    linf(&data.mean_xt(&r))
}

/// 50 log-spaced values from `λ_max` down to `0.01·λ_max`.
pub fn lambda_grid(data: &ClusteredDataset) -> Result<Vec<f64>> {
    lambda_grid_sized(data, LinkFunction::Identity, LAMBDA_GRID_SIZE)
}

/// `size` log-spaced values from `λ_max` down to `0.01·λ_max`.
pub fn lambda_grid_sized(data: &ClusteredDataset, link: LinkFunction, size: usize) -> Result<Vec<f64>> {
    let top = lambda_max(data, link);
    if !(top > 0.0) || size == 0 {
        return Err(Error::DegenerateGrid);
    }
    if size == 1 {
        return Ok(vec![top]);
    }
    let (hi, lo) = (top.ln(), (top * LAMBDA_MIN_RATIO).ln());
    Ok((0..size)
        .map(|i| (hi + (lo - hi) * i as f64 / (size - 1) as f64).exp())
        .collect())
}

/// `size` equally spaced values on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    match size {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..size)
            .map(|i| lo + (hi - lo) * i as f64 / (size - 1) as f64)
            .collect(),
    }
}

/// Shuffles cluster indices with a seeded RNG and deals them round-robin.
pub fn cluster_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::FoldTooSmall { folds, clusters: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    for f in out.iter_mut() {
        f.sort_unstable();
    }
    Ok(out)
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; n];
    for &i in fold {
        keep[i] = false;
    }
    (0..n).filter(|&i| keep[i]).collect()
}

/// Held-out loss of coefficients `beta`: mean squared error for the
/// identity link, mean binomial deviance for the logit link.
pub fn prediction_loss(test: &ClusteredDataset, link: LinkFunction, beta: &[f64]) -> f64 {
    let eta = test.linear_predictor(beta);
    let total: f64 = test
        .y()
        .iter()
        .zip(&eta)
        .map(|(&y, &e)| match link {
            LinkFunction::Identity => (y - e).powi(2),
            LinkFunction::Logit => {
                let mu = link.mean(e).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -2.0 * (y * mu.ln() + (1.0 - y) * (1.0 - mu).ln())
            }
        })
        .sum();
    total / test.n_obs() as f64
}

/// Cross-validated `λ` over the default 50-point grid.
pub fn cv_lambda(data: &ClusteredDataset, link: LinkFunction, folds: usize, seed: u64) -> Result<TuneResult> {
    let grid = lambda_grid_sized(data, link, LAMBDA_GRID_SIZE)?;
    cv_lambda_on_grid(data, link, folds, &grid, seed, 50)
}

/// Cross-validated `λ` over a given grid. Grid points whose fit fails on
/// any fold are dropped.
pub fn cv_lambda_on_grid(
    data: &ClusteredDataset,
    link: LinkFunction,
    folds: usize,
    grid: &[f64],
    seed: u64,
    max_outer: usize,
) -> Result<TuneResult> {
    let fold_sets = cluster_folds(data.n(), folds, seed)?;
    let per_fold: Vec<Vec<Option<f64>>> = fold_sets
        .par_iter()
        .map(|fold| {
            let train = data.subset(&complement(data.n(), fold));
            let test = data.subset(fold);
            let linear = (link == LinkFunction::Identity).then(|| LinearDantzig::new(&train));
            grid.iter()
                .map(|&lambda| {
                    let fit = match &linear {
                        Some(sel) => sel.fit(lambda),
                        None => dantzig_glm(&train, link, lambda, max_outer),
                    };
                    match fit {
                        Ok(f) => Some(prediction_loss(&test, link, &f.beta)),
                        Err(e) => {
                            debug!("λ = {lambda}: fit failed: {e}");
                            None
                        }
                    }
                })
                .collect()
        })
        .collect();
    collect_scores(grid, &per_fold, folds)
}

fn collect_scores(grid: &[f64], per_fold: &[Vec<Option<f64>>], folds: usize) -> Result<TuneResult> {
    let mut kept = Vec::new();
    let mut scores = Vec::new();
    let mut dropped = Vec::new();
    for (g, &value) in grid.iter().enumerate() {
        let mut sum = 0.0;
        let mut ok = true;
        for fold in per_fold {
            match fold[g] {
                Some(s) if s.is_finite() => sum += s,
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            kept.push(value);
            scores.push(sum / per_fold.len() as f64);
        } else {
            dropped.push(value);
        }
    }
    if kept.is_empty() {
        return Err(Error::AllInfeasible(format!("every grid value failed: {dropped:?}")));
    }
    TuneResult::from_scores(kept, scores, folds)
}

/// Default `λ′` grid: 50 equally spaced values on `[0.01, 0.5]`.
pub fn default_lambda_prime_grid() -> Vec<f64> {
    linear_grid(0.01, 0.5, 50)
}

/// Cross-validated `λ′` for the linear model with working covariance `wc`.
pub fn cv_lambda_prime(
    data: &ClusteredDataset,
    wc: &WorkingCovariance,
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<TuneResult> {
    cv_lambda_prime_weighted(data, &ClusterWeights::linear(wc), folds, grid, seed)
}

/// Cross-validated `λ′` with arbitrary per-cluster weights.
///
/// For each fold, `Φ̂_train(λ′)` is assembled column by column from CLIME on
/// the training Gram and scored by `Σⱼ (diag(Σ̂_test Φ̂_train) − 1)ⱼ²`. A grid
/// value is dropped when any column is infeasible on any fold.
pub fn cv_lambda_prime_weighted(
    data: &ClusteredDataset,
    weights: &ClusterWeights,
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<TuneResult> {
    let fold_sets = cluster_folds(data.n(), folds, seed)?;
    let p = data.p();
    let per_fold: Vec<Vec<Option<f64>>> = fold_sets
        .iter()
        .map(|fold| -> Result<Vec<Option<f64>>> {
            let train_idx = complement(data.n(), fold);
            let train = data.subset(&train_idx);
            let test = data.subset(fold);
            let g_train = build_gram(&train, &weights.subset(&train_idx))?;
            let g_test = build_gram(&test, &weights.subset(fold))?;
            let program = L1Program::new(g_train.matrix());
            Ok(grid
                .iter()
                .map(|&lp| {
                    let diag: Option<Vec<f64>> = (0..p)
                        .into_par_iter()
                        .map(|j| {
                            clime_with(&program, j, lp)
                                .ok()
                                .map(|c| dot(g_test.matrix().row(j), &c.v))
                        })
                        .collect();
                    diag.map(|d| clime_cv_loss(&d))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    collect_scores(grid, &per_fold, folds)
}

/// `Σⱼ (dⱼ − 1)²` for the diagonal `d` of `Σ̂_test Φ̂_train`.
pub fn clime_cv_loss(diag: &[f64]) -> f64 {
    diag.iter().map(|d| (d - 1.0).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gee::{correlation_matrix, CorrelationKind};
    use crate::numerics::{Matrix, SpdMatrix};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn dataset(n: usize, k: usize, p: usize, beta: &[f64], noise: f64, seed: u64) -> ClusteredDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n * k * p).map(|_| rng.sample(StandardNormal)).collect();
        let x = Matrix::from_vec(n * k, p, xs).unwrap();
        let mut y = x.matvec(beta);
        for v in y.iter_mut() {
            *v += noise * rng.sample::<f64, _>(StandardNormal);
        }
        ClusteredDataset::from_parts(k, x, y).unwrap()
    }

    #[test]
    fn grid_shape() {
        let d = dataset(10, 2, 5, &[1.0, 0.0, 0.0, 0.0, 0.0], 1.0, 1);
        let g = lambda_grid(&d).unwrap();
        assert_eq!(g.len(), 50);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert!((g[0] - lambda_max(&d, LinkFunction::Identity)).abs() < 1e-15);
        assert!((g[49] / g[0] - 0.01).abs() < 1e-12);
        let fit = crate::selector::dantzig_linear(&d, g[0]).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        let zero = d.with_outcomes(vec![0.0; 20]).unwrap();
        assert!(matches!(lambda_grid(&zero), Err(Error::DegenerateGrid)));
    }

    #[test]
    fn folds_partition_clusters() {
        let f = cluster_folds(10, 3, 7).unwrap();
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(f, cluster_folds(10, 3, 7).unwrap());
        assert!(matches!(cluster_folds(3, 4, 0), Err(Error::FoldTooSmall { .. })));
        assert!(cluster_folds(3, 1, 0).is_err());
    }

    #[test]
    fn noise_picks_large_lambda_signal_picks_small() {
        let noise = dataset(30, 3, 10, &[0.0; 10], 1.0, 2);
        let r = cv_lambda(&noise, LinkFunction::Identity, 5, 1).unwrap();
        assert!(r.chosen >= r.grid[r.grid.len() / 2], "noise chose {}", r.chosen);

        let mut beta = vec![0.0; 10];
        beta[0] = 2.0;
        beta[3] = -1.5;
        let signal = dataset(60, 3, 10, &beta, 0.5, 3);
        let r = cv_lambda(&signal, LinkFunction::Identity, 5, 1).unwrap();
        assert!(r.chosen <= r.grid[r.grid.len() / 2], "signal chose {}", r.chosen);
        assert!(r.grid.contains(&r.chosen));
        assert_eq!(r.scores.len(), r.grid.len());
    }

    #[test]
    fn leave_one_cluster_out() {
        let d = dataset(6, 2, 3, &[1.0, 0.0, 0.0], 1.0, 4);
        let grid = lambda_grid_sized(&d, LinkFunction::Identity, 5).unwrap();
        let r = cv_lambda_on_grid(&d, LinkFunction::Identity, 6, &grid, 0, 50).unwrap();
        assert!(r.scores.iter().all(|s| s.is_finite()));
        assert_eq!(r.fold_count, 6);
    }

    #[test]
    fn scores_reproducible_outside_tuner() {
        let d = dataset(20, 2, 4, &[1.0, -1.0, 0.0, 0.0], 1.0, 5);
        let grid = lambda_grid_sized(&d, LinkFunction::Identity, 6).unwrap();
        let r = cv_lambda_on_grid(&d, LinkFunction::Identity, 4, &grid, 9, 50).unwrap();
        let folds = cluster_folds(20, 4, 9).unwrap();
        for (g, &lambda) in r.grid.iter().enumerate() {
            let mut total = 0.0;
            for fold in &folds {
                let train = d.subset(&complement(20, fold));
                let test = d.subset(fold);
                let fit = crate::selector::dantzig_linear(&train, lambda).unwrap();
                total += prediction_loss(&test, LinkFunction::Identity, &fit.beta);
            }
            assert!((total / 4.0 - r.scores[g]).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_gram_prefers_smallest_lambda_prime() {
        // orthonormal clusters: every Gram is exactly I
        let k = 4;
        let mut xs = Vec::new();
        for _ in 0..8 {
            for t in 0..k {
                for j in 0..k {
                    xs.push(if t == j { 1.0 } else { 0.0 });
                }
            }
        }
        let x = Matrix::from_vec(8 * k, k, xs).unwrap();
        let d = ClusteredDataset::from_parts(k, x, vec![0.0; 8 * k]).unwrap();
        let wc = WorkingCovariance::fixed(SpdMatrix::identity(k)).unwrap();
        let r = cv_lambda_prime(&d, &wc, 4, &[0.0, 0.1, 0.3], 0).unwrap();
        assert_eq!(r.chosen, 0.0);
        assert_eq!(r.scores[0], 0.0);
        let single = cv_lambda_prime(&d, &wc, 4, &[0.2], 0).unwrap();
        assert_eq!(single.chosen, 0.2);
    }

    #[test]
    fn ar_gram_chooses_small_lambda_prime() {
        let (n, k, p) = (200, 4, 6);
        let col = correlation_matrix(CorrelationKind::Ar1, 0.5, p).unwrap();
        let l = crate::numerics::cholesky(&col).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut xs = Vec::with_capacity(n * k * p);
        for _ in 0..n * k {
            let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            xs.extend(l.matvec(&z));
        }
        let x = Matrix::from_vec(n * k, p, xs).unwrap();
        let d = ClusteredDataset::from_parts(k, x, vec![0.0; n * k]).unwrap();
        let wc = WorkingCovariance::fixed(SpdMatrix::identity(k)).unwrap();
        let grid = linear_grid(0.01, 0.5, 10);
        let r = cv_lambda_prime(&d, &wc, 5, &grid, 1).unwrap();
        assert!(r.chosen <= 0.12, "chose {}", r.chosen);
        assert!(r.scores[0] < r.scores[r.scores.len() - 1]);
    }

    #[test]
    fn all_infeasible() {
        let d = dataset(6, 1, 10, &[0.0; 10], 1.0, 8);
        let wc = WorkingCovariance::fixed(SpdMatrix::identity(1)).unwrap();
        // p > training observations: λ′ = 0 needs an exact inverse
        assert!(matches!(
            cv_lambda_prime(&d, &wc, 2, &[0.0], 0),
            Err(Error::AllInfeasible(_))
        ));
    }
}
