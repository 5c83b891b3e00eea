//! Gene-expression preprocessing and a synthetic stand-in for expression
//! studies with a handful of repeated measurements per subject.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dsgee_core::simulate::{ar_cov, MatrixNormal};
use dsgee_core::{ClusteredDataset, Matrix};

use crate::error::CliResult;

/// `sd / |mean|` over all observations (population sd). A constant column
/// scores 0; a non-constant column with zero mean scores `+∞`.
pub fn coefficient_of_variation(col: &[f64]) -> f64 {
    let m = col.len() as f64;
    let mean = col.iter().sum::<f64>() / m;
    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
    if sd == 0.0 {
        0.0
    } else if mean == 0.0 {
        f64::INFINITY
    } else {
        sd / mean.abs()
    }
}

/// Drops covariates whose coefficient of variation is below `threshold`.
/// An all-ones leading intercept is always kept. Returns the reduced data
/// and the dropped column names.
pub fn cv_filter(data: &ClusteredDataset, threshold: f64) -> (ClusteredDataset, Vec<String>) {
    let intercept = data.has_intercept();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..data.p() {
        let cv = coefficient_of_variation(&data.x().column(j));
        if (intercept && j == 0) || cv >= threshold {
            keep.push(j);
        } else {
            log::info!("dropping {} (coefficient of variation {cv:.4})", data.covariate_names()[j]);
            dropped.push(data.covariate_names()[j].clone());
        }
    }
    (data.select_columns(&keep), dropped)
}

/// Prepends an all-ones `intercept` column unless one is already first.
pub fn with_intercept(data: &ClusteredDataset) -> CliResult<ClusteredDataset> {
    if data.has_intercept() {
        return Ok(data.clone());
    }
    let (rows, p) = (data.n_obs(), data.p());
    let mut xs = Vec::with_capacity(rows * (p + 1));
    for r in 0..rows {
        xs.push(1.0);
        xs.extend_from_slice(data.x().row(r));
    }
    let mut names = vec!["intercept".to_string()];
    names.extend(data.covariate_names().iter().cloned());
    Ok(ClusteredDataset::new(
        data.k(),
        Matrix::from_vec(rows, p + 1, xs)?,
        data.y().to_vec(),
        data.cluster_ids().to_vec(),
        names,
    )?)
}

/// Shape of the synthetic expression study.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGenes {
    pub n: usize,
    pub k: usize,
    pub genes: usize,
    /// The first `stable` genes have coefficient of variation near 0.05.
    pub stable: usize,
    /// `(gene index, effect per standard deviation of expression)`.
    pub planted: Vec<(usize, f64)>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticGenes {
    fn default() -> Self {
        Self {
            n: 28,
            k: 4,
            genes: 300,
            stable: 33,
            planted: vec![(40, 1.0)],
            noise_sd: 0.5,
            seed: 7,
        }
    }
}

pub fn synthetic_genes(spec: &SyntheticGenes) -> CliResult<ClusteredDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let g = spec.genes;
    let (means, sds): (Vec<f64>, Vec<f64>) = (0..g)
        .map(|j| {
            if j < spec.stable {
                (10.0 + rng.gen_range(-1.0..1.0), 0.5)
            } else {
                (6.0 + rng.gen_range(-1.0..1.0), rng.gen_range(1.0..2.0))
            }
        })
        .unzip();
    let expression = MatrixNormal::new(&ar_cov(0.5, spec.k), &ar_cov(0.3, g))?;
    let errors = MatrixNormal::new(&ar_cov(0.3, spec.k), &ar_cov(0.0, 1))?;
    let mut xs = Vec::with_capacity(spec.n * spec.k * g);
    let mut ys = Vec::with_capacity(spec.n * spec.k);
    for _ in 0..spec.n {
        let z = expression.sample(&mut rng);
        let e = errors.sample(&mut rng);
        let subject: f64 = rng.sample::<f64, _>(StandardNormal) * 0.2;
        for t in 0..spec.k {
            let row = z.row(t);
            let signal: f64 = spec.planted.iter().map(|&(j, b)| b * row[j]).sum();
            ys.push(-7.0 + signal + subject + spec.noise_sd * e[(t, 0)]);
            xs.extend(row.iter().zip(means.iter().zip(&sds)).map(|(v, (m, s))| m + s * v));
        }
    }
    let ids = (0..spec.n).map(|i| format!("s{:02}", i + 1)).collect();
    let names = (0..g).map(|j| format!("g{:04}", j + 1)).collect();
    Ok(ClusteredDataset::new(
        spec.k,
        Matrix::from_vec(spec.n * spec.k, g, xs)?,
        ys,
        ids,
        names,
    )?)
}
