//! Simulation designs, data generators and the Monte Carlo driver.
//!
//! Covariates for each cluster are matrix normal, `Xᵢ = L_row Z L_colᵀ`,
//! with AR row (time) and column (coordinate) covariances. Continuous
//! outcomes add Gaussian AR errors. Binary outcomes threshold a latent
//! logistic variable built from a one-factor Gaussian copula, so the
//! marginal law of each `Yᵢⱼ` is exactly logistic in `Xᵢⱼᵀβ`.

use std::fmt::Write as _;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::gee::{correlation_matrix, ClusterWeights, CorrelationKind, LinkFunction, WorkingCovariance};
use crate::inference::{CoordinateInference, FitConfig, SplitMode};
use crate::numerics::{cholesky, spd_inverse, Matrix, SpdMatrix};
use crate::pipeline::{fit, Nuisance};
use crate::selector::{build_gram_linear, clime_with, L1Program};
use crate::tuning::{cv_lambda_on_grid, cv_lambda_prime_weighted, lambda_grid_sized, lambda_max};

/// `ρ^{|i−j|}`, `dim × dim`.
pub fn ar_cov(rho: f64, dim: usize) -> SpdMatrix {
    assert!(rho.abs() < 1.0, "AR parameter must satisfy |rho| < 1, got {rho}");
    correlation_matrix(CorrelationKind::Ar1, rho, dim).expect("AR(ρ) with |ρ| < 1 is positive definite")
}

/// Matrix-normal sampler with precomputed Cholesky factors.
#[derive(Debug, Clone)]
pub struct MatrixNormal {
    l_row: Matrix,
    l_col_t: Matrix,
}

impl MatrixNormal {
    pub fn new(rowcov: &SpdMatrix, colcov: &SpdMatrix) -> Result<Self> {
        Ok(Self {
            l_row: cholesky(rowcov)?,
            l_col_t: cholesky(colcov)?.transpose(),
        })
    }

    pub fn rows(&self) -> usize {
        self.l_row.rows()
    }

    pub fn cols(&self) -> usize {
        self.l_col_t.rows()
    }

    /// `L_row Z L_colᵀ` for a given `Z`.
    pub fn transform(&self, z: &Matrix) -> Matrix {
        let zl = z.matmul(&self.l_col_t).expect("column factor shape");
        self.l_row.matmul(&zl).expect("row factor shape")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let (r, c) = (self.rows(), self.cols());
        let z: Vec<f64> = (0..r * c).map(|_| rng.sample(StandardNormal)).collect();
        self.transform(&Matrix::from_vec(r, c, z).expect("finite normals"))
    }
}

/// One draw of a `K×p` matrix normal.
pub fn sample_matrix_normal<R: Rng + ?Sized>(rowcov: &SpdMatrix, colcov: &SpdMatrix, rng: &mut R) -> Result<Matrix> {
    Ok(MatrixNormal::new(rowcov, colcov)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorSpec {
    /// Gaussian errors with `AR(rho)` within-cluster covariance.
    GaussianAr { rho: f64 },
    /// Binary outcomes; `dependence` is the latent exchangeable correlation.
    BinaryLatent { dependence: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n: usize,
    pub k: usize,
    /// Total columns, including the intercept when present.
    pub p: usize,
    pub beta_true: Vec<f64>,
    pub row_rho: f64,
    pub col_rho: f64,
    pub error_spec: ErrorSpec,
    pub intercept: bool,
    pub seed: u64,
}

impl SimDesign {
    /// `β = (0, 0.5, 1 × ones, 0, ...)` of length `p`.
    pub fn reference_beta(p: usize, ones: usize) -> Vec<f64> {
        let mut b = vec![0.0; p];
        if p > 1 {
            b[1] = 0.5;
        }
        for j in 2..(2 + ones).min(p) {
            b[j] = 1.0;
        }
        b
    }

    /// Continuous reference design: `K = 4`, AR(0.5) covariates, AR(0.3)
    /// errors, leading intercept.
    pub fn continuous(n: usize, p: usize, ones: usize, seed: u64) -> Self {
        Self {
            n,
            k: 4,
            p,
            beta_true: Self::reference_beta(p, ones),
            row_rho: 0.5,
            col_rho: 0.5,
            error_spec: ErrorSpec::GaussianAr { rho: 0.3 },
            intercept: true,
            seed,
        }
    }

    /// Binary reference design with latent correlation 0.1.
    pub fn binary(n: usize, p: usize, ones: usize, seed: u64) -> Self {
        Self {
            error_spec: ErrorSpec::BinaryLatent { dependence: 0.1 },
            ..Self::continuous(n, p, ones, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.p == 0 {
            return Err(Error::InvalidInput("n, K and p must all be at least 1".into()));
        }
        if self.intercept && self.p < 2 {
            return Err(Error::InvalidInput("an intercept design needs p ≥ 2".into()));
        }
        if self.beta_true.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "beta_true has {} entries for p = {}",
                self.beta_true.len(),
                self.p
            )));
        }
        if self.row_rho.abs() >= 1.0 || self.col_rho.abs() >= 1.0 {
            return Err(Error::InvalidInput("covariate AR parameters must satisfy |ρ| < 1".into()));
        }
        match self.error_spec {
            ErrorSpec::GaussianAr { rho } if rho.abs() >= 1.0 => {
                Err(Error::InvalidInput("error AR parameter must satisfy |ρ| < 1".into()))
            }
            ErrorSpec::BinaryLatent { dependence } if !(0.0..1.0).contains(&dependence) => {
                Err(Error::InvalidInput("latent dependence must lie in [0, 1)".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn link(&self) -> LinkFunction {
        match self.error_spec {
            ErrorSpec::GaussianAr { .. } => LinkFunction::Identity,
            ErrorSpec::BinaryLatent { .. } => LinkFunction::Logit,
        }
    }

    /// Number of non-intercept covariates.
    pub fn covariates(&self) -> usize {
        self.p - usize::from(self.intercept)
    }

    /// Whether coordinate `j` is reported in the aggregate groups.
    pub fn is_reported(&self, j: usize) -> bool {
        !(self.intercept && j == 0)
    }
}

/// Reusable generator for one design.
#[derive(Debug, Clone)]
pub struct Simulator {
    design: SimDesign,
    covariates: MatrixNormal,
    error_factor: Matrix,
}

impl Simulator {
    pub fn new(design: &SimDesign) -> Result<Self> {
        design.validate()?;
        let covariates = MatrixNormal::new(&ar_cov(design.row_rho, design.k), &ar_cov(design.col_rho, design.covariates()))?;
        let error_factor = match design.error_spec {
            ErrorSpec::GaussianAr { rho } => cholesky(&ar_cov(rho, design.k))?,
            ErrorSpec::BinaryLatent { .. } => Matrix::identity(design.k),
        };
        Ok(Self {
            design: design.clone(),
            covariates,
            error_factor,
        })
    }

    pub fn design(&self) -> &SimDesign {
        &self.design
    }

    fn design_matrix<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let d = &self.design;
        let mut x = Matrix::zeros(d.n * d.k, d.p);
        let off = usize::from(d.intercept);
        for i in 0..d.n {
            let xi = self.covariates.sample(rng);
            for t in 0..d.k {
                let row = x.row_mut(i * d.k + t);
                if d.intercept {
                    row[0] = 1.0;
                }
                row[off..].copy_from_slice(xi.row(t));
            }
        }
        x
    }

    fn assemble(&self, x: Matrix, y: Vec<f64>) -> Result<ClusteredDataset> {
        let d = &self.design;
        let ids = (0..d.n).map(|i| format!("c{i:05}")).collect();
        let names = (0..d.p)
            .map(|j| {
                if d.intercept && j == 0 {
                    "intercept".to_string()
                } else {
                    format!("x{}", j + usize::from(!d.intercept))
                }
            })
            .collect();
        ClusteredDataset::new(d.k, x, y, ids, names)
    }

    pub fn continuous<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ClusteredDataset> {
        let d = &self.design;
        if !matches!(d.error_spec, ErrorSpec::GaussianAr { .. }) {
            return Err(Error::InvalidInput("design does not have Gaussian errors".into()));
        }
        let x = self.design_matrix(rng);
        let mut y = x.matvec(&d.beta_true);
        for i in 0..d.n {
            let z: Vec<f64> = (0..d.k).map(|_| rng.sample(StandardNormal)).collect();
            let e = self.error_factor.matvec(&z);
            for t in 0..d.k {
                y[i * d.k + t] += e[t];
            }
        }
        self.assemble(x, y)
    }

    pub fn binary<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ClusteredDataset> {
        let d = &self.design;
        let ErrorSpec::BinaryLatent { dependence } = d.error_spec else {
            return Err(Error::InvalidInput("design does not have binary outcomes".into()));
        };
        let x = self.design_matrix(rng);
        let eta = x.matvec(&d.beta_true);
        let y = binary_outcomes(&eta, d.n, d.k, dependence, rng);
        self.assemble(x, y)
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ClusteredDataset> {
        match self.design.error_spec {
            ErrorSpec::GaussianAr { .. } => self.continuous(rng),
            ErrorSpec::BinaryLatent { .. } => self.binary(rng),
        }
    }
}

/// `Yᵢⱼ = 1{ηᵢⱼ + F⁻¹(Φ(zᵢⱼ)) > 0}` with `zᵢⱼ = √ρ uᵢ + √(1−ρ) wᵢⱼ`, where
/// `F` is the standard logistic CDF.
pub fn binary_outcomes<R: Rng + ?Sized>(eta: &[f64], n: usize, k: usize, dependence: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let (a, b) = (dependence.sqrt(), (1.0 - dependence).sqrt());
    let mut y = Vec::with_capacity(n * k);
    for i in 0..n {
        let u: f64 = rng.sample(StandardNormal);
        for t in 0..k {
            let w: f64 = rng.sample(StandardNormal);
            let z = a * u + b * w;
            // logit(Φ(z)) = ln Φ(z) − ln Φ(−z), stable in both tails
            let latent = normal.cdf(z).ln() - normal.cdf(-z).ln();
            y.push(if eta[i * k + t] + latent > 0.0 { 1.0 } else { 0.0 });
        }
    }
    y
}

/// Continuous outcomes from a design.
pub fn gen_continuous<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<ClusteredDataset> {
    Simulator::new(design)?.continuous(rng)
}

/// Binary outcomes from a design.
pub fn gen_binary<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<ClusteredDataset> {
    Simulator::new(design)?.binary(rng)
}

/// How `λ` is chosen in each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LambdaRule {
    Fixed(f64),
    /// A fraction of the replicate's own `λ_max`.
    RelativeToMax(f64),
    /// Cluster-fold CV over `grid_size` log-spaced values.
    CrossValidated { folds: usize, grid_size: usize },
}

/// How `λ′` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LambdaPrimeRule {
    Fixed(f64),
    /// CV in every replicate.
    CrossValidated { folds: usize, grid: Vec<f64> },
    /// CV on `pilots` independent datasets; the median choice is then used
    /// for every replicate.
    Pilot { folds: usize, grid: Vec<f64>, pilots: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Correlation, link, level and flags; the penalties in it are ignored.
    pub fit: FitConfig,
    pub lambda: LambdaRule,
    pub lambda_prime: LambdaPrimeRule,
    pub replicates: usize,
    pub seed: u64,
    /// Also evaluate the leverage-adjusted variance.
    pub with_adjusted: bool,
}

impl McConfig {
    /// The reference protocol: `λ` by 5-fold CV over 10 values, `λ′` by
    /// 10-fold CV over 5 equally spaced values on `[0.01, 0.5]`.
    pub fn reference(fit: FitConfig, replicates: usize, seed: u64) -> Self {
        Self {
            fit,
            lambda: LambdaRule::CrossValidated { folds: 5, grid_size: 10 },
            lambda_prime: LambdaPrimeRule::CrossValidated {
                folds: 10,
                grid: crate::tuning::linear_grid(0.01, 0.5, 5),
            },
            replicates,
            seed,
            with_adjusted: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    NonZero,
    Zero,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::NonZero => "nonzero",
            Group::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: Group,
    pub abs_bias: f64,
    pub coverage: f64,
    pub ci_length: f64,
    pub coverage_adj: Option<f64>,
    pub ci_length_adj: Option<f64>,
    /// Coordinates per replicate in the group.
    pub coordinates: usize,
}

/// Per-coordinate outcome in one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateRecord {
    pub j: usize,
    pub truth: f64,
    pub inference: CoordinateInference,
    /// Interval under the leverage-adjusted variance.
    pub adjusted: Option<CoordinateInference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub coordinates: Vec<CoordinateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub design: SimDesign,
    pub config: McConfig,
    pub replicates: usize,
    pub successes: usize,
    pub failures: usize,
    pub groups: Vec<GroupSummary>,
    pub mean_lambda: f64,
    pub mean_lambda_prime: f64,
    /// `λ′` fixed by a pilot, when that rule is used.
    pub pilot_lambda_prime: Option<f64>,
}

impl McReport {
    pub fn group(&self, g: Group) -> Option<&GroupSummary> {
        self.groups.iter().find(|s| s.group == g)
    }

    /// `group,metric,value,n_reps`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,metric,value,n_reps\n");
        for g in &self.groups {
            let mut rows = vec![
                ("abs_bias", Some(g.abs_bias)),
                ("coverage", Some(g.coverage)),
                ("ci_length", Some(g.ci_length)),
            ];
            if g.coverage_adj.is_some() {
                rows.push(("coverage_adj", g.coverage_adj));
                rows.push(("ci_length_adj", g.ci_length_adj));
            }
            for (metric, value) in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    g.group.label(),
                    metric,
                    value.map_or_else(|| "NA".into(), |v| format!("{v:.6}")),
                    self.successes
                );
            }
        }
        let _ = writeln!(out, "all,failures,{},{}", self.failures, self.successes);
        out
    }
}

fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index)
}

/// The dataset of replicate `index` in a study seeded with `seed`.
pub fn replicate_data(sim: &Simulator, seed: u64, index: usize) -> Result<ClusteredDataset> {
    sim.generate(&mut replicate_rng(seed, index as u64))
}

/// Seeds for pilot datasets live in a range replicate indices never reach.
const PILOT_STREAM: u64 = 1 << 62;

/// Resolves a [`LambdaRule`] on one dataset.
pub fn choose_lambda(data: &ClusteredDataset, link: LinkFunction, rule: &LambdaRule, seed: u64, max_outer: usize) -> Result<f64> {
    match *rule {
        LambdaRule::Fixed(l) => Ok(l),
        LambdaRule::RelativeToMax(f) => Ok(f * lambda_max(data, link)),
        LambdaRule::CrossValidated { folds, grid_size } => {
            let grid = lambda_grid_sized(data, link, grid_size)?;
            Ok(cv_lambda_on_grid(data, link, folds, &grid, seed, max_outer)?.chosen)
        }
    }
}

fn tune_lambda_prime(data: &ClusteredDataset, nuisance: &Nuisance, folds: usize, grid: &[f64], seed: u64) -> Result<f64> {
    let weights = nuisance.weights.clone();
    Ok(cv_lambda_prime_weighted(data, &weights, folds, grid, seed)?.chosen)
}

/// Runs the pilot tuning for [`LambdaPrimeRule::Pilot`]; returns the median
/// of the chosen values.
pub fn pilot_lambda_prime(design: &SimDesign, config: &McConfig) -> Result<Option<f64>> {
    let LambdaPrimeRule::Pilot { folds, ref grid, pilots } = config.lambda_prime else {
        return Ok(None);
    };
    let sim = Simulator::new(design)?;
    let link = design.link();
    let fit_cfg = FitConfig { link, ..config.fit };
    let mut chosen: Vec<f64> = (0..pilots.max(1))
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = replicate_rng(config.seed, PILOT_STREAM + i as u64);
            let data = sim.generate(&mut rng)?;
            let lambda = choose_lambda(&data, link, &config.lambda, config.seed ^ (PILOT_STREAM + i as u64), fit_cfg.max_outer)?;
            let nuisance = Nuisance::estimate(&data, &FitConfig { lambda, ..fit_cfg })?;
            tune_lambda_prime(&data, &nuisance, folds, grid, config.seed ^ (PILOT_STREAM + i as u64))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .filter_map(|r| r.ok())
        .collect();
    if chosen.is_empty() {
        return Err(Error::AllInfeasible("every pilot tuning run failed".into()));
    }
    chosen.sort_by(|a, b| a.total_cmp(b));
    Ok(Some(chosen[(chosen.len() - 1) / 2]))
}

/// One replicate: generate, tune, fit all coordinates.
pub fn run_replicate(
    sim: &Simulator,
    config: &McConfig,
    pilot: Option<f64>,
    index: usize,
) -> Result<ReplicateRecord> {
    let design = sim.design();
    let link = design.link();
    let stream = config.seed ^ index as u64;
    let data = replicate_data(sim, config.seed, index)?;
    let fit_cfg = FitConfig { link, ..config.fit };
    let lambda = choose_lambda(&data, link, &config.lambda, stream, fit_cfg.max_outer)?;

    if fit_cfg.split_mode == SplitMode::CrossFit {
        let lambda_prime = match (&config.lambda_prime, pilot) {
            (LambdaPrimeRule::Fixed(l), _) => *l,
            (_, Some(l)) => l,
            (LambdaPrimeRule::CrossValidated { folds, grid }, None) => {
                let nuisance = Nuisance::estimate(&data, &FitConfig { lambda, ..fit_cfg })?;
                tune_lambda_prime(&data, &nuisance, *folds, grid, stream)?
            }
            (LambdaPrimeRule::Pilot { .. }, None) => {
                return Err(Error::InvalidInput("pilot λ′ missing".into()))
            }
        };
        let cfg = FitConfig { lambda, lambda_prime, ..fit_cfg };
        let out = fit(&data, &cfg)?;
        let mut coords = Vec::new();
        for c in out.coordinates {
            let inf = c.inference.ok_or_else(|| Error::InvalidInput(c.error.unwrap_or_default()))?;
            coords.push(CoordinateRecord { j: c.j, truth: design.beta_true[c.j], inference: inf, adjusted: None });
        }
        return Ok(ReplicateRecord { index, lambda, lambda_prime, coordinates: coords });
    }

    let nuisance = Nuisance::estimate(&data, &FitConfig { lambda, ..fit_cfg })?;
    let lambda_prime = match (&config.lambda_prime, pilot) {
        (LambdaPrimeRule::Fixed(l), _) => *l,
        (_, Some(l)) => l,
        (LambdaPrimeRule::CrossValidated { folds, grid }, None) => {
            tune_lambda_prime(&data, &nuisance, *folds, grid, stream)?
        }
        (LambdaPrimeRule::Pilot { .. }, None) => return Err(Error::InvalidInput("pilot λ′ missing".into())),
    };
    let cfg = FitConfig {
        lambda,
        lambda_prime,
        adjust_variance: config.with_adjusted,
        ..fit_cfg
    };
    let n = data.n();
    let coordinates = (0..design.p)
        .into_par_iter()
        .map(|j| -> Result<CoordinateRecord> {
            let est = nuisance.estimate_on(&data, &nuisance.weights, &cfg, j)?;
            let inference = CoordinateInference::new(j, est.t_hat, est.delta_unadjusted, n, cfg.ci_level, false)?;
            let adjusted = match est.delta_adjusted {
                Some(d) => Some(CoordinateInference::new(j, est.t_hat, d, n, cfg.ci_level, true)?),
                None => None,
            };
            Ok(CoordinateRecord {
                j,
                truth: design.beta_true[j],
                inference,
                adjusted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateRecord {
        index,
        lambda,
        lambda_prime,
        coordinates,
    })
}

/// Runs the Monte Carlo study, returning the report and the per-replicate
/// records of successful replicates.
pub fn run_monte_carlo_detailed(design: &SimDesign, config: &McConfig) -> Result<(McReport, Vec<ReplicateRecord>)> {
    if config.replicates == 0 {
        return Err(Error::InvalidInput("at least one replicate is required".into()));
    }
    config.fit.validate()?;
    let sim = Simulator::new(design)?;
    let pilot = pilot_lambda_prime(design, config)?;
    if let Some(l) = pilot {
        info!("pilot λ′ = {l}");
    }
    let results: Vec<Result<ReplicateRecord>> = (0..config.replicates)
        .into_par_iter()
        .map(|idx| run_replicate(&sim, config, pilot, idx))
        .collect();
    let mut records = Vec::new();
    let mut failures = 0;
    for (idx, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                debug!("replicate {idx} failed: {e}");
                failures += 1;
            }
        }
    }
    let report = summarize(design, config, &records, failures, pilot);
    Ok((report, records))
}

/// Monte Carlo report.
pub fn run_monte_carlo(design: &SimDesign, config: &McConfig) -> Result<McReport> {
    run_monte_carlo_detailed(design, config).map(|(r, _)| r)
}

/// Aggregates replicate records into group averages.
pub fn summarize(
    design: &SimDesign,
    config: &McConfig,
    records: &[ReplicateRecord],
    failures: usize,
    pilot: Option<f64>,
) -> McReport {
    let mut groups = Vec::new();
    for group in [Group::NonZero, Group::Zero] {
        let members: Vec<usize> = (0..design.p)
            .filter(|&j| design.is_reported(j))
            .filter(|&j| (design.beta_true[j] != 0.0) == (group == Group::NonZero))
            .collect();
        if members.is_empty() {
            continue;
        }
        let (mut bias, mut cover, mut len, mut cover_adj, mut len_adj, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
        let mut has_adj = !records.is_empty();
        for rec in records {
            for &j in &members {
                let c = &rec.coordinates[j];
                bias += (c.inference.t_hat - c.truth).abs();
                cover += f64::from(u8::from(c.inference.covers(c.truth)));
                len += c.inference.length();
                match c.adjusted {
                    Some(a) => {
                        cover_adj += f64::from(u8::from(a.covers(c.truth)));
                        len_adj += a.length();
                    }
                    None => has_adj = false,
                }
                count += 1;
            }
        }
        let m = count.max(1) as f64;
        groups.push(GroupSummary {
            group,
            abs_bias: bias / m,
            coverage: cover / m,
            ci_length: len / m,
            coverage_adj: has_adj.then(|| cover_adj / m),
            ci_length_adj: has_adj.then(|| len_adj / m),
            coordinates: members.len(),
        });
    }
    let s = records.len().max(1) as f64;
    McReport {
        design: design.clone(),
        config: config.clone(),
        replicates: records.len() + failures,
        successes: records.len(),
        failures,
        groups,
        mean_lambda: records.iter().map(|r| r.lambda).sum::<f64>() / s,
        mean_lambda_prime: records.iter().map(|r| r.lambda_prime).sum::<f64>() / s,
        pilot_lambda_prime: pilot,
    }
}

/// Population Gram `E[K⁻¹ Xᵢᵀ V⁻¹ Xᵢ] = K⁻¹ tr(V⁻¹ Σ_row) Σ_col` for
/// matrix-normal covariates without an intercept.
pub fn population_gram(row: &SpdMatrix, col: &SpdMatrix, v: &SpdMatrix) -> Result<Matrix> {
    let v_inv = spd_inverse(v)?;
    let prod = v_inv.matmul(row.matrix())?;
    let trace: f64 = prod.diag().iter().sum();
    Ok(col.scale(trace / row.dim() as f64))
}

/// Settings of the CLIME tuning-curve study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCurveConfig {
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub replicates: usize,
    pub grid: Vec<f64>,
    pub folds: usize,
    /// Exchangeable error correlation.
    pub error_rho: f64,
    pub covariate_rho: f64,
    pub seed: u64,
}

impl TuningCurveConfig {
    /// Reduced-scale defaults: `p = 40`, `n = 80`, 20 replicates.
    pub fn reduced(seed: u64) -> Self {
        Self {
            n: 80,
            k: 4,
            p: 40,
            replicates: 20,
            grid: crate::tuning::linear_grid(0.01, 0.5, 50),
            folds: 10,
            error_rho: 0.5,
            covariate_rho: 0.5,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCurveReplicate {
    pub frobenius: Vec<f64>,
    pub max_err: Vec<f64>,
    pub cv_chosen: f64,
    /// Grid value minimizing the Frobenius error in this replicate.
    pub error_minimizer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCurve {
    pub grid: Vec<f64>,
    /// Mean over replicates.
    pub frobenius: Vec<f64>,
    pub max_err: Vec<f64>,
    pub replicates: Vec<TuningCurveReplicate>,
}

impl TuningCurve {
    /// `lambda_prime,frobenius_err,max_err`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda_prime,frobenius_err,max_err\n");
        for ((g, f), m) in self.grid.iter().zip(&self.frobenius).zip(&self.max_err) {
            let _ = writeln!(out, "{g:.6},{f:.6},{m:.6}");
        }
        out
    }

    /// Index of the smallest mean Frobenius error.
    pub fn argmin(&self) -> usize {
        self.frobenius
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
            .0
    }

    /// Fraction of replicates whose CV choice is at most the error minimizer.
    pub fn cv_conservative_fraction(&self) -> f64 {
        let hits = self.replicates.iter().filter(|r| r.cv_chosen <= r.error_minimizer).count();
        hits as f64 / self.replicates.len().max(1) as f64
    }
}

/// CLIME estimation error `‖Σ Φ̂(λ′) − I‖` against the population Gram `Σ`
/// across a `λ′` grid, together with the CV choice in each replicate. Gram matrices use
/// the true error covariance.
pub fn tuning_curve(config: &TuningCurveConfig) -> Result<TuningCurve> {
    let design = SimDesign {
        n: config.n,
        k: config.k,
        p: config.p,
        beta_true: {
            let mut b = vec![0.0; config.p];
            for v in b.iter_mut().skip(1).take(4) {
                *v = 1.0;
            }
            b
        },
        row_rho: config.covariate_rho,
        col_rho: config.covariate_rho,
        error_spec: ErrorSpec::GaussianAr { rho: 0.0 },
        intercept: false,
        seed: config.seed,
    };
    let v = correlation_matrix(CorrelationKind::Exchangeable, config.error_rho, config.k)?;
    let row = ar_cov(config.covariate_rho, config.k);
    let col = ar_cov(config.covariate_rho, config.p);
    let sigma = population_gram(&row, &col, &v)?;
    let covariates = MatrixNormal::new(&row, &col)?;
    let v_factor = cholesky(&v)?;
    let wc = WorkingCovariance::fixed(v.clone())?;
    let weights = ClusterWeights::linear(&wc);
    let p = config.p;

    let reps: Vec<TuningCurveReplicate> = (0..config.replicates)
        .into_par_iter()
        .map(|idx| -> Result<TuningCurveReplicate> {
            let mut rng = replicate_rng(config.seed, idx as u64);
            let mut xs = Vec::with_capacity(config.n * config.k * p);
            let mut y = Vec::with_capacity(config.n * config.k);
            for _ in 0..config.n {
                let xi = covariates.sample(&mut rng);
                let z: Vec<f64> = (0..config.k).map(|_| rng.sample(StandardNormal)).collect();
                let e = v_factor.matvec(&z);
                let mean = xi.matvec(&design.beta_true);
                xs.extend_from_slice(xi.as_slice());
                y.extend(mean.iter().zip(&e).map(|(m, e)| m + e));
            }
            let data = ClusteredDataset::from_parts(config.k, Matrix::from_vec(config.n * config.k, p, xs)?, y)?;
            let g = build_gram_linear(&data, &wc.v_inv)?;
            let program = L1Program::new(g.matrix());
            let mut frob = Vec::with_capacity(config.grid.len());
            let mut maxe = Vec::with_capacity(config.grid.len());
            for &lp in &config.grid {
                let (mut f, mut m) = (0.0f64, 0.0f64);
                let mut ok = true;
                for j in 0..p {
                    match clime_with(&program, j, lp) {
                        Ok(c) => {
                            let sv = sigma.matvec(&c.v);
                            for a in 0..p {
                                let d = sv[a] - f64::from(u8::from(a == j));
                                f += d * d;
                                m = m.max(d.abs());
                            }
                        }
                        Err(_) => {
                            ok = false;
                            break;
                        }
                    }
                }
                frob.push(if ok { f.sqrt() } else { f64::INFINITY });
                maxe.push(if ok { m } else { f64::INFINITY });
            }
            let cv = cv_lambda_prime_weighted(&data, &weights, config.folds, &config.grid, config.seed ^ idx as u64)?;
            let best = frob
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
                .0;
            Ok(TuningCurveReplicate {
                frobenius: frob,
                max_err: maxe,
                cv_chosen: cv.chosen,
                error_minimizer: config.grid[best],
            })
        })
        .collect::<Result<_>>()?;
    let r = reps.len().max(1) as f64;
    let mean = |f: &dyn Fn(&TuningCurveReplicate) -> &Vec<f64>| -> Vec<f64> {
        (0..config.grid.len())
            .map(|g| reps.iter().map(|rep| f(rep)[g]).sum::<f64>() / r)
            .collect()
    };
    Ok(TuningCurve {
        grid: config.grid.clone(),
        frobenius: mean(&|rep| &rep.frobenius),
        max_err: mean(&|rep| &rep.max_err),
        replicates: reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ar_cov_examples() {
        assert_eq!(ar_cov(0.0, 3).matrix(), &Matrix::identity(3));
        let m = ar_cov(0.5, 3);
        assert_eq!(
            m.matrix(),
            &Matrix::from_rows(&[[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
        );
        assert!(cholesky(&m).is_ok());
    }

    #[test]
    fn matrix_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mn = MatrixNormal::new(&SpdMatrix::identity(1), &SpdMatrix::identity(1)).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| mn.sample(&mut rng)[(0, 0)]).collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
        assert!((var - 1.0).abs() < 0.02);

        let mn = MatrixNormal::new(&SpdMatrix::identity(1), &ar_cov(0.5, 2)).unwrap();
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for _ in 0..100_000 {
            let x = mn.sample(&mut rng);
            sxy += x[(0, 0)] * x[(0, 1)];
            sxx += x[(0, 0)].powi(2);
            syy += x[(0, 1)].powi(2);
        }
        assert!((sxy / (sxx * syy).sqrt() - 0.5).abs() < 0.02);
        assert_eq!(mn.transform(&Matrix::zeros(1, 2)), Matrix::zeros(1, 2));
    }

    #[test]
    fn continuous_marginals() {
        let design = SimDesign {
            n: 25_000,
            k: 4,
            p: 3,
            beta_true: vec![0.0; 3],
            row_rho: 0.5,
            col_rho: 0.5,
            error_spec: ErrorSpec::GaussianAr { rho: 0.0 },
            intercept: false,
            seed: 0,
        };
        let d = gen_continuous(&design, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mean = d.y().iter().sum::<f64>() / d.n_obs() as f64;
        assert!(mean.abs() < 0.02);

        let noiseless = Simulator {
            error_factor: Matrix::zeros(4, 4),
            ..Simulator::new(&SimDesign::continuous(5, 6, 3, 0)).unwrap()
        };
        let d = noiseless.continuous(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(d.y(), &d.x().matvec(&SimDesign::reference_beta(6, 3))[..]);
        assert!(d.has_intercept());
    }

    #[test]
    fn reference_design() {
        let d = SimDesign::continuous(100, 100, 3, 0);
        assert_eq!(d.k, 4);
        assert_eq!(d.error_spec, ErrorSpec::GaussianAr { rho: 0.3 });
        assert_eq!((d.row_rho, d.col_rho), (0.5, 0.5));
        assert_eq!(&d.beta_true[..6], &[0.0, 0.5, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn binary_marginal_is_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for a in [0.0, 1.0, -0.7] {
            let eta = vec![a; 100_000];
            let y = binary_outcomes(&eta, 25_000, 4, 0.1, &mut rng);
            let rate = y.iter().sum::<f64>() / y.len() as f64;
            assert_abs_diff_eq!(rate, LinkFunction::Logit.mean(a), epsilon = 0.01);
        }
        let y = binary_outcomes(&[1e6; 8], 2, 4, 0.1, &mut rng);
        assert!(y.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn binary_within_cluster_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let y = binary_outcomes(&vec![0.0; 2 * n], n, 2, 0.1, &mut rng);
        let (mut s01, mut s0, mut s1) = (0.0, 0.0, 0.0);
        for i in 0..n {
            s0 += y[2 * i];
            s1 += y[2 * i + 1];
            s01 += y[2 * i] * y[2 * i + 1];
        }
        let (m0, m1) = (s0 / n as f64, s1 / n as f64);
        let cov = s01 / n as f64 - m0 * m1;
        let corr = cov / (m0 * (1.0 - m0) * m1 * (1.0 - m1)).sqrt();
        assert!(corr > 0.0 && corr < 0.1, "{corr}");
    }

    fn small_config(replicates: usize) -> McConfig {
        McConfig {
            fit: FitConfig::default(),
            lambda: LambdaRule::RelativeToMax(0.1),
            lambda_prime: LambdaPrimeRule::Fixed(0.15),
            replicates,
            seed: 11,
            with_adjusted: true,
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let design = SimDesign::continuous(30, 12, 3, 0);
        let a = run_monte_carlo(&design, &small_config(3)).unwrap();
        let b = run_monte_carlo(&design, &small_config(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicates, 3);
        assert_eq!(a.successes + a.failures, 3);
        let nz = a.group(Group::NonZero).unwrap();
        assert_eq!(nz.coordinates, 4);
        assert!((0.0..=1.0).contains(&nz.coverage));
        assert!(nz.ci_length_adj.unwrap() >= nz.ci_length - 1e-12);
        let csv = a.to_csv();
        assert!(csv.starts_with("group,metric,value,n_reps\nnonzero,abs_bias,"));
    }

    #[test]
    fn population_gram_matches_monte_carlo() {
        let row = ar_cov(0.5, 3);
        let col = ar_cov(0.5, 2);
        let v = correlation_matrix(CorrelationKind::Exchangeable, 0.5, 3).unwrap();
        let g = population_gram(&row, &col, &v).unwrap();
        let mn = MatrixNormal::new(&row, &col).unwrap();
        let v_inv = spd_inverse(&v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut acc = Matrix::zeros(2, 2);
        let reps = 50_000;
        for _ in 0..reps {
            let x = mn.sample(&mut rng);
            let m = x.transpose().matmul(&v_inv.matmul(&x).unwrap()).unwrap();
            for (a, b) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *a += b / (3 * reps) as f64;
            }
        }
        for (a, b) in acc.as_slice().iter().zip(g.as_slice()) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
    }
}
