//! End-to-end fit: initial selector, working covariance, weighted Gram,
//! then one CLIME column, root and sandwich per coordinate.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use crate::gee::{
    estimate_glm_working_cov, estimate_working_cov, residuals, ClusterWeights, LinkFunction,
    WorkingCorrelation, WorkingCovariance,
};
use crate::inference::{
    desparsify_glm, direction_denominator, estimating_equation, kc_adjust, sandwich_variance,
    CoordinateInference, CrossFitHalves, FitConfig, SplitMode,
};
use crate::selector::{
    build_gram, clime_with, dantzig_glm, ClimeColumn, GramMatrix, L1Program, SelectorFit,
};

/// Everything estimated once per sample and shared by all coordinates.
#[derive(Debug, Clone)]
pub struct Nuisance {
    pub selector: SelectorFit,
    pub link: LinkFunction,
    /// For the GLM path this is the covariance of the Pearson residuals.
    pub working: WorkingCovariance,
    pub weights: ClusterWeights,
    pub gram: GramMatrix,
    program: L1Program,
}

impl Nuisance {
    pub fn estimate(data: &ClusteredDataset, config: &FitConfig) -> Result<Self> {
        let selector = dantzig_glm(data, config.link, config.lambda, config.max_outer)?;
        Self::with_selector(data, config, selector)
    }

    /// Builds the remaining nuisances around a given initial fit.
    pub fn with_selector(data: &ClusteredDataset, config: &FitConfig, selector: SelectorFit) -> Result<Self> {
        let (working, weights) = match config.link {
            LinkFunction::Identity => {
                let resid = residuals(data, &selector.beta, LinkFunction::Identity);
                let wc = estimate_working_cov(&resid, config.correlation)?;
                let w = ClusterWeights::linear(&wc);
                (wc, w)
            }
            link => {
                let glm = estimate_glm_working_cov(data, &selector.beta, link, config.correlation)?;
                let w = ClusterWeights::glm(data, &selector.beta, link, glm.pearson.r_inv.matrix());
                (glm.pearson, w)
            }
        };
        Self::with_parts(data, config.link, selector, working, weights)
    }

    /// Assembles a nuisance from fully specified parts.
    pub fn with_parts(
        data: &ClusteredDataset,
        link: LinkFunction,
        selector: SelectorFit,
        working: WorkingCovariance,
        weights: ClusterWeights,
    ) -> Result<Self> {
        let gram = build_gram(data, &weights)?;
        let program = L1Program::new(gram.matrix());
        Ok(Self {
            selector,
            link,
            working,
            weights,
            gram,
            program,
        })
    }

    pub fn clime(&self, j: usize, lambda_prime: f64) -> Result<ClimeColumn> {
        clime_with(&self.program, j, lambda_prime)
    }

    /// Weights for evaluating the estimating equation on `eval`: the shared
    /// `V̂⁻¹` in the linear model, per-cluster weights at `β̂` otherwise.
    pub fn weights_for(&self, eval: &ClusteredDataset) -> ClusterWeights {
        match &self.weights {
            ClusterWeights::Shared { .. } => self.weights.clone(),
            ClusterWeights::PerCluster { .. } => ClusterWeights::glm(
                eval,
                &self.selector.beta,
                self.link,
                self.working.r_inv.matrix(),
            ),
        }
    }

    /// Estimate and variance for coordinate `j` evaluated on `eval` (the
    /// fitting sample itself, or the other half when cross-fitting).
    pub fn estimate_on(
        &self,
        eval: &ClusteredDataset,
        weights: &ClusterWeights,
        config: &FitConfig,
        j: usize,
    ) -> Result<CoordinateEstimate> {
        let column = self.clime(j, config.lambda_prime)?;
        let t_hat = desparsify_glm(eval, &self.selector, &column, weights, self.link, j)?;
        let direction = direction_denominator(eval, &column.v, weights, j);
        let root_residual =
            estimating_equation(eval, &self.selector.beta, &column.v, weights, self.link, j, t_hat).abs();
        let resid = residuals(eval, &self.selector.beta, self.link);
        let mut delta_unadjusted = sandwich_variance(eval, &column.v, weights, &resid)?;
        let mut delta_adjusted = None;
        let mut warnings = Vec::new();
        if config.adjust_variance {
            match kc_adjust(delta_unadjusted, eval, &self.selector, &column, weights, &resid, true) {
                Ok(d) => delta_adjusted = Some(d),
                Err(e) => {
                    warn!("coordinate {j}: variance adjustment skipped: {e}");
                    warnings.push(format!("variance adjustment skipped: {e}"));
                }
            }
        }
        if config.normalize_by_direction {
            let d2 = direction * direction;
            delta_unadjusted /= d2;
            delta_adjusted = delta_adjusted.map(|d| d / d2);
        }
        let (delta_hat, adjusted) = match delta_adjusted {
            Some(d) => (d, true),
            None => (delta_unadjusted, false),
        };
        Ok(CoordinateEstimate {
            j,
            t_hat,
            delta_hat,
            delta_unadjusted,
            delta_adjusted,
            direction,
            root_residual,
            adjusted,
            warnings,
        })
    }
}

/// Unstudentized per-coordinate output of one nuisance/evaluation pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateEstimate {
    pub j: usize,
    pub t_hat: f64,
    /// The variance used for inference: adjusted when available.
    pub delta_hat: f64,
    pub delta_unadjusted: f64,
    pub delta_adjusted: Option<f64>,
    /// `v̂ᵀĜe_j` on the evaluation sample.
    pub direction: f64,
    /// `|g(T̂)|` re-evaluated from the definition.
    pub root_residual: f64,
    pub adjusted: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateOutcome {
    pub j: usize,
    pub name: String,
    pub is_intercept: bool,
    pub inference: Option<CoordinateInference>,
    pub root_residual: Option<f64>,
    pub error: Option<String>,
    /// `Error::kind` of the failure.
    pub error_kind: Option<String>,
    pub warnings: Vec<String>,
}

impl CoordinateOutcome {
    fn failed(j: usize, name: String, is_intercept: bool, e: Error) -> Self {
        Self {
            j,
            name,
            is_intercept,
            inference: None,
            root_residual: None,
            error: Some(e.to_string()),
            error_kind: Some(e.kind().to_string()),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub config: FitConfig,
    pub n: usize,
    pub k: usize,
    pub p: usize,
    /// Full-sample initial fit; absent when cross-fitting.
    pub selector: Option<SelectorFit>,
    pub correlation: Option<WorkingCorrelation>,
    pub coordinates: Vec<CoordinateOutcome>,
}

impl FitOutcome {
    pub fn failures(&self) -> usize {
        self.coordinates.iter().filter(|c| c.inference.is_none()).count()
    }
}

fn check_link(data: &ClusteredDataset, link: LinkFunction) -> Result<()> {
    if link == LinkFunction::Logit && data.y().iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::LinkMismatch(
            "logit link requires outcomes coded 0/1".into(),
        ));
    }
    Ok(())
}

/// Fits every coordinate.
pub fn fit(data: &ClusteredDataset, config: &FitConfig) -> Result<FitOutcome> {
    let all: Vec<usize> = (0..data.p()).collect();
    fit_coordinates(data, config, &all)
}

/// Fits the listed coordinates. Per-coordinate failures are recorded in the
/// outcome; only failures shared by every coordinate return `Err`.
pub fn fit_coordinates(data: &ClusteredDataset, config: &FitConfig, js: &[usize]) -> Result<FitOutcome> {
    config.validate()?;
    check_link(data, config.link)?;
    if let Some(&bad) = js.iter().find(|&&j| j >= data.p()) {
        return Err(Error::InvalidInput(format!("coordinate {bad} out of range for p = {}", data.p())));
    }
    let intercept = data.has_intercept();
    let name = |j: usize| data.covariate_names()[j].clone();
    let n = data.n();

    let (selector, correlation, coordinates) = match config.split_mode {
        SplitMode::None => {
            let nuisance = Nuisance::estimate(data, config)?;
            let coords = js
                .par_iter()
                .map(|&j| {
                    let is_int = intercept && j == 0;
                    let est = nuisance.estimate_on(data, &nuisance.weights, config, j);
                    match est.and_then(|e| {
                        CoordinateInference::new(j, e.t_hat, e.delta_hat, n, config.ci_level, e.adjusted)
                            .map(|inf| (inf, e))
                    }) {
                        Ok((inf, e)) => CoordinateOutcome {
                            j,
                            name: name(j),
                            is_intercept: is_int,
                            inference: Some(inf),
                            root_residual: Some(e.root_residual),
                            error: None,
                            error_kind: None,
                            warnings: e.warnings,
                        },
                        Err(e) => CoordinateOutcome::failed(j, name(j), is_int, e),
                    }
                })
                .collect();
            (
                Some(nuisance.selector.clone()),
                Some(nuisance.working.correlation),
                coords,
            )
        }
        SplitMode::CrossFit => {
            let halves = CrossFitHalves::new(data, config)?;
            let coords = js
                .par_iter()
                .map(|&j| {
                    let is_int = intercept && j == 0;
                    match halves.infer(config, j) {
                        Ok(inf) => CoordinateOutcome {
                            j,
                            name: name(j),
                            is_intercept: is_int,
                            inference: Some(inf),
                            root_residual: None,
                            error: None,
                            error_kind: None,
                            warnings: Vec::new(),
                        },
                        Err(e) => CoordinateOutcome::failed(j, name(j), is_int, e),
                    }
                })
                .collect();
            (None, None, coords)
        }
    };
    Ok(FitOutcome {
        config: *config,
        n,
        k: data.k(),
        p: data.p(),
        selector,
        correlation,
        coordinates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dataset(seed: u64, logit: bool) -> ClusteredDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k, p) = (40, 3, 8);
        let mut xs = Vec::new();
        for _ in 0..n * k {
            xs.push(1.0);
            for _ in 1..p {
                xs.push(rng.sample(StandardNormal));
            }
        }
        let x = Matrix::from_vec(n * k, p, xs).unwrap();
        let beta = [0.0, 1.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0];
        let eta = x.matvec(&beta);
        let y = eta
            .iter()
            .map(|&e| {
                if logit {
                    if rng.gen::<f64>() < LinkFunction::Logit.mean(e) { 1.0 } else { 0.0 }
                } else {
                    e + rng.sample::<f64, _>(StandardNormal)
                }
            })
            .collect();
        ClusteredDataset::from_parts(k, x, y).unwrap()
    }

    #[test]
    fn full_fit_linear() {
        let d = dataset(1, false);
        let out = fit(&d, &FitConfig { lambda: 0.05, lambda_prime: 0.1, ..FitConfig::default() }).unwrap();
        assert_eq!(out.coordinates.len(), 8);
        assert!(out.coordinates[0].is_intercept);
        for c in &out.coordinates {
            let inf = c.inference.expect("coordinate fitted");
            assert!(inf.ci_low <= inf.t_hat && inf.t_hat <= inf.ci_high);
            assert!(c.root_residual.unwrap() <= 1e-10);
        }
        assert!(out.coordinates[1].inference.unwrap().covers(1.0) || out.coordinates[1].inference.unwrap().t_hat > 0.5);
    }

    #[test]
    fn full_fit_logit() {
        let d = dataset(2, true);
        let config = FitConfig {
            lambda: 0.02,
            lambda_prime: 0.1,
            link: LinkFunction::Logit,
            ..FitConfig::default()
        };
        let out = fit(&d, &config).unwrap();
        assert_eq!(out.failures(), 0);
        for c in &out.coordinates {
            assert!(c.root_residual.unwrap() <= 1e-8);
        }
    }

    #[test]
    fn link_mismatch() {
        let d = dataset(3, false);
        let config = FitConfig { link: LinkFunction::Logit, ..FitConfig::default() };
        assert!(matches!(fit(&d, &config), Err(Error::LinkMismatch(_))));
    }

    #[test]
    fn large_lambda_prime_flags_coordinates() {
        let d = dataset(4, false);
        let config = FitConfig { lambda: 0.05, lambda_prime: 1e6, ..FitConfig::default() };
        let out = fit(&d, &config).unwrap();
        assert_eq!(out.failures(), 8);
        assert!(out.coordinates[3].error.as_deref().unwrap().contains("direction"));
    }

    #[test]
    fn deterministic() {
        let d = dataset(5, false);
        let config = FitConfig { lambda: 0.05, lambda_prime: 0.1, adjust_variance: true, ..FitConfig::default() };
        assert_eq!(fit(&d, &config).unwrap(), fit(&d, &config).unwrap());
        let cf = FitConfig { split_mode: SplitMode::CrossFit, ..config };
        assert_eq!(fit(&d, &cf).unwrap(), fit(&d, &cf).unwrap());
    }
}
