//! Command implementations. Each returns its outputs in memory; writing
//! files is left to the caller so every run has a single writer.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use dsgee_core::pipeline::Nuisance;
use dsgee_core::simulate::{
    choose_lambda, replicate_data, run_monte_carlo, tuning_curve, McReport, Simulator, TuningCurve,
    TuningCurveConfig,
};
use dsgee_core::tuning::{cv_lambda_on_grid, cv_lambda_prime_weighted, lambda_grid_sized};
use dsgee_core::{fit, ClusteredDataset, Error, LinkFunction, TuneResult};

use crate::config::{curve_pairs, DesignSettings, FitSettings, PrimePenalty};
use crate::error::{CliError, CliResult};
use crate::genes::{cv_filter, with_intercept};
use crate::report::{apply_bh, rows_from_outcome, AnalysisReport, DatasetSummary, PenaltySummary};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn check_link(data: &ClusteredDataset, link: LinkFunction) -> CliResult<()> {
    if link == LinkFunction::Logit && data.y().iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::LinkMismatch("logit link requires outcomes coded 0/1".into()).into());
    }
    Ok(())
}

/// Resolves `λ` and `λ′` on `data` according to `settings`.
pub fn resolve_penalties(data: &ClusteredDataset, settings: &FitSettings) -> CliResult<(f64, f64)> {
    let base = settings.fit_config(0.1, 0.1);
    base.validate()?;
    check_link(data, settings.link)?;
    let lambda = choose_lambda(data, settings.link, &settings.lambda_rule(), settings.seed, base.max_outer)?;
    let lambda_prime = match settings.lambda_prime {
        PrimePenalty::Value(v) => v,
        PrimePenalty::Cv => {
            let nuisance = Nuisance::estimate(data, &settings.fit_config(lambda, 0.1))?;
            cv_lambda_prime_weighted(
                data,
                &nuisance.weights,
                settings.lambda_prime_folds,
                &settings.lambda_prime_grid,
                settings.seed,
            )?
            .chosen
        }
        PrimePenalty::Pilot => {
            return Err(CliError::Usage("lambda_prime = pilot is only valid in simulation designs".into()))
        }
    };
    Ok((lambda, lambda_prime))
}

fn config_map(pairs: Vec<(String, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().collect()
}

/// Full pipeline on one dataset: tune, fit every coordinate, report.
/// Per-coordinate failures become flagged rows.
pub fn cmd_fit(data: &ClusteredDataset, settings: &FitSettings, bh: bool, record_time: bool) -> CliResult<AnalysisReport> {
    let start = Instant::now();
    let (lambda, lambda_prime) = resolve_penalties(data, settings)?;
    let outcome = fit(data, &settings.fit_config(lambda, lambda_prime))?;
    let (mut rows, warnings) = rows_from_outcome(&outcome);
    if bh {
        apply_bh(&mut rows, None);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(AnalysisReport {
        command: "fit".into(),
        version: VERSION.into(),
        seed: settings.seed,
        config: config_map(settings.pairs()),
        dataset: DatasetSummary { n: data.n(), k: data.k(), p: data.p() },
        penalties: PenaltySummary { lambda, lambda_prime },
        dropped_columns: Vec::new(),
        rows,
        warnings,
        wall_time_secs: record_time.then(|| start.elapsed().as_secs_f64()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenesOptions {
    pub cv_threshold: f64,
    pub alpha: f64,
}

impl Default for GenesOptions {
    fn default() -> Self {
        Self { cv_threshold: 0.1, alpha: 0.05 }
    }
}

/// Filter, standardize, add an intercept, fit, BH-adjust and flag.
pub fn cmd_genes(
    data: &ClusteredDataset,
    settings: &FitSettings,
    opts: GenesOptions,
    record_time: bool,
) -> CliResult<AnalysisReport> {
    let start = Instant::now();
    if !(opts.cv_threshold >= 0.0 && opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(CliError::Usage("need cv threshold ≥ 0 and alpha in (0, 1)".into()));
    }
    let (filtered, dropped) = cv_filter(data, opts.cv_threshold);
    if filtered.p() == 0 {
        return Err(CliError::Usage("every covariate was removed by the variation filter".into()));
    }
    let prepared = with_intercept(&filtered.standardized())?;
    let mut report = cmd_fit(&prepared, settings, false, false)?;
    apply_bh(&mut report.rows, Some(opts.alpha));
    report.command = "genes".into();
    report.config.insert("cv_threshold".into(), opts.cv_threshold.to_string());
    report.config.insert("alpha".into(), opts.alpha.to_string());
    report.dropped_columns = dropped;
    report.wall_time_secs = record_time.then(|| start.elapsed().as_secs_f64());
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationOutput {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub design: BTreeMap<String, String>,
    pub replicates: usize,
    pub successes: usize,
    pub failures: usize,
    pub mean_lambda: f64,
    pub mean_lambda_prime: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pilot_lambda_prime: Option<f64>,
    pub groups: Vec<GroupJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
    #[serde(skip)]
    pub report: Option<McReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupJson {
    pub group: String,
    pub coordinates: usize,
    pub abs_bias: f64,
    pub coverage: f64,
    pub ci_length: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_adj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_length_adj: Option<f64>,
}

impl SimulationOutput {
    pub fn csv(&self) -> String {
        self.report.as_ref().map(McReport::to_csv).unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("simulation output serializes");
        s.push('\n');
        s
    }
}

pub fn cmd_simulate(settings: &DesignSettings, record_time: bool) -> CliResult<SimulationOutput> {
    let start = Instant::now();
    let design = settings.design();
    let mc = settings.mc_config();
    let report = run_monte_carlo(&design, &mc)?;
    if report.successes == 0 {
        return Err(Error::AllInfeasible(format!("all {} replicates failed", report.replicates)).into());
    }
    let groups = report
        .groups
        .iter()
        .map(|g| GroupJson {
            group: g.group.label().to_string(),
            coordinates: g.coordinates,
            abs_bias: g.abs_bias,
            coverage: g.coverage,
            ci_length: g.ci_length,
            coverage_adj: g.coverage_adj,
            ci_length_adj: g.ci_length_adj,
        })
        .collect();
    Ok(SimulationOutput {
        command: "simulate".into(),
        version: VERSION.into(),
        seed: settings.fit.seed,
        design: config_map(settings.pairs()),
        replicates: report.replicates,
        successes: report.successes,
        failures: report.failures,
        mean_lambda: report.mean_lambda,
        mean_lambda_prime: report.mean_lambda_prime,
        pilot_lambda_prime: report.pilot_lambda_prime,
        groups,
        wall_time_secs: record_time.then(|| start.elapsed().as_secs_f64()),
        report: Some(report),
    })
}

/// One simulated dataset: replicate `index` of the study described by `settings`.
pub fn cmd_generate(settings: &DesignSettings, index: usize) -> CliResult<ClusteredDataset> {
    let sim = Simulator::new(&settings.design())?;
    Ok(replicate_data(&sim, settings.fit.seed, index)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneTarget {
    Lambda,
    LambdaPrime,
}

impl std::str::FromStr for TuneTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lambda" => Ok(TuneTarget::Lambda),
            "lambda-prime" | "lambda_prime" => Ok(TuneTarget::LambdaPrime),
            _ => Err(format!("expected `lambda` or `lambda-prime`, found {s:?}")),
        }
    }
}

/// Cross-validation scores over a grid for one penalty. Tuning `λ′`
/// first resolves `λ` from `settings`.
pub fn cmd_tune(data: &ClusteredDataset, settings: &FitSettings, target: TuneTarget) -> CliResult<TuneResult> {
    let base = settings.fit_config(0.1, 0.1);
    base.validate()?;
    check_link(data, settings.link)?;
    match target {
        TuneTarget::Lambda => {
            let grid = lambda_grid_sized(data, settings.link, settings.lambda_grid_size)?;
            Ok(cv_lambda_on_grid(data, settings.link, settings.lambda_folds, &grid, settings.seed, base.max_outer)?)
        }
        TuneTarget::LambdaPrime => {
            let lambda = choose_lambda(data, settings.link, &settings.lambda_rule(), settings.seed, base.max_outer)?;
            let nuisance = Nuisance::estimate(data, &settings.fit_config(lambda, 0.1))?;
            Ok(cv_lambda_prime_weighted(
                data,
                &nuisance.weights,
                settings.lambda_prime_folds,
                &settings.lambda_prime_grid,
                settings.seed,
            )?)
        }
    }
}

pub fn tune_csv(result: &TuneResult) -> String {
    let mut out = String::from("penalty,score,chosen\n");
    for (g, s) in result.grid.iter().zip(&result.scores) {
        out.push_str(&format!("{g},{s},{}\n", u8::from(*g == result.chosen)));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveSummary {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub argmin_lambda_prime: f64,
    pub interior_minimum: bool,
    pub cv_conservative_fraction: f64,
}

/// `λ′` tuning curve: estimation error of the CLIME precision estimate
/// against the population precision over a grid.
pub fn cmd_curve(config: &TuningCurveConfig) -> CliResult<(TuningCurve, CurveSummary)> {
    let curve = tuning_curve(config)?;
    let arg = curve.argmin();
    let summary = CurveSummary {
        command: "curve".into(),
        version: VERSION.into(),
        config: config_map(curve_pairs(config)),
        argmin_lambda_prime: curve.grid[arg],
        interior_minimum: arg > 0 && arg + 1 < curve.grid.len(),
        cv_conservative_fraction: curve.cv_conservative_fraction(),
    };
    Ok((curve, summary))
}
