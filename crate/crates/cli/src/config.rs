//! Flat `key = value` configuration files.
//!
//! ```text
//! # comments run to end of line
//! [penalties]
//! lambda = cv
//! lambda_prime = 0.14
//! ```
//!
//! Section headers only group keys for the reader; every key is global and
//! may appear once. Unknown keys are rejected with their line number.

use std::cell::Cell;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use dsgee_core::simulate::{ErrorSpec, LambdaPrimeRule, LambdaRule, McConfig, SimDesign, TuningCurveConfig};
use dsgee_core::tuning::linear_grid;
use dsgee_core::{CorrelationKind, FitConfig, LinkFunction, SplitMode};

use crate::error::{CliError, CliResult};

#[derive(Debug)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    used: Cell<bool>,
}

#[derive(Debug)]
pub struct KeyValues {
    source: String,
    entries: Vec<Entry>,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> CliResult<Self> {
        let err = |line: usize, message: String| CliError::Config { path: source.to_string(), line, message };
        let mut entries: Vec<Entry> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if content.starts_with('[') {
                if !content.ends_with(']') || content.len() < 3 {
                    return Err(err(line, format!("malformed section header {content:?}")));
                }
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(err(line, format!("expected `key = value`, found {content:?}")));
            };
            let key = key.trim();
            let value = value.trim().trim_matches('"');
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(err(line, format!("invalid key {key:?}")));
            }
            if value.is_empty() {
                return Err(err(line, format!("key `{key}` has no value")));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(err(line, format!("key `{key}` already set on line {}", prev.line)));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line,
                used: Cell::new(false),
            });
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> CliResult<Self> {
        let path = path.as_ref();
        let label = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(label.clone(), e))?;
        Self::parse(&text, &label)
    }

    pub fn empty() -> Self {
        Self {
            source: String::new(),
            entries: Vec::new(),
        }
    }

    /// Parses `key` with `parse` if present, marking it consumed.
    pub fn get_with<T>(&self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> CliResult<Option<T>> {
        let Some(e) = self.entries.iter().find(|e| e.key == key) else {
            return Ok(None);
        };
        e.used.set(true);
        parse(&e.value).map(Some).map_err(|message| CliError::Config {
            path: self.source.clone(),
            line: e.line,
            message: format!("`{key}`: {message}"),
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get_with(key, |v| v.parse::<T>().map_err(|e| format!("{e} (value {v:?})")))
    }

    /// Fails on the first key nobody asked for.
    pub fn reject_unused(&self) -> CliResult<()> {
        match self.entries.iter().find(|e| !e.used.get()) {
            Some(e) => Err(CliError::Config {
                path: self.source.clone(),
                line: e.line,
                message: format!("unknown key `{}`", e.key),
            }),
            None => Ok(()),
        }
    }
}

pub fn parse_bool(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, found {v:?}")),
    }
}

/// `lo:hi:size` (equally spaced, inclusive) or a comma-separated list.
pub fn parse_grid(v: &str) -> Result<Vec<f64>, String> {
    let grid: Vec<f64> = if v.contains(':') {
        let parts: Vec<&str> = v.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected lo:hi:size, found {v:?}"));
        }
        let lo: f64 = parts[0].parse().map_err(|_| format!("bad lower end {:?}", parts[0]))?;
        let hi: f64 = parts[1].parse().map_err(|_| format!("bad upper end {:?}", parts[1]))?;
        let size: usize = parts[2].parse().map_err(|_| format!("bad size {:?}", parts[2]))?;
        if size == 0 || !(lo > 0.0 && hi >= lo) {
            return Err(format!("grid {v:?} must satisfy 0 < lo ≤ hi and size ≥ 1"));
        }
        linear_grid(lo, hi, size)
    } else {
        v.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad grid value {s:?}")))
            .collect::<Result<_, _>>()?
    };
    if grid.is_empty() || grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err("grid values must be positive and finite".into());
    }
    Ok(grid)
}

fn grid_to_string(grid: &[f64]) -> String {
    grid.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// How `λ` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Value(f64),
    /// Fraction of the data's `λ_max`.
    Relative(f64),
    Cv,
}

impl FromStr for Penalty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let positive = |t: &str| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| format!("expected a positive number, `rel:<fraction>` or `cv`, found {s:?}"))
        };
        match s {
            "cv" => Ok(Penalty::Cv),
            _ => match s.strip_prefix("rel:") {
                Some(f) => positive(f).map(Penalty::Relative),
                None => positive(s).map(Penalty::Value),
            },
        }
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Penalty::Value(v) => write!(f, "{v}"),
            Penalty::Relative(v) => write!(f, "rel:{v}"),
            Penalty::Cv => f.write_str("cv"),
        }
    }
}

/// How `λ′` is set. `Pilot` is only meaningful for simulation designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimePenalty {
    Value(f64),
    Cv,
    Pilot,
}

impl FromStr for PrimePenalty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cv" => Ok(PrimePenalty::Cv),
            "pilot" => Ok(PrimePenalty::Pilot),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .map(PrimePenalty::Value)
                .ok_or_else(|| format!("expected a positive number, `cv` or `pilot`, found {s:?}")),
        }
    }
}

impl fmt::Display for PrimePenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimePenalty::Value(v) => write!(f, "{v}"),
            PrimePenalty::Cv => f.write_str("cv"),
            PrimePenalty::Pilot => f.write_str("pilot"),
        }
    }
}

/// Model and tuning settings shared by `fit`, `genes` and `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub correlation: CorrelationKind,
    pub link: LinkFunction,
    pub lambda: Penalty,
    pub lambda_prime: PrimePenalty,
    pub lambda_folds: usize,
    pub lambda_grid_size: usize,
    pub lambda_prime_folds: usize,
    pub lambda_prime_grid: Vec<f64>,
    pub split: SplitMode,
    pub adjust_variance: bool,
    pub level: f64,
    pub normalize_by_direction: bool,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            correlation: CorrelationKind::Ar1,
            link: LinkFunction::Identity,
            lambda: Penalty::Cv,
            lambda_prime: PrimePenalty::Cv,
            lambda_folds: 5,
            lambda_grid_size: 10,
            lambda_prime_folds: 10,
            lambda_prime_grid: linear_grid(0.01, 0.5, 5),
            split: SplitMode::None,
            adjust_variance: false,
            level: 0.95,
            normalize_by_direction: false,
            seed: 1,
        }
    }
}

impl FitSettings {
    /// Overrides fields present in `kv`.
    pub fn apply(&mut self, kv: &KeyValues) -> CliResult<()> {
        if let Some(v) = kv.get("correlation")? {
            self.correlation = v;
        }
        if let Some(v) = kv.get("link")? {
            self.link = v;
        }
        if let Some(v) = kv.get("lambda")? {
            self.lambda = v;
        }
        if let Some(v) = kv.get("lambda_prime")? {
            self.lambda_prime = v;
        }
        if let Some(v) = kv.get("lambda_folds")? {
            self.lambda_folds = v;
        }
        if let Some(v) = kv.get("lambda_grid_size")? {
            self.lambda_grid_size = v;
        }
        if let Some(v) = kv.get("lambda_prime_folds")? {
            self.lambda_prime_folds = v;
        }
        if let Some(v) = kv.get_with("lambda_prime_grid", parse_grid)? {
            self.lambda_prime_grid = v;
        }
        if let Some(v) = kv.get("split")? {
            self.split = v;
        }
        if let Some(v) = kv.get_with("adjust_variance", parse_bool)? {
            self.adjust_variance = v;
        }
        if let Some(v) = kv.get("level")? {
            self.level = v;
        }
        if let Some(v) = kv.get_with("normalize_by_direction", parse_bool)? {
            self.normalize_by_direction = v;
        }
        if let Some(v) = kv.get("seed")? {
            self.seed = v;
        }
        Ok(())
    }

    /// Resolved settings as `key = value` pairs, re-readable by [`apply`](Self::apply).
    pub fn pairs(&self) -> Vec<(String, String)> {
        [
            ("correlation", self.correlation.to_string()),
            ("link", self.link.to_string()),
            ("lambda", self.lambda.to_string()),
            ("lambda_prime", self.lambda_prime.to_string()),
            ("lambda_folds", self.lambda_folds.to_string()),
            ("lambda_grid_size", self.lambda_grid_size.to_string()),
            ("lambda_prime_folds", self.lambda_prime_folds.to_string()),
            ("lambda_prime_grid", grid_to_string(&self.lambda_prime_grid)),
            ("split", self.split.to_string()),
            ("adjust_variance", self.adjust_variance.to_string()),
            ("level", self.level.to_string()),
            ("normalize_by_direction", self.normalize_by_direction.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Core configuration with the given penalties.
    pub fn fit_config(&self, lambda: f64, lambda_prime: f64) -> FitConfig {
        FitConfig {
            lambda,
            lambda_prime,
            correlation: self.correlation,
            link: self.link,
            split_mode: self.split,
            adjust_variance: self.adjust_variance,
            ci_level: self.level,
            normalize_by_direction: self.normalize_by_direction,
            ..FitConfig::default()
        }
    }

    pub fn lambda_rule(&self) -> LambdaRule {
        match self.lambda {
            Penalty::Value(v) => LambdaRule::Fixed(v),
            Penalty::Relative(f) => LambdaRule::RelativeToMax(f),
            Penalty::Cv => LambdaRule::CrossValidated {
                folds: self.lambda_folds,
                grid_size: self.lambda_grid_size,
            },
        }
    }
}

/// A Monte Carlo design file: data-generating process plus fit settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSettings {
    pub binary: bool,
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub ones: usize,
    pub row_rho: f64,
    pub col_rho: f64,
    pub error_rho: f64,
    pub dependence: f64,
    pub intercept: bool,
    pub replicates: usize,
    pub pilots: usize,
    pub with_adjusted: bool,
    pub fit: FitSettings,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            binary: false,
            n: 100,
            k: 4,
            p: 100,
            ones: 3,
            row_rho: 0.5,
            col_rho: 0.5,
            error_rho: 0.3,
            dependence: 0.1,
            intercept: true,
            replicates: 250,
            pilots: 3,
            with_adjusted: false,
            fit: FitSettings::default(),
        }
    }
}

fn parse_outcome(v: &str) -> Result<bool, String> {
    match v {
        "continuous" => Ok(false),
        "binary" => Ok(true),
        _ => Err(format!("expected `continuous` or `binary`, found {v:?}")),
    }
}

impl DesignSettings {
    pub fn from_kv(kv: &KeyValues) -> CliResult<Self> {
        let mut d = Self::default();
        if let Some(v) = kv.get_with("outcome", parse_outcome)? {
            d.binary = v;
        }
        macro_rules! field {
            ($name:ident) => {
                if let Some(v) = kv.get(stringify!($name))? {
                    d.$name = v;
                }
            };
        }
        field!(n);
        field!(k);
        field!(p);
        field!(ones);
        field!(row_rho);
        field!(col_rho);
        field!(error_rho);
        field!(dependence);
        field!(replicates);
        field!(pilots);
        if let Some(v) = kv.get_with("intercept", parse_bool)? {
            d.intercept = v;
        }
        if let Some(v) = kv.get_with("with_adjusted", parse_bool)? {
            d.with_adjusted = v;
        }
        if kv.get::<String>("link")?.is_some() {
            return Err(CliError::Usage("simulation designs set the link through `outcome`".into()));
        }
        d.fit.apply(kv)?;
        d.fit.link = if d.binary { LinkFunction::Logit } else { LinkFunction::Identity };
        kv.reject_unused()?;
        d.design().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(d)
    }

    pub fn design(&self) -> SimDesign {
        let base = if self.binary {
            SimDesign::binary(self.n, self.p, self.ones, self.fit.seed)
        } else {
            SimDesign::continuous(self.n, self.p, self.ones, self.fit.seed)
        };
        let mut beta = SimDesign::reference_beta(self.p, self.ones);
        if !self.intercept && !beta.is_empty() {
            // Without an intercept, coordinate 0 is an ordinary null covariate.
            beta[0] = 0.0;
        }
        SimDesign {
            k: self.k,
            row_rho: self.row_rho,
            col_rho: self.col_rho,
            intercept: self.intercept,
            beta_true: beta,
            error_spec: if self.binary {
                ErrorSpec::BinaryLatent { dependence: self.dependence }
            } else {
                ErrorSpec::GaussianAr { rho: self.error_rho }
            },
            ..base
        }
    }

    pub fn mc_config(&self) -> McConfig {
        let f = &self.fit;
        let lambda_prime = match f.lambda_prime {
            PrimePenalty::Value(v) => LambdaPrimeRule::Fixed(v),
            PrimePenalty::Cv => LambdaPrimeRule::CrossValidated {
                folds: f.lambda_prime_folds,
                grid: f.lambda_prime_grid.clone(),
            },
            PrimePenalty::Pilot => LambdaPrimeRule::Pilot {
                folds: f.lambda_prime_folds,
                grid: f.lambda_prime_grid.clone(),
                pilots: self.pilots,
            },
        };
        McConfig {
            fit: f.fit_config(0.0, 0.0),
            lambda: f.lambda_rule(),
            lambda_prime,
            replicates: self.replicates,
            seed: f.seed,
            with_adjusted: self.with_adjusted,
        }
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = [
            ("outcome", if self.binary { "binary" } else { "continuous" }.to_string()),
            ("n", self.n.to_string()),
            ("k", self.k.to_string()),
            ("p", self.p.to_string()),
            ("ones", self.ones.to_string()),
            ("row_rho", self.row_rho.to_string()),
            ("col_rho", self.col_rho.to_string()),
            ("error_rho", self.error_rho.to_string()),
            ("dependence", self.dependence.to_string()),
            ("intercept", self.intercept.to_string()),
            ("replicates", self.replicates.to_string()),
            ("pilots", self.pilots.to_string()),
            ("with_adjusted", self.with_adjusted.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(self.fit.pairs().into_iter().filter(|(k, _)| k != "link"));
        out
    }
}

/// Settings for the `λ′` tuning-curve study.
pub fn curve_settings(kv: &KeyValues, seed: u64) -> CliResult<TuningCurveConfig> {
    let mut c = TuningCurveConfig::reduced(seed);
    macro_rules! field {
        ($key:literal, $field:ident) => {
            if let Some(v) = kv.get($key)? {
                c.$field = v;
            }
        };
    }
    field!("n", n);
    field!("k", k);
    field!("p", p);
    field!("replicates", replicates);
    field!("folds", folds);
    field!("error_rho", error_rho);
    field!("covariate_rho", covariate_rho);
    field!("seed", seed);
    if let Some(g) = kv.get_with("grid", parse_grid)? {
        c.grid = g;
    }
    kv.reject_unused()?;
    Ok(c)
}

pub fn curve_pairs(c: &TuningCurveConfig) -> Vec<(String, String)> {
    [
        ("n", c.n.to_string()),
        ("k", c.k.to_string()),
        ("p", c.p.to_string()),
        ("replicates", c.replicates.to_string()),
        ("folds", c.folds.to_string()),
        ("error_rho", c.error_rho.to_string()),
        ("covariate_rho", c.covariate_rho.to_string()),
        ("seed", c.seed.to_string()),
        ("grid", grid_to_string(&c.grid)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Renders pairs in the file format accepted by [`KeyValues::parse`].
pub fn render(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
