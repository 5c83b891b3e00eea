use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dsgee_cli::commands::{
    cmd_curve, cmd_fit, cmd_generate, cmd_genes, cmd_simulate, cmd_tune, tune_csv, GenesOptions, TuneTarget,
};
use dsgee_cli::config::{curve_settings, DesignSettings, FitSettings, KeyValues, Penalty, PrimePenalty};
use dsgee_cli::genes::{synthetic_genes, SyntheticGenes};
use dsgee_cli::{load_csv, save_csv, CliError, CliResult};
use dsgee_core::{CorrelationKind, LinkFunction, SplitMode};

#[derive(Parser)]
#[command(name = "dsgee", version, about = "De-sparsified Dantzig-selector inference for clustered data")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every coordinate of a long-format CSV dataset.
    Fit {
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Add Benjamini-Hochberg adjusted p-values.
        #[arg(long)]
        bh: bool,
    },
    /// Expression-study pipeline: variation filter, standardize, fit, BH.
    Genes {
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Drop covariates with coefficient of variation below this.
        #[arg(long, default_value_t = 0.1)]
        cv_threshold: f64,
        /// Flag rows whose adjusted p-value is below this.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Monte Carlo study from a design file.
    Simulate {
        design: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output prefix; writes `<out>.csv` and `<out>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        record_time: bool,
    },
    /// Cross-validation scores for one penalty.
    Tune {
        data: PathBuf,
        /// `lambda` or `lambda-prime`.
        #[arg(long, default_value = "lambda-prime")]
        which: TuneTarget,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Tuning curve of the precision estimate over a λ′ grid.
    Curve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one simulated dataset as CSV.
    Generate {
        design: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Replicate index within the study.
        #[arg(long, default_value_t = 0)]
        replicate: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic expression dataset (28 subjects, 4 visits, 300 genes).
    SynthGenes {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corr: Option<CorrelationKind>,
    #[arg(long)]
    link: Option<LinkFunction>,
    /// Number, `rel:<fraction of λ_max>` or `cv`.
    #[arg(long)]
    lambda: Option<Penalty>,
    /// Number or `cv`.
    #[arg(long)]
    lambda_prime: Option<PrimePenalty>,
    /// Cross-validate both penalties (unless set explicitly).
    #[arg(long)]
    tune: bool,
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    adjust_variance: bool,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include wall time in the JSON report.
    #[arg(long)]
    record_time: bool,
}

impl ModelArgs {
    fn settings(&self) -> CliResult<FitSettings> {
        let mut s = FitSettings::default();
        if let Some(path) = &self.config {
            let kv = KeyValues::load(path)?;
            s.apply(&kv)?;
            kv.reject_unused()?;
        }
        if self.tune {
            s.lambda = Penalty::Cv;
            s.lambda_prime = PrimePenalty::Cv;
        }
        if let Some(v) = self.corr {
            s.correlation = v;
        }
        if let Some(v) = self.link {
            s.link = v;
        }
        if let Some(v) = self.lambda {
            s.lambda = v;
        }
        if let Some(v) = self.lambda_prime {
            s.lambda_prime = v;
        }
        if let Some(v) = self.split {
            s.split = v;
        }
        if self.adjust_variance {
            s.adjust_variance = true;
        }
        if let Some(v) = self.level {
            s.level = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        Ok(s)
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// CSV to `<out>.csv` and JSON to `<out>.json`, or CSV to stdout.
fn emit(out: Option<&Path>, csv: &str, json: &str) -> CliResult<()> {
    match out {
        Some(prefix) => {
            write_file(&with_ext(prefix, "csv"), csv)?;
            write_file(&with_ext(prefix, "json"), json)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn load_design(path: &Path, seed: Option<u64>, replicates: Option<usize>) -> CliResult<DesignSettings> {
    let mut d = DesignSettings::from_kv(&KeyValues::load(path)?)?;
    if let Some(s) = seed {
        d.fit.seed = s;
    }
    if let Some(r) = replicates {
        d.replicates = r;
    }
    Ok(d)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Fit { data, model, bh } => {
            let settings = model.settings()?;
            let report = cmd_fit(&load_csv(&data)?, &settings, bh, model.record_time)?;
            emit(model.out.as_deref(), &report.to_csv(), &report.to_json())
        }
        Command::Genes { data, model, cv_threshold, alpha } => {
            let settings = model.settings()?;
            let opts = GenesOptions { cv_threshold, alpha };
            let report = cmd_genes(&load_csv(&data)?, &settings, opts, model.record_time)?;
            let flagged: Vec<&str> = report
                .rows
                .iter()
                .filter(|r| r.flag.contains("significant"))
                .map(|r| r.name.as_str())
                .collect();
            log::info!("{} covariates significant after BH: {}", flagged.len(), flagged.join(", "));
            emit(model.out.as_deref(), &report.to_csv(), &report.to_json())
        }
        Command::Simulate { design, replicates, seed, out, record_time } => {
            let settings = load_design(&design, seed, replicates)?;
            let output = cmd_simulate(&settings, record_time)?;
            emit(out.as_deref(), &output.csv(), &output.to_json())
        }
        Command::Tune { data, which, model } => {
            let settings = model.settings()?;
            let result = cmd_tune(&load_csv(&data)?, &settings, which)?;
            let csv = tune_csv(&result);
            match model.out {
                Some(path) => write_file(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Curve { config, seed, out } => {
            let kv = match config {
                Some(p) => KeyValues::load(p)?,
                None => KeyValues::empty(),
            };
            let (curve, summary) = cmd_curve(&curve_settings(&kv, seed)?)?;
            let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
            json.push('\n');
            emit(out.as_deref(), &curve.to_csv(), &json)
        }
        Command::Generate { design, seed, replicate, out } => {
            let settings = load_design(&design, seed, None)?;
            save_csv(&cmd_generate(&settings, replicate)?, &out)
        }
        Command::SynthGenes { seed, out } => {
            let spec = SyntheticGenes { seed, ..SyntheticGenes::default() };
            save_csv(&synthetic_genes(&spec)?, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
