use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use dsgee_cli::commands::{cmd_fit, cmd_generate, cmd_simulate};
use dsgee_cli::config::{DesignSettings, FitSettings, KeyValues, Penalty, PrimePenalty};
use dsgee_cli::{load_csv, save_csv};

fn manifest() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn dsgee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsgee")).args(args).output().expect("binary runs")
}

fn small_design() -> DesignSettings {
    let text = "outcome = continuous\nn = 30\np = 15\nreplicates = 2\nseed = 9\n";
    DesignSettings::from_kv(&KeyValues::parse(text, "inline").unwrap()).unwrap()
}

fn fixed_settings() -> FitSettings {
    FitSettings {
        lambda: Penalty::Relative(0.05),
        lambda_prime: PrimePenalty::Value(0.15),
        seed: 3,
        ..FitSettings::default()
    }
}

fn golden_path() -> PathBuf {
    manifest().join("tests/golden/fit_small.csv")
}

/// Set `DSGEE_BLESS=1` to rewrite the golden file after an intended change.
#[test]
fn fit_matches_golden_report() {
    let data = cmd_generate(&small_design(), 0).unwrap();
    let csv = cmd_fit(&data, &fixed_settings(), true, false).unwrap().to_csv();
    if std::env::var_os("DSGEE_BLESS").is_some() {
        std::fs::write(golden_path(), &csv).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden file present");
    assert_eq!(csv, golden);
}

#[test]
fn saved_dataset_reloads_to_the_same_fit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let data = cmd_generate(&small_design(), 1).unwrap();
    save_csv(&data, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back, data);
    let a = cmd_fit(&data, &fixed_settings(), false, false).unwrap();
    let b = cmd_fit(&back, &fixed_settings(), false, false).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn smoke_design_runs_quickly() {
    let kv = KeyValues::load(manifest().join("designs/smoke.tomlish")).unwrap();
    let design = DesignSettings::from_kv(&kv).unwrap();
    let start = Instant::now();
    let out = cmd_simulate(&design, false).unwrap();
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
    assert_eq!(out.successes, 2);
    assert!(out.csv().starts_with("group,metric,value,n_reps\nnonzero,abs_bias,"));
}

#[test]
fn every_bundled_design_parses() {
    let mut count = 0;
    for entry in std::fs::read_dir(manifest().join("designs")).unwrap() {
        let path = entry.unwrap().path();
        let kv = KeyValues::load(&path).unwrap();
        if path.file_stem().is_some_and(|s| s == "tuning_curve") {
            dsgee_cli::config::curve_settings(&kv, 1).unwrap();
        } else {
            DesignSettings::from_kv(&kv).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        count += 1;
    }
    assert!(count >= 7);
}

#[test]
fn missing_dataset_exits_1() {
    let out = dsgee(&["fit", "/nonexistent/data.csv", "--lambda", "0.1", "--lambda-prime", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.csv"));
}

#[test]
fn bad_cell_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "cluster_id,time,y,x1\na,0,1,1\na,1,2,NA\nb,0,1,2\nb,1,0,1\n").unwrap();
    let out = dsgee(&["fit", path.to_str().unwrap(), "--lambda", "0.1", "--lambda-prime", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3") && err.contains("x1"), "{err}");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(dsgee(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dsgee(&["fit"]).status.code(), Some(1));
    assert_eq!(dsgee(&["fit", "x.csv", "--lambda", "-3"]).status.code(), Some(1));
    assert_eq!(dsgee(&["--help"]).status.code(), Some(0));
}

#[test]
fn generate_fit_and_tune_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("d.tomlish");
    std::fs::write(&design, "outcome = continuous\nn = 30\np = 15\nseed = 4\n").unwrap();
    let data = dir.path().join("d.csv");
    let out = dsgee(&["generate", design.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(out.status.success());

    let prefix = dir.path().join("report");
    let out = dsgee(&[
        "fit",
        data.to_str().unwrap(),
        "--lambda",
        "rel:0.05",
        "--lambda-prime",
        "0.15",
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["dataset"]["p"], 15);
    assert_eq!(json["config"]["lambda"], "rel:0.05");

    let out = dsgee(&["tune", data.to_str().unwrap(), "--which", "lambda-prime", "--lambda", "rel:0.05"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("penalty,score,chosen\n"));
    assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), 1);
}
