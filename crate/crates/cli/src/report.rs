//! Per-coordinate analysis reports (CSV and JSON).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use dsgee_core::inference::bh_adjust;
use dsgee_core::FitOutcome;

pub const CSV_HEADER: &str = "coord,name,estimate,se,ci_low,ci_high,z,p,p_adj,flag";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub coord: usize,
    pub name: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
    pub p_adj: Option<f64>,
    /// `;`-separated tags: `intercept`, `adjusted`, `significant`, `failed:<kind>`.
    pub flag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub k: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltySummary {
    pub lambda: f64,
    pub lambda_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Resolved settings; feeding them back through `--config` reproduces the run.
    pub config: BTreeMap<String, String>,
    pub dataset: DatasetSummary,
    pub penalties: PenaltySummary,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dropped_columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

fn add_tag(flag: &mut String, tag: &str) {
    if !flag.is_empty() {
        flag.push(';');
    }
    flag.push_str(tag);
}

/// Rows for every fitted coordinate; warnings for failures and per-coordinate notes.
pub fn rows_from_outcome(outcome: &FitOutcome) -> (Vec<ReportRow>, Vec<String>) {
    let mut warnings = Vec::new();
    let rows = outcome
        .coordinates
        .iter()
        .map(|c| {
            let mut flag = String::new();
            if c.is_intercept {
                add_tag(&mut flag, "intercept");
            }
            for w in &c.warnings {
                warnings.push(format!("coordinate {} ({}): {w}", c.j, c.name));
            }
            match &c.inference {
                Some(inf) => {
                    if inf.adjusted {
                        add_tag(&mut flag, "adjusted");
                    }
                    ReportRow {
                        coord: c.j,
                        name: c.name.clone(),
                        estimate: Some(inf.t_hat),
                        se: Some(inf.se),
                        ci_low: Some(inf.ci_low),
                        ci_high: Some(inf.ci_high),
                        z: Some(inf.z),
                        p: Some(inf.p_value),
                        p_adj: None,
                        flag,
                    }
                }
                None => {
                    let kind = c.error_kind.as_deref().unwrap_or("Unknown");
                    add_tag(&mut flag, &format!("failed:{kind}"));
                    warnings.push(format!(
                        "coordinate {} ({}) failed: {}",
                        c.j,
                        c.name,
                        c.error.as_deref().unwrap_or("unknown error")
                    ));
                    ReportRow {
                        coord: c.j,
                        name: c.name.clone(),
                        estimate: None,
                        se: None,
                        ci_low: None,
                        ci_high: None,
                        z: None,
                        p: None,
                        p_adj: None,
                        flag,
                    }
                }
            }
        })
        .collect();
    (rows, warnings)
}

fn is_intercept(row: &ReportRow) -> bool {
    row.flag.split(';').any(|t| t == "intercept")
}

/// Benjamini–Hochberg over the non-intercept rows that have a p-value; with
/// `alpha`, rows whose adjusted p-value falls below it are tagged `significant`.
pub fn apply_bh(rows: &mut [ReportRow], alpha: Option<f64>) {
    let idx: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].p.is_some() && !is_intercept(&rows[i]))
        .collect();
    let p: Vec<f64> = idx.iter().map(|&i| rows[i].p.unwrap_or(1.0)).collect();
    let adj = bh_adjust(&p);
    for (&i, q) in idx.iter().zip(adj) {
        rows[i].p_adj = Some(q);
        if alpha.is_some_and(|a| q < a) {
            add_tag(&mut rows[i].flag, "significant");
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl AnalysisReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.coord,
                quote(&r.name),
                cell(r.estimate),
                cell(r.se),
                cell(r.ci_low),
                cell(r.ci_high),
                cell(r.z),
                cell(r.p),
                cell(r.p_adj),
                quote(&r.flag)
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.estimate.is_none()).count()
    }
}
