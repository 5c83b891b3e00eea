//! Long-format CSV ingestion and export.
//!
//! One row per observation: `cluster_id,time,y,x1,...,xp`. Clusters keep
//! their first-appearance order and rows within a cluster are sorted by
//! `time`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use dsgee_core::{ClusteredDataset, Matrix};

use crate::error::{CliError, CliResult, DataError};

const CLUSTER_COL: &str = "cluster_id";
const TIME_COL: &str = "time";
const Y_COL: &str = "y";

pub fn load_csv(path: impl AsRef<Path>) -> CliResult<ClusteredDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    read_csv(file, &path.display().to_string())
}

struct Obs {
    time: i64,
    y: f64,
    x: Vec<f64>,
}

pub fn read_csv<R: Read>(reader: R, label: &str) -> CliResult<ClusteredDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(DataError::Empty(label.to_string()).into());
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let c_id = find(CLUSTER_COL)?;
    let c_time = find(TIME_COL)?;
    let c_y = find(Y_COL)?;
    let x_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != c_id && c != c_time && c != c_y)
        .collect();
    let names: Vec<String> = x_cols.iter().map(|&c| header[c].to_string()).collect();

    let mut order: Vec<String> = Vec::new();
    let mut clusters: HashMap<String, Vec<Obs>> = HashMap::new();
    for (idx, record) in rdr.records().enumerate() {
        // Line numbers as seen in an editor: header is line 1.
        let row = idx + 2;
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow { row, expected: header.len(), found: record.len() }.into());
        }
        let number = |c: usize| -> Result<f64, DataError> {
            let cell = &record[c];
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::NonNumericCell {
                    row,
                    column: header[c].to_string(),
                    value: cell.to_string(),
                })
        };
        let time = record[c_time].parse::<i64>().ok().filter(|t| *t >= 0).ok_or_else(|| {
            DataError::NonNumericCell {
                row,
                column: TIME_COL.to_string(),
                value: record[c_time].to_string(),
            }
        })?;
        let y = number(c_y)?;
        let x = x_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>, _>>()?;
        let id = record[c_id].to_string();
        let entry = clusters.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        entry.push(Obs { time, y, x });
    }
    if order.is_empty() {
        return Err(DataError::Empty(label.to_string()).into());
    }

    let k = clusters[&order[0]].len();
    let unbalanced: Vec<String> = order
        .iter()
        .filter(|id| clusters[*id].len() != k)
        .cloned()
        .collect();
    if !unbalanced.is_empty() {
        return Err(DataError::UnbalancedPanel { expected: k, clusters: unbalanced }.into());
    }

    let p = names.len();
    let mut xs = Vec::with_capacity(order.len() * k * p);
    let mut ys = Vec::with_capacity(order.len() * k);
    for id in &order {
        let obs = clusters.get_mut(id).expect("cluster recorded in order");
        obs.sort_by_key(|o| o.time);
        if let Some(w) = obs.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(DataError::DuplicateTime { cluster: id.clone(), time: w[0].time }.into());
        }
        for o in obs.iter() {
            ys.push(o.y);
            xs.extend_from_slice(&o.x);
        }
    }
    let x = Matrix::from_vec(order.len() * k, p, xs)?;
    Ok(ClusteredDataset::new(k, x, ys, order, names)?)
}

/// Writes `data` in the long format read by [`load_csv`]; floats use the
/// shortest representation that round-trips exactly.
pub fn write_csv<W: Write>(data: &ClusteredDataset, writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| CliError::Data(DataError::Csv(e.to_string()));
    let mut header = vec![CLUSTER_COL.to_string(), TIME_COL.to_string(), Y_COL.to_string()];
    header.extend(data.covariate_names().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.n() {
        for t in 0..data.k() {
            let mut rec = Vec::with_capacity(data.p() + 3);
            rec.push(data.cluster_ids()[i].clone());
            rec.push(t.to_string());
            rec.push(format!("{:?}", data.cluster_y(i)[t]));
            rec.extend(data.row(i, t).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| CliError::io("csv output", e))?;
    Ok(())
}

pub fn save_csv(data: &ClusteredDataset, path: impl AsRef<Path>) -> CliResult<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    write_csv(data, std::io::BufWriter::new(file))
}
