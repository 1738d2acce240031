//! Tables on disk: edge and trip CSVs in, flows, path sets and JSON out.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use eqk_core::network::{load_network, EdgeRecord, TripRecord};
use eqk_core::paths::PathSet;
use eqk_core::{CostModel, CostParams, Network};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Cost model names accepted in the `model` column and by `--model`.
pub fn parse_model(s: &str) -> Option<CostModel> {
    match s.trim().to_ascii_lowercase().as_str() {
        "bpr" => Some(CostModel::Bpr),
        "sd" | "stable-dynamics" | "stable_dynamics" => Some(CostModel::StableDynamics),
        _ => None,
    }
}

pub fn model_name(model: CostModel) -> &'static str {
    match model {
        CostModel::Bpr => "bpr",
        CostModel::StableDynamics => "sd",
    }
}

/// Decimal form with 17 significant digits, enough to reproduce any `f64`.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[derive(Debug, Deserialize)]
struct EdgeRow {
    tail: String,
    head: String,
    t_free: f64,
    capacity: f64,
    rho: Option<f64>,
    mu_power: Option<f64>,
    model: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TripRow {
    pub origin: String,
    pub destination: String,
    pub demand: f64,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file))
}

fn csv_error(path: &Path, row: usize, err: csv::Error) -> CliError {
    CliError::Csv { path: path.to_path_buf(), row, message: err.to_string() }
}

/// Reads `tail,head,t_free,capacity,rho,mu_power,model`. `model_override`
/// replaces the per-row model; rows without a model are BPR.
pub fn read_edges(path: &Path, model_override: Option<CostModel>) -> Result<Vec<EdgeRecord>> {
    let mut out = Vec::new();
    for (i, row) in reader(path)?.deserialize::<EdgeRow>().enumerate() {
        let row_no = i + 1;
        let r = row.map_err(|e| csv_error(path, row_no, e))?;
        let bad = |message: String| CliError::Csv { path: path.to_path_buf(), row: row_no, message };
        let listed = match r.model.as_deref().filter(|s| !s.is_empty()) {
            Some(s) => Some(parse_model(s).ok_or_else(|| bad(format!("column `model`: unknown cost model `{s}`")))?),
            None => None,
        };
        let cost = match model_override.or(listed).unwrap_or(CostModel::Bpr) {
            CostModel::StableDynamics => CostParams::stable_dynamics(r.t_free, r.capacity),
            CostModel::Bpr => {
                let rho = r.rho.ok_or_else(|| bad("column `rho`: required for BPR edges".into()))?;
                let mu = r.mu_power.ok_or_else(|| bad("column `mu_power`: required for BPR edges".into()))?;
                CostParams::bpr(r.t_free, r.capacity, rho, mu)
            }
        };
        out.push(EdgeRecord { tail: r.tail, head: r.head, cost });
    }
    Ok(out)
}

pub fn read_trips(path: &Path) -> Result<Vec<TripRecord>> {
    let mut out = Vec::new();
    for (i, row) in reader(path)?.deserialize::<TripRow>().enumerate() {
        let r = row.map_err(|e| csv_error(path, i + 1, e))?;
        out.push(TripRecord { origin: r.origin, destination: r.destination, demand: r.demand });
    }
    Ok(out)
}

/// Reads both tables and builds the network.
pub fn load(edges: &Path, trips: &Path, model_override: Option<CostModel>) -> Result<Network> {
    let e = read_edges(edges, model_override)?;
    let t = read_trips(trips)?;
    load_network(&e, &t).map_err(|err| {
        let file = match &err {
            eqk_core::Error::InvalidRecord { column, .. }
                if matches!(column.as_str(), "origin" | "destination" | "demand") =>
            {
                trips
            }
            eqk_core::Error::InvalidRecord { .. } => edges,
            _ => trips,
        };
        CliError::core(file.display().to_string(), err)
    })
}

pub fn write_edges(path: &Path, edges: &[EdgeRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, 0, e);
    w.write_record(["tail", "head", "t_free", "capacity", "rho", "mu_power", "model"]).map_err(io)?;
    for r in edges {
        let c = &r.cost;
        let (rho, mu) = match c.model {
            CostModel::Bpr => (fmt17(c.rho), fmt17(c.mu_power)),
            CostModel::StableDynamics => (String::new(), String::new()),
        };
        w.write_record([
            r.tail.clone(),
            r.head.clone(),
            fmt17(c.t_free),
            fmt17(c.capacity),
            rho,
            mu,
            model_name(c.model).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_trips(path: &Path, trips: &[TripRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, 0, e);
    w.write_record(["origin", "destination", "demand"]).map_err(io)?;
    for t in trips {
        w.write_record([t.origin.clone(), t.destination.clone(), fmt17(t.demand)]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes `edge_index,tail,head,flow,time`.
pub fn write_flows(path: &Path, network: &Network, flow: &[f64], time: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, 0, e);
    w.write_record(["edge_index", "tail", "head", "flow", "time"]).map_err(io)?;
    for (e, edge) in network.edges().iter().enumerate() {
        w.write_record([
            e.to_string(),
            network.vertex_name(edge.tail).to_string(),
            network.vertex_name(edge.head).to_string(),
            fmt17(flow[e]),
            fmt17(time[e]),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Deserialize)]
struct IndexedRow {
    edge_index: usize,
    flow: Option<f64>,
    time: Option<f64>,
}

/// One column of a table keyed by `edge_index` (a flows CSV, or a t-file
/// with just `edge_index,time`). Every edge must appear exactly once.
fn read_indexed(path: &Path, m: usize, column: &str) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; m];
    for (i, row) in reader(path)?.deserialize::<IndexedRow>().enumerate() {
        let row_no = i + 1;
        let r = row.map_err(|e| csv_error(path, row_no, e))?;
        let bad = |message: String| CliError::Csv { path: path.to_path_buf(), row: row_no, message };
        let value = match column {
            "flow" => r.flow,
            _ => r.time,
        }
        .ok_or_else(|| bad(format!("column `{column}` is missing")))?;
        if r.edge_index >= m {
            return Err(bad(format!("edge_index {} out of range for {m} edges", r.edge_index)));
        }
        if !out[r.edge_index].is_nan() {
            return Err(bad(format!("edge_index {} listed twice", r.edge_index)));
        }
        out[r.edge_index] = value;
    }
    if let Some(e) = out.iter().position(|v| v.is_nan()) {
        return Err(CliError::Csv { path: path.to_path_buf(), row: 0, message: format!("edge {e} has no value") });
    }
    Ok(out)
}

pub fn read_times(path: &Path, m: usize) -> Result<Vec<f64>> {
    read_indexed(path, m, "time")
}

pub fn read_flows(path: &Path, m: usize) -> Result<Vec<f64>> {
    read_indexed(path, m, "flow")
}

/// Writes `od_index,path_index,edge_list` with `;`-separated edge indices.
pub fn write_paths(path: &Path, paths: &PathSet) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, 0, e);
    w.write_record(["od_index", "path_index", "edge_list"]).map_err(io)?;
    for od in 0..paths.num_ods() {
        for (k, p) in paths.range(od).enumerate() {
            let list: Vec<String> = paths.path(p).iter().map(|e| e.to_string()).collect();
            w.write_record([od.to_string(), k.to_string(), list.join(";")]).map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Json { path: path.to_path_buf(), source: e })?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, 7.310585786300049, 1e-300, 123456789.12345679, 0.0] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn model_names() {
        assert_eq!(parse_model(" SD "), Some(CostModel::StableDynamics));
        assert_eq!(parse_model("bpr"), Some(CostModel::Bpr));
        assert_eq!(parse_model("linear"), None);
    }
}
