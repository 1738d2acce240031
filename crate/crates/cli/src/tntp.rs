//! Reader for the TNTP `*_net.tntp` / `*_trips.tntp` format used by the
//! public transportation network test collections.
//!
//! Link rows are `init term capacity length fft b power speed toll type ;`.
//! The TNTP cost `fft·(1 + b·(f/capacity)^power)` is BPR with `ρ = b` and
//! `mu_power = 1/power`; links with `b = 0` or `power = 0` get constant cost.

use std::fs;
use std::path::Path;

use eqk_core::network::{EdgeRecord, TripRecord};
use eqk_core::CostParams;

use crate::error::{CliError, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Lines after `<END OF METADATA>` with comments (`~ …`) stripped, paired
/// with their 1-based line numbers.
fn body(text: &str) -> Vec<(usize, &str)> {
    let has_meta = text.contains("<END OF METADATA>");
    let mut in_body = !has_meta;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if !in_body {
            in_body = raw.contains("<END OF METADATA>");
            continue;
        }
        let line = raw.split('~').next().unwrap_or("").trim();
        if !line.is_empty() {
            out.push((i + 1, line));
        }
    }
    out
}

pub fn read_net(path: &Path) -> Result<Vec<EdgeRecord>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (line, content) in body(&text) {
        let bad = |message: String| CliError::Tntp { path: path.to_path_buf(), line, message };
        let fields: Vec<&str> = content.trim_end_matches(';').split_whitespace().collect();
        if fields.len() < 7 {
            return Err(bad(format!("expected at least 7 fields, found {}", fields.len())));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            fields[k].parse::<f64>().map_err(|_| bad(format!("field `{name}`: not a number: `{}`", fields[k])))
        };
        let capacity = num(2, "capacity")?;
        let fft = num(4, "free flow time")?;
        let b = num(5, "b")?;
        let power = num(6, "power")?;
        if fft.is_nan() || fft <= 0.0 {
            return Err(bad(format!("free flow time must be positive, got {fft}")));
        }
        let cost = if b == 0.0 || power == 0.0 {
            CostParams::bpr(fft, capacity, 0.0, 1.0)
        } else {
            CostParams::bpr(fft, capacity, b, 1.0 / power)
        };
        edges.push(EdgeRecord { tail: fields[0].to_string(), head: fields[1].to_string(), cost });
    }
    Ok(edges)
}

/// Reads `Origin o` blocks of `dest : demand;` entries. Zero demands and
/// intrazonal entries are dropped.
pub fn read_trips(path: &Path) -> Result<Vec<TripRecord>> {
    let text = read(path)?;
    let mut trips = Vec::new();
    let mut origin: Option<String> = None;
    for (line, content) in body(&text) {
        let bad = |message: String| CliError::Tntp { path: path.to_path_buf(), line, message };
        if let Some(rest) = content.strip_prefix("Origin") {
            origin = Some(rest.trim().to_string());
            continue;
        }
        let o = origin.as_ref().ok_or_else(|| bad("demand entry before any `Origin` line".into()))?;
        for entry in content.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (dest, value) = entry.split_once(':').ok_or_else(|| bad(format!("malformed entry `{entry}`")))?;
            let dest = dest.trim();
            let demand: f64 = value.trim().parse().map_err(|_| bad(format!("demand `{}` is not a number", value.trim())))?;
            if demand > 0.0 && dest != o {
                trips.push(TripRecord { origin: o.clone(), destination: dest.to_string(), demand });
            }
        }
    }
    Ok(trips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_small_files() {
        let dir = std::env::temp_dir().join(format!("eqk-tntp-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let net = dir.join("net.tntp");
        let trips = dir.join("trips.tntp");
        let mut f = fs::File::create(&net).unwrap();
        writeln!(f, "<NUMBER OF LINKS> 2\n<END OF METADATA>\n~ init term cap len fft b power speed toll type ;").unwrap();
        writeln!(f, "\t1\t2\t100\t1\t6\t0.15\t4\t0\t0\t1\t;").unwrap();
        writeln!(f, "\t2\t1\t50\t1\t3\t0\t4\t0\t0\t1\t;").unwrap();
        let mut g = fs::File::create(&trips).unwrap();
        writeln!(g, "<END OF METADATA>\n\nOrigin 1\n    1 :    0.0;    2 :  120.5;\nOrigin 2\n 1 : 0.0;").unwrap();
        let e = read_net(&net).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].cost, CostParams::bpr(6.0, 100.0, 0.15, 0.25));
        assert_eq!(e[1].cost.rho, 0.0);
        let t = read_trips(&trips).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].origin.as_str(), t[0].destination.as_str(), t[0].demand), ("1", "2", 120.5));
        fs::remove_dir_all(&dir).unwrap();
    }
}
