//! `eqk psi`: value, per-sink potentials and gradient statistics of
//! `γψ(t/γ)` at a given dual point, printed as JSON.

use std::collections::BTreeMap;

use eqk_core::smoothing::{psi_source_layered, Smoother};
use eqk_core::{DualPoint, Network};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io;
use crate::PsiArgs;

#[derive(Debug, Serialize)]
pub struct OdValue {
    pub od: usize,
    pub origin: String,
    pub destination: String,
    pub demand: f64,
    /// `γψ_w(t/γ)`.
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct SinkTable {
    pub sink: String,
    /// `ordered` on acyclic sinks, `layered` (walks up to the horizon) otherwise.
    pub recursion: &'static str,
    /// `γψ_{jv}` for every vertex `j` that reaches the sink.
    pub potentials: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
pub struct GradientStats {
    pub norm2: f64,
    pub norm_inf: f64,
    pub min: f64,
    /// `Σ_e f_e`, the demand-weighted mean route length in edges.
    pub total: f64,
}

#[derive(Debug, Serialize)]
pub struct LayeredComparison {
    pub horizon: usize,
    pub max_abs: f64,
    pub max_rel: f64,
    /// OD pairs whose sink has a directed cycle; there the layered value
    /// sums walks and is not comparable.
    pub skipped_ods: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct PsiReport {
    pub gamma: f64,
    /// `γψ(t/γ) = Σ_w d_w γψ_w(t/γ)`.
    pub value: f64,
    pub per_od: Vec<OdValue>,
    pub sinks: Vec<SinkTable>,
    pub gradient: GradientStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare_layered: Option<LayeredComparison>,
}

fn core_err(ctx: &'static str) -> impl Fn(eqk_core::Error) -> CliError {
    move |e| CliError::core(ctx, e)
}

pub fn evaluate(network: &Network, dual: &DualPoint, compare_layered: bool) -> Result<PsiReport> {
    let smoother = Smoother::new(network);
    let eval = smoother.evaluate(dual).map_err(core_err("evaluating psi"))?;
    let reach_tables = |w: usize| -> Result<SinkTable> {
        let od = network.ods()[w];
        let pot = smoother.potentials_for_od(dual, w).map_err(core_err("potentials"))?;
        let reaches = network.reaches(od.destination);
        let potentials = (0..network.num_vertices())
            .filter(|&j| reaches[j])
            .map(|j| (network.vertex_name(j).to_string(), pot.value(j)))
            .collect();
        let recursion = if smoother.order_for_od(w).valid { "ordered" } else { "layered" };
        Ok(SinkTable { sink: network.vertex_name(od.destination).to_string(), recursion, potentials })
    };
    let mut seen = Vec::new();
    let mut sinks = Vec::new();
    for (w, od) in network.ods().iter().enumerate() {
        if !seen.contains(&od.destination) {
            seen.push(od.destination);
            sinks.push(reach_tables(w)?);
        }
    }
    let per_od = network
        .ods()
        .iter()
        .enumerate()
        .map(|(w, od)| OdValue {
            od: w,
            origin: network.vertex_name(od.origin).to_string(),
            destination: network.vertex_name(od.destination).to_string(),
            demand: od.demand,
            value: eval.per_od[w],
        })
        .collect();
    let f = &eval.flow.f;
    let gradient = GradientStats {
        norm2: f.iter().map(|v| v * v).sum::<f64>().sqrt(),
        norm_inf: f.iter().fold(0.0, |a, v| a.max(v.abs())),
        min: f.iter().cloned().fold(f64::INFINITY, f64::min),
        total: f.iter().sum(),
    };
    let compare_layered = if compare_layered {
        let horizon = smoother.horizon();
        let (mut max_abs, mut max_rel, mut skipped) = (0.0f64, 0.0f64, Vec::new());
        for (w, od) in network.ods().iter().enumerate() {
            if !smoother.order_for_od(w).valid {
                skipped.push(w);
                continue;
            }
            let layered = psi_source_layered(network, dual, od.origin, horizon).map_err(core_err("layered recursion"))?;
            let diff = (layered.value(od.destination) - eval.per_od[w]).abs();
            max_abs = max_abs.max(diff);
            max_rel = max_rel.max(diff / eval.per_od[w].abs().max(f64::MIN_POSITIVE));
        }
        Some(LayeredComparison { horizon, max_abs, max_rel, skipped_ods: skipped })
    } else {
        None
    };
    Ok(PsiReport { gamma: dual.gamma, value: eval.value, per_od, sinks, gradient, compare_layered })
}

pub fn run(args: &PsiArgs) -> Result<()> {
    let network = io::load(&args.edges, &args.trips, args.model.map(Into::into))?;
    let t = match &args.times {
        Some(path) => io::read_times(path, network.num_edges())?,
        None => network.free_flow_times(),
    };
    let dual = DualPoint::new(t, args.gamma).map_err(|e| CliError::core("dual point", e))?;
    let report = evaluate(&network, &dual, args.compare_layered)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    Ok(())
}
