//! Brute-force references for tests and the verification suite.
//!
//! Nothing here calls the smoothing or solver modules: path enumeration,
//! log-sum-exp, and the fixed-point and bisection loops are written out
//! again from scratch, using only the cost primitives of
//! [`crate::network`]. They are slow and simple on purpose.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::network::{CostModel, Network};
use crate::smoothing::{DualPoint, EdgeFlow};
use crate::{Error, Result};

/// Result of comparing a method's value against an oracle value.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleReport {
    pub quantity: String,
    pub oracle_value: f64,
    pub method_value: f64,
    pub abs_deviation: f64,
    pub rel_deviation: f64,
    /// Passing threshold on the absolute deviation.
    pub abs_tolerance: f64,
    /// Passing threshold on the relative deviation.
    pub rel_tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    /// Passes when either deviation is within its tolerance. A tolerance of
    /// zero disables that criterion.
    pub fn compare(
        quantity: impl Into<String>,
        oracle_value: f64,
        method_value: f64,
        abs_tolerance: f64,
        rel_tolerance: f64,
    ) -> Self {
        let abs_deviation = (oracle_value - method_value).abs();
        let rel_deviation = if oracle_value == 0.0 {
            if abs_deviation == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            abs_deviation / oracle_value.abs()
        };
        let pass = abs_deviation.is_finite()
            && ((abs_tolerance > 0.0 && abs_deviation <= abs_tolerance)
                || (rel_tolerance > 0.0 && rel_deviation <= rel_tolerance)
                || abs_deviation == 0.0);
        Self {
            quantity: quantity.into(),
            oracle_value,
            method_value,
            abs_deviation,
            rel_deviation,
            abs_tolerance,
            rel_tolerance,
            pass,
        }
    }

    /// Wraps a boolean check (`1` for true) so it can be reported uniformly.
    pub fn check(quantity: impl Into<String>, ok: bool) -> Self {
        let v = if ok { 1.0 } else { 0.0 };
        Self {
            quantity: quantity.into(),
            oracle_value: 1.0,
            method_value: v,
            abs_deviation: 1.0 - v,
            rel_deviation: 1.0 - v,
            abs_tolerance: 0.0,
            rel_tolerance: 0.0,
            pass: ok,
        }
    }
}

const MAX_ORACLE_PATHS: usize = 10_000;

/// Every simple path of `od` by recursive depth-first search.
pub fn all_simple_paths(network: &Network, od: usize, limit: usize) -> Result<Vec<Vec<usize>>> {
    fn dfs(
        net: &Network,
        v: usize,
        target: usize,
        visited: &mut Vec<bool>,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        limit: usize,
        od: usize,
    ) -> Result<()> {
        if v == target {
            if out.len() >= limit {
                return Err(Error::TooManyPaths { od, limit });
            }
            out.push(current.clone());
            return Ok(());
        }
        for (e, edge) in net.edges().iter().enumerate() {
            if edge.tail != v || visited[edge.head] {
                continue;
            }
            visited[edge.head] = true;
            current.push(e);
            dfs(net, edge.head, target, visited, current, out, limit, od)?;
            current.pop();
            visited[edge.head] = false;
        }
        Ok(())
    }
    let pair = network.ods()[od];
    let mut visited = vec![false; network.num_vertices()];
    visited[pair.origin] = true;
    let mut out = Vec::new();
    dfs(
        network,
        pair.origin,
        pair.destination,
        &mut visited,
        &mut Vec::new(),
        &mut out,
        limit,
        od,
    )?;
    Ok(out)
}

fn plain_log_sum_exp(v: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in v {
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for &x in v {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// `γψ_w(t/γ)` as `γ · ln Σ_p exp(−g_p(t)/γ)` over explicitly enumerated
/// simple paths (at most 10⁴). For `γ = 0` this is `−min_p g_p(t)`.
pub fn psi_by_enumeration(network: &Network, dual: &DualPoint, od: usize) -> Result<f64> {
    let paths = all_simple_paths(network, od, MAX_ORACLE_PATHS)?;
    let costs: Vec<f64> = paths
        .iter()
        .map(|p| p.iter().map(|&e| dual.t[e]).sum())
        .collect();
    if dual.gamma == 0.0 {
        return Ok(-costs.iter().fold(f64::INFINITY, |a, &b| a.min(b)));
    }
    let scaled: Vec<f64> = costs.iter().map(|c| -c / dual.gamma).collect();
    Ok(dual.gamma * plain_log_sum_exp(&scaled))
}

/// Edge loads of the Gibbs path distribution at `t`, by enumeration.
pub fn gibbs_flow_by_enumeration(network: &Network, dual: &DualPoint) -> Result<EdgeFlow> {
    let mut f = vec![0.0; network.num_edges()];
    for (w, od) in network.ods().iter().enumerate() {
        let paths = all_simple_paths(network, w, MAX_ORACLE_PATHS)?;
        let costs: Vec<f64> = paths
            .iter()
            .map(|p| p.iter().map(|&e| dual.t[e]).sum())
            .collect();
        let best = costs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let weights: Vec<f64> = costs
            .iter()
            .map(|c| ((best - c) / dual.gamma).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for (p, wgt) in paths.iter().zip(&weights) {
            for &e in p {
                f[e] += od.demand * wgt / total;
            }
        }
    }
    Ok(EdgeFlow { f })
}

fn require_parallel(network: &Network) -> Result<(f64, usize, usize)> {
    if network.ods().len() != 1 {
        return Err(Error::InvalidParameter(
            "parallel-link oracle needs exactly one OD pair".into(),
        ));
    }
    let od = network.ods()[0];
    if network
        .edges()
        .iter()
        .any(|e| e.tail != od.origin || e.head != od.destination)
    {
        return Err(Error::InvalidParameter(
            "parallel-link oracle needs every edge to join origin and destination".into(),
        ));
    }
    Ok((od.demand, od.origin, od.destination))
}

/// Logit equilibrium on parallel links by damped fixed-point iteration
/// `f ← (1−θ)f + θ·d·softmax(−τ(f)/γ)`.
///
/// Stops when the damped step `θ‖T(f) − f‖∞` is at most `tol`. The raw
/// residual `‖T(f) − f‖∞` is not used: for small `γ` the map is so steep
/// that rounding alone keeps it far above any useful tolerance.
///
/// Starts with `θ = 1`; whenever 20 000 iterations pass without stopping
/// the damping is halved and the iteration restarts from the uniform split
/// (up to 20 halvings).
pub fn logit_fixed_point_parallel(network: &Network, gamma: f64, tol: f64) -> Result<EdgeFlow> {
    let (d, _, _) = require_parallel(network)?;
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter("logit oracle needs gamma > 0".into()));
    }
    if !network.is_uniform_model(CostModel::Bpr) {
        return Err(Error::InvalidParameter("logit oracle needs BPR links".into()));
    }
    let m = network.num_edges();
    let map = |f: &[f64]| -> Result<Vec<f64>> {
        let mut u = Vec::with_capacity(m);
        for (e, &fe) in network.edges().iter().zip(f) {
            u.push(-e.cost.cost(fe)? / gamma);
        }
        let lse = plain_log_sum_exp(&u);
        Ok(u.iter().map(|v| d * (v - lse).exp()).collect())
    };
    let mut theta = 1.0;
    for _ in 0..=20 {
        let mut f = vec![d / m as f64; m];
        for _ in 0..20_000 {
            let tf = map(&f)?;
            let step = theta
                * f.iter()
                    .zip(&tf)
                    .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            if !step.is_finite() {
                break;
            }
            for (x, y) in f.iter_mut().zip(&tf) {
                *x = (1.0 - theta) * *x + theta * y;
            }
            if step <= tol {
                return Ok(EdgeFlow { f });
            }
        }
        theta /= 2.0;
    }
    Err(Error::OracleNonConvergence(format!(
        "logit fixed point did not reach {tol:e} with damping down to {:e}",
        theta * 2.0
    )))
}

/// Flow on a link at time level `level`: zero at or below `t̄`, the inverse
/// cost above it; `None` marks a constant-time link sitting exactly at the
/// level, which can take any flow.
fn link_flow_at(cost: &crate::network::CostParams, level: f64) -> Option<f64> {
    if level <= cost.t_free {
        return Some(0.0);
    }
    match cost.model {
        CostModel::StableDynamics => Some(cost.capacity),
        CostModel::Bpr if cost.rho == 0.0 => None,
        CostModel::Bpr => Some(cost.conjugate_cost_gradient(level).unwrap_or(0.0)),
    }
}

/// Deterministic (Wardrop) equilibrium on parallel links: bisection on the
/// common travel time of the used links.
///
/// Links whose time is constant absorb whatever demand remains at their
/// level; stable-dynamics links are capped at capacity.
pub fn wardrop_parallel(network: &Network, tol: f64) -> Result<EdgeFlow> {
    let (d, _, _) = require_parallel(network)?;
    let edges = network.edges();
    let load = |level: f64| -> f64 {
        edges
            .iter()
            .map(|e| link_flow_at(&e.cost, level).unwrap_or(f64::INFINITY))
            .sum()
    };
    let mut lo = edges.iter().map(|e| e.cost.t_free).fold(f64::INFINITY, f64::min);
    let mut hi = lo;
    while load(hi) < d {
        hi = 2.0 * hi + 1.0;
        if hi > 1e300 {
            return Err(Error::OracleNonConvergence("demand exceeds total capacity".into()));
        }
    }
    for _ in 0..2000 {
        if hi - lo <= tol * (1.0 + hi.abs()) * 1e-3 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if load(mid) >= d {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Links strictly below the level carry their inverse-cost flow; the rest
    // of the demand goes to links that can absorb it at the level itself.
    let level = hi;
    let mut f: Vec<f64> = edges
        .iter()
        .map(|e| match link_flow_at(&e.cost, lo) {
            Some(v) if e.cost.t_free < level => v.max(0.0),
            _ => 0.0,
        })
        .collect();
    let bpr_strict: Vec<bool> = edges
        .iter()
        .map(|e| e.cost.model == CostModel::Bpr && e.cost.rho > 0.0)
        .collect();
    // interpolate the smooth links between lo and hi so totals match
    let at_hi: Vec<f64> = edges
        .iter()
        .map(|e| link_flow_at(&e.cost, hi).unwrap_or(0.0))
        .collect();
    let smooth_lo: f64 = f.iter().zip(&bpr_strict).filter(|(_, &s)| s).map(|(v, _)| v).sum();
    let smooth_hi: f64 = at_hi.iter().zip(&bpr_strict).filter(|(_, &s)| s).map(|(v, _)| v).sum();
    let fixed: f64 = f.iter().zip(&bpr_strict).filter(|(_, &s)| !s).map(|(v, _)| v).sum();
    let remaining = d - fixed;
    if smooth_hi > smooth_lo && remaining >= smooth_lo && remaining <= smooth_hi {
        let w = (remaining - smooth_lo) / (smooth_hi - smooth_lo);
        for e in 0..edges.len() {
            if bpr_strict[e] {
                f[e] = (1.0 - w) * f[e] + w * at_hi[e];
            }
        }
    } else {
        for e in 0..edges.len() {
            if bpr_strict[e] {
                f[e] = at_hi[e];
            }
        }
    }
    let assigned: f64 = f.iter().sum();
    let mut leftover = d - assigned;
    if leftover > 0.0 {
        for (e, edge) in edges.iter().enumerate() {
            if leftover <= 0.0 {
                break;
            }
            let room = match edge.cost.model {
                CostModel::StableDynamics if edge.cost.t_free <= level => edge.cost.capacity - f[e],
                CostModel::Bpr if edge.cost.rho == 0.0 && edge.cost.t_free <= level => f64::INFINITY,
                _ => 0.0,
            };
            let take = leftover.min(room.max(0.0));
            f[e] += take;
            leftover -= take;
        }
    }
    Ok(EdgeFlow { f })
}

/// Path flows minimizing the entropy-regularized objective, found by plain
/// projected gradient with a small fixed step.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyPrimal {
    /// Enumerated paths, grouped by OD pair in order.
    pub paths: Vec<Vec<usize>>,
    pub od_of: Vec<usize>,
    pub x: Vec<f64>,
    pub edge_flow: Vec<f64>,
    pub objective: f64,
}

/// Euclidean projection of `v` onto `{x : Σx = s, x ≥ lo}`.
fn project_capped_simplex(v: &mut [f64], s: f64, lo: f64) {
    let n = v.len();
    let target = s - lo * n as f64;
    let mut sorted: Vec<f64> = v.iter().map(|x| x - lo).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let candidate = (cum - target) / (i + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = lo + (*x - lo - shift).max(0.0);
    }
}

fn objective_tiny(network: &Network, paths: &[Vec<usize>], od_of: &[usize], x: &[f64], gamma: f64) -> Result<(f64, Vec<f64>)> {
    let mut f = vec![0.0; network.num_edges()];
    for (p, &xp) in paths.iter().zip(x) {
        for &e in p {
            f[e] += xp;
        }
    }
    let mut value = 0.0;
    for (e, &fe) in network.edges().iter().zip(&f) {
        value += e.cost.cost_integral(fe)?;
    }
    for (p, &xp) in x.iter().enumerate() {
        if xp > 0.0 {
            value += gamma * xp * (xp / network.ods()[od_of[p]].demand).ln();
        }
    }
    Ok((value, f))
}

/// Minimizes `Σσ_e(f_e) + γ Σ x ln(x/d)` over path flows by projected
/// gradient with a fixed small step for `iters` iterations. Path flows are
/// kept above `10⁻¹²·d_w` so the entropy gradient stays finite. Requires at
/// most 50 paths in total.
pub fn primal_minimize_tiny(network: &Network, gamma: f64, iters: usize) -> Result<TinyPrimal> {
    let mut paths = Vec::new();
    let mut od_of = Vec::new();
    for w in 0..network.ods().len() {
        for p in all_simple_paths(network, w, 50)? {
            paths.push(p);
            od_of.push(w);
        }
    }
    if paths.len() > 50 {
        return Err(Error::TooManyPaths { od: 0, limit: 50 });
    }
    let demands: Vec<f64> = network.ods().iter().map(|o| o.demand).collect();
    let d_min = demands.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let d_sum: f64 = demands.iter().sum();
    let longest = paths.iter().map(Vec::len).max().unwrap_or(1) as f64;
    let curvature: f64 = network
        .edges()
        .iter()
        .map(|e| e.cost.cost_derivative(d_sum))
        .fold(0.0, f64::max)
        * longest
        * paths.len() as f64;
    // the entropy curvature γ/x is bounded by γ/(0.01 d) away from the
    // floor; the floor region is only touched transiently
    let step = 0.5 / (1.0 + curvature + gamma / (0.01 * d_min));
    let mut x: Vec<f64> = od_of
        .iter()
        .map(|&w| demands[w] / od_of.iter().filter(|&&v| v == w).count() as f64)
        .collect();
    for _ in 0..iters {
        let (_, f) = objective_tiny(network, &paths, &od_of, &x, gamma)?;
        let grad: Vec<f64> = paths
            .iter()
            .zip(&x)
            .zip(&od_of)
            .map(|((p, &xp), &w)| {
                let cost: f64 = p.iter().map(|&e| network.edge(e).cost.cost_unchecked(f[e])).sum();
                let ent = if gamma > 0.0 { gamma * ((xp / demands[w]).ln() + 1.0) } else { 0.0 };
                cost + ent
            })
            .collect();
        for (xp, g) in x.iter_mut().zip(&grad) {
            *xp -= step * g;
        }
        for w in 0..demands.len() {
            let idx: Vec<usize> = (0..x.len()).filter(|&p| od_of[p] == w).collect();
            let mut block: Vec<f64> = idx.iter().map(|&p| x[p]).collect();
            project_capped_simplex(&mut block, demands[w], 1e-12 * demands[w]);
            for (&p, v) in idx.iter().zip(block) {
                x[p] = v;
            }
        }
    }
    let (objective, edge_flow) = objective_tiny(network, &paths, &od_of, &x, gamma)?;
    Ok(TinyPrimal {
        paths,
        od_of,
        x,
        edge_flow,
        objective,
    })
}
