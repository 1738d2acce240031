//! Primal path-based solvers.
//!
//! Path flows `x` live on the product of scaled simplexes
//! `X = {x ≥ 0 : Σ_{p ∈ P_w} x_p = d_w}`, edge flows are `f = Θx`, and the
//! objective is
//!
//! ```text
//! P(x) = Σ_e σ_e((Θx)_e) + γ Σ_w Σ_{p ∈ P_w} x_p ln(x_p/d_w).
//! ```
//!
//! [`solve_path_fgm`] runs a composite fast gradient method with the
//! entropy as composite and the prox function `Σ_w d_w KL(x_w ‖ ·)`, which
//! is 1-strongly convex in `‖x‖ = (Σ_w ‖x_w‖₁²)^{1/2}`. [`solve_penalty`]
//! relaxes the coupling `f = Θx` into the quadratic penalty `½‖Θx − f‖²`
//! and alternates closed-form steps in both blocks.
//!
//! Everything here enumerates paths, so it is meant for instances with few
//! routes per OD pair; the dual solvers do not need enumeration.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::dual::{Certificate, TracePoint};
use crate::network::{topological_order, CostModel, CostParams, Network};
use crate::scalar::monotone_root;
use crate::smoothing::{log_sum_exp, soft_max, EdgeFlow};
use crate::{Error, Result};

/// A route as a list of edge indices from origin to destination.
pub type Path = Vec<usize>;

/// Simple paths of `od` in lexicographic order of edge indices.
///
/// Fails with [`Error::TooManyPaths`] when more than `max_paths` exist and
/// with [`Error::TruncatedPathSet`] when some simple path has more than
/// `max_edges` edges.
pub fn enumerate_paths(
    network: &Network,
    od: usize,
    max_paths: usize,
    max_edges: usize,
) -> Result<Vec<Path>> {
    let (paths, truncated) = enumerate_with_limits(network, od, max_paths, max_edges, false)?;
    debug_assert!(!truncated);
    Ok(paths)
}

fn enumerate_with_limits(
    network: &Network,
    od: usize,
    max_paths: usize,
    max_edges: usize,
    allow_truncation: bool,
) -> Result<(Vec<Path>, bool)> {
    if max_paths == 0 || max_edges == 0 {
        return Err(Error::InvalidParameter("enumeration limits must be positive".into()));
    }
    let pair = network.ods()[od];
    let reach = network.reaches(pair.destination);
    let mut on_path = vec![false; network.num_vertices()];
    let mut paths = Vec::new();
    let mut current = Vec::new();
    // explicit stack of (vertex, next out-edge position)
    let mut stack = vec![(pair.origin, 0usize)];
    on_path[pair.origin] = true;
    let mut truncated = false;
    while let Some(&mut (v, ref mut pos)) = stack.last_mut() {
        let out = network.out_edges(v);
        if *pos >= out.len() {
            on_path[v] = false;
            stack.pop();
            current.pop();
            continue;
        }
        let e = out[*pos];
        *pos += 1;
        let head = network.edge(e).head;
        if !reach[head] || on_path[head] {
            continue;
        }
        if current.len() + 1 > max_edges {
            if !allow_truncation {
                return Err(Error::TruncatedPathSet);
            }
            truncated = true;
            continue;
        }
        if head == pair.destination {
            if paths.len() == max_paths {
                if !allow_truncation {
                    return Err(Error::TooManyPaths { od, limit: max_paths });
                }
                truncated = true;
                break;
            }
            let mut p = current.clone();
            p.push(e);
            paths.push(p);
            continue;
        }
        current.push(e);
        on_path[head] = true;
        stack.push((head, 0));
    }
    Ok((paths, truncated))
}

/// Number of simple paths of `od`: a path-count recursion on acyclic
/// sinks, bounded enumeration (up to `limit`) otherwise.
pub fn count_paths(network: &Network, od: usize, limit: usize) -> Result<f64> {
    let pair = network.ods()[od];
    let order = topological_order(network, pair.destination);
    if order.valid {
        let mut count = vec![0.0f64; network.num_vertices()];
        count[pair.destination] = 1.0;
        for &i in order.order.iter().rev().skip(1) {
            count[i] = network
                .out_edges(i)
                .iter()
                .map(|&e| count[network.edge(e).head])
                .sum();
        }
        Ok(count[pair.origin])
    } else {
        Ok(enumerate_paths(network, od, limit, network.num_vertices())?.len() as f64)
    }
}

/// Path sets for all OD pairs with a flat path index.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
    od_of: Vec<usize>,
    offsets: Vec<usize>,
    demands: Vec<f64>,
    num_edges: usize,
    truncated: bool,
}

impl PathSet {
    /// Complete enumeration; fails if any OD pair exceeds `max_paths`.
    pub fn enumerate(network: &Network, max_paths: usize) -> Result<Self> {
        Self::build(network, max_paths, network.num_vertices(), false)
    }

    /// Enumeration that stops at the limits instead of failing; the result
    /// is labelled as truncated when anything was cut.
    pub fn enumerate_truncated(network: &Network, max_paths: usize, max_edges: usize) -> Result<Self> {
        Self::build(network, max_paths, max_edges, true)
    }

    fn build(network: &Network, max_paths: usize, max_edges: usize, allow: bool) -> Result<Self> {
        let mut set = Self {
            paths: Vec::new(),
            od_of: Vec::new(),
            offsets: vec![0],
            demands: network.ods().iter().map(|od| od.demand).collect(),
            num_edges: network.num_edges(),
            truncated: false,
        };
        for w in 0..network.ods().len() {
            let (ps, cut) = enumerate_with_limits(network, w, max_paths, max_edges, allow)?;
            if ps.is_empty() {
                return Err(Error::NoPath { od: w });
            }
            set.truncated |= cut;
            for p in ps {
                set.paths.push(p);
                set.od_of.push(w);
            }
            set.offsets.push(set.paths.len());
        }
        Ok(set)
    }

    /// Builds a path set from explicit per-OD lists, checking that each path
    /// connects its OD pair and that no path repeats.
    pub fn from_paths(network: &Network, per_od: Vec<Vec<Path>>) -> Result<Self> {
        if per_od.len() != network.ods().len() {
            return Err(Error::DimensionMismatch {
                expected: network.ods().len(),
                got: per_od.len(),
            });
        }
        let mut set = Self {
            paths: Vec::new(),
            od_of: Vec::new(),
            offsets: vec![0],
            demands: network.ods().iter().map(|od| od.demand).collect(),
            num_edges: network.num_edges(),
            truncated: false,
        };
        for (w, ps) in per_od.into_iter().enumerate() {
            let od = network.ods()[w];
            if ps.is_empty() {
                return Err(Error::NoPath { od: w });
            }
            for (i, p) in ps.iter().enumerate() {
                let mut at = od.origin;
                for &e in p {
                    if e >= network.num_edges() || network.edge(e).tail != at {
                        return Err(Error::InvalidParameter(format!(
                            "path {i} of OD pair {w} is not a connected route"
                        )));
                    }
                    at = network.edge(e).head;
                }
                if p.is_empty() || at != od.destination {
                    return Err(Error::InvalidParameter(format!(
                        "path {i} of OD pair {w} does not reach the destination"
                    )));
                }
                if ps[..i].contains(p) {
                    return Err(Error::InvalidParameter(format!(
                        "path {i} of OD pair {w} is a duplicate"
                    )));
                }
            }
            for p in ps {
                set.paths.push(p);
                set.od_of.push(w);
            }
            set.offsets.push(set.paths.len());
        }
        Ok(set)
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn num_ods(&self) -> usize {
        self.demands.len()
    }

    pub fn path(&self, p: usize) -> &[usize] {
        &self.paths[p]
    }

    pub fn od_of(&self, p: usize) -> usize {
        self.od_of[p]
    }

    /// Flat index range of the paths of `od`.
    pub fn range(&self, od: usize) -> core::ops::Range<usize> {
        self.offsets[od]..self.offsets[od + 1]
    }

    pub fn paths_of(&self, od: usize) -> &[Path] {
        &self.paths[self.range(od)]
    }

    pub fn demand(&self, od: usize) -> f64 {
        self.demands[od]
    }

    /// Largest number of edges on any path.
    pub fn max_edges(&self) -> usize {
        self.paths.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `Θx`.
    pub fn edge_flows(&self, x: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.num_edges];
        for (p, &xp) in self.paths.iter().zip(x) {
            for &e in p {
                f[e] += xp;
            }
        }
        f
    }

    /// `Θᵀt`: path costs under edge times `t`.
    pub fn path_costs(&self, t: &[f64]) -> Vec<f64> {
        self.paths
            .iter()
            .map(|p| p.iter().map(|&e| t[e]).sum())
            .collect()
    }

    /// Uniform flow on every simplex.
    pub fn uniform_flow(&self) -> PathFlow {
        let mut x = vec![0.0; self.num_paths()];
        for w in 0..self.num_ods() {
            let r = self.range(w);
            let v = self.demands[w] / r.len() as f64;
            x[r].iter_mut().for_each(|xi| *xi = v);
        }
        PathFlow { x }
    }

    /// Largest violation of the simplex constraints.
    pub fn feasibility_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for w in 0..self.num_ods() {
            let r = self.range(w);
            let s: f64 = x[r.clone()].iter().sum();
            worst = worst.max((s - self.demands[w]).abs());
            for &xi in &x[r] {
                worst = worst.max(-xi);
            }
        }
        worst
    }
}

/// Per-path flows, indexed like the [`PathSet`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathFlow {
    pub x: Vec<f64>,
}

/// `γ Σ_w Σ_p x_p ln(x_p/d_w)` with `0 ln 0 = 0`.
pub fn entropy_term(paths: &PathSet, x: &[f64], gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for (p, &xp) in x.iter().enumerate() {
        if xp > 0.0 {
            s += xp * (xp / paths.demand(paths.od_of(p))).ln();
        }
    }
    gamma * s
}

fn sigma_sum(network: &Network, f: &[f64]) -> Result<f64> {
    network
        .edges()
        .iter()
        .zip(f)
        .map(|(e, &fe)| e.cost.cost_integral(fe.max(0.0)))
        .sum()
}

fn check_dims(paths: &PathSet, x: &[f64]) -> Result<()> {
    if x.len() != paths.num_paths() {
        return Err(Error::DimensionMismatch {
            expected: paths.num_paths(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `P(x) = Σσ_e((Θx)_e) + γ Σ x ln(x/d)` for `x ∈ X` (tolerance `1e−9`
/// relative to the demand).
pub fn primal_objective(network: &Network, paths: &PathSet, x: &PathFlow, gamma: f64) -> Result<f64> {
    check_dims(paths, &x.x)?;
    let tol = 1e-9 * (1.0 + paths.demands.iter().fold(0.0f64, |a, &d| a.max(d)));
    let violation = paths.feasibility_violation(&x.x);
    if violation > tol {
        return Err(Error::InfeasiblePathFlow { violation });
    }
    let f = paths.edge_flows(&x.x);
    Ok(sigma_sum(network, &f)? + entropy_term(paths, &x.x, gamma))
}

/// Closed-form composite prox on the product of simplexes:
///
/// ```text
/// argmin_{x' ∈ X}  step·(⟨g, x'⟩ + γ Σ x' ln(x'/d)) + Σ_w κ_w KL(x'_w ‖ x_w)
/// ```
///
/// with `κ_w = scale · d_w`, i.e.
/// `ln x'_p = (κ_w ln x_p − step·g_p)/(κ_w + step·γ) + const_w`.
fn entropy_prox_scaled(
    paths: &PathSet,
    x: &[f64],
    grad: &[f64],
    step: f64,
    gamma: f64,
    scale: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut logits = Vec::new();
    for w in 0..paths.num_ods() {
        let r = paths.range(w);
        let d = paths.demand(w);
        let kappa = scale * d;
        let denom = kappa + step * gamma;
        logits.clear();
        logits.extend(r.clone().map(|p| {
            if x[p] > 0.0 {
                (kappa * x[p].ln() - step * grad[p]) / denom
            } else {
                f64::NEG_INFINITY
            }
        }));
        let lse = log_sum_exp(&logits);
        for (p, &l) in r.zip(&logits) {
            out[p] = d * (l - lse).exp();
        }
    }
    out
}

/// Exponential reweighting step on the product of simplexes; see the
/// module docs for the prox function. The output lies in `X` up to
/// rounding.
pub fn entropy_prox_step(paths: &PathSet, x: &PathFlow, grad: &[f64], step: f64, gamma: f64) -> Result<PathFlow> {
    check_dims(paths, &x.x)?;
    check_dims(paths, grad)?;
    if !(step > 0.0) || !(gamma >= 0.0) {
        return Err(Error::InvalidParameter("step must be positive and gamma nonnegative".into()));
    }
    Ok(PathFlow {
        x: entropy_prox_scaled(paths, &x.x, grad, step, gamma, 1.0),
    })
}

/// Exponent `a_w = 2 ln n / (2 ln n − 1)` of the power-norm prox function
/// on a simplex with `n` vertices; `a_w > 1` needs `n ≥ 2`.
pub fn power_prox_exponent(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "the power prox function needs at least 2 paths, got {n}"
        )));
    }
    let l = 2.0 * (n as f64).ln();
    Ok(l / (l - 1.0))
}

/// `γψ` and `Σσ*` at `t`, by enumeration over the path set.
fn dual_by_paths(network: &Network, paths: &PathSet, t: &[f64], gamma: f64) -> Result<f64> {
    let costs = paths.path_costs(t);
    let mut psi = 0.0;
    for w in 0..paths.num_ods() {
        let r = paths.range(w);
        psi += paths.demand(w) * soft_max(gamma, costs[r].iter().map(|c| -c));
    }
    let conj: f64 = network
        .edges()
        .iter()
        .zip(t)
        .map(|(e, &te)| e.cost.conjugate_cost(te))
        .sum::<Result<f64>>()?;
    Ok(psi + conj)
}

fn edge_times(network: &Network, f: &[f64]) -> Vec<f64> {
    network
        .edges()
        .iter()
        .zip(f)
        .map(|(e, &fe)| e.cost.cost_unchecked(fe.max(0.0)))
        .collect()
}

/// `Σ_w ‖v_w‖₁²`.
fn simplex_norm_sq(paths: &PathSet, v: &[f64]) -> f64 {
    (0..paths.num_ods())
        .map(|w| {
            let s: f64 = v[paths.range(w)].iter().map(|a| a.abs()).sum();
            s * s
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFgmConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Use restarts that exploit the strong convexity `γ / max_w d_w` of the
    /// entropy term.
    pub strongly_convex: bool,
    pub initial_lipschitz: Option<f64>,
}

impl PathFgmConfig {
    pub fn new(gamma: f64, epsilon: f64) -> Self {
        Self {
            gamma,
            epsilon,
            max_iters: 1_000_000,
            strongly_convex: false,
            initial_lipschitz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSolution {
    pub x: PathFlow,
    pub flow: EdgeFlow,
    pub certificate: Certificate,
}

fn require_complete(network: &Network, paths: &PathSet) -> Result<()> {
    if paths.is_truncated() {
        return Err(Error::TruncatedPathSet);
    }
    if paths.num_ods() != network.ods().len() {
        return Err(Error::DimensionMismatch {
            expected: network.ods().len(),
            got: paths.num_ods(),
        });
    }
    Ok(())
}

/// State of one similar-triangles run on the simplex product.
struct PathStm {
    x: Vec<f64>,
    u: Vec<f64>,
    a: f64,
}

/// Composite fast gradient on the path formulation with backtracking on the
/// local Lipschitz constant of `x ↦ Σσ_e((Θx)_e)`.
///
/// Success means the gap `P(x) + D(τ(Θx)) ≤ ε`, where `D` is evaluated by
/// enumeration. In strongly convex mode the method restarts from the best
/// iterate after epochs of doubling length.
pub fn solve_path_fgm(network: &Network, paths: &PathSet, config: &PathFgmConfig) -> Result<PathSolution> {
    require_complete(network, paths)?;
    if !network.is_uniform_model(CostModel::Bpr) {
        return Err(Error::Unsupported(
            "path-fgm needs finite costs on every edge; use a dual method for stable dynamics"
                .to_string(),
        ));
    }
    if !(config.epsilon > 0.0) || !(config.gamma >= 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive and gamma nonnegative".into()));
    }
    let gamma = config.gamma;
    let total = network.total_demand();
    let max_d = paths.demands.iter().fold(0.0f64, |a, &d| a.max(d));
    let threshold = config.epsilon / total;
    if gamma > 0.0 && gamma < threshold {
        log::info!(
            "path-fgm: gamma = {gamma:.3e} is below eps/sum(d) = {threshold:.3e}; \
             the entropy barely helps and the plain method is the better choice"
        );
    } else {
        log::debug!("path-fgm: gamma = {gamma:.3e}, eps/sum(d) = {threshold:.3e}");
    }
    if config.strongly_convex {
        let chi = (0..paths.num_ods())
            .map(|w| 2.0 * (paths.range(w).len() as f64).ln())
            .fold(0.0f64, f64::max);
        log::debug!(
            "path-fgm: strong convexity {:.3e}, restart multiplier bound {chi:.3}",
            gamma / max_d
        );
    }

    let objective = |x: &[f64]| -> Result<f64> {
        Ok(sigma_sum(network, &paths.edge_flows(x))? + entropy_term(paths, x, gamma))
    };
    let smooth = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let f = paths.edge_flows(x);
        let value = sigma_sum(network, &f)?;
        Ok((value, paths.path_costs(&edge_times(network, &f))))
    };
    let gap_at = |x: &[f64], value: f64| -> Result<f64> {
        let t = edge_times(network, &paths.edge_flows(x));
        Ok(value + dual_by_paths(network, paths, &t, gamma)?)
    };

    let x0 = paths.uniform_flow().x;
    let mut lipschitz = config.initial_lipschitz.unwrap_or(total.max(1.0));
    let mut best = x0.clone();
    let mut best_value = objective(&best)?;
    let mut state = PathStm {
        x: x0.clone(),
        u: x0,
        a: 0.0,
    };
    let mut epoch_len = 16usize;
    let mut epoch_iter = 0usize;
    let mut trace = Vec::new();
    let mut evaluations = 0;
    let mut max_l = 0.0f64;
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;
    for k in 0..config.max_iters {
        lipschitz /= 2.0;
        loop {
            let alpha = (1.0 + (1.0 + 4.0 * lipschitz * state.a).sqrt()) / (2.0 * lipschitz);
            let a_new = state.a + alpha;
            let y: Vec<f64> = state
                .u
                .iter()
                .zip(&state.x)
                .map(|(u, x)| (alpha * u + state.a * x) / a_new)
                .collect();
            let (fy, gy) = smooth(&y)?;
            evaluations += 1;
            let u_new = entropy_prox_scaled(paths, &state.u, &gy, alpha, gamma, 1.0);
            let x_new: Vec<f64> = u_new
                .iter()
                .zip(&state.x)
                .map(|(u, x)| (alpha * u + state.a * x) / a_new)
                .collect();
            let (fx, _) = smooth(&x_new)?;
            let diff: Vec<f64> = x_new.iter().zip(&y).map(|(a, b)| a - b).collect();
            let lin: f64 = gy.iter().zip(&diff).map(|(g, d)| g * d).sum();
            let tol = 1e-14 * (1.0 + fy.abs());
            if fx <= fy + lin + 0.5 * lipschitz * simplex_norm_sq(paths, &diff) + tol {
                state = PathStm {
                    x: x_new,
                    u: u_new,
                    a: a_new,
                };
                break;
            }
            lipschitz *= 2.0;
            if !lipschitz.is_finite() || lipschitz > 1e300 {
                return Err(Error::Diverged { iteration: k + 1 });
            }
        }
        max_l = max_l.max(lipschitz);
        iterations = k + 1;
        let value = objective(&state.x)?;
        if value <= best_value {
            best_value = value;
            best.clone_from(&state.x);
        }
        gap = gap_at(&best, best_value)?;
        if !gap.is_finite() {
            return Err(Error::Diverged { iteration: iterations });
        }
        converged = gap <= config.epsilon;
        if iterations <= 1000 || iterations % 1000 == 0 || converged {
            trace.push(TracePoint {
                iteration: iterations,
                gap,
                dual_value: gap - best_value,
                primal_value: best_value,
            });
        }
        if converged {
            break;
        }
        epoch_iter += 1;
        if config.strongly_convex && epoch_iter >= epoch_len {
            state = PathStm {
                x: best.clone(),
                u: best.clone(),
                a: 0.0,
            };
            epoch_iter = 0;
            epoch_len *= 2;
        }
    }
    if trace.last().map(|p| p.iteration) != Some(iterations) {
        trace.push(TracePoint {
            iteration: iterations,
            gap,
            dual_value: gap - best_value,
            primal_value: best_value,
        });
    }
    log::info!("path-fgm: {iterations} iterations, gap {gap:.3e}");
    let flow = paths.edge_flows(&best);
    Ok(PathSolution {
        x: PathFlow { x: best },
        flow: EdgeFlow { f: flow },
        certificate: Certificate {
            method: "path-fgm".to_string(),
            gamma,
            epsilon: config.epsilon,
            iterations,
            primal_value: best_value,
            dual_value: gap - best_value,
            gap,
            capacity_violation: 0.0,
            converged,
            gradient_evaluations: evaluations,
            max_lipschitz: Some(max_l),
            trace,
        },
    })
}

/// `argmin_{f ∈ [0, f̄ or ∞)} ½(f − y)² + λσ(f)`.
///
/// For BPR the stationarity condition `f − y + λτ(f) = 0` is a polynomial
/// equation (quartic for `μ = 1/4`) solved by safeguarded Newton; stable
/// dynamics clamps `y − λt̄` to `[0, f̄]`.
pub fn penalty_f_step(params: &CostParams, y: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) || !y.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "penalty step needs finite y and positive lambda, got y = {y}, lambda = {lambda}"
        )));
    }
    match params.model {
        CostModel::StableDynamics => Ok((y - lambda * params.t_free).clamp(0.0, params.capacity)),
        CostModel::Bpr => monotone_root(-y, lambda, params, 0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub gamma: f64,
    /// Accuracy of the objective in the units of the unpenalized problem;
    /// the penalized gap must reach `λε`.
    pub epsilon: f64,
    /// Bound on `‖Θx − f‖₂`. At the penalized optimum the residual is of
    /// order `λ‖t*‖`, so it is tuned through `λ` rather than `ε`.
    pub residual_tolerance: f64,
    pub max_iters: usize,
}

impl PenaltyConfig {
    /// Defaults to `λ = 1` and a residual tolerance of `ε`.
    pub fn new(gamma: f64, epsilon: f64) -> Self {
        Self {
            lambda: 1.0,
            gamma,
            epsilon,
            residual_tolerance: epsilon,
            max_iters: 1_000_000,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_residual_tolerance(mut self, tol: f64) -> Self {
        self.residual_tolerance = tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySolution {
    pub x: PathFlow,
    pub f: EdgeFlow,
    /// `‖Θx − f‖₂`.
    pub residual: f64,
    /// `½‖Θx − f‖² + λ(Σσ(f) + γ Σ x ln(x/d))`.
    pub objective: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TracePoint>,
}

fn penalty_objective(network: &Network, paths: &PathSet, x: &[f64], f: &[f64], lambda: f64, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let theta_x = paths.edge_flows(x);
    let s: Vec<f64> = theta_x.iter().zip(f).map(|(a, b)| a - b).collect();
    let quad = 0.5 * s.iter().map(|v| v * v).sum::<f64>();
    let value = quad + lambda * (sigma_sum(network, f)? + entropy_term(paths, x, gamma));
    Ok((value, s))
}

/// Dual lower bound at a multiplier `z` (valid for any `z`):
///
/// ```text
/// −½‖z‖² − Σ_w d_w · softmax_{λγ}(−(Θᵀz)_w) − λ Σ_e σ*_e(z_e/λ),
/// ```
///
/// with `σ*` extended by zero below `t̄` (flows are sign constrained).
fn penalty_lower_bound(network: &Network, paths: &PathSet, z: &[f64], lambda: f64, gamma: f64) -> f64 {
    let quad = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
    let costs = paths.path_costs(z);
    let mut routing = 0.0;
    for w in 0..paths.num_ods() {
        routing += paths.demand(w) * soft_max(lambda * gamma, paths.range(w).map(|p| -costs[p]));
    }
    let conj: f64 = network
        .edges()
        .iter()
        .zip(z)
        .map(|(e, &ze)| e.cost.conjugate_cost_extended(ze / lambda))
        .sum();
    -quad - routing - lambda * conj
}

/// Multiplier `λτ(f)` read off the f-block optimality condition. It tends
/// to `λt*` much faster than the raw residual `Θx − f`, whose rounding is
/// magnified by `1/λ`. Stable-dynamics edges below capacity get `λt̄`; at
/// capacity the residual is kept if it is larger.
fn priced_multiplier(network: &Network, f: &[f64], s: &[f64], lambda: f64) -> Vec<f64> {
    network
        .edges()
        .iter()
        .zip(f)
        .zip(s)
        .map(|((e, &fe), &se)| match e.cost.model {
            CostModel::Bpr => lambda * e.cost.cost_unchecked(fe.max(0.0)),
            CostModel::StableDynamics if fe < e.cost.capacity => lambda * e.cost.t_free,
            CostModel::StableDynamics => se.max(lambda * e.cost.t_free),
        })
        .collect()
}

/// Composite fast gradient on `(x, f)` for the penalized problem
///
/// ```text
/// min_{x ∈ X, f ≥ 0}  ½‖Θx − f‖² + λ(Σσ_e(f_e) + γ Σ x ln(x/d)),
/// ```
///
/// with prox function `2Σ_w d_w KL(x_w) + ‖f‖²`, backtracking on the
/// Lipschitz constant of the quadratic, and restarts from the best point
/// after epochs of doubling length. The run stops once the gap against the
/// dual bound is at most `λε`; it has converged if in addition
/// `‖Θx − f‖₂` is within the residual tolerance.
pub fn solve_penalty(network: &Network, paths: &PathSet, config: &PenaltyConfig) -> Result<PenaltySolution> {
    require_complete(network, paths)?;
    let lambda = config.lambda;
    let gamma = config.gamma;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if !(config.epsilon > 0.0) || !(config.residual_tolerance > 0.0) || !(gamma >= 0.0) {
        return Err(Error::InvalidParameter(
            "epsilon and residual tolerance must be positive and gamma nonnegative".into(),
        ));
    }
    let n = paths.num_paths();
    // upper ends of the f-domain; convex combinations may round past them
    let f_cap: Vec<f64> = network
        .edges()
        .iter()
        .map(|e| match e.cost.model {
            CostModel::StableDynamics => e.cost.capacity,
            CostModel::Bpr => f64::INFINITY,
        })
        .collect();
    let mix = |alpha: f64, u: &[f64], a: f64, v: &[f64]| -> Vec<f64> {
        u.iter()
            .zip(v)
            .zip(&f_cap)
            .map(|((p, q), &cap)| ((alpha * p + a * q) / (a + alpha)).clamp(0.0, cap))
            .collect()
    };
    let m = network.num_edges();
    let x0 = paths.uniform_flow().x;
    let f0: Vec<f64> = paths
        .edge_flows(&x0)
        .iter()
        .zip(network.edges())
        .map(|(&v, e)| match e.cost.model {
            CostModel::StableDynamics => v.min(e.cost.capacity),
            CostModel::Bpr => v,
        })
        .collect();
    let mut best_x = x0.clone();
    let mut best_f = f0.clone();
    let (mut best_value, mut best_s) = penalty_objective(network, paths, &best_x, &best_f, lambda, gamma)?;
    let (mut x, mut f) = (x0.clone(), f0.clone());
    let (mut ux, mut uf) = (x0, f0);
    let mut a = 0.0;
    // ½‖Θx − f‖² has curvature at most max_edges in the chosen norm; the
    // floor keeps the halving from running away where the model is exact.
    let lipschitz_cap = (paths.max_edges() as f64).max(1.0);
    let lipschitz_floor = 1e-9 * lipschitz_cap;
    let mut lipschitz = lipschitz_cap + 1.0;
    let mut epoch_len = 32usize;
    let mut epoch_iter = 0usize;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut gap = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;

    let quad = |x: &[f64], f: &[f64]| -> (f64, Vec<f64>) {
        let tx = paths.edge_flows(x);
        let s: Vec<f64> = tx.iter().zip(f).map(|(a, b)| a - b).collect();
        (0.5 * s.iter().map(|v| v * v).sum::<f64>(), s)
    };

    for k in 0..config.max_iters {
        lipschitz = (lipschitz / 2.0).max(lipschitz_floor);
        loop {
            let alpha = (1.0 + (1.0 + 4.0 * lipschitz * a).sqrt()) / (2.0 * lipschitz);
            let a_new = a + alpha;
            let yx: Vec<f64> = ux.iter().zip(&x).map(|(u, v)| (alpha * u + a * v) / a_new).collect();
            let yf = mix(alpha, &uf, a, &f);
            let (qy, s) = quad(&yx, &yf);
            let gx = paths.path_costs(&s);
            // x-block: κ = 2 d_w, composite weight λγ
            let ux_new = entropy_prox_scaled(paths, &ux, &gx, alpha, lambda * gamma, 2.0);
            // f-block: min α(−s·f + λσ(f)) + (f − u_f)²
            let mut uf_new = Vec::with_capacity(m);
            for (e, edge) in network.edges().iter().enumerate() {
                let target = uf[e] + alpha * s[e] / 2.0;
                uf_new.push(penalty_f_step(&edge.cost, target, alpha * lambda / 2.0).map_err(|err| match err {
                    Error::ScalarNonConvergence { iterations, .. } => Error::ScalarNonConvergence { edge: e, iterations },
                    other => other,
                })?);
            }
            let x_new: Vec<f64> = ux_new.iter().zip(&x).map(|(u, v)| (alpha * u + a * v) / a_new).collect();
            let f_new = mix(alpha, &uf_new, a, &f);
            let (qx, _) = quad(&x_new, &f_new);
            let dx: Vec<f64> = x_new.iter().zip(&yx).map(|(p, q)| p - q).collect();
            let df: Vec<f64> = f_new.iter().zip(&yf).map(|(p, q)| p - q).collect();
            let lin: f64 = gx.iter().zip(&dx).map(|(g, d)| g * d).sum::<f64>()
                - s.iter().zip(&df).map(|(g, d)| g * d).sum::<f64>();
            let norm_sq = 2.0 * simplex_norm_sq(paths, &dx) + 2.0 * df.iter().map(|v| v * v).sum::<f64>();
            let tol = 1e-15 * (1.0 + qy.abs());
            if qx.is_finite() && qx <= qy + lin + 0.5 * lipschitz * norm_sq + tol {
                x = x_new;
                f = f_new;
                ux = ux_new;
                uf = uf_new;
                a = a_new;
                break;
            }
            lipschitz *= 2.0;
            if !lipschitz.is_finite() || lipschitz > 1e300 {
                return Err(Error::Diverged { iteration: k + 1 });
            }
        }
        iterations = k + 1;
        let (value, s) = penalty_objective(network, paths, &x, &f, lambda, gamma)?;
        if value <= best_value {
            best_value = value;
            best_x.clone_from(&x);
            best_f.clone_from(&f);
            best_s = s;
        }
        let priced = priced_multiplier(network, &best_f, &best_s, lambda);
        lower = lower
            .max(penalty_lower_bound(network, paths, &best_s, lambda, gamma))
            .max(penalty_lower_bound(network, paths, &priced, lambda, gamma));
        gap = best_value - lower;
        let residual = best_s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !best_value.is_finite() {
            return Err(Error::Diverged { iteration: iterations });
        }
        let solved = gap <= lambda * config.epsilon;
        converged = solved && residual <= config.residual_tolerance;
        if iterations <= 1000 || iterations % 1000 == 0 || solved {
            trace.push(TracePoint {
                iteration: iterations,
                gap,
                dual_value: -lower,
                primal_value: best_value,
            });
        }
        if solved {
            // the residual of the penalized optimum is fixed by λ
            if !converged {
                log::info!("path-penalty: penalized problem solved but residual {residual:.3e} needs a smaller lambda");
            }
            break;
        }
        epoch_iter += 1;
        if epoch_iter >= epoch_len {
            x.clone_from(&best_x);
            f.clone_from(&best_f);
            ux.clone_from(&best_x);
            uf.clone_from(&best_f);
            a = 0.0;
            epoch_iter = 0;
            epoch_len *= 2;
        }
    }
    let residual = best_s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if trace.last().map(|p: &TracePoint| p.iteration) != Some(iterations) {
        trace.push(TracePoint {
            iteration: iterations,
            gap,
            dual_value: -lower,
            primal_value: best_value,
        });
    }
    log::info!("path-penalty: lambda {lambda:.3e}, {iterations} iterations, gap {gap:.3e}, residual {residual:.3e}");
    debug_assert_eq!(best_x.len(), n);
    Ok(PenaltySolution {
        x: PathFlow { x: best_x },
        f: EdgeFlow { f: best_f },
        residual,
        objective: best_value,
        lower_bound: lower,
        gap,
        lambda,
        iterations,
        converged,
        trace,
    })
}

/// Runs [`solve_penalty`] for `λ = λ₀, λ₀·factor, …` (at most `steps`
/// values, `0 < factor < 1`) until the coupling residual is within tolerance.
/// Returns every run in order.
pub fn penalty_lambda_sweep(
    network: &Network,
    paths: &PathSet,
    config: &PenaltyConfig,
    factor: f64,
    steps: usize,
) -> Result<Vec<PenaltySolution>> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidParameter(format!("sweep factor must lie in (0, 1), got {factor}")));
    }
    let mut runs = Vec::new();
    let mut cfg = config.clone();
    for _ in 0..steps.max(1) {
        let run = solve_penalty(network, paths, &cfg)?;
        let done = run.residual <= config.residual_tolerance;
        runs.push(run);
        if done {
            break;
        }
        cfg.lambda *= factor;
    }
    Ok(runs)
}
