//! Dual solvers for the entropy-regularized equilibrium problem.
//!
//! The dual objective over edge times `t ≥ t̄` is
//!
//! ```text
//! D(t) = γψ(t/γ) + Σ_e σ*_e(t_e)
//! ```
//!
//! (for stable dynamics `σ*_e(t_e) = f̄_e (t_e − t̄_e)`). The smooth part has
//! gradient `−f(t)`, the expected Gibbs loads, and Lipschitz constant at
//! most `L̃₂ = (1/γ) Σ_w d_w max_p ‖Θ^(p)‖²₂`; the separable part is handled
//! exactly through a scalar prox step.
//!
//! Primal flows are recovered by averaging the gradients with the method's
//! weights. The certificate's primal value is
//!
//! ```text
//! Σ_e σ_e(f̄_e) + (1/A) Σ_i a_i · γ Σ_p x^i_p ln(x^i_p/d_w),
//! ```
//!
//! where the entropy of each Gibbs distribution `x^i` is obtained without
//! enumerating paths from `γψ(t^i/γ) + ⟨f^i, t^i⟩ = −γ Σ x^i ln(x^i/d)`, and
//! convexity of `x ln x` makes the averaged term an upper bound on the
//! entropy term of the averaged path flow. The reported gap therefore bounds
//! the true one from above and is nonnegative by weak duality.
//!
//! For stable-dynamics edges the averaged flow may exceed capacity by a
//! vanishing amount; the primal value then charges the excess at the price
//! `t̃_e − t̄_e` of the final dual point, which keeps the gap a valid upper
//! bound. The violation is reported separately and must also fall below ε.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[allow(unused_imports)]
use num_traits::Float;

use crate::network::{CostModel, Network};
use crate::scalar::monotone_root;
use crate::smoothing::{od_distribution, DualPoint, EdgeFlow, Evaluation, Smoother};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DualMethod {
    /// Composite fast gradient with the analytic Lipschitz bound.
    Fgm,
    /// Universal composite fast gradient with backtracking.
    Universal,
    /// Stochastic mirror descent with sampled paths.
    Smd,
}

impl DualMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fgm => "dual-fgm",
            Self::Universal => "dual-universal",
            Self::Smd => "dual-smd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    pub method: DualMethod,
    pub gamma: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Starting local Lipschitz estimate for the universal method. When
    /// absent a secant estimate at `t̄` is used.
    pub initial_lipschitz_guess: Option<f64>,
    /// Seed for the stochastic method.
    pub seed: u64,
    /// Report the weighted average of the gradients as the primal flow. When
    /// off, the flow at the final dual point is reported instead and the
    /// certificate uses its exact primal value.
    pub averaging: bool,
    /// Radius estimate `R̂` for the stochastic step size.
    pub smd_radius: Option<f64>,
    /// Keep every `(a_i, t^i)` pair so the certificate can be recomputed.
    pub keep_history: bool,
}

impl SolverConfig {
    pub fn new(method: DualMethod, gamma: f64, epsilon: f64) -> Self {
        Self {
            method,
            gamma,
            epsilon,
            max_iters: 1_000_000,
            initial_lipschitz_guess: None,
            seed: 0,
            averaging: true,
            smd_radius: None,
            keep_history: false,
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_history(mut self) -> Self {
        self.keep_history = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        if self.gamma == 0.0 && self.method != DualMethod::Smd {
            return Err(Error::InvalidParameter(
                "gamma = 0 makes the smooth part nonsmooth; use the dual-smd method".to_string(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TracePoint {
    pub iteration: usize,
    pub gap: f64,
    pub dual_value: f64,
    pub primal_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Certificate {
    pub method: String,
    pub gamma: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    /// Largest capacity excess of the reported flow (stable dynamics only).
    pub capacity_violation: f64,
    pub converged: bool,
    pub gradient_evaluations: usize,
    /// Largest accepted local Lipschitz estimate (backtracking methods).
    pub max_lipschitz: Option<f64>,
    /// Every iteration up to 1000, then every 1000th, plus the last one.
    pub trace: Vec<TracePoint>,
}

/// Weights and points at which gradients entered the primal average.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub weights: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub t_star: DualPoint,
    pub f_star: EdgeFlow,
    pub certificate: Certificate,
    pub history: Option<History>,
}

fn check_domain(network: &Network, t: &[f64]) -> Result<()> {
    if t.len() != network.num_edges() {
        return Err(Error::DimensionMismatch {
            expected: network.num_edges(),
            got: t.len(),
        });
    }
    for (e, &te) in network.edges().iter().zip(t) {
        if !(te >= e.cost.t_free) {
            return Err(Error::OutsideDomain {
                time: te,
                t_free: e.cost.t_free,
            });
        }
    }
    Ok(())
}

/// `Σ_e σ*_e(t_e)`.
pub fn conjugate_sum(network: &Network, t: &[f64]) -> Result<f64> {
    network
        .edges()
        .iter()
        .zip(t)
        .map(|(e, &te)| e.cost.conjugate_cost(te))
        .sum()
}

/// `D(t) = γψ(t/γ) + Σ_e σ*_e(t_e)` on `t ≥ t̄`.
pub fn dual_objective(network: &Network, dual: &DualPoint) -> Result<f64> {
    check_domain(network, &dual.t)?;
    let psi = Smoother::new(network).psi_total(dual)?;
    Ok(psi + conjugate_sum(network, &dual.t)?)
}

/// Solves, edge by edge,
///
/// ```text
/// min_{t_e ≥ t̄_e}  g_e t_e + (L/2)(t_e − y_e)² + σ*_e(t_e)
/// ```
///
/// with `y = anchor.t` and `L = step_l`. For BPR edges the optimality
/// condition is rewritten in the flow `f = σ*'(t)`, `t = τ(f)`, which gives
/// the monotone scalar equation `g − L y + f + L τ(f) = 0`.
pub fn composite_prox_step(
    network: &Network,
    anchor: &DualPoint,
    grad: &[f64],
    step_l: f64,
) -> Result<DualPoint> {
    composite_prox_step_with_flow(network, anchor, grad, step_l).map(|(t, _)| t)
}

/// [`composite_prox_step`] together with the flows `f ∈ ∂σ*(t)` that
/// certify the step. For BPR edges this is the root of the scalar equation,
/// which steep costs determine far better than `t` does. For stable
/// dynamics it is the capacity when `t > t̄`, and otherwise the multiplier
/// `L(y − t̄) − g` clipped to `[0, f̄]`.
pub fn composite_prox_step_with_flow(
    network: &Network,
    anchor: &DualPoint,
    grad: &[f64],
    step_l: f64,
) -> Result<(DualPoint, EdgeFlow)> {
    if !(step_l > 0.0 && step_l.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "prox step parameter must be positive, got {step_l}"
        )));
    }
    let m = network.num_edges();
    for len in [anchor.t.len(), grad.len()] {
        if len != m {
            return Err(Error::DimensionMismatch { expected: m, got: len });
        }
    }
    let mut t = Vec::with_capacity(m);
    let mut flow = Vec::with_capacity(m);
    for (e, edge) in network.edges().iter().enumerate() {
        let c = &edge.cost;
        let (y, g) = (anchor.t[e], grad[e]);
        let (te, fe) = match c.model {
            CostModel::StableDynamics => {
                let te = c.t_free.max(y - (g + c.capacity) / step_l);
                let fe = if te > c.t_free {
                    c.capacity
                } else {
                    (step_l * (y - c.t_free) - g).clamp(0.0, c.capacity)
                };
                (te, fe)
            }
            CostModel::Bpr => {
                let f = monotone_root(g - step_l * y, step_l, c, e)?;
                (if f == 0.0 { c.t_free } else { c.cost_unchecked(f) }, f)
            }
        };
        t.push(te);
        flow.push(fe);
    }
    Ok((
        DualPoint {
            t,
            gamma: anchor.gamma,
        },
        EdgeFlow { f: flow },
    ))
}

/// `(1/γ) Σ_w d_w max_p ‖Θ^(p)‖²₂`, with the route bound from
/// [`Smoother::max_route_norm_sq`].
pub fn dual_lipschitz_bound(smoother: &Smoother<'_>, gamma: f64) -> f64 {
    let net = smoother.network();
    let s: f64 = net
        .ods()
        .iter()
        .enumerate()
        .map(|(w, od)| od.demand * smoother.max_route_norm_sq(w))
        .sum();
    s / gamma
}

/// Smoothing level that keeps the entropy term within `ε/2`:
/// `γ = ε / (2 Σ_w d_w ln|P_w|)`.
///
/// `path_counts[w]` bounds `|P_w|`. Pairs with a single path contribute
/// nothing; when every pair has one path no regularization is needed and
/// `+∞` is returned.
pub fn gamma_for_accuracy(network: &Network, epsilon: f64, path_counts: &[f64]) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target accuracy must be positive, got {epsilon}"
        )));
    }
    if path_counts.len() != network.ods().len() {
        return Err(Error::DimensionMismatch {
            expected: network.ods().len(),
            got: path_counts.len(),
        });
    }
    if let Some(&bad) = path_counts.iter().find(|&&c| !(c >= 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "path count bound must be at least 1, got {bad}"
        )));
    }
    let s: f64 = network
        .ods()
        .iter()
        .zip(path_counts)
        .map(|(od, &c)| od.demand * c.ln())
        .sum();
    if s == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(epsilon / (2.0 * s))
}

/// Primal value of a flow for the certificate, given the entropy term
/// `γ Σ x ln(x/d)` (nonpositive) and the reference dual point used to price
/// capacity excess on stable-dynamics edges. Returns the value and the
/// largest capacity excess.
pub fn certificate_primal(
    network: &Network,
    flow: &[f64],
    entropy_term: f64,
    t_ref: &[f64],
) -> (f64, f64) {
    let mut value = entropy_term;
    let mut violation = 0.0f64;
    for ((edge, &f), &t) in network.edges().iter().zip(flow).zip(t_ref) {
        let c = &edge.cost;
        match c.model {
            CostModel::Bpr => value += c.cost_integral_unchecked(f),
            CostModel::StableDynamics => {
                let excess = (f - c.capacity).max(0.0);
                violation = violation.max(excess);
                value += c.t_free * f + (t - c.t_free) * excess;
            }
        }
    }
    (value, violation)
}

/// `γ Σ x ln(x/d)` of the Gibbs distribution at `t`, from the value and
/// loads at that point.
pub fn gibbs_entropy_term(evaluation: &Evaluation, t: &[f64]) -> f64 {
    -(evaluation.value + dot(&evaluation.flow.f, t))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(αu + Ax)/(A + α)`, floored at `t̄`: the combination of two points of
/// the domain can round one ulp below its boundary.
fn combine(alpha: f64, u: &[f64], a: f64, x: &[f64], floor: &[f64]) -> Vec<f64> {
    let s = a + alpha;
    u.iter()
        .zip(x)
        .zip(floor)
        .map(|((&ui, &xi), &lo)| ((alpha * ui + a * xi) / s).max(lo))
        .collect()
}

/// Running weighted average of gradients and entropy terms.
struct PrimalAverager {
    weight: f64,
    flow: Vec<f64>,
    entropy: f64,
    history: Option<History>,
}

impl PrimalAverager {
    fn new(m: usize, keep_history: bool) -> Self {
        Self {
            weight: 0.0,
            flow: vec![0.0; m],
            entropy: 0.0,
            history: keep_history.then(|| History {
                weights: Vec::new(),
                points: Vec::new(),
            }),
        }
    }

    fn add(&mut self, alpha: f64, y: &[f64], ev: &Evaluation) {
        self.weight += alpha;
        for (acc, f) in self.flow.iter_mut().zip(&ev.flow.f) {
            *acc += alpha * f;
        }
        self.entropy += alpha * gibbs_entropy_term(ev, y);
        if let Some(h) = &mut self.history {
            h.weights.push(alpha);
            h.points.push(y.to_vec());
        }
    }

    fn average(&self) -> (Vec<f64>, f64) {
        let f = self.flow.iter().map(|v| v / self.weight).collect();
        (f, self.entropy / self.weight)
    }
}

struct Tracker {
    trace: Vec<TracePoint>,
}

impl Tracker {
    fn record(&mut self, point: TracePoint, force: bool) {
        let k = point.iteration;
        let due = force || k <= 1000 || k.is_multiple_of(1000);
        if due && self.trace.last().map(|p| p.iteration) != Some(k) {
            self.trace.push(point);
        }
    }
}

/// Builds the reported point, flow and certificate at the end of a run.
struct Outcome {
    t: Vec<f64>,
    flow: Vec<f64>,
    primal: f64,
    dual: f64,
    violation: f64,
}

fn finish(
    config: &SolverConfig,
    outcome: Outcome,
    iterations: usize,
    converged: bool,
    gradient_evaluations: usize,
    max_lipschitz: Option<f64>,
    tracker: Tracker,
    history: Option<History>,
) -> Equilibrium {
    let certificate = Certificate {
        method: config.method.name().to_string(),
        gamma: config.gamma,
        epsilon: config.epsilon,
        iterations,
        primal_value: outcome.primal,
        dual_value: outcome.dual,
        gap: outcome.primal + outcome.dual,
        capacity_violation: outcome.violation,
        converged,
        gradient_evaluations,
        max_lipschitz,
        trace: tracker.trace,
    };
    Equilibrium {
        t_star: DualPoint {
            t: outcome.t,
            gamma: config.gamma,
        },
        f_star: EdgeFlow { f: outcome.flow },
        certificate,
        history,
    }
}

/// Evaluates the certificate at the dual point `x` (the method's output
/// sequence) for the current averaged or pointwise primal.
fn assess(
    network: &Network,
    smoother: &Smoother<'_>,
    config: &SolverConfig,
    averager: &PrimalAverager,
    x: &[f64],
    psi_x: Option<f64>,
) -> Result<Outcome> {
    let dual_point = DualPoint {
        t: x.to_vec(),
        gamma: config.gamma,
    };
    let conj = conjugate_sum(network, x)?;
    if config.averaging {
        let psi = match psi_x {
            Some(v) => v,
            None => smoother.psi_total(&dual_point)?,
        };
        let (flow, entropy) = averager.average();
        let (primal, violation) = certificate_primal(network, &flow, entropy, x);
        Ok(Outcome {
            t: x.to_vec(),
            flow,
            primal,
            dual: psi + conj,
            violation,
        })
    } else {
        let ev = smoother.evaluate(&dual_point)?;
        let entropy = gibbs_entropy_term(&ev, x);
        let (primal, violation) = certificate_primal(network, &ev.flow.f, entropy, x);
        Ok(Outcome {
            t: x.to_vec(),
            flow: ev.flow.f,
            primal,
            dual: ev.value + conj,
            violation,
        })
    }
}

fn success(config: &SolverConfig, outcome: &Outcome) -> bool {
    outcome.primal + outcome.dual <= config.epsilon && outcome.violation <= config.epsilon
}

fn trace_point(k: usize, o: &Outcome) -> TracePoint {
    TracePoint {
        iteration: k,
        gap: o.primal + o.dual,
        dual_value: o.dual,
        primal_value: o.primal,
    }
}

/// Composite fast gradient (similar triangles) with the fixed constant
/// `L̃₂`, weights `a_i = (i+1)/(2L)` and `A_k = (k+1)(k+2)/(4L)`.
pub fn solve_dual_fgm(network: &Network, config: &SolverConfig) -> Result<Equilibrium> {
    config.validate()?;
    let smoother = Smoother::new(network);
    let gamma = config.gamma;
    let lipschitz = dual_lipschitz_bound(&smoother, gamma);
    log::debug!("dual-fgm: L = {lipschitz:.6e}");
    let t_free = network.free_flow_times();
    let mut x = t_free.clone();
    let mut u = t_free.clone();
    let mut a = 0.0;
    let mut averager = PrimalAverager::new(network.num_edges(), config.keep_history);
    let mut tracker = Tracker { trace: Vec::new() };
    let mut last = None;
    let mut iterations = 0;
    let mut converged = false;
    for k in 0..config.max_iters {
        let alpha = (k as f64 + 1.0) / (2.0 * lipschitz);
        let y = combine(alpha, &u, a, &x, &t_free);
        let ev = smoother.evaluate(&DualPoint { t: y.clone(), gamma })?;
        let grad: Vec<f64> = ev.flow.f.iter().map(|f| -f).collect();
        u = composite_prox_step(network, &DualPoint { t: u, gamma }, &grad, 1.0 / alpha)?.t;
        x = combine(alpha, &u, a, &x, &t_free);
        a += alpha;
        averager.add(alpha, &y, &ev);
        iterations = k + 1;
        let outcome = assess(network, &smoother, config, &averager, &x, None)?;
        if !(outcome.primal + outcome.dual).is_finite() {
            return Err(Error::Diverged { iteration: iterations });
        }
        converged = success(config, &outcome);
        tracker.record(trace_point(iterations, &outcome), converged);
        last = Some(outcome);
        if converged {
            break;
        }
    }
    let outcome = last.expect("at least one iteration");
    tracker.record(trace_point(iterations, &outcome), true);
    log::info!(
        "dual-fgm: {} iterations, gap {:.3e}",
        iterations,
        outcome.primal + outcome.dual
    );
    Ok(finish(
        config,
        outcome,
        iterations,
        converged,
        iterations,
        Some(lipschitz),
        tracker,
        averager.history,
    ))
}

/// Secant estimate of the local Lipschitz constant of `∇γψ` at `t̄`.
fn secant_lipschitz(smoother: &Smoother<'_>, gamma: f64, t: &[f64]) -> Result<f64> {
    let f0 = smoother.flow_from_dual(&DualPoint {
        t: t.to_vec(),
        gamma,
    })?;
    let shifted: Vec<f64> = t
        .iter()
        .enumerate()
        .map(|(e, &te)| te + 1e-3 * (1.0 + te) * if e % 2 == 0 { 1.0 } else { 0.5 })
        .collect();
    let f1 = smoother.flow_from_dual(&DualPoint {
        t: shifted.clone(),
        gamma,
    })?;
    let num = norm(&f0.f.iter().zip(&f1.f).map(|(a, b)| a - b).collect::<Vec<_>>());
    let den = norm(&t.iter().zip(&shifted).map(|(a, b)| a - b).collect::<Vec<_>>());
    let est = num / den;
    Ok(if est > 0.0 && est.is_finite() { est } else { 1.0 })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Universal composite fast gradient: the local constant is halved at the
/// start of each iteration and doubled until the upper model holds with
/// slack `ε a/(2A)`. Needs no global constant.
pub fn solve_dual_universal(network: &Network, config: &SolverConfig) -> Result<Equilibrium> {
    config.validate()?;
    let smoother = Smoother::new(network);
    let gamma = config.gamma;
    let t_free = network.free_flow_times();
    let mut lipschitz = match config.initial_lipschitz_guess {
        Some(l) if l > 0.0 => l,
        _ => secant_lipschitz(&smoother, gamma, &t_free)?,
    };
    let mut x = t_free.clone();
    let mut u = t_free.clone();
    let mut a = 0.0;
    let mut averager = PrimalAverager::new(network.num_edges(), config.keep_history);
    let mut tracker = Tracker { trace: Vec::new() };
    let mut last = None;
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut max_l = 0.0f64;
    let mut converged = false;
    for k in 0..config.max_iters {
        lipschitz /= 2.0;
        let (alpha, y, ev, u_new, x_new, psi_x) = loop {
            let alpha = (1.0 + (1.0 + 4.0 * lipschitz * a).sqrt()) / (2.0 * lipschitz);
            let y = combine(alpha, &u, a, &x, &t_free);
            let ev = smoother.evaluate(&DualPoint { t: y.clone(), gamma })?;
            evaluations += 1;
            let grad: Vec<f64> = ev.flow.f.iter().map(|f| -f).collect();
            let u_new =
                composite_prox_step(network, &DualPoint { t: u.clone(), gamma }, &grad, 1.0 / alpha)?
                    .t;
            let x_new = combine(alpha, &u_new, a, &x, &t_free);
            let psi_x = smoother.psi_total(&DualPoint {
                t: x_new.clone(),
                gamma,
            })?;
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((xn, yi), gi) in x_new.iter().zip(&y).zip(&grad) {
                let d = xn - yi;
                lin += gi * d;
                sq += d * d;
            }
            let model =
                ev.value + lin + 0.5 * lipschitz * sq + config.epsilon * alpha / (2.0 * (a + alpha));
            if psi_x <= model {
                break (alpha, y, ev, u_new, x_new, psi_x);
            }
            lipschitz *= 2.0;
            if !lipschitz.is_finite() || lipschitz > 1e300 {
                return Err(Error::Diverged { iteration: k + 1 });
            }
        };
        max_l = max_l.max(lipschitz);
        u = u_new;
        x = x_new;
        a += alpha;
        averager.add(alpha, &y, &ev);
        iterations = k + 1;
        let outcome = assess(network, &smoother, config, &averager, &x, Some(psi_x))?;
        if !(outcome.primal + outcome.dual).is_finite() {
            return Err(Error::Diverged { iteration: iterations });
        }
        converged = success(config, &outcome);
        tracker.record(trace_point(iterations, &outcome), converged);
        last = Some(outcome);
        if converged {
            break;
        }
    }
    let outcome = last.expect("at least one iteration");
    tracker.record(trace_point(iterations, &outcome), true);
    log::info!(
        "dual-universal: {} iterations, {} gradient evaluations, gap {:.3e}",
        iterations,
        evaluations,
        outcome.primal + outcome.dual
    );
    Ok(finish(
        config,
        outcome,
        iterations,
        converged,
        evaluations,
        Some(max_l),
        tracker,
        averager.history,
    ))
}

/// Default radius for the stochastic step: `‖τ(f̄) − t̄‖₂` at capacity
/// flows, or `‖t̄‖₂` when that vanishes (stable dynamics).
pub fn default_smd_radius(network: &Network) -> f64 {
    let r = norm(
        &network
            .edges()
            .iter()
            .map(|e| e.cost.cost_unchecked(e.cost.capacity) - e.cost.t_free)
            .collect::<Vec<_>>(),
    );
    if r > 0.0 {
        r
    } else {
        norm(&network.free_flow_times())
    }
}

/// Stochastic mirror descent (Euclidean prox on `t ≥ t̄`) with one sampled
/// route per step, step `η_k = c/√(k+1)`, `c = R̂/M̃₂` and
/// `M̃₂ = √H · Σ_w d_w`. The iterates are averaged with weights `η_k`.
///
/// The certificate is evaluated exactly at the averaged point at
/// iterations `2^j` and every 1024 steps. For `γ = 0` the sampled route of
/// each step is a shortest route of the sampled pair, and the primal flow
/// is the per-pair `η`-weighted mean of those routes loaded with `d_w`.
pub fn solve_dual_smd(network: &Network, config: &SolverConfig) -> Result<Equilibrium> {
    config.validate()?;
    let smoother = Smoother::new(network);
    let gamma = config.gamma;
    let total = network.total_demand();
    let h = (0..network.ods().len())
        .map(|w| smoother.max_route_norm_sq(w))
        .fold(1.0f64, f64::max);
    let m2 = h.sqrt() * total;
    let radius = config.smd_radius.unwrap_or_else(|| default_smd_radius(network));
    let c = radius / m2;
    let od_dist = od_distribution(network)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let m = network.num_edges();
    let mut t = network.free_flow_times();
    let mut weighted = vec![0.0; m];
    let mut weight = 0.0;
    let n_od = network.ods().len();
    let mut route_load = vec![vec![0.0; m]; if gamma == 0.0 { n_od } else { 0 }];
    let mut route_weight = vec![0.0; route_load.len()];
    let mut tracker = Tracker { trace: Vec::new() };
    let mut last = None;
    let mut iterations = 0;
    let mut converged = false;
    for k in 0..config.max_iters {
        let eta = c / ((k + 1) as f64).sqrt();
        for (acc, ti) in weighted.iter_mut().zip(&t) {
            *acc += eta * ti;
        }
        weight += eta;
        let point = DualPoint { t, gamma };
        let w = od_dist.sample(&mut rng);
        let pots = smoother.potentials_for_od(&point, w)?;
        let route = smoother.sample_path_with(&point, w, &pots, &mut rng)?;
        let mut grad = vec![0.0; m];
        for &e in &route.edges {
            grad[e] -= total;
        }
        if gamma == 0.0 {
            let d = network.ods()[w].demand;
            for &e in &route.edges {
                route_load[w][e] += eta * d;
            }
            route_weight[w] += eta;
        }
        t = composite_prox_step(network, &point, &grad, 1.0 / eta)?.t;
        iterations = k + 1;
        let report = iterations.is_power_of_two()
            || iterations % 1024 == 0
            || iterations == config.max_iters;
        if !report {
            continue;
        }
        let avg: Vec<f64> = weighted.iter().map(|v| v / weight).collect();
        let ev = smoother.evaluate(&DualPoint {
            t: avg.clone(),
            gamma,
        })?;
        let conj = conjugate_sum(network, &avg)?;
        let (flow, entropy) = if gamma > 0.0 || route_weight.contains(&0.0) {
            // pairs not sampled yet fall back to the loads at the average
            (ev.flow.f.clone(), if gamma > 0.0 { gibbs_entropy_term(&ev, &avg) } else { 0.0 })
        } else {
            let mut flow = vec![0.0; m];
            for (load, &wt) in route_load.iter().zip(&route_weight) {
                for (acc, v) in flow.iter_mut().zip(load) {
                    *acc += v / wt;
                }
            }
            (flow, 0.0)
        };
        let (primal, violation) = certificate_primal(network, &flow, entropy, &avg);
        let outcome = Outcome {
            t: avg,
            flow,
            primal,
            dual: ev.value + conj,
            violation,
        };
        if !(outcome.primal + outcome.dual).is_finite() {
            return Err(Error::Diverged { iteration: iterations });
        }
        converged = success(config, &outcome);
        tracker.record(trace_point(iterations, &outcome), true);
        last = Some(outcome);
        if converged {
            break;
        }
    }
    let outcome = last.expect("the final iteration is always reported");
    log::info!(
        "dual-smd: {} iterations, gap {:.3e}",
        iterations,
        outcome.primal + outcome.dual
    );
    Ok(finish(
        config, outcome, iterations, converged, iterations, None, tracker, None,
    ))
}

/// Dispatches on [`SolverConfig::method`].
pub fn solve(network: &Network, config: &SolverConfig) -> Result<Equilibrium> {
    match config.method {
        DualMethod::Fgm => solve_dual_fgm(network, config),
        DualMethod::Universal => solve_dual_universal(network, config),
        DualMethod::Smd => solve_dual_smd(network, config),
    }
}
