//! Smoothed characteristic functions on a graph.
//!
//! For a time vector `t` and smoothing level `γ > 0`, each OD pair `w`
//! has the value
//!
//! ```text
//! γψ_w(t/γ) = γ · ln Σ_{p ∈ P_w} exp(−g_p(t)/γ),   g_p(t) = Σ_{e ∈ p} t_e,
//! ```
//!
//! a soft maximum of negated path costs. Its negative gradient in `t` is
//! the expected edge load under the Gibbs (logit) route distribution, and
//! as `γ → 0+` it tends to minus the shortest-path cost. The per-sink
//! recursion
//!
//! ```text
//! ψ_v = 0,   ψ_i = γ · ln Σ_{e = (i → k)} exp((ψ_k − t_e)/γ)
//! ```
//!
//! is a smoothed Bellman–Ford step; on sinks whose reaching subgraph is
//! acyclic it runs once in reverse topological order, `O(m)` per sink.
//! Otherwise a layered recursion over walks with at most `H` edges is used
//! (`O(Hm)` per sink). Walks, not simple paths, are what that recursion
//! counts on graphs with directed cycles.
//!
//! All values here are stored in "γ units", i.e. `γψ(t/γ)`, so they read as
//! negated costs. `γ = 0` is accepted and turns every soft maximum into a
//! hard one (plain shortest paths, ties broken by the lowest edge index).
//! The value `−∞` marks an empty path set and propagates through
//! [`log_sum_exp`] without producing NaN.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[allow(unused_imports)]
use num_traits::Float;

use crate::network::{topological_order, Network, TopologicalOrder, Vertex};
use crate::{Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// A dual iterate: per-edge times and the smoothing level.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DualPoint {
    pub t: Vec<f64>,
    pub gamma: f64,
}

impl DualPoint {
    pub fn new(t: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "gamma must be finite and nonnegative, got {gamma}"
            )));
        }
        if let Some(bad) = t.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "non-finite time component {bad}"
            )));
        }
        Ok(Self { t, gamma })
    }

    /// Free-flow times `t̄`.
    pub fn free_flow(network: &Network, gamma: f64) -> Result<Self> {
        Self::new(network.free_flow_times(), gamma)
    }

    fn check(&self, network: &Network) -> Result<()> {
        if self.t.len() != network.num_edges() {
            return Err(Error::DimensionMismatch {
                expected: network.num_edges(),
                got: self.t.len(),
            });
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "gamma must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Per-edge flows.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EdgeFlow {
    pub f: Vec<f64>,
}

impl EdgeFlow {
    pub fn zeros(m: usize) -> Self {
        Self { f: vec![0.0; m] }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
}

/// `ln Σ exp(vᵢ)`, shifted by the maximum. Empty input or all `−∞` gives
/// `−∞`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    soft_max(1.0, values.iter().copied())
}

/// `γ · ln Σ exp(vᵢ/γ)`; the plain maximum when `γ = 0`.
pub(crate) fn soft_max<I>(gamma: f64, values: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || gamma == 0.0 || m == f64::INFINITY {
        return m;
    }
    let s: f64 = values
        .filter(|&v| v > f64::NEG_INFINITY)
        .map(|v| ((v - m) / gamma).exp())
        .sum();
    m + gamma * s.ln()
}

/// Softmax probabilities of `scores / γ`, written into `out`.
///
/// The leading term is normalized as `1 / (1 + Σ exp(sⱼ − s_max))` so no
/// ratio of large exponentials is ever formed. With `γ = 0` all mass goes to
/// the first maximal score.
pub(crate) fn choice_probabilities(gamma: f64, scores: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let (arg, m) = scores
        .iter()
        .enumerate()
        .fold((usize::MAX, f64::NEG_INFINITY), |(ia, ma), (i, &s)| {
            if s > ma {
                (i, s)
            } else {
                (ia, ma)
            }
        });
    if arg == usize::MAX {
        out.resize(scores.len(), 0.0);
        return;
    }
    if gamma == 0.0 {
        out.extend((0..scores.len()).map(|i| if i == arg { 1.0 } else { 0.0 }));
        return;
    }
    let mut rest = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        if i != arg && s > f64::NEG_INFINITY {
            rest += ((s - m) / gamma).exp();
        }
    }
    let lead = 1.0 / (1.0 + rest);
    out.extend(scores.iter().enumerate().map(|(i, &s)| {
        if i == arg {
            lead
        } else if s == f64::NEG_INFINITY {
            0.0
        } else {
            ((s - m) / gamma).exp() * lead
        }
    }));
}

/// Smoothed shortest-path values `γψ_{kv}(t/γ)` towards one sink `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialTable {
    pub sink: Vertex,
    /// `−∞` exactly for vertices without a path to the sink.
    pub values: Vec<f64>,
}

/// One sweep of the smoothed Bellman–Ford recursion in reverse topological
/// order.
pub fn psi_sink_ordered(
    network: &Network,
    dual: &DualPoint,
    order: &TopologicalOrder,
) -> Result<PotentialTable> {
    dual.check(network)?;
    if !order.valid {
        return Err(Error::InvalidOrder { sink: order.sink });
    }
    let mut values = vec![f64::NEG_INFINITY; network.num_vertices()];
    values[order.sink] = 0.0;
    for &i in order.order.iter().rev().skip(1) {
        let vals = &values;
        values[i] = soft_max(
            dual.gamma,
            network
                .out_edges(i)
                .iter()
                .map(|&e| vals[network.edge(e).head] - dual.t[e]),
        );
    }
    Ok(PotentialTable {
        sink: order.sink,
        values,
    })
}

/// Source-side layered tables: `a[l−1][j]` aggregates the walks from the
/// source to `j` with exactly `l` edges, `b[l−1][j]` those with at most `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredTable {
    pub source: Vertex,
    pub horizon: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl LayeredTable {
    /// `b^H` for destination `j`.
    pub fn value(&self, j: Vertex) -> f64 {
        self.b[self.horizon - 1][j]
    }
}

/// Layered recursion from a fixed source over walks of at most `horizon`
/// edges; `O(horizon · m)`.
pub fn psi_source_layered(
    network: &Network,
    dual: &DualPoint,
    source: Vertex,
    horizon: usize,
) -> Result<LayeredTable> {
    dual.check(network)?;
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let n = network.num_vertices();
    let gamma = dual.gamma;
    let mut first = vec![f64::NEG_INFINITY; n];
    for j in 0..n {
        first[j] = soft_max(
            gamma,
            network
                .in_edges(j)
                .iter()
                .filter(|&&e| network.edge(e).tail == source)
                .map(|&e| -dual.t[e]),
        );
    }
    let mut a = Vec::with_capacity(horizon);
    let mut b = Vec::with_capacity(horizon);
    a.push(first.clone());
    b.push(first);
    for l in 1..horizon {
        let prev = &a[l - 1];
        let next: Vec<f64> = (0..n)
            .map(|j| {
                soft_max(
                    gamma,
                    network
                        .in_edges(j)
                        .iter()
                        .map(|&e| prev[network.edge(e).tail] - dual.t[e]),
                )
            })
            .collect();
        let cum: Vec<f64> = b[l - 1]
            .iter()
            .zip(&next)
            .map(|(&x, &y)| soft_max(gamma, [x, y].into_iter()))
            .collect();
        a.push(next);
        b.push(cum);
    }
    Ok(LayeredTable {
        source,
        horizon,
        a,
        b,
    })
}

/// Sink-side layered tables: `c[r][j]` aggregates the walks from `j` to the
/// sink with at most `r` edges (the empty walk counts when `j` is the sink).
#[derive(Debug, Clone, PartialEq)]
pub struct SinkLayers {
    pub sink: Vertex,
    pub horizon: usize,
    pub c: Vec<Vec<f64>>,
}

fn sink_layers(network: &Network, dual: &DualPoint, sink: Vertex, horizon: usize) -> SinkLayers {
    let n = network.num_vertices();
    let mut c = Vec::with_capacity(horizon + 1);
    let mut base = vec![f64::NEG_INFINITY; n];
    base[sink] = 0.0;
    c.push(base);
    for r in 1..=horizon {
        let prev: &Vec<f64> = &c[r - 1];
        let next: Vec<f64> = (0..n)
            .map(|j| {
                let stop = if j == sink { 0.0 } else { f64::NEG_INFINITY };
                soft_max(
                    dual.gamma,
                    core::iter::once(stop).chain(
                        network
                            .out_edges(j)
                            .iter()
                            .map(|&e| prev[network.edge(e).head] - dual.t[e]),
                    ),
                )
            })
            .collect();
        c.push(next);
    }
    SinkLayers { sink, horizon, c }
}

/// Potentials towards one sink, by whichever recursion applies.
#[derive(Debug, Clone, PartialEq)]
pub enum SinkPotentials {
    Ordered(PotentialTable),
    Layered(SinkLayers),
}

impl SinkPotentials {
    /// `γψ_{jv}` for a vertex `j`.
    pub fn value(&self, j: Vertex) -> f64 {
        match self {
            Self::Ordered(p) => p.values[j],
            Self::Layered(l) => l.c[l.horizon][j],
        }
    }
}

#[derive(Debug, Clone)]
struct SinkPlan {
    sink: Vertex,
    order: TopologicalOrder,
    ods: Vec<usize>,
}

/// Value, per-OD values, and expected loads at one dual point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `γψ(t/γ) = Σ_w d_w γψ_w(t/γ)`.
    pub value: f64,
    /// `γψ_w(t/γ)` per OD pair.
    pub per_od: Vec<f64>,
    /// `−∇_t γψ(t/γ)`.
    pub flow: EdgeFlow,
}

/// A sampled route for one OD pair (a walk on cyclic graphs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledPath {
    pub od: usize,
    pub edges: Vec<usize>,
}

/// Evaluates `γψ` and its gradient on a fixed network, caching the sink
/// grouping and the topological orders.
///
/// OD pairs are grouped by destination; each group is one sink pass.
/// With the `parallel` feature, sinks are processed on the rayon pool and
/// reduced in sink order, so results do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct Smoother<'a> {
    network: &'a Network,
    plans: Vec<SinkPlan>,
    od_plan: Vec<usize>,
    horizon: usize,
}

impl<'a> Smoother<'a> {
    pub fn new(network: &'a Network) -> Self {
        let mut od_plan = vec![0; network.ods().len()];
        let plans: Vec<SinkPlan> = network
            .sinks()
            .into_iter()
            .enumerate()
            .map(|(p, (sink, ods))| {
                for &w in &ods {
                    od_plan[w] = p;
                }
                SinkPlan {
                    sink,
                    order: topological_order(network, sink),
                    ods,
                }
            })
            .collect();
        Self {
            network,
            plans,
            od_plan,
            horizon: network.num_vertices().saturating_sub(1).max(1),
        }
    }

    /// Walk-length bound used on sinks with cyclic reaching subgraphs
    /// (default `|V| − 1`).
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    pub fn network(&self) -> &Network {
        self.network
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of distinct destinations.
    pub fn num_sinks(&self) -> usize {
        self.plans.len()
    }

    /// Whether every sink admits the ordered `O(m)` recursion.
    pub fn all_ordered(&self) -> bool {
        self.plans.iter().all(|p| p.order.valid)
    }

    /// Topological order used for the sink of OD pair `od`.
    pub fn order_for_od(&self, od: usize) -> &TopologicalOrder {
        &self.plans[self.od_plan[od]].order
    }

    /// Upper bound on the number of edges (counted with multiplicity) of any
    /// route of OD pair `od`: the longest path length on acyclic sinks,
    /// `H` otherwise.
    pub fn max_route_edges(&self, od: usize) -> usize {
        let plan = &self.plans[self.od_plan[od]];
        if !plan.order.valid {
            return self.horizon;
        }
        let net = self.network;
        let mut depth = vec![usize::MIN; net.num_vertices()];
        let mut reach = vec![false; net.num_vertices()];
        for &v in &plan.order.order {
            reach[v] = true;
        }
        for &i in plan.order.order.iter().rev().skip(1) {
            depth[i] = net
                .out_edges(i)
                .iter()
                .map(|&e| net.edge(e).head)
                .filter(|&k| reach[k])
                .map(|k| depth[k] + 1)
                .max()
                .unwrap_or(0);
        }
        depth[net.ods()[od].origin]
    }

    /// Upper bound on `‖Θ^(p)‖²₂` over the routes of `od`: the longest route
    /// length on acyclic sinks, `H²` for walks on cyclic ones.
    pub fn max_route_norm_sq(&self, od: usize) -> f64 {
        let plan = &self.plans[self.od_plan[od]];
        let h = self.max_route_edges(od) as f64;
        if plan.order.valid {
            h
        } else {
            h * h
        }
    }

    fn potentials(&self, dual: &DualPoint, plan: &SinkPlan) -> SinkPotentials {
        if plan.order.valid {
            let table = psi_sink_ordered(self.network, dual, &plan.order)
                .expect("valid order and checked dual point");
            SinkPotentials::Ordered(table)
        } else {
            SinkPotentials::Layered(sink_layers(self.network, dual, plan.sink, self.horizon))
        }
    }

    /// Potentials towards the destination of OD pair `od`.
    pub fn potentials_for_od(&self, dual: &DualPoint, od: usize) -> Result<SinkPotentials> {
        dual.check(self.network)?;
        Ok(self.potentials(dual, &self.plans[self.od_plan[od]]))
    }

    fn sink_values(&self, pots: &SinkPotentials, plan: &SinkPlan) -> Result<Vec<(usize, f64)>> {
        plan.ods
            .iter()
            .map(|&w| {
                let v = pots.value(self.network.ods()[w].origin);
                if v == f64::NEG_INFINITY {
                    Err(Error::NoPath { od: w })
                } else {
                    Ok((w, v))
                }
            })
            .collect()
    }

    /// Expected loads from the sink's OD pairs, added into `flow`.
    fn sink_flow(&self, dual: &DualPoint, plan: &SinkPlan, pots: &SinkPotentials, flow: &mut [f64]) {
        let net = self.network;
        let n = net.num_vertices();
        let mut scores = Vec::new();
        let mut probs = Vec::new();
        match pots {
            SinkPotentials::Ordered(table) => {
                let psi = &table.values;
                let mut mass = vec![0.0; n];
                for &w in &plan.ods {
                    let od = net.ods()[w];
                    mass[od.origin] += od.demand;
                }
                for &i in &plan.order.order {
                    if i == plan.sink || mass[i] == 0.0 {
                        continue;
                    }
                    let out = net.out_edges(i);
                    scores.clear();
                    scores.extend(out.iter().map(|&e| psi[net.edge(e).head] - dual.t[e]));
                    choice_probabilities(dual.gamma, &scores, &mut probs);
                    for (&e, &p) in out.iter().zip(&probs) {
                        if p > 0.0 {
                            let q = mass[i] * p;
                            flow[e] += q;
                            mass[net.edge(e).head] += q;
                        }
                    }
                }
            }
            SinkPotentials::Layered(layers) => {
                let h = layers.horizon;
                let mut mass = vec![0.0; n];
                for &w in &plan.ods {
                    let od = net.ods()[w];
                    mass[od.origin] += od.demand;
                }
                for r in (1..=h).rev() {
                    let next_c = &layers.c[r - 1];
                    let mut next = vec![0.0; n];
                    for j in 0..n {
                        if mass[j] == 0.0 {
                            continue;
                        }
                        let out = net.out_edges(j);
                        scores.clear();
                        scores.push(if j == plan.sink { 0.0 } else { f64::NEG_INFINITY });
                        scores.extend(out.iter().map(|&e| next_c[net.edge(e).head] - dual.t[e]));
                        choice_probabilities(dual.gamma, &scores, &mut probs);
                        for (&e, &p) in out.iter().zip(&probs[1..]) {
                            if p > 0.0 {
                                let q = mass[j] * p;
                                flow[e] += q;
                                next[net.edge(e).head] += q;
                            }
                        }
                    }
                    mass = next;
                }
            }
        }
    }

    fn map_sinks<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&SinkPlan) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.plans.par_iter().map(f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.plans.iter().map(f).collect()
        }
    }

    /// `γψ(t/γ)` and the per-OD values.
    pub fn values(&self, dual: &DualPoint) -> Result<(f64, Vec<f64>)> {
        dual.check(self.network)?;
        let parts = self.map_sinks(|plan| {
            let pots = self.potentials(dual, plan);
            self.sink_values(&pots, plan)
        });
        self.collect_values(parts)
    }

    fn collect_values(&self, parts: Vec<Result<Vec<(usize, f64)>>>) -> Result<(f64, Vec<f64>)> {
        let mut per_od = vec![0.0; self.network.ods().len()];
        for part in parts {
            for (w, v) in part? {
                per_od[w] = v;
            }
        }
        let value = self
            .network
            .ods()
            .iter()
            .zip(&per_od)
            .map(|(od, v)| od.demand * v)
            .sum();
        Ok((value, per_od))
    }

    /// `γψ(t/γ) = Σ_w d_w γψ_w(t/γ)`.
    pub fn psi_total(&self, dual: &DualPoint) -> Result<f64> {
        Ok(self.values(dual)?.0)
    }

    /// Value and expected edge loads `f = −∇γψ(t/γ)` in one pass per sink.
    pub fn evaluate(&self, dual: &DualPoint) -> Result<Evaluation> {
        dual.check(self.network)?;
        let m = self.network.num_edges();
        let parts = self.map_sinks(|plan| {
            let pots = self.potentials(dual, plan);
            let vals = self.sink_values(&pots, plan)?;
            let mut flow = vec![0.0; m];
            self.sink_flow(dual, plan, &pots, &mut flow);
            Ok((vals, flow))
        });
        let mut flow = vec![0.0; m];
        let mut values = Vec::with_capacity(parts.len());
        for part in parts {
            let (vals, f) = part?;
            for (acc, x) in flow.iter_mut().zip(&f) {
                *acc += x;
            }
            values.push(Ok(vals));
        }
        let (value, per_od) = self.collect_values(values)?;
        Ok(Evaluation {
            value,
            per_od,
            flow: EdgeFlow { f: flow },
        })
    }

    pub fn flow_from_dual(&self, dual: &DualPoint) -> Result<EdgeFlow> {
        Ok(self.evaluate(dual)?.flow)
    }

    /// Samples one route of `od` from the Gibbs distribution, given the
    /// potentials of its sink.
    pub fn sample_path_with<R: Rng + ?Sized>(
        &self,
        dual: &DualPoint,
        od: usize,
        pots: &SinkPotentials,
        rng: &mut R,
    ) -> Result<SampledPath> {
        let net = self.network;
        let pair = net.ods()[od];
        let sink = pair.destination;
        let mut edges = Vec::new();
        let mut scores = Vec::new();
        let mut probs = Vec::new();
        let mut at = pair.origin;
        if pots.value(at) == f64::NEG_INFINITY {
            return Err(Error::NoPath { od });
        }
        match pots {
            SinkPotentials::Ordered(table) => {
                let limit = net.num_edges() * net.num_vertices();
                while at != sink {
                    if edges.len() >= limit {
                        return Err(Error::WalkTooLong { limit });
                    }
                    let out = net.out_edges(at);
                    scores.clear();
                    scores.extend(out.iter().map(|&e| table.values[net.edge(e).head] - dual.t[e]));
                    choice_probabilities(dual.gamma, &scores, &mut probs);
                    let pick = draw(&probs, rng).ok_or(Error::WalkTooLong { limit })?;
                    let e = out[pick];
                    edges.push(e);
                    at = net.edge(e).head;
                }
            }
            SinkPotentials::Layered(layers) => {
                let mut r = layers.horizon;
                loop {
                    let out = net.out_edges(at);
                    scores.clear();
                    scores.push(if at == sink { 0.0 } else { f64::NEG_INFINITY });
                    if r > 0 {
                        let next_c = &layers.c[r - 1];
                        scores.extend(out.iter().map(|&e| next_c[net.edge(e).head] - dual.t[e]));
                    }
                    choice_probabilities(dual.gamma, &scores, &mut probs);
                    let limit = layers.horizon;
                    let pick = draw(&probs, rng).ok_or(Error::WalkTooLong { limit })?;
                    if pick == 0 {
                        break;
                    }
                    let e = out[pick - 1];
                    edges.push(e);
                    at = net.edge(e).head;
                    r -= 1;
                }
            }
        }
        Ok(SampledPath { od, edges })
    }

    /// Sampler of unbiased stochastic estimates of `−∇γψ(t/γ)` at `dual`.
    pub fn gradient_sampler<'s>(&'s self, dual: &'s DualPoint) -> Result<GradientSampler<'s, 'a>> {
        dual.check(self.network)?;
        let pots = self.map_sinks(|plan| self.potentials(dual, plan));
        let od_dist = od_distribution(self.network)?;
        Ok(GradientSampler {
            smoother: self,
            dual,
            pots,
            od_dist,
            total_demand: self.network.total_demand(),
        })
    }
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    // rounding: u landed beyond the accumulated total
    last
}

pub(crate) fn od_distribution(network: &Network) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(network.ods().iter().map(|od| od.demand))
        .map_err(|e| Error::InvalidParameter(alloc::format!("OD weights: {e}")))
}

/// Draws OD pairs proportionally to demand, then one Gibbs route; the
/// whole demand `Σ_w d_w` is loaded on that route.
pub struct GradientSampler<'s, 'a> {
    smoother: &'s Smoother<'a>,
    dual: &'s DualPoint,
    pots: Vec<SinkPotentials>,
    od_dist: WeightedIndex<f64>,
    total_demand: f64,
}

impl GradientSampler<'_, '_> {
    /// One sampled route.
    pub fn sample_route<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SampledPath> {
        let w = self.od_dist.sample(rng);
        let plan = self.smoother.od_plan[w];
        self.smoother
            .sample_path_with(self.dual, w, &self.pots[plan], rng)
    }

    /// One stochastic gradient estimate as a dense edge-flow vector.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EdgeFlow> {
        let route = self.sample_route(rng)?;
        let mut f = vec![0.0; self.smoother.network.num_edges()];
        for e in route.edges {
            f[e] += self.total_demand;
        }
        Ok(EdgeFlow { f })
    }

    pub fn total_demand(&self) -> f64 {
        self.total_demand
    }
}

/// `γψ(t/γ)` for the whole network.
pub fn psi_total(network: &Network, dual: &DualPoint) -> Result<f64> {
    Smoother::new(network).psi_total(dual)
}

/// Expected edge loads `−∇γψ(t/γ)` under the Gibbs route distribution.
pub fn flow_from_dual(network: &Network, dual: &DualPoint) -> Result<EdgeFlow> {
    Smoother::new(network).flow_from_dual(dual)
}

/// One Gibbs-distributed route of OD pair `od`.
pub fn sample_path(network: &Network, dual: &DualPoint, od: usize, seed: u64) -> Result<SampledPath> {
    let smoother = Smoother::new(network);
    let pots = smoother.potentials_for_od(dual, od)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    smoother.sample_path_with(dual, od, &pots, &mut rng)
}

/// One unbiased stochastic estimate of `−∇γψ(t/γ)`.
pub fn sample_stochastic_gradient(network: &Network, dual: &DualPoint, seed: u64) -> Result<EdgeFlow> {
    let smoother = Smoother::new(network);
    let sampler = smoother.gradient_sampler(dual)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sampler.sample(&mut rng)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Estimates `γψ_w(t/γ)` as `E[max_p (−g_p(t) + ξ_p)]` with i.i.d. zero-mean
/// Gumbel noise of scale `γ`. Enumerates the routes of `od`; intended as a
/// test oracle on small instances.
pub fn gumbel_check(
    network: &Network,
    dual: &DualPoint,
    od: usize,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    dual.check(network)?;
    let routes = crate::paths::enumerate_paths(network, od, 10_000, network.num_vertices())?;
    let costs: Vec<f64> = routes
        .iter()
        .map(|p| p.iter().map(|&e| dual.t[e]).sum())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = dual.gamma;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let best = costs
            .iter()
            .map(|&g| {
                let u: f64 = loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                };
                -g + gamma * (-(-u.ln()).ln() - EULER_GAMMA)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        sum += best;
        sum_sq += best * best;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use approx::assert_relative_eq;

    const LN2: f64 = core::f64::consts::LN_2;

    #[test]
    fn log_sum_exp_basics() {
        assert_relative_eq!(log_sum_exp(&[0.0, 0.0]), LN2, epsilon = 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 5.0]), 5.0);
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + LN2, epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn choice_probabilities_sum_to_one() {
        let mut out = Vec::new();
        choice_probabilities(0.3, &[-1.0, -1.2, f64::NEG_INFINITY, -5.0], &mut out);
        assert_relative_eq!(out.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_eq!(out[2], 0.0);
        choice_probabilities(0.0, &[-2.0, -1.0, -1.0], &mut out);
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn chain_potentials() {
        let net = instances::chain(3, 1.0);
        let dual = DualPoint::new(vec![1.0, 1.0], 1.0).unwrap();
        let order = topological_order(&net, 2);
        let table = psi_sink_ordered(&net, &dual, &order).unwrap();
        assert_eq!(table.values, vec![-2.0, -1.0, 0.0]);
    }

    #[test]
    fn parallel_potential() {
        let net = instances::parallel2();
        let dual = DualPoint::new(vec![1.0, 2.0], 1.0).unwrap();
        let table = psi_sink_ordered(&net, &dual, &topological_order(&net, 1)).unwrap();
        let expected = ((-1.0f64).exp() + (-2.0f64).exp()).ln();
        assert_relative_eq!(table.values[0], expected, epsilon = 1e-15);
        assert_relative_eq!(table.values[0], -0.686_738_3, epsilon = 1e-7);
    }

    #[test]
    fn unreachable_vertex_is_neg_infinity() {
        let net = instances::triangle();
        let dual = DualPoint::free_flow(&net, 1.0).unwrap();
        // sink 1: vertex 2 has no path to it
        let table = psi_sink_ordered(&net, &dual, &topological_order(&net, 1)).unwrap();
        assert_eq!(table.values[2], f64::NEG_INFINITY);
        assert_eq!(table.values[1], 0.0);
    }

    #[test]
    fn invalid_order_is_rejected() {
        let net = instances::two_cycle();
        let dual = DualPoint::free_flow(&net, 1.0).unwrap();
        let order = topological_order(&net, 2);
        assert!(matches!(
            psi_sink_ordered(&net, &dual, &order),
            Err(Error::InvalidOrder { sink: 2 })
        ));
    }

    #[test]
    fn layered_base_and_triangle() {
        let net = instances::triangle();
        let dual = DualPoint::new(vec![1.0, 1.0, 3.0], 1.0).unwrap();
        let table = psi_source_layered(&net, &dual, 0, 2).unwrap();
        assert_eq!(table.a[0][1], -1.0);
        assert_eq!(table.b[0][1], -1.0);
        assert_eq!(table.a[0][2], -3.0);
        let expected = ((-2.0f64).exp() + (-3.0f64).exp()).ln();
        assert_relative_eq!(table.b[1][2], expected, epsilon = 1e-14);
        assert_relative_eq!(table.b[1][2], -1.686_738_3, epsilon = 1e-7);
    }

    #[test]
    fn layered_grows_on_cycles() {
        let net = instances::two_cycle();
        let dual = DualPoint::free_flow(&net, 1.0).unwrap();
        let table = psi_source_layered(&net, &dual, 0, 6).unwrap();
        // walks 0→1→0→1→2 appear at length 4
        assert!(table.b[3][2] > table.b[2][2]);
        for l in 1..6 {
            for j in 0..3 {
                assert!(table.b[l][j] >= table.b[l - 1][j]);
            }
        }
    }

    #[test]
    fn psi_total_parallel() {
        let net = instances::parallel2();
        let dual = DualPoint::new(vec![1.0, 2.0], 1.0).unwrap();
        let v = psi_total(&net, &dual).unwrap();
        assert_relative_eq!(v, 10.0 * ((-1.0f64).exp() + (-2.0f64).exp()).ln(), epsilon = 1e-13);
        assert_relative_eq!(v, -6.867_383, epsilon = 1e-6);
    }

    #[test]
    fn single_path_value_and_flow() {
        let net = instances::chain(4, 3.0);
        let dual = DualPoint::new(vec![1.0, 2.0, 0.5], 0.7).unwrap();
        let ev = Smoother::new(&net).evaluate(&dual).unwrap();
        assert_relative_eq!(ev.value, -3.0 * 3.5, epsilon = 1e-14);
        assert_eq!(ev.flow.f, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn parallel_logit_flow() {
        let net = instances::parallel2();
        let dual = DualPoint::new(vec![1.0, 2.0], 1.0).unwrap();
        let f = flow_from_dual(&net, &dual).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        assert_relative_eq!(f.f[0], 10.0 * e1 / (e1 + e2), epsilon = 1e-13);
        assert_relative_eq!(f.f[1], 10.0 * e2 / (e1 + e2), epsilon = 1e-13);
        assert_relative_eq!(f.f[0], 7.310_586, epsilon = 1e-6);
    }

    #[test]
    fn layered_flow_matches_ordered_on_dags() {
        let net = instances::grid(3, 3, 1.0);
        let t: Vec<f64> = (0..net.num_edges()).map(|e| 1.0 + 0.1 * e as f64).collect();
        let dual = DualPoint::new(t, 0.8).unwrap();
        let ordered = Smoother::new(&net);
        let mut forced = Smoother::new(&net);
        for plan in &mut forced.plans {
            plan.order.valid = false;
        }
        let a = ordered.evaluate(&dual).unwrap();
        let b = forced.evaluate(&dual).unwrap();
        assert_relative_eq!(a.value, b.value, max_relative = 1e-12);
        for (x, y) in a.flow.f.iter().zip(&b.flow.f) {
            assert_relative_eq!(x, y, max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_gamma_is_all_or_nothing() {
        let net = instances::parallel2();
        let dual = DualPoint::new(vec![1.0, 2.0], 0.0).unwrap();
        let ev = Smoother::new(&net).evaluate(&dual).unwrap();
        assert_eq!(ev.value, -10.0);
        assert_eq!(ev.flow.f, vec![10.0, 0.0]);
    }

    #[test]
    fn sample_single_path_is_deterministic() {
        let net = instances::chain(4, 3.0);
        let dual = DualPoint::free_flow(&net, 1.0).unwrap();
        let p = sample_path(&net, &dual, 0, 3).unwrap();
        assert_eq!(p.edges, vec![0, 1, 2]);
        let g = sample_stochastic_gradient(&net, &dual, 5).unwrap();
        assert_eq!(g.f, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn sampled_walks_end_at_sink_on_cycles() {
        let net = instances::two_cycle();
        let dual = DualPoint::free_flow(&net, 1.0).unwrap();
        let smoother = Smoother::new(&net);
        let pots = smoother.potentials_for_od(&dual, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = smoother.sample_path_with(&dual, 0, &pots, &mut rng).unwrap();
            assert_eq!(net.edge(*p.edges.last().unwrap()).head, 2);
            assert!(p.edges.len() <= smoother.horizon());
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = instances::parallel2();
        let dual = DualPoint::new(vec![1.0], 1.0).unwrap();
        assert!(matches!(psi_total(&net, &dual), Err(Error::DimensionMismatch { .. })));
    }
}
