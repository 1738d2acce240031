//! Transport network instances: directed graph, origin–destination demands,
//! and per-edge cost models with their integrals and convex conjugates.
//!
//! Two cost models are supported:
//!
//! * BPR: `τ(f) = t_free · (1 + ρ · (f / capacity)^(1/μ))`, where `μ` is
//!   [`CostParams::mu_power`]; `μ = 1/4` is the classic fourth-power curve.
//! * Stable dynamics: constant time `t_free` for `0 ≤ f ≤ capacity`, with
//!   the capacity acting as a hard bound. It is the `μ → 0+` limit of BPR.
//!
//! The conjugate `σ*(t) = sup_{f ≥ 0} (t f − σ(f))` of the cost integral `σ`
//! has domain `t ≥ t_free`, and its derivative is the inverse cost.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

pub type Vertex = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CostModel {
    Bpr,
    StableDynamics,
}

/// Cost parameters of a single edge.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostParams {
    pub model: CostModel,
    /// Free-flow travel time `t̄ > 0`.
    pub t_free: f64,
    /// Capacity `f̄ > 0`.
    pub capacity: f64,
    /// BPR congestion coefficient `ρ ≥ 0`; ignored for stable dynamics.
    pub rho: f64,
    /// BPR power parameter `μ > 0` (the cost grows like `f^(1/μ)`);
    /// ignored for stable dynamics.
    pub mu_power: f64,
}

impl CostParams {
    pub fn bpr(t_free: f64, capacity: f64, rho: f64, mu_power: f64) -> Self {
        Self {
            model: CostModel::Bpr,
            t_free,
            capacity,
            rho,
            mu_power,
        }
    }

    pub fn stable_dynamics(t_free: f64, capacity: f64) -> Self {
        Self {
            model: CostModel::StableDynamics,
            t_free,
            capacity,
            rho: 0.0,
            mu_power: 0.0,
        }
    }

    /// Checks the parameter ranges; `edge` is only used for error reporting.
    pub fn validate(&self, edge: usize) -> Result<()> {
        if !(self.t_free > 0.0 && self.t_free.is_finite()) {
            return Err(Error::NonpositiveFreeFlowTime { edge });
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(Error::NonpositiveCapacity { edge });
        }
        if self.model == CostModel::Bpr
            && !(self.rho >= 0.0
                && self.rho.is_finite()
                && self.mu_power > 0.0
                && self.mu_power.is_finite())
        {
            return Err(Error::InvalidBprParameters {
                edge,
                rho: self.rho,
                mu_power: self.mu_power,
            });
        }
        Ok(())
    }

    fn check_flow(&self, flow: f64) -> Result<()> {
        if !(flow >= 0.0) {
            return Err(Error::NegativeFlow(flow));
        }
        if self.model == CostModel::StableDynamics && flow > self.capacity {
            return Err(Error::CapacityExceeded {
                flow,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    fn check_time(&self, time: f64) -> Result<()> {
        if !(time >= self.t_free) {
            return Err(Error::OutsideDomain {
                time,
                t_free: self.t_free,
            });
        }
        Ok(())
    }

    /// Travel time `τ(f)`.
    pub fn cost(&self, flow: f64) -> Result<f64> {
        self.check_flow(flow)?;
        Ok(self.cost_unchecked(flow))
    }

    /// `τ(f)` without range checks. For stable dynamics this is `t̄` for any
    /// flow.
    pub(crate) fn cost_unchecked(&self, flow: f64) -> f64 {
        match self.model {
            CostModel::Bpr => {
                self.t_free * (1.0 + self.rho * (flow / self.capacity).powf(1.0 / self.mu_power))
            }
            CostModel::StableDynamics => self.t_free,
        }
    }

    /// `τ'(f)`; zero for stable dynamics.
    pub fn cost_derivative(&self, flow: f64) -> f64 {
        match self.model {
            CostModel::Bpr => {
                if self.rho == 0.0 {
                    return 0.0;
                }
                let p = 1.0 / self.mu_power;
                let r = flow / self.capacity;
                self.t_free * self.rho * p * r.powf(p - 1.0) / self.capacity
            }
            CostModel::StableDynamics => 0.0,
        }
    }

    /// `σ(f) = ∫₀^f τ(z) dz`.
    pub fn cost_integral(&self, flow: f64) -> Result<f64> {
        self.check_flow(flow)?;
        Ok(self.cost_integral_unchecked(flow))
    }

    pub(crate) fn cost_integral_unchecked(&self, flow: f64) -> f64 {
        match self.model {
            CostModel::Bpr => {
                let mu = self.mu_power;
                let r = flow / self.capacity;
                self.t_free * flow
                    + self.t_free * self.rho * self.capacity * r.powf(1.0 + 1.0 / mu) * mu
                        / (1.0 + mu)
            }
            CostModel::StableDynamics => self.t_free * flow,
        }
    }

    /// Convex conjugate `σ*(t)` on its domain `t ≥ t̄`.
    ///
    /// For BPR with `ρ = 0` the domain degenerates to the single point `t̄`.
    pub fn conjugate_cost(&self, time: f64) -> Result<f64> {
        self.check_time(time)?;
        let excess = time - self.t_free;
        if excess == 0.0 {
            return Ok(0.0);
        }
        match self.model {
            CostModel::Bpr => {
                if self.rho == 0.0 {
                    return Err(Error::OutsideDomain {
                        time,
                        t_free: self.t_free,
                    });
                }
                let mu = self.mu_power;
                Ok(self.capacity * (excess / (self.t_free * self.rho)).powf(mu) * excess
                    / (1.0 + mu))
            }
            CostModel::StableDynamics => Ok(self.capacity * excess),
        }
    }

    /// `σ*` extended to every real `t`: zero below `t̄`, `+∞` where the
    /// supremum is unbounded.
    pub fn conjugate_cost_extended(&self, time: f64) -> f64 {
        if time <= self.t_free {
            0.0
        } else {
            self.conjugate_cost(time).unwrap_or(f64::INFINITY)
        }
    }

    /// Derivative of `σ*`, i.e. the flow `f` with `τ(f) = t`.
    ///
    /// At the boundary `t = t̄` this returns 0. For stable dynamics it is the
    /// capacity for every `t > t̄`.
    pub fn conjugate_cost_gradient(&self, time: f64) -> Result<f64> {
        self.check_time(time)?;
        Ok(self.inverse_cost(time))
    }

    pub(crate) fn inverse_cost(&self, time: f64) -> f64 {
        let excess = time - self.t_free;
        if excess <= 0.0 {
            return 0.0;
        }
        match self.model {
            CostModel::Bpr => {
                if self.rho == 0.0 {
                    return 0.0;
                }
                self.capacity * (excess / (self.t_free * self.rho)).powf(self.mu_power)
            }
            CostModel::StableDynamics => self.capacity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Edge {
    pub tail: Vertex,
    pub head: Vertex,
    pub cost: CostParams,
}

/// Origin–destination pair with its demand (vehicles per unit time).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OdPair {
    pub origin: Vertex,
    pub destination: Vertex,
    pub demand: f64,
}

/// Validated, immutable network instance.
#[derive(Debug, Clone)]
pub struct Network {
    names: Vec<String>,
    edges: Vec<Edge>,
    ods: Vec<OdPair>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl Network {
    /// Builds a network over vertices `0..num_vertices` named by their
    /// index. Self-loops are rejected.
    pub fn new(num_vertices: usize, edges: Vec<Edge>, ods: Vec<OdPair>) -> Result<Self> {
        let names = (0..num_vertices).map(|v| v.to_string()).collect();
        Self::with_names(names, edges, ods, false)
    }

    fn with_names(
        names: Vec<String>,
        edges: Vec<Edge>,
        ods: Vec<OdPair>,
        allow_self_loops: bool,
    ) -> Result<Self> {
        let n = names.len();
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            for v in [e.tail, e.head] {
                if v >= n {
                    return Err(Error::VertexOutOfRange {
                        edge: i,
                        vertex: v,
                        num_vertices: n,
                    });
                }
            }
            if e.tail == e.head && !allow_self_loops {
                return Err(Error::SelfLoop {
                    edge: i,
                    vertex: e.tail,
                });
            }
            e.cost.validate(i)?;
            out_edges[e.tail].push(i);
            in_edges[e.head].push(i);
        }
        let network = Self {
            names,
            edges,
            ods,
            out_edges,
            in_edges,
        };
        for (w, od) in network.ods.iter().enumerate() {
            for v in [od.origin, od.destination] {
                if v >= n {
                    return Err(Error::InvalidParameter(format!(
                        "OD pair {w}: vertex {v} out of range"
                    )));
                }
            }
            if !(od.demand > 0.0 && od.demand.is_finite()) {
                return Err(Error::NonpositiveDemand {
                    od: w,
                    demand: od.demand,
                });
            }
            if od.origin == od.destination {
                return Err(Error::DegenerateOd { od: w });
            }
        }
        for (w, od) in network.ods.iter().enumerate() {
            if !network.reaches(od.destination)[od.origin] {
                return Err(Error::UnreachableOd {
                    od: w,
                    origin: network.names[od.origin].clone(),
                    destination: network.names[od.destination].clone(),
                });
            }
        }
        Ok(network)
    }

    pub fn num_vertices(&self) -> usize {
        self.names.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn ods(&self) -> &[OdPair] {
        &self.ods
    }

    pub fn vertex_name(&self, v: Vertex) -> &str {
        &self.names[v]
    }

    pub fn vertex_names(&self) -> &[String] {
        &self.names
    }

    pub fn vertex_index(&self, name: &str) -> Option<Vertex> {
        self.names.iter().position(|n| n == name)
    }

    pub fn out_edges(&self, v: Vertex) -> &[usize] {
        &self.out_edges[v]
    }

    pub fn in_edges(&self, v: Vertex) -> &[usize] {
        &self.in_edges[v]
    }

    pub fn total_demand(&self) -> f64 {
        self.ods.iter().map(|od| od.demand).sum()
    }

    pub fn free_flow_times(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.cost.t_free).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.cost.capacity).collect()
    }

    /// Whether every edge follows the given model.
    pub fn is_uniform_model(&self, model: CostModel) -> bool {
        self.edges.iter().all(|e| e.cost.model == model)
    }

    /// Copy of the network with every edge switched to `model`. BPR
    /// parameters are kept; edges switched from stable dynamics to BPR get
    /// `ρ = 0.15, μ = 1/4`.
    pub fn with_model(&self, model: CostModel) -> Self {
        let mut out = self.clone();
        for e in &mut out.edges {
            match model {
                CostModel::StableDynamics => e.cost.model = CostModel::StableDynamics,
                CostModel::Bpr if e.cost.model != CostModel::Bpr => {
                    e.cost = CostParams::bpr(e.cost.t_free, e.cost.capacity, 0.15, 0.25);
                }
                CostModel::Bpr => {}
            }
        }
        out
    }

    /// Copy with every edge's cost replaced through `f`.
    pub fn map_costs(&self, mut f: impl FnMut(usize, &CostParams) -> CostParams) -> Result<Self> {
        let mut out = self.clone();
        for (i, e) in out.edges.iter_mut().enumerate() {
            e.cost = f(i, &e.cost);
            e.cost.validate(i)?;
        }
        Ok(out)
    }

    /// Marks the vertices with a directed path to `target` (including it).
    pub fn reaches(&self, target: Vertex) -> Vec<bool> {
        let mut seen = vec![false; self.num_vertices()];
        let mut queue = VecDeque::new();
        seen[target] = true;
        queue.push_back(target);
        while let Some(v) = queue.pop_front() {
            for &e in &self.in_edges[v] {
                let u = self.edges[e].tail;
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }

    /// Indices of the distinct destinations, in increasing vertex order,
    /// together with the OD pairs ending at each.
    pub fn sinks(&self) -> Vec<(Vertex, Vec<usize>)> {
        let mut by_sink: BTreeMap<Vertex, Vec<usize>> = BTreeMap::new();
        for (w, od) in self.ods.iter().enumerate() {
            by_sink.entry(od.destination).or_default().push(w);
        }
        by_sink.into_iter().collect()
    }
}

/// Input edge record with vertex names.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub tail: String,
    pub head: String,
    pub cost: CostParams,
}

/// Input OD record with vertex names.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub origin: String,
    pub destination: String,
    pub demand: f64,
}

/// Incremental construction from string-labelled records.
#[derive(Debug, Clone, Default)]
pub struct NetworkBuilder {
    names: Vec<String>,
    index: BTreeMap<String, Vertex>,
    edges: Vec<Edge>,
    ods: Vec<OdPair>,
    allow_self_loops: bool,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn allow_self_loops(mut self, allow: bool) -> Self {
        self.allow_self_loops = allow;
        self
    }

    /// Interns a vertex name, returning its index.
    pub fn vertex(&mut self, name: &str) -> Vertex {
        if let Some(&v) = self.index.get(name) {
            return v;
        }
        let v = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), v);
        v
    }

    pub fn add_edge(&mut self, tail: &str, head: &str, cost: CostParams) -> usize {
        let tail = self.vertex(tail);
        let head = self.vertex(head);
        self.edges.push(Edge { tail, head, cost });
        self.edges.len() - 1
    }

    /// Adds an OD pair. Both vertices must already exist as edge endpoints.
    pub fn add_od(&mut self, origin: &str, destination: &str, demand: f64) -> Result<usize> {
        let o = *self
            .index
            .get(origin)
            .ok_or_else(|| Error::UnknownVertex(origin.to_string()))?;
        let d = *self
            .index
            .get(destination)
            .ok_or_else(|| Error::UnknownVertex(destination.to_string()))?;
        self.ods.push(OdPair {
            origin: o,
            destination: d,
            demand,
        });
        Ok(self.ods.len() - 1)
    }

    pub fn build(self) -> Result<Network> {
        Network::with_names(self.names, self.edges, self.ods, self.allow_self_loops)
    }
}

/// Builds and validates a network from edge and trip records.
///
/// Record-level problems are reported with their 1-based row and column;
/// reachability of every OD pair is checked last.
pub fn load_network(edges: &[EdgeRecord], trips: &[TripRecord]) -> Result<Network> {
    let mut builder = NetworkBuilder::new();
    for (i, rec) in edges.iter().enumerate() {
        let row = i + 1;
        let bad = |column: &str, message: &str| Error::InvalidRecord {
            row,
            column: column.to_string(),
            message: message.to_string(),
        };
        let c = &rec.cost;
        if !(c.capacity > 0.0) {
            return Err(bad("capacity", "nonpositive capacity"));
        }
        if !(c.t_free > 0.0) {
            return Err(bad("t_free", "nonpositive free-flow time"));
        }
        if c.model == CostModel::Bpr {
            if !(c.rho >= 0.0) {
                return Err(bad("rho", "negative rho"));
            }
            if !(c.mu_power > 0.0) {
                return Err(bad("mu_power", "nonpositive mu_power"));
            }
        }
        if rec.tail == rec.head {
            return Err(bad("head", "self-loop"));
        }
        builder.add_edge(&rec.tail, &rec.head, rec.cost);
    }
    for (i, rec) in trips.iter().enumerate() {
        let row = i + 1;
        if !(rec.demand > 0.0) {
            return Err(Error::InvalidRecord {
                row,
                column: "demand".to_string(),
                message: "nonpositive demand".to_string(),
            });
        }
        for (column, name) in [("origin", &rec.origin), ("destination", &rec.destination)] {
            if !builder.index.contains_key(name.as_str()) {
                return Err(Error::InvalidRecord {
                    row,
                    column: column.to_string(),
                    message: format!("unknown vertex `{name}`"),
                });
            }
        }
        builder.add_od(&rec.origin, &rec.destination, rec.demand)?;
    }
    builder.build()
}

/// Vertex order for a single sink, restricted to vertices that reach it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologicalOrder {
    pub sink: Vertex,
    /// Vertices reaching the sink, sink last. Meaningful only when `valid`.
    pub order: Vec<Vertex>,
    /// False when the subgraph reaching the sink has a directed cycle.
    pub valid: bool,
}

/// Orders the vertices that reach `sink` so that every edge between them
/// goes forward and the sink comes last (Kahn's algorithm).
pub fn topological_order(network: &Network, sink: Vertex) -> TopologicalOrder {
    let reach = network.reaches(sink);
    let n = network.num_vertices();
    let mut indegree = vec![0usize; n];
    for e in network.edges() {
        if reach[e.tail] && reach[e.head] {
            indegree[e.head] += 1;
        }
    }
    let members = reach.iter().filter(|&&r| r).count();
    let mut queue: VecDeque<Vertex> = (0..n).filter(|&v| reach[v] && indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(members);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &e in network.out_edges(v) {
            let h = network.edge(e).head;
            if reach[h] {
                indegree[h] -= 1;
                if indegree[h] == 0 {
                    queue.push_back(h);
                }
            }
        }
    }
    let valid = order.len() == members && order.last() == Some(&sink);
    TopologicalOrder { sink, order, valid }
}
