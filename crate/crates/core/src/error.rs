use alloc::string::String;

/// Errors produced while building instances or running solvers.
#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// A record of the input tables could not be accepted.
    #[error("row {row}, column `{column}`: {message}")]
    InvalidRecord {
        /// 1-based data row (header excluded).
        row: usize,
        column: String,
        message: String,
    },
    #[error("edge {edge}: nonpositive capacity")]
    NonpositiveCapacity { edge: usize },
    #[error("edge {edge}: nonpositive free-flow time")]
    NonpositiveFreeFlowTime { edge: usize },
    #[error("edge {edge}: invalid BPR parameters (rho = {rho}, mu_power = {mu_power})")]
    InvalidBprParameters { edge: usize, rho: f64, mu_power: f64 },
    #[error("edge {edge} is a self-loop at vertex {vertex}")]
    SelfLoop { edge: usize, vertex: usize },
    #[error("edge {edge}: endpoint {vertex} out of range for {num_vertices} vertices")]
    VertexOutOfRange {
        edge: usize,
        vertex: usize,
        num_vertices: usize,
    },
    #[error("OD pair {od}: nonpositive demand {demand}")]
    NonpositiveDemand { od: usize, demand: f64 },
    #[error("OD pair {od}: origin equals destination")]
    DegenerateOd { od: usize },
    #[error("unreachable OD pair {od} ({origin} -> {destination})")]
    UnreachableOd {
        od: usize,
        origin: String,
        destination: String,
    },
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    /// A flow exceeds the hard capacity of a stable-dynamics edge.
    #[error("flow {flow} exceeds capacity {capacity} of a stable-dynamics edge")]
    CapacityExceeded { flow: f64, capacity: f64 },
    #[error("negative flow {0}")]
    NegativeFlow(f64),
    /// A time lies outside the domain of the conjugate cost (`t < t_free`).
    #[error("time {time} outside the conjugate domain (free-flow time {t_free})")]
    OutsideDomain { time: f64, t_free: f64 },
    #[error("the topological order for sink {sink} is not valid (directed cycle)")]
    InvalidOrder { sink: usize },
    #[error("vector length {got} does not match expected length {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no path from origin to destination of OD pair {od}")]
    NoPath { od: usize },
    #[error("sampled walk exceeded {limit} steps; potentials are inconsistent")]
    WalkTooLong { limit: usize },
    #[error("path enumeration exceeded {limit} paths for OD pair {od}")]
    TooManyPaths { od: usize, limit: usize },
    #[error("path set is truncated; complete enumeration is required")]
    TruncatedPathSet,
    #[error("scalar solver did not converge on edge {edge} after {iterations} iterations")]
    ScalarNonConvergence { edge: usize, iterations: usize },
    #[error("non-finite objective at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("path flow is outside the feasible set by {violation}")]
    InfeasiblePathFlow { violation: f64 },
    #[error("{0}")]
    Unsupported(String),
    #[error("oracle did not converge: {0}")]
    OracleNonConvergence(String),
}

pub type Result<T> = core::result::Result<T, Error>;
