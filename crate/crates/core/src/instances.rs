//! Small built-in instances used by tests, the acceptance suite, and the
//! CLI `verify` command. Vertices are numbered from 0.

use alloc::vec;
use alloc::vec::Vec;

use crate::network::{CostParams, Edge, Network, OdPair};

/// Single OD pair `0 → 1` served by one edge per cost entry.
pub fn parallel(costs: &[CostParams], demand: f64) -> Network {
    let edges = costs
        .iter()
        .map(|&cost| Edge {
            tail: 0,
            head: 1,
            cost,
        })
        .collect();
    Network::new(
        2,
        edges,
        vec![OdPair {
            origin: 0,
            destination: 1,
            demand,
        }],
    )
    .expect("parallel instance is valid")
}

/// Two parallel BPR links with linear costs `1 + f₁` and `2(1 + f₂)`,
/// demand 10.
pub fn parallel2() -> Network {
    parallel(
        &[
            CostParams::bpr(1.0, 1.0, 1.0, 1.0),
            CostParams::bpr(2.0, 1.0, 1.0, 1.0),
        ],
        10.0,
    )
}

/// Two parallel links with constant costs 1 and 2, demand 10.
pub fn parallel2_constant() -> Network {
    parallel(
        &[
            CostParams::bpr(1.0, 1.0, 0.0, 1.0),
            CostParams::bpr(2.0, 1.0, 0.0, 1.0),
        ],
        10.0,
    )
}

/// Three parallel fourth-power BPR links, demand 10.
pub fn parallel3() -> Network {
    parallel(
        &[
            CostParams::bpr(1.0, 3.0, 0.5, 0.25),
            CostParams::bpr(1.5, 4.0, 0.5, 0.25),
            CostParams::bpr(2.0, 5.0, 0.5, 0.25),
        ],
        10.0,
    )
}

/// Two parallel stable-dynamics links; the first link's capacity binds.
pub fn stable_dynamics_parallel2() -> Network {
    parallel(
        &[
            CostParams::stable_dynamics(1.0, 5.0),
            CostParams::stable_dynamics(2.0, 10.0),
        ],
        10.0,
    )
}

/// Chain `0 → 1 → … → n−1` with one OD pair end to end.
pub fn chain(n: usize, demand: f64) -> Network {
    let edges = (0..n - 1)
        .map(|i| Edge {
            tail: i,
            head: i + 1,
            cost: CostParams::bpr(1.0, 2.0, 0.15, 0.25),
        })
        .collect();
    Network::new(
        n,
        edges,
        vec![OdPair {
            origin: 0,
            destination: n - 1,
            demand,
        }],
    )
    .expect("chain instance is valid")
}

/// Triangle `0 → 1 → 2` plus the shortcut `0 → 2`, with OD pairs
/// `0 → 2` (demand 5), `1 → 2` (demand 3) and `0 → 1` (demand 2).
pub fn triangle() -> Network {
    let c = |t| CostParams::bpr(t, 4.0, 0.15, 0.25);
    Network::new(
        3,
        vec![
            Edge { tail: 0, head: 1, cost: c(1.0) },
            Edge { tail: 1, head: 2, cost: c(1.0) },
            Edge { tail: 0, head: 2, cost: c(3.0) },
        ],
        vec![
            OdPair { origin: 0, destination: 2, demand: 5.0 },
            OdPair { origin: 1, destination: 2, demand: 3.0 },
            OdPair { origin: 0, destination: 1, demand: 2.0 },
        ],
    )
    .expect("triangle instance is valid")
}

/// `rows × cols` grid with edges pointing right and down. Vertex
/// `r * cols + c`; edges are listed vertex by vertex, right edge first.
/// OD pairs: top-left → bottom-right (demand 4) and top-right →
/// bottom-right (demand 2).
pub fn grid(rows: usize, cols: usize, t_free: f64) -> Network {
    let mut edges = Vec::new();
    let cost = CostParams::bpr(t_free, 2.0, 0.15, 0.25);
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push(Edge { tail: v, head: v + 1, cost });
            }
            if r + 1 < rows {
                edges.push(Edge { tail: v, head: v + cols, cost });
            }
        }
    }
    let last = rows * cols - 1;
    Network::new(
        rows * cols,
        edges,
        vec![
            OdPair { origin: 0, destination: last, demand: 4.0 },
            OdPair { origin: cols - 1, destination: last, demand: 2.0 },
        ],
    )
    .expect("grid instance is valid")
}

/// Two vertices joined in both directions, plus an exit edge: `0 ⇄ 1 → 2`
/// and `0 → 2`. The subgraph reaching vertex 2 has a directed cycle.
pub fn two_cycle() -> Network {
    let c = |t| CostParams::bpr(t, 2.0, 0.15, 0.25);
    Network::new(
        3,
        vec![
            Edge { tail: 0, head: 1, cost: c(1.0) },
            Edge { tail: 1, head: 0, cost: c(1.0) },
            Edge { tail: 1, head: 2, cost: c(1.0) },
            Edge { tail: 0, head: 2, cost: c(2.5) },
        ],
        vec![OdPair { origin: 0, destination: 2, demand: 3.0 }],
    )
    .expect("two-cycle instance is valid")
}

/// Named instances exercised by the verification suite.
pub fn catalogue() -> Vec<(&'static str, Network)> {
    vec![
        ("parallel-2", parallel2()),
        ("parallel-3", parallel3()),
        ("chain", chain(4, 3.0)),
        ("triangle", triangle()),
        ("grid-3x3", grid(3, 3, 1.0)),
    ]
}
