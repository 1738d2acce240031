#![allow(dead_code)]

use eqk_core::{instances, DualPoint, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Times drawn uniformly in `[t̄, 2.5 t̄]` per edge.
pub fn random_dual(net: &Network, gamma: f64, rng: &mut impl Rng) -> DualPoint {
    let t = net
        .edges()
        .iter()
        .map(|e| e.cost.t_free * (1.0 + 1.5 * rng.random::<f64>()))
        .collect();
    DualPoint::new(t, gamma).unwrap()
}

/// Acyclic instances with few enough paths for enumeration.
pub fn small_dags() -> Vec<(&'static str, Network)> {
    instances::catalogue()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
