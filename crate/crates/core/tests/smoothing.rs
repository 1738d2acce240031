mod common;

use common::{random_dual, rel_diff, rng, small_dags};
use eqk_core::oracles::{all_simple_paths, gibbs_flow_by_enumeration, psi_by_enumeration};
use eqk_core::smoothing::{
    flow_from_dual, gumbel_check, psi_sink_ordered, psi_source_layered, psi_total, sample_path, Smoother,
};
use eqk_core::{instances, DualPoint, Network};
use proptest::prelude::*;

fn central_difference(net: &Network, dual: &DualPoint, e: usize, h: f64) -> f64 {
    let mut plus = dual.clone();
    let mut minus = dual.clone();
    plus.t[e] += h;
    minus.t[e] -= h;
    (psi_total(net, &plus).unwrap() - psi_total(net, &minus).unwrap()) / (2.0 * h)
}

#[test]
fn ordered_and_layered_match_enumeration() {
    let mut r = rng(11);
    for (name, net) in small_dags() {
        let smoother = Smoother::new(&net);
        let horizon = net.num_vertices() - 1;
        for gamma in [0.1, 1.0, 10.0] {
            for _ in 0..20 {
                let dual = random_dual(&net, gamma, &mut r);
                for (w, od) in net.ods().iter().enumerate() {
                    let brute = psi_by_enumeration(&net, &dual, w).unwrap();
                    let ordered = psi_sink_ordered(&net, &dual, smoother.order_for_od(w)).unwrap();
                    let layered = psi_source_layered(&net, &dual, od.origin, horizon).unwrap();
                    let a = ordered.values[od.origin];
                    let b = layered.value(od.destination);
                    assert!(rel_diff(a, brute) <= 1e-10, "{name} ordered {a} vs {brute}");
                    assert!(rel_diff(b, brute) <= 1e-10, "{name} layered {b} vs {brute}");
                }
            }
        }
    }
}

#[test]
fn layered_envelope_is_monotone() {
    let mut r = rng(12);
    let nets = [instances::grid(3, 3, 1.0), instances::two_cycle(), instances::triangle()];
    for net in &nets {
        let dual = random_dual(net, 0.7, &mut r);
        for source in 0..net.num_vertices() {
            let table = psi_source_layered(net, &dual, source, net.num_vertices() + 2).unwrap();
            for pair in table.b.windows(2) {
                for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                    assert!(hi >= lo, "{hi} < {lo}");
                }
            }
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(13);
    for (name, net) in small_dags() {
        let floor = 1e-4 * net.total_demand();
        for gamma in [0.1, 1.0, 10.0] {
            for _ in 0..5 {
                let dual = random_dual(&net, gamma, &mut r);
                let flow = flow_from_dual(&net, &dual).unwrap();
                let h = 1e-4 * gamma.min(1.0);
                for e in 0..net.num_edges() {
                    let fd = -central_difference(&net, &dual, e, h);
                    let err = (fd - flow.f[e]).abs();
                    assert!(
                        err <= 1e-5 * flow.f[e].abs().max(floor),
                        "{name} γ={gamma} edge {e}: fd {fd} vs {}",
                        flow.f[e]
                    );
                }
            }
        }
    }
}

#[test]
fn loads_match_enumerated_gibbs_distribution() {
    let mut r = rng(14);
    for (name, net) in small_dags() {
        let dual = random_dual(&net, 0.5, &mut r);
        let a = flow_from_dual(&net, &dual).unwrap();
        let b = gibbs_flow_by_enumeration(&net, &dual).unwrap();
        for (x, y) in a.f.iter().zip(&b.f) {
            assert!((x - y).abs() <= 1e-10 * net.total_demand(), "{name}: {x} vs {y}");
        }
    }
}

#[test]
fn loads_conserve_flow() {
    let mut r = rng(15);
    for (name, net) in small_dags() {
        let dual = random_dual(&net, 1.0, &mut r);
        let flow = flow_from_dual(&net, &dual).unwrap();
        let mut balance = vec![0.0; net.num_vertices()];
        for (e, edge) in net.edges().iter().enumerate() {
            balance[edge.tail] -= flow.f[e];
            balance[edge.head] += flow.f[e];
        }
        for od in net.ods() {
            balance[od.origin] += od.demand;
            balance[od.destination] -= od.demand;
        }
        for (v, b) in balance.iter().enumerate() {
            assert!(b.abs() <= 1e-9 * net.total_demand(), "{name} vertex {v}: {b}");
        }
    }
}

#[test]
fn tropical_limit() {
    let mut r = rng(16);
    for (name, net) in small_dags() {
        let base = random_dual(&net, 1.0, &mut r);
        for w in 0..net.ods().len() {
            let paths = all_simple_paths(&net, w, 1000).unwrap();
            let shortest = paths
                .iter()
                .map(|p| p.iter().map(|&e| base.t[e]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let mut prev = f64::INFINITY;
            for gamma in [1.0, 0.1, 0.01, 1e-4] {
                let dual = DualPoint::new(base.t.clone(), gamma).unwrap();
                let smoother = Smoother::new(&net);
                let v = smoother.evaluate(&dual).unwrap().per_od[w];
                // γψ_w ≥ −min cost, shrinking towards it
                let excess = v + shortest;
                assert!(excess >= -1e-12, "{name}: {excess}");
                assert!(excess <= prev, "{name}: not monotone");
                prev = excess;
            }
            assert!(prev <= 1e-4 * (paths.len() as f64).ln().max(1e-12) + 1e-12);
            let hard = Smoother::new(&net)
                .evaluate(&DualPoint::new(base.t.clone(), 0.0).unwrap())
                .unwrap()
                .per_od[w];
            assert!((hard + shortest).abs() <= 1e-12 * shortest);
        }
    }
}

#[test]
fn sampler_is_unbiased() {
    let net = instances::triangle();
    let mut r = rng(17);
    let dual = random_dual(&net, 1.0, &mut r);
    let smoother = Smoother::new(&net);
    let sampler = smoother.gradient_sampler(&dual).unwrap();
    let exact = flow_from_dual(&net, &dual).unwrap();
    let n = 40_000;
    let m = net.num_edges();
    let (mut sum, mut sum_sq) = (vec![0.0; m], vec![0.0; m]);
    let bound = (net.num_vertices() - 1) as f64 * net.total_demand().powi(2);
    for _ in 0..n {
        let g = sampler.sample(&mut r).unwrap();
        assert!(g.f.iter().map(|v| v * v).sum::<f64>() <= bound);
        for e in 0..m {
            sum[e] += g.f[e];
            sum_sq[e] += g.f[e] * g.f[e];
        }
    }
    for e in 0..m {
        let mean = sum[e] / n as f64;
        let var = (sum_sq[e] / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - exact.f[e]).abs() <= 3.0 * se + 1e-12, "edge {e}: {mean} vs {}", exact.f[e]);
    }
}

#[test]
fn sampled_paths_follow_gibbs_frequencies() {
    let net = instances::grid(3, 3, 1.0);
    let mut r = rng(18);
    let dual = random_dual(&net, 1.0, &mut r);
    let paths = all_simple_paths(&net, 0, 100).unwrap();
    let costs: Vec<f64> = paths.iter().map(|p| p.iter().map(|&e| dual.t[e]).sum()).collect();
    let cmin = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = costs.iter().map(|c| (cmin - c).exp()).collect();
    let z: f64 = weights.iter().sum();
    let n = 20_000;
    let mut counts = vec![0usize; paths.len()];
    for seed in 0..n {
        let route = sample_path(&net, &dual, 0, seed as u64).unwrap();
        let k = paths.iter().position(|p| *p == route.edges).expect("sampled a simple path");
        counts[k] += 1;
    }
    for (k, &c) in counts.iter().enumerate() {
        let p = weights[k] / z;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((c as f64 / n as f64 - p).abs() <= 4.0 * se, "path {k}");
    }
}

#[test]
fn gumbel_maximum_matches_soft_value() {
    let net = instances::triangle();
    let mut r = rng(19);
    let dual = random_dual(&net, 0.8, &mut r);
    for w in 0..net.ods().len() {
        let est = gumbel_check(&net, &dual, w, 50_000, 7 + w as u64).unwrap();
        let exact = psi_by_enumeration(&net, &dual, w).unwrap();
        assert!((est.mean - exact).abs() <= 4.0 * est.std_error, "{} vs {exact}", est.mean);
    }
}

#[test]
fn walks_on_cycles_are_counted_up_to_horizon() {
    // edges 0→1, 1→0, 1→2, 0→2; walks 0→2 with at most 3 edges are
    // 0→2, 0→1→2 and 0→1→0→2.
    let net = instances::two_cycle();
    let dual = DualPoint::new(vec![1.0, 2.0, 1.5, 3.0], 1.0).unwrap();
    let table = psi_source_layered(&net, &dual, 0, 3).unwrap();
    let costs: Vec<f64> = net_walk_costs(&net, &dual, 3);
    let expected = costs.iter().map(|c| (-c).exp()).sum::<f64>().ln();
    assert!(rel_diff(table.value(2), expected) <= 1e-12);
}

fn net_walk_costs(net: &Network, dual: &DualPoint, max_len: usize) -> Vec<f64> {
    let od = net.ods()[0];
    let mut out = Vec::new();
    let mut stack = vec![(od.origin, 0usize, 0.0f64)];
    while let Some((v, len, cost)) = stack.pop() {
        if v == od.destination && len > 0 {
            out.push(cost);
        }
        if len == max_len {
            continue;
        }
        for &e in net.out_edges(v) {
            stack.push((net.edge(e).head, len + 1, cost + dual.t[e]));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psi_is_convex_along_segments(seed in 0u64..10_000, gamma in 0.05f64..5.0, s in 0.0f64..1.0) {
        let net = instances::grid(3, 3, 1.0);
        let mut r = rng(seed);
        let a = random_dual(&net, gamma, &mut r);
        let b = random_dual(&net, gamma, &mut r);
        let mid: Vec<f64> = a.t.iter().zip(&b.t).map(|(x, y)| s * x + (1.0 - s) * y).collect();
        let m = DualPoint::new(mid, gamma).unwrap();
        let lhs = psi_total(&net, &m).unwrap();
        let rhs = s * psi_total(&net, &a).unwrap() + (1.0 - s) * psi_total(&net, &b).unwrap();
        prop_assert!(lhs <= rhs + 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn loads_are_nonnegative_and_route_demand(seed in 0u64..10_000, gamma in 0.01f64..20.0) {
        let net = instances::triangle();
        let mut r = rng(seed);
        let dual = random_dual(&net, gamma, &mut r);
        let flow = flow_from_dual(&net, &dual).unwrap();
        prop_assert!(flow.f.iter().all(|&v| v >= 0.0));
        let out_of_zero: f64 = net.out_edges(0).iter().map(|&e| flow.f[e]).sum();
        let demand_from_zero: f64 = net.ods().iter().filter(|o| o.origin == 0).map(|o| o.demand).sum();
        prop_assert!((out_of_zero - demand_from_zero).abs() <= 1e-9 * net.total_demand());
    }
}
