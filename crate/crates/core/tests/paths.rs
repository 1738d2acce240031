mod common;

use common::{max_abs_diff, rng};
use eqk_core::dual::{solve_dual_fgm, DualMethod, SolverConfig};
use eqk_core::oracles::primal_minimize_tiny;
use eqk_core::paths::{
    entropy_prox_step, penalty_f_step, primal_objective, solve_path_fgm, solve_penalty, PathFgmConfig, PathFlow,
    PathSet, PenaltyConfig,
};
use eqk_core::{instances, CostModel, CostParams, Network};
use proptest::prelude::*;
use rand::Rng;

/// Prox objective on one simplex of mass `d` (unnormalized KL anchor).
fn prox_objective(x: &[f64], u: &[f64], g: &[f64], step: f64, gamma: f64, d: f64) -> f64 {
    x.iter()
        .zip(u)
        .zip(g)
        .map(|((&xi, &ui), &gi)| step * (gi * xi + gamma * xi * (xi / d).ln()) + d * xi * (xi / ui).ln())
        .sum()
}

fn project_simplex(v: &mut [f64], mass: f64, floor: f64) {
    let mut sorted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let target = mass - floor * v.len() as f64;
    let (mut cum, mut shift) = (0.0, 0.0);
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let c = (cum - target) / (i + 1) as f64;
        if s - c > 0.0 {
            shift = c;
        }
    }
    for x in v.iter_mut() {
        *x = floor + (*x - floor - shift).max(0.0);
    }
}

/// Projected gradient on the prox subproblem.
fn prox_by_projected_gradient(u: &[f64], g: &[f64], step: f64, gamma: f64, d: f64) -> Vec<f64> {
    let mut x = u.to_vec();
    for _ in 0..10_000 {
        let curv = step * gamma + d;
        let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let eta = 0.5 * xmin / curv;
        let grad: Vec<f64> = x
            .iter()
            .zip(u)
            .zip(g)
            .map(|((&xi, &ui), &gi)| step * (gi + gamma * ((xi / d).ln() + 1.0)) + d * ((xi / ui).ln() + 1.0))
            .collect();
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi -= eta * gi;
        }
        project_simplex(&mut x, d, 1e-300);
    }
    x
}

#[test]
fn prox_step_matches_projected_gradient() {
    let net = parallel_n(5);
    let ps = PathSet::enumerate(&net, 10).unwrap();
    let mut r = rng(21);
    for _ in 0..20 {
        let raw: Vec<f64> = (0..5).map(|_| 0.2 + r.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let u: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let g: Vec<f64> = (0..5).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
        let step = 0.1 + 1.5 * r.random::<f64>();
        let gamma = 2.0 * r.random::<f64>();
        let x = entropy_prox_step(&ps, &PathFlow { x: u.clone() }, &g, step, gamma).unwrap();
        let reference = prox_by_projected_gradient(&u, &g, step, gamma, 1.0);
        assert!(max_abs_diff(&x.x, &reference) <= 1e-8, "{:?} vs {:?}", x.x, reference);
        assert!(prox_objective(&x.x, &u, &g, step, gamma, 1.0) <= prox_objective(&reference, &u, &g, step, gamma, 1.0) + 1e-12);
    }
}

fn parallel_n(n: usize) -> Network {
    let costs: Vec<CostParams> = (0..n).map(|i| CostParams::bpr(1.0 + i as f64 * 0.3, 2.0, 0.5, 0.5)).collect();
    instances::parallel(&costs, 1.0)
}

#[test]
fn prox_steps_stay_on_the_simplexes() {
    let net = instances::grid(3, 3, 1.0);
    let ps = PathSet::enumerate(&net, 100).unwrap();
    let mut x = ps.uniform_flow();
    let mut r = rng(22);
    for _ in 0..1000 {
        let g: Vec<f64> = (0..ps.num_paths()).map(|_| 10.0 * r.random::<f64>() - 5.0).collect();
        x = entropy_prox_step(&ps, &x, &g, 0.5, 0.3).unwrap();
        assert!(ps.feasibility_violation(&x.x) <= 1e-12);
    }
}

#[test]
fn path_fgm_matches_projected_gradient_primal() {
    for net in [instances::parallel2(), instances::triangle()] {
        let ps = PathSet::enumerate(&net, 100).unwrap();
        let sol = solve_path_fgm(&net, &ps, &PathFgmConfig::new(1.0, 1e-10)).unwrap();
        assert!(sol.certificate.converged);
        assert!(ps.feasibility_violation(&sol.x.x) <= 1e-12 * net.total_demand());
        let tiny = primal_minimize_tiny(&net, 1.0, 200_000).unwrap();
        let value = primal_objective(&net, &ps, &sol.x, 1.0).unwrap();
        assert!(value <= tiny.objective + 1e-9, "{value} vs {}", tiny.objective);
        assert!(max_abs_diff(&sol.flow.f, &tiny.edge_flow) <= 1e-3);
    }
}

#[test]
fn strongly_convex_restarts_reach_the_same_point() {
    let net = instances::grid(3, 3, 1.0);
    let ps = PathSet::enumerate(&net, 100).unwrap();
    let plain = solve_path_fgm(&net, &ps, &PathFgmConfig::new(1.0, 1e-10)).unwrap();
    let mut cfg = PathFgmConfig::new(1.0, 1e-10);
    cfg.strongly_convex = true;
    let restarted = solve_path_fgm(&net, &ps, &cfg).unwrap();
    assert!(restarted.certificate.converged);
    assert!(max_abs_diff(&plain.flow.f, &restarted.flow.f) <= 1e-4);
}

#[test]
fn methods_agree_on_small_networks() {
    for (name, net) in [
        ("parallel-2", instances::parallel2()),
        ("parallel-3", instances::parallel3()),
        ("triangle", instances::triangle()),
        ("grid-3x3", instances::grid(3, 3, 1.0)),
    ] {
        let tol = 1e-4 * net.total_demand();
        let ps = PathSet::enumerate(&net, 200).unwrap();
        let path = solve_path_fgm(&net, &ps, &PathFgmConfig::new(1.0, 1e-12)).unwrap();
        let dual = solve_dual_fgm(&net, &SolverConfig::new(DualMethod::Fgm, 1.0, 1e-10)).unwrap();
        assert!(max_abs_diff(&path.flow.f, &dual.f_star.f) <= tol, "{name}: path vs dual");
        let mut cfg = PenaltyConfig::new(1.0, 1e-8).with_lambda(1e-6).with_residual_tolerance(1e-4);
        cfg.max_iters = 400_000;
        let pen = solve_penalty(&net, &ps, &cfg).unwrap();
        assert!(pen.converged, "{name}: gap {} residual {}", pen.gap, pen.residual);
        assert!(max_abs_diff(&pen.f.f, &dual.f_star.f) <= tol, "{name}: penalty vs dual {:?} {:?}", pen.f.f, dual.f_star.f);
    }
}

#[test]
fn penalty_handles_stable_dynamics() {
    let net = instances::stable_dynamics_parallel2();
    let ps = PathSet::enumerate(&net, 10).unwrap();
    let mut cfg = PenaltyConfig::new(0.5, 1e-4).with_lambda(1e-5);
    cfg.max_iters = 200_000;
    let sol = solve_penalty(&net, &ps, &cfg).unwrap();
    assert!(sol.converged);
    for (e, edge) in net.edges().iter().enumerate() {
        assert!(sol.f.f[e] <= edge.cost.capacity);
    }
    assert!(sol.gap >= -1e-12 && sol.objective >= sol.lower_bound - 1e-15);
}

#[test]
fn penalty_bound_brackets_the_objective() {
    let net = instances::triangle();
    let ps = PathSet::enumerate(&net, 10).unwrap();
    let mut cfg = PenaltyConfig::new(1.0, 1e-4);
    cfg.max_iters = 500;
    let sol = solve_penalty(&net, &ps, &cfg).unwrap();
    for p in &sol.trace {
        assert!(p.gap >= -1e-9 * (1.0 + p.primal_value.abs()), "{}", p.gap);
    }
    assert!(sol.trace.windows(2).all(|w| w[1].primal_value <= w[0].primal_value));
}

/// Index of the smallest value of a convex function sampled on
/// `lo + h·i`, `i = 0..=n`, by bisection on forward differences.
fn grid_argmin(phi: impl Fn(f64) -> f64, lo: f64, h: f64, n: usize) -> f64 {
    let (mut a, mut b) = (0usize, n);
    while a < b {
        let mid = (a + b) / 2;
        if phi(lo + (mid + 1) as f64 * h) < phi(lo + mid as f64 * h) {
            a = mid + 1;
        } else {
            b = mid;
        }
    }
    lo + a as f64 * h
}

fn f_step_residual(c: &CostParams, y: f64, lambda: f64, f: f64) -> f64 {
    match c.model {
        CostModel::Bpr => {
            if f == 0.0 {
                (lambda * c.t_free - y).min(0.0).abs()
            } else {
                let r = f + lambda * c.cost(f).unwrap() - y;
                r.abs() / 1f64.max(y.abs()).max(f).max(lambda * c.cost(f).unwrap())
            }
        }
        CostModel::StableDynamics => (f - (y - lambda * c.t_free).clamp(0.0, c.capacity)).abs(),
    }
}

fn params() -> impl Strategy<Value = CostParams> {
    (
        0.2f64..4.0,
        0.5f64..10.0,
        0.0f64..2.0,
        prop_oneof![Just(0.25), Just(0.5), Just(1.0), Just(1.0 / 32.0)],
        any::<bool>(),
    )
        .prop_map(|(t, cap, rho, mu, sd)| if sd { CostParams::stable_dynamics(t, cap) } else { CostParams::bpr(t, cap, rho, mu) })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn f_step_is_the_scalar_minimizer(c in params(), y in -5.0f64..15.0, lambda in 0.01f64..5.0) {
        let f = penalty_f_step(&c, y, lambda).unwrap();
        prop_assert!(f_step_residual(&c, y, lambda, f) <= 1e-12);
        let upper = match c.model { CostModel::Bpr => y.max(0.0) + 1.0, CostModel::StableDynamics => c.capacity };
        let phi = |v: f64| 0.5 * (v - y) * (v - y) + lambda * c.cost_integral(v).unwrap();
        let h = 1e-6;
        let n = (upper / h) as usize;
        let g = grid_argmin(phi, 0.0, h, n);
        prop_assert!((f - g).abs() <= h, "{} vs grid {}", f, g);
        prop_assert!(phi(f) <= phi(g) + 1e-12 * phi(g).abs().max(1.0));
    }
}
