use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eqk_core::instances;
use eqk_core::oracles::psi_by_enumeration;
use eqk_core::DualPoint;
use serde_json::Value;
use tempfile::TempDir;

fn eqk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqk")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

/// Parallel links with costs `1 + f₁` and `2(1 + f₂)`, demand 10.
fn parallel2(dir: &Path) -> (PathBuf, PathBuf) {
    let edges = write(
        dir,
        "edges.csv",
        "tail,head,t_free,capacity,rho,mu_power,model\na,b,1,1,1,1,bpr\na,b,2,1,1,1,bpr\n",
    );
    let trips = write(dir, "trips.csv", "origin,destination,demand\na,b,10\n");
    (edges, trips)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn flows(path: &Path) -> Vec<(f64, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["edge_index", "tail", "head", "flow", "time"]);
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[3].parse().unwrap(), rec[4].parse().unwrap())
        })
        .collect()
}

fn solve_args<'a>(edges: &'a Path, trips: &'a Path, out: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = vec![
        "solve".into(),
        "--edges".into(),
        s(edges).into(),
        "--trips".into(),
        s(trips).into(),
        "--out-flows".into(),
        s(&out.join("flows.csv")).into(),
        "--out-cert".into(),
        s(&out.join("cert.json")).into(),
    ];
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    eqk(&refs)
}

#[test]
fn solve_writes_flows_certificate_and_manifest() {
    let dir = TempDir::new().unwrap();
    let (edges, trips) = parallel2(dir.path());
    let out = run(&solve_args(&edges, &trips, dir.path(), &["--gamma", "1", "--epsilon", "1e-6", "--method", "dual-universal"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let f = flows(&dir.path().join("flows.csv"));
    assert_eq!(f.len(), 2);
    assert!((f[0].0 + f[1].0 - 10.0).abs() < 1e-6);
    let cert = json(&dir.path().join("cert.json"));
    for key in ["method", "gamma", "epsilon", "iterations", "primal_value", "dual_value", "gap", "trace"] {
        assert!(cert.get(key).is_some(), "missing {key}");
    }
    assert_eq!(cert["method"], "dual-universal");
    assert!(cert["gap"].as_f64().unwrap() <= 1e-6);

    let manifest = json(&dir.path().join("cert.manifest.json"));
    assert_eq!(manifest["config"]["method"], "dual-universal");
    assert_eq!(manifest["config"]["gamma"], 1.0);
    assert_eq!(manifest["config"]["epsilon"], 1e-6);
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["inputs"]["edges"], s(&edges));
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn flows_round_trip_exactly() {
    let dir = TempDir::new().unwrap();
    let (edges, trips) = parallel2(dir.path());
    let out = run(&solve_args(&edges, &trips, dir.path(), &["--epsilon", "1e-8"]));
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("flows.csv")).unwrap();
    for line in text.lines().skip(1) {
        for field in line.split(',').skip(3) {
            let v: f64 = field.parse().unwrap();
            assert_eq!(format!("{v:.16e}"), field, "17 significant digits");
        }
    }
    // feeding the flows file back as a t-file reproduces the times exactly
    let psi = eqk(&[
        "psi",
        "--edges",
        s(&edges),
        "--trips",
        s(&trips),
        "--times",
        s(&dir.path().join("flows.csv")),
    ]);
    assert_eq!(psi.status.code(), Some(0), "{}", String::from_utf8_lossy(&psi.stderr));
}

#[test]
fn zero_gamma_with_fast_gradient_is_refused() {
    let dir = TempDir::new().unwrap();
    let (edges, trips) = parallel2(dir.path());
    let out = run(&solve_args(&edges, &trips, dir.path(), &["--gamma", "0", "--method", "dual-fgm"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dual-smd"));
    assert!(!dir.path().join("flows.csv").exists());

    let ok = run(&solve_args(&edges, &trips, dir.path(), &["--gamma", "0", "--method", "dual-smd", "--max-iters", "2000"]));
    assert_eq!(ok.status.code(), Some(2), "SMD runs and stops at the iteration cap");
    assert!(dir.path().join("flows.csv").exists());
}

#[test]
fn auto_gamma_is_echoed_in_manifest() {
    let dir = TempDir::new().unwrap();
    let (edges, trips) = parallel2(dir.path());
    let out = run(&solve_args(&edges, &trips, dir.path(), &["--gamma", "auto", "--target-accuracy", "0.1"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&dir.path().join("cert.manifest.json"));
    let expected = 0.1 / (2.0 * 10.0 * 2f64.ln());
    assert_eq!(manifest["config"]["gamma"].as_f64().unwrap(), expected);
    assert_eq!(manifest["config"]["gamma_source"], "auto");
    assert_eq!(json(&dir.path().join("cert.json"))["gamma"].as_f64().unwrap(), expected);

    let bounded = run(&solve_args(
        &edges,
        &trips,
        dir.path(),
        &["--gamma", "auto", "--target-accuracy", "0.1", "--path-count-bound-per-od", "4"],
    ));
    assert_eq!(bounded.status.code(), Some(0));
    let manifest = json(&dir.path().join("cert.manifest.json"));
    assert_eq!(manifest["config"]["gamma"].as_f64().unwrap(), 0.1 / (2.0 * 10.0 * 4f64.ln()));

    let missing = run(&solve_args(&edges, &trips, dir.path(), &["--gamma", "auto"]));
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn non_convergence_still_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let (edges, trips) = parallel2(dir.path());
    let out = run(&solve_args(&edges, &trips, dir.path(), &["--epsilon", "1e-12", "--max-iters", "3"]));
    assert_eq!(out.status.code(), Some(2));
    let cert = json(&dir.path().join("cert.json"));
    assert_eq!(cert["iterations"], 3);
    assert_eq!(cert["converged"], false);
    assert_eq!(flows(&dir.path().join("flows.csv")).len(), 2);
    assert_eq!(json(&dir.path().join("cert.manifest.json"))["exit_code"], 2);
}

#[test]
fn input_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let (edges, _) = parallel2(dir.path());
    let bad_trips = write(dir.path(), "bad.csv", "origin,destination,demand\na,b,ten\n");
    let out = run(&solve_args(&edges, &bad_trips, dir.path(), &[]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));

    let unknown = write(dir.path(), "unknown.csv", "origin,destination,demand\na,z,1\n");
    let out = run(&solve_args(&edges, &unknown, dir.path(), &[]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("destination"));

    let out = eqk(&["solve", "--edges", "missing.csv", "--trips", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let out = eqk(&["solve", "--method", "newton"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn path_methods_agree_with_dual() {
    let dir = TempDir::new().unwrap();
    let (edges, trips) = parallel2(dir.path());
    let dual = run(&solve_args(&edges, &trips, dir.path(), &["--epsilon", "1e-10"]));
    assert_eq!(dual.status.code(), Some(0));
    let reference = flows(&dir.path().join("flows.csv"));

    let paths_file = dir.path().join("paths.csv");
    let path = run(&solve_args(
        &edges,
        &trips,
        dir.path(),
        &["--method", "path-fgm", "--epsilon", "1e-10", "--out-paths", s(&paths_file)],
    ));
    assert_eq!(path.status.code(), Some(0), "{}", String::from_utf8_lossy(&path.stderr));
    let got = flows(&dir.path().join("flows.csv"));
    for (a, b) in got.iter().zip(&reference) {
        assert!((a.0 - b.0).abs() < 1e-3, "{got:?} vs {reference:?}");
    }
    let table = fs::read_to_string(&paths_file).unwrap();
    assert_eq!(table.lines().collect::<Vec<_>>(), vec!["od_index,path_index,edge_list", "0,0,0", "0,1,1"]);

    let pen = run(&solve_args(
        &edges,
        &trips,
        dir.path(),
        &["--method", "path-penalty", "--epsilon", "1e-8", "--lambda", "1e-5", "--residual-tolerance", "1e-3"],
    ));
    assert_eq!(pen.status.code(), Some(0), "{}", String::from_utf8_lossy(&pen.stderr));
    let cert = json(&dir.path().join("cert.json"));
    assert!(cert["penalty"]["residual"].as_f64().unwrap() <= 1e-3);
    let got = flows(&dir.path().join("flows.csv"));
    for (a, b) in got.iter().zip(&reference) {
        assert!((a.0 - b.0).abs() < 1e-2, "{got:?} vs {reference:?}");
    }
}

#[test]
fn stable_dynamics_override() {
    let dir = TempDir::new().unwrap();
    let edges = write(
        dir.path(),
        "edges.csv",
        "tail,head,t_free,capacity,rho,mu_power,model\na,b,1,5,,,sd\na,b,2,6,,,sd\n",
    );
    let trips = write(dir.path(), "trips.csv", "origin,destination,demand\na,b,10\n");
    let out = run(&solve_args(&edges, &trips, dir.path(), &["--gamma", "0.5", "--epsilon", "1e-5"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let f = flows(&dir.path().join("flows.csv"));
    assert!(f[0].0 <= 5.0 + 1e-5 && f[1].0 <= 6.0 + 1e-5);
    assert!(f[0].1 >= 1.0 && f[1].1 >= 2.0);

    // BPR parameters are required once the override asks for BPR
    let out = run(&solve_args(&edges, &trips, dir.path(), &["--model", "bpr"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));
}

#[test]
fn verify_default_run_passes() {
    let out = eqk(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() > 100);
    let instances: std::collections::BTreeSet<&str> = lines.iter().map(|l| l["instance"].as_str().unwrap()).collect();
    assert_eq!(instances.len(), 5);
    for l in &lines {
        assert_eq!(l["pass"], true);
        assert!(l["abs_deviation"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn verify_only_selects_checks() {
    let out = eqk(&["verify", "--only", "gradient-check"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.is_empty());
    for l in text.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["check"], "gradient-check");
    }
}

#[test]
fn sampler_check_is_reproducible() {
    let a = eqk(&["verify", "--seed", "7", "--only", "sampler"]);
    let b = eqk(&["verify", "--seed", "7", "--only", "sampler"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = eqk(&["verify", "--seed", "8", "--only", "sampler"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn psi_on_chain_and_parallel() {
    let dir = TempDir::new().unwrap();
    let edges = write(
        dir.path(),
        "chain.csv",
        "tail,head,t_free,capacity,rho,mu_power,model\n1,2,1.5,1,0.15,0.25,bpr\n2,3,2.25,1,0.15,0.25,bpr\n",
    );
    let trips = write(dir.path(), "chain_trips.csv", "origin,destination,demand\n1,3,4\n");
    let out = eqk(&["psi", "--edges", s(&edges), "--trips", s(&trips), "--free-flow", "--gamma", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() + 4.0 * 3.75).abs() < 1e-12);

    let (edges, trips) = parallel2(dir.path());
    let out = eqk(&["psi", "--edges", s(&edges), "--trips", s(&trips), "--free-flow", "--compare-layered"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let net = instances::parallel2();
    let oracle = psi_by_enumeration(&net, &DualPoint::free_flow(&net, 1.0).unwrap(), 0).unwrap();
    assert!((v["per_od"][0]["value"].as_f64().unwrap() - oracle).abs() <= 1e-12 * oracle.abs());
    assert!(v["compare_layered"]["max_rel"].as_f64().unwrap() <= 1e-10);

    let out = eqk(&["psi", "--edges", s(&edges), "--trips", s(&trips)]);
    assert_eq!(out.status.code(), Some(1), "a dual point is required");
}

#[test]
fn tntp_conversion_feeds_solve() {
    let dir = TempDir::new().unwrap();
    let net = write(
        dir.path(),
        "net.tntp",
        "<NUMBER OF NODES> 3\n<END OF METADATA>\n\n~ init term cap len fft b power speed toll type ;\n\
         1 2 10 1 1 0.15 4 0 0 1 ;\n2 3 10 1 1 0.15 4 0 0 1 ;\n1 3 10 1 2.5 0.15 4 0 0 1 ;\n",
    );
    let trips = write(
        dir.path(),
        "trips.tntp",
        "<NUMBER OF ZONES> 3\n<END OF METADATA>\n\nOrigin 1\n 1 : 0.0; 3 : 6.0;\n\nOrigin 2\n 3 : 2.0;\n",
    );
    let (e, t) = (dir.path().join("e.csv"), dir.path().join("t.csv"));
    let out = eqk(&["convert-tntp", "--net", s(&net), "--trips", s(&trips), "--out-edges", s(&e), "--out-trips", s(&t)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let edges = fs::read_to_string(&e).unwrap();
    assert_eq!(edges.lines().count(), 4);
    assert!(edges.lines().nth(1).unwrap().starts_with("1,2,1.0000000000000000e0,1.0000000000000000e1,1.4999999999999999e-1,2.5000000000000000e-1,bpr"));
    assert_eq!(fs::read_to_string(&t).unwrap().lines().count(), 3);

    let solved = run(&solve_args(&e, &t, dir.path(), &["--epsilon", "1e-6"]));
    assert_eq!(solved.status.code(), Some(0), "{}", String::from_utf8_lossy(&solved.stderr));

    let broken = write(dir.path(), "broken.tntp", "<END OF METADATA>\n1 2 10 ;\n");
    let out = eqk(&["convert-tntp", "--net", s(&broken), "--trips", s(&trips), "--out-edges", s(&e), "--out-trips", s(&t)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
