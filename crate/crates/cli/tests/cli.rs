//! End-to-end tests of the `einad` binary. Golden files are rewritten only
//! when `UPDATE_GOLDEN=1` is set.

mod fixtures;
mod support;

use std::fs;
use std::path::Path;
use support::{code, data, every_subcommand, manifest, ok, s};

use einad_core::driver::{self, DeriveMode};
use einad_core::graph::dot::to_dot;
use einad_core::graph::serialize::{from_json, to_json};
use einad_core::methods::cpd::CpdProblem;
use einad_core::methods::{run_bench, Method, ProblemConfig};
use einad_core::optimizer::optimize;
use einad_core::{FeedDict, Graph, Op};
use tempfile::TempDir;

fn updating() -> bool {
    std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1")
}

fn check_golden(path: &Path, actual: &str) {
    if updating() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, actual).unwrap();
        return;
    }
    let want = fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e} (regenerate with UPDATE_GOLDEN=1)", path.display()));
    assert!(
        want == actual,
        "{} differs from the current output",
        path.display()
    );
}

#[test]
fn fixtures_are_current() {
    for (name, g) in fixtures::all() {
        check_golden(&data(name), &to_json(&g));
    }
}

#[test]
fn optimize_distributes_fig1() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("opt.json");
    let report = dir.path().join("report.txt");
    ok(&[
        "optimize",
        s(&data("fig1")),
        "--out",
        s(&out),
        "--report",
        s(&report),
    ]);
    let g = from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    let f = g.sink("f").unwrap();
    let Op::Add(terms) = g.op(f) else {
        panic!("expected a sum, got {}", g.describe(f));
    };
    assert_eq!(terms.len(), 2);
    let mut pairs: Vec<Vec<String>> = terms
        .iter()
        .map(|&t| {
            assert!(matches!(g.op(t), Op::Einsum { .. }), "{}", g.describe(t));
            let mut v: Vec<String> = g.inputs(t).iter().map(|&i| g.display_name(i)).collect();
            v.sort();
            v
        })
        .collect();
    pairs.sort();
    assert_eq!(pairs, [["A", "C"], ["B", "C"]]);
    let text = fs::read_to_string(&report).unwrap();
    let distribute = text.lines().find(|l| l.starts_with("distribute")).unwrap();
    assert!(!distribute.ends_with(" 0"), "{text}");
}

#[test]
fn optimize_is_idempotent_on_files() {
    let dir = TempDir::new().unwrap();
    for (name, _) in fixtures::all() {
        let once = dir.path().join(format!("{name}.1.json"));
        let twice = dir.path().join(format!("{name}.2.json"));
        ok(&["optimize", s(&data(name)), "--out", s(&once)]);
        ok(&["optimize", s(&once), "--out", s(&twice)]);
        assert_eq!(
            fs::read(&once).unwrap(),
            fs::read(&twice).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn kronecker_report_shows_the_flop_ratio() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("report.txt");
    let out = dir.path().join("opt.json");
    ok(&[
        "optimize",
        s(&data("kronecker8")),
        "--out",
        s(&out),
        "--report",
        s(&report),
    ]);
    let text = fs::read_to_string(&report).unwrap();
    let total = text.lines().last().unwrap();
    let ratio: f64 = total
        .rsplit_once("ratio ")
        .and_then(|(_, r)| r.trim_end_matches(')').parse().ok())
        .unwrap_or_else(|| panic!("no ratio in `{total}`"));
    assert!(ratio >= 32.0, "{total}");
}

#[test]
fn derive_cpd_gradient_is_mttkrp_shaped() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("grad.json");
    ok(&[
        "derive",
        s(&data("cpd_loss")),
        "--mode",
        "grad",
        "--wrt",
        "A0",
        "--optimize",
        "--out",
        s(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    check_golden(&manifest().join("tests/golden/cpd_grad_A0.json"), &text);
    let g = from_json(&text).unwrap();
    let grad = g.sink("grad_A0").unwrap();
    assert_eq!(
        g.shape(grad),
        [fixtures::CPD_EXTENTS[0], fixtures::CPD_RANK]
    );
    // the input tensor is read by exactly one contraction, the MTTKRP
    let x = g.variable_named("X").unwrap();
    let readers = g
        .topo_order(&[grad])
        .into_iter()
        .filter(|&n| g.inputs(n).contains(&x))
        .count();
    assert_eq!(readers, 1);
}

#[test]
fn derive_add_jacobian_is_three_deltas() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("jac.json");
    ok(&[
        "derive",
        s(&data("add3")),
        "--mode",
        "jacobian",
        "--wrt",
        "X",
        "--out",
        s(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    check_golden(&manifest().join("tests/golden/add3_jacobian_X.json"), &text);
    let g = from_json(&text).unwrap();
    let j = g.sink("jac_X").unwrap();
    assert_eq!(g.shape(j), [2, 3, 4, 2, 3, 4]);
    let ins = g.inputs(j);
    assert!(matches!(g.op(j), Op::Einsum { .. }), "{}", g.describe(j));
    assert_eq!(ins.len(), 3);
    assert!(ins.iter().all(|&i| matches!(g.op(i), Op::Identity(_))));
}

#[test]
fn usage_and_validation_exit_codes() {
    let dir = TempDir::new().unwrap();
    let add3 = data("add3");
    assert_eq!(code(&["derive", s(&add3), "--mode", "hessian"]), 1);
    assert_eq!(code(&["derive", s(&add3), "--mode", "grad"]), 1);
    assert_eq!(
        code(&["derive", s(&add3), "--mode", "jacobian", "--wrt", "Z"]),
        2
    );
    assert_eq!(code(&["optimize", s(&add3), "--bogus"]), 1);
    assert_eq!(code(&["optimize", s(&add3), "--dump-after", "nonsense"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["bench", "cpd-als", "--size", "4"]), 1);
    assert_eq!(code(&["bench", "cpd-als", "--size", "4", "--rank", "0"]), 2);
    assert_eq!(
        code(&["run", s(&data("fig1")), "--feed", "A=1", "--feed", "B=2"]),
        2
    );
    assert_eq!(
        code(&["run", s(&data("fig1")), "--feed", "A=[1, 2]", "--seed", "1"]),
        2
    );
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"nodes\": [").unwrap();
    assert_eq!(code(&["dot", s(&bad)]), 2);
    assert_eq!(code(&["dot", s(&dir.path().join("missing.json"))]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn run_fig1() {
    let out = ok(&[
        "run",
        s(&data("fig1")),
        "--feed",
        "A=1",
        "--feed",
        "B=2",
        "--feed",
        "C=3",
    ]);
    assert_eq!(out, "# f\nshape\n9e0\n");
}

#[test]
fn run_writes_identical_files_twice() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        fs::create_dir(d).unwrap();
        ok(&["run", s(&data("cpd_loss")), "--seed", "5", "--out", s(d)]);
    }
    let x = fs::read(a.join("loss.txt")).unwrap();
    assert!(!x.is_empty());
    assert_eq!(x, fs::read(b.join("loss.txt")).unwrap());
}

#[test]
fn cpd_loss_vanishes_at_true_factors() {
    let dir = TempDir::new().unwrap();
    let p = CpdProblem::exact(&fixtures::CPD_EXTENTS, fixtures::CPD_RANK, 3, 0.0);
    let mut args: Vec<String> = vec![
        "run".into(),
        s(&data("cpd_loss")).into(),
        "--count-flops".into(),
    ];
    for (name, t) in p.feed() {
        let path = dir.path().join(format!("{name}.txt"));
        fs::write(&path, t.to_text()).unwrap();
        args.push("--feed".into());
        args.push(format!("{name}={}", path.display()));
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ok(&args);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("# loss"));
    assert_eq!(lines.next(), Some("shape"));
    let loss: f64 = lines.next().unwrap().parse().unwrap();
    assert!(loss.abs() < 1e-20, "{loss:e}");
    assert!(lines.next().unwrap().starts_with("flops "));
}

fn bench_json(args: &[&str]) -> serde_json::Value {
    let mut all = vec!["bench"];
    all.extend_from_slice(args);
    all.push("--json");
    serde_json::from_str(&ok(&all)).unwrap()
}

#[test]
fn bench_cpd_als_example() {
    let r = bench_json(&[
        "cpd-als", "--order", "3", "--size", "6", "--rank", "4", "--iters", "25", "--seed", "7",
    ]);
    assert_eq!(r["monotone"], true);
    assert_eq!(r["input_contractions"], 2);
    assert_eq!(
        r["history"].as_array().unwrap().len(),
        r["iterations_run"].as_u64().unwrap() as usize
    );
    let h: Vec<f64> = r["history"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10)));
}

#[test]
fn bench_dmrg_example() {
    let r = bench_json(&[
        "dmrg", "--sites", "4", "--phys", "2", "--rank", "2", "--seed", "7",
    ]);
    let err = r["eigenvalue_error"].as_f64().unwrap();
    assert!(err < 1e-8, "{err:e}");
    assert_eq!(r["converged"], true);
}

#[test]
fn bench_tucker_example() {
    let r = bench_json(&[
        "tucker", "--order", "3", "--size", "8", "--rank", "4", "--iters", "3",
    ]);
    let f = &r["flops"];
    let ratio = f["tree_ratio"].as_f64().unwrap();
    assert!(ratio < 1.0, "{ratio}");
    // leading order: the input tensor is read for 4 s^N R flops with the
    // tree and 2N s^N R without; everything else is lower order
    let n = 3.0;
    let leading = f["input_estimate"].as_f64().unwrap();
    let leading_no_tree = f["no_tree_input_estimate"].as_f64().unwrap();
    assert_eq!(leading, 4.0 * 8f64.powi(3) * 4.0);
    assert_eq!(leading_no_tree, 2.0 * n * 8f64.powi(3) * 4.0);
    assert!(leading <= 4.0 / (2.0 * n) * leading_no_tree);
    let estimate = f["estimate"].as_f64().unwrap();
    let no_tree = f["no_tree_estimate"].as_f64().unwrap();
    assert!(estimate - leading < leading && no_tree - leading_no_tree < leading_no_tree);
}

#[test]
fn every_subcommand_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let first = every_subcommand(a.path());
    let second = every_subcommand(b.path());
    assert_eq!(first.len(), second.len());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn cli_matches_api() {
    let dir = TempDir::new().unwrap();
    let cpd = fixtures::cpd_loss();

    let out = dir.path().join("grad.json");
    ok(&[
        "derive",
        s(&data("cpd_loss")),
        "--mode",
        "grad",
        "--out",
        s(&out),
    ]);
    let d = driver::derive(&cpd, DeriveMode::Grad, None, &[]).unwrap();
    assert_eq!(fs::read_to_string(&out).unwrap(), to_json(&d));

    let mut opt = cpd.clone();
    optimize(&mut opt).unwrap();
    let text = ok(&["optimize", s(&data("cpd_loss"))]);
    assert_eq!(text, to_json(&opt));

    let text = ok(&["run", s(&out), "--seed", "4"]);
    let feed = driver::random_feed(&d, 4, &FeedDict::new());
    let (values, _) = driver::evaluate(&d, &feed, &[]).unwrap();
    let want: String = values
        .iter()
        .map(|(n, t)| format!("# {n}\n{}", t.to_text()))
        .collect();
    assert_eq!(text, want);

    assert_eq!(ok(&["dot", s(&data("cpd_loss"))]), to_dot(&cpd));

    let text = ok(&[
        "bench", "tucker", "--sizes", "5,4,3", "--rank", "2,2,2", "--iters", "4", "--seed", "2",
        "--json",
    ]);
    let mut config = ProblemConfig::new(Method::Tucker, vec![5, 4, 3], vec![2, 2, 2]);
    config.iterations = 4;
    config.seed = 2;
    let report = run_bench(&config).unwrap();
    assert_eq!(text, serde_json::to_string_pretty(&report).unwrap() + "\n");
}

#[test]
fn bench_reads_config_files() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("problem.json");
    let mut config = ProblemConfig::new(Method::CpdGn, vec![4, 4, 4], vec![2]);
    config.iterations = 2;
    fs::write(&path, config.to_json()).unwrap();
    let from_file = ok(&["bench", "cpd-gn", "--config", s(&path), "--json"]);
    let from_flags = ok(&[
        "bench", "cpd-gn", "--size", "4", "--rank", "2", "--iters", "2", "--json",
    ]);
    assert_eq!(from_file, from_flags);
    assert_eq!(code(&["bench", "tucker", "--config", s(&path)]), 1);
}

#[test]
fn graphs_round_trip_through_files() {
    for (name, g) in fixtures::all() {
        let text = fs::read_to_string(data(name)).unwrap();
        let back: Graph = from_json(&text).unwrap();
        assert_eq!(to_json(&back), to_json(&g), "{name}");
    }
}
