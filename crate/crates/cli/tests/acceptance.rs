//! Release checklist. Prints one PASS/FAIL line per criterion with the
//! measured numbers and the wall time against its budget:
//!
//!     cargo test -p einad-cli --test acceptance -- --nocapture

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod fixtures;
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::ad::{
    direction, fd_directional, jac_times, problems, rel, times_jac, EXACT_TOL, FD_TOL, H, SEEDS,
};
use common::{
    corpus, dmrg_shapes, eval, eval1, fd_jacobian, feed_for, max_rel, random_spec,
    structured_specs, PASSES,
};
use einad_core::autodiff::{gradients, hessian, hvp, jacobian, jvp, vjp};
use einad_core::methods::cpd::{
    als_update_graphs, cpd_als, cpd_graph, mttkrp_graphs, optimize_sweep, AlsSolver, CpdProblem,
};
use einad_core::methods::dmrg::{dense_smallest_eigenvalue, dmrg, DmrgProblem};
use einad_core::methods::gn::{cpd_gauss_newton, GnOptions};
use einad_core::methods::tucker::{tucker_hooi, TuckerProblem};
use einad_core::optimizer::path::{exhaustive, greedy};
use einad_core::optimizer::{
    contractions_touching, estimate_flops, flops_touching, generate_dimension_tree, optimize,
    optimize_roots, Options, PathStrategy,
};
use einad_core::{Graph, NodeId, Op};
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Runs one criterion, catching panics so the rest still report.
fn criterion(id: &str, budget_secs: f64, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(o) => (o.pass && secs < budget_secs, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} {id}: {detail} [{secs:.2}s of {budget_secs}s]");
    pass
}

fn kronecker_flops(n: usize) -> (u64, u64) {
    let mut g = fixtures::kronecker_jacobian(n);
    optimize(&mut g).unwrap().flops().unwrap()
}

fn c1_kronecker() -> Outcome {
    let (before8, after8) = kronecker_flops(8);
    let (_, after16) = kronecker_flops(16);
    let ratio = before8 as f64 / after8 as f64;
    let growth = after16 as f64 / after8 as f64;

    let plain = fixtures::kronecker_jacobian(8);
    let mut g = plain.clone();
    optimize(&mut g).unwrap();
    let feed = feed_for(&plain, 1);
    let err = max_rel(
        &eval(&g, &feed, &g.sink_nodes()),
        &eval(&plain, &feed, &plain.sink_nodes()),
    );

    outcome(
        ratio >= 32.0 && growth <= 20.0 && err < 1e-10,
        format!(
            "kronecker jacobian: n=8 flops {before8} -> {after8} (ratio {ratio:.1}, need >= 32); \
             cost(16)/cost(8) = {growth:.2} (need <= 20); optimized vs plain error {err:.1e}"
        ),
    )
}

fn c2_dimension_tree() -> Outcome {
    let (s, r) = (6u64, 6usize);
    let mut pass = true;
    let mut parts = Vec::new();
    for order in [3usize, 4] {
        let extents = vec![s as usize; order];
        let mut g = Graph::new();
        let cpd = cpd_graph(&mut g, &extents, r).unwrap();
        let raw = mttkrp_graphs(&mut g, &cpd).unwrap();
        let (opt, _) = optimize_sweep(&mut g, &raw, &cpd.factors).unwrap();
        let flops = estimate_flops(&g, &opt);
        let input = flops_touching(&g, &opt, cpd.input);
        let reads = contractions_touching(&g, &opt, cpd.input);
        let leading = 4 * s.pow(order as u32) * r as u64;
        let bound = leading + leading / 2;
        let no_tree = 2 * order as u64 * s.pow(order as u32) * r as u64;

        let feed = feed_for(&g, 2);
        let err = max_rel(&eval(&g, &feed, &opt), &eval(&g, &feed, &raw));

        let als = AlsSolver::new(&extents, r).unwrap();
        let als_reads = als.input_contractions();
        let ok = flops <= bound
            && input == leading
            && err < 1e-10
            && (order != 3 || (reads == 2 && als_reads == 2));
        pass &= ok;
        parts.push(format!(
            "N={order}: {reads} input contractions ({als_reads} in full ALS update), sweep flops {flops} \
             (bound {bound}, input part {input} = 4s^N R, without the tree 2Ns^N R = {no_tree}), \
             full ALS update {}",
            als.sweep_flop_estimate()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c3_structured_inverse() -> Outcome {
    let (s, r) = (6usize, 4usize);
    let extents = [s, s, s];
    let mut g = Graph::new();
    let cpd = cpd_graph(&mut g, &extents, r).unwrap();
    let raw = als_update_graphs(&mut g, &cpd).unwrap();
    let inverse_sizes = |g: &Graph, roots: &[NodeId]| -> Vec<usize> {
        g.topo_order(roots)
            .into_iter()
            .filter_map(|n| match g.op(n) {
                Op::Inverse(a) => Some(g.shape(*a).iter().product::<usize>()),
                _ => None,
            })
            .collect()
    };
    let dense = inverse_sizes(&g, &raw);
    let (opt, _) = optimize_roots(&mut g, &raw, &Options::default()).unwrap();
    let small = inverse_sizes(&g, &opt);

    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let p = CpdProblem::random(&extents, r, seed);
        let feed = p.feed();
        let got = eval(&g, &feed, &opt);
        let want = eval(&g, &feed, &raw);
        for ((a, b), f) in got.iter().zip(&want).zip(&p.factors) {
            // compare the steps A - update, not the updates
            let step_got = f.zip_with(a, |x, y| x - y).unwrap();
            let step_want = f.zip_with(b, |x, y| x - y).unwrap();
            worst = worst.max(step_got.rel_error(&step_want));
        }
    }
    let pass = !small.is_empty()
        && small.iter().all(|&n| n == r * r)
        && dense.iter().all(|&n| n == (s * r) * (s * r))
        && worst < 1e-8;
    outcome(
        pass,
        format!(
            "inverse operands {} entries before, {} after (R x R = {}); step vs dense inverse {worst:.1e} (need < 1e-8)",
            fmt_sizes(&dense),
            fmt_sizes(&small),
            r * r
        ),
    )
}

fn fmt_sizes(v: &[usize]) -> String {
    let v: Vec<String> = v.iter().map(|n| n.to_string()).collect();
    format!("[{}]", v.join(", "))
}

fn c4_autodiff() -> Outcome {
    let mut fd: f64 = 0.0;
    let mut exact: f64 = 0.0;
    let mut checks = 0usize;
    for p in problems() {
        let ids: Vec<NodeId> = p.vars.iter().map(|v| v.1).collect();
        let mut g = p.graph.clone();
        let grads = gradients(&mut g, p.objective, &ids).unwrap();
        let blocks = hessian(&mut g, p.objective, &ids).unwrap();
        let jacs = jacobian(&mut g, p.tensor, &ids).unwrap();
        let oshape = g.shape(p.tensor).to_vec();
        let u_var = g.variable("dir_u", &oshape).unwrap();
        let mut actions = Vec::new();
        for (k, &x) in ids.iter().enumerate() {
            let shape = g.shape(x).to_vec();
            let v = g.variable(&format!("dir_v{k}"), &shape).unwrap();
            let jv = jvp(&mut g, v, p.tensor, x).unwrap();
            let uj = vjp(&mut g, u_var, p.tensor, x).unwrap();
            let hv = hvp(&mut g, p.objective, x, v).unwrap();
            actions.push((jv, uj, hv));
        }
        for seed in 0..SEEDS {
            let mut feed = feed_for(&p.graph, seed);
            let u = direction(&oshape, seed, "u");
            feed.insert("dir_u".into(), u.clone());
            for (k, &x) in ids.iter().enumerate() {
                feed.insert(
                    format!("dir_v{k}"),
                    direction(g.shape(x), seed, &format!("v{k}")),
                );
            }
            for (k, (name, _)) in p.vars.iter().enumerate() {
                let v = feed[&format!("dir_v{k}")].clone();
                let (jv, uj, hv) = actions[k];
                let grad = eval1(&g, &feed, grads[k]);
                fd = fd.max(rel(
                    grad.data(),
                    fd_jacobian(&g, &feed, p.objective, name, H).data(),
                ));
                let j = eval1(&g, &feed, jacs[k]);
                let fd_j = fd_jacobian(&g, &feed, p.tensor, name, H);
                fd = fd.max(rel(j.data(), fd_j.data()));
                let jv = eval1(&g, &feed, jv);
                fd = fd.max(rel(
                    jv.data(),
                    fd_directional(&g, &feed, p.tensor, name, &v).data(),
                ));
                exact = exact.max(rel(jv.data(), &jac_times(&j, &v)));
                let uj = eval1(&g, &feed, uj);
                fd = fd.max(rel(uj.data(), &times_jac(&u, &fd_j)));
                exact = exact.max(rel(uj.data(), &times_jac(&u, &j)));
                let hv = eval1(&g, &feed, hv);
                fd = fd.max(rel(
                    hv.data(),
                    fd_directional(&g, &feed, grads[k], name, &v).data(),
                ));
                exact = exact.max(rel(
                    hv.data(),
                    &jac_times(&eval1(&g, &feed, blocks[k][k]), &v),
                ));
                for (i, &gi) in grads.iter().enumerate() {
                    let h = eval1(&g, &feed, blocks[i][k]);
                    fd = fd.max(rel(h.data(), fd_jacobian(&g, &feed, gi, name, H).data()));
                }
                checks += 8 + grads.len();
            }
        }
    }
    outcome(
        fd < FD_TOL && exact < EXACT_TOL,
        format!(
            "cpd/tucker/dmrg x {SEEDS} seeds, {checks} checks: finite-difference error {fd:.1e} (need < {FD_TOL:.0e}), \
             exact cross-check error {exact:.1e} (need < {EXACT_TOL:.0e})"
        ),
    )
}

fn c5_semantics() -> Outcome {
    let cases = corpus();
    let mut worst: f64 = 0.0;
    let mut runs = 0usize;
    let mut check = |c: &common::Case, g: &Graph, new: &[NodeId]| {
        for seed in 0..50 {
            let feed = feed_for(&c.graph, seed);
            worst = worst.max(max_rel(
                &eval(g, &feed, new),
                &eval(&c.graph, &feed, &c.roots),
            ));
        }
        runs += 1;
    };
    for c in &cases {
        for (_, pass) in PASSES {
            let mut g = c.graph.clone();
            let (new, _) = pass(&mut g, &c.roots).unwrap();
            check(c, &g, &new);
        }
        let mut g = c.graph.clone();
        let (new, _) = optimize_roots(&mut g, &c.roots, &Options::default()).unwrap();
        check(c, &g, &new);
        if let Some(sites) = &c.sites {
            let mut g = c.graph.clone();
            let new = generate_dimension_tree(&mut g, &c.roots, sites).unwrap();
            check(c, &g, &new);
            let mut g = c.graph.clone();
            let opts = Options {
                path: PathStrategy::DimensionTree {
                    sites: sites.clone(),
                },
                ..Options::default()
            };
            let (new, _) = optimize_roots(&mut g, &c.roots, &opts).unwrap();
            check(c, &g, &new);
        }
    }
    outcome(
        cases.len() >= 30 && worst < 1e-10,
        format!(
            "{} graphs, {runs} pass/pipeline runs x 50 feeds: worst relative error {worst:.1e} (need < 1e-10)",
            cases.len()
        ),
    )
}

fn c6_paths() -> Outcome {
    let specs = structured_specs();
    let mismatches = specs
        .iter()
        .filter(|spec| {
            let flags = vec![false; spec.arity()];
            greedy(spec, &flags).total_flops() != exhaustive(spec, &flags).total_flops()
        })
        .count();
    let mut worst: f64 = 1.0;
    for seed in 0..200 {
        let spec = random_spec(seed, 5);
        let flags = vec![false; spec.arity()];
        let g = greedy(&spec, &flags).total_flops() as f64;
        let e = exhaustive(&spec, &flags).total_flops() as f64;
        if e > 0.0 {
            worst = worst.max(g / e);
        }
    }
    outcome(
        mismatches == 0 && worst <= 2.0,
        format!(
            "{}/{} structured shapes optimal; worst greedy/optimal on 200 random einsums {worst:.3} (need <= 2)",
            specs.len() - mismatches,
            specs.len()
        ),
    )
}

fn monotone(losses: &[f64]) -> bool {
    losses
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-12 * w[0].max(1e-300))
}

fn c7_methods() -> Outcome {
    let extents = [8, 8, 8];
    let mut p = CpdProblem::exact(&extents, 5, 7, 0.1);
    let als = cpd_als(&mut p, 50, 1e-10).unwrap();
    let mut losses = vec![als.initial_loss];
    losses.extend(als.sweeps.iter().flat_map(|s| s.losses.iter().copied()));
    let als_ok = als.converged && als.final_loss() < 1e-10 && monotone(&losses);

    let mut p = CpdProblem::exact(&extents, 5, 7, 0.1);
    let gn = cpd_gauss_newton(&mut p, 30, 1e-10, &GnOptions::default()).unwrap();
    let gn_losses: Vec<f64> = std::iter::once(gn.initial_loss)
        .chain(gn.steps.iter().map(|s| s.loss_after))
        .collect();
    let gn_ok =
        gn.converged && gn.final_loss() < 1e-10 && gn.steps.len() <= 30 && monotone(&gn_losses);

    let mut tucker_worst: f64 = 0.0;
    for (ext, ranks) in [
        (vec![8, 8, 8], vec![4, 4, 4]),
        (vec![6, 5, 4], vec![3, 2, 2]),
        (vec![5, 5, 5, 5], vec![2, 3, 2, 2]),
    ] {
        let mut p = TuckerProblem::exact(&ext, &ranks, 7).unwrap();
        tucker_worst = tucker_worst.max(tucker_hooi(&mut p, 20, 1e-12).unwrap().final_loss());
    }

    let mut dmrg_worst: f64 = 0.0;
    let mut instances = 0;
    for phys in dmrg_shapes() {
        for (seed, rank) in [(0, 1), (1, 2), (2, 3)] {
            let mut p = DmrgProblem::random(&phys, rank, None, seed).unwrap();
            let exact = dense_smallest_eigenvalue(&p.mpo);
            let trace = dmrg(&mut p, 30, 1e-13, seed).unwrap();
            dmrg_worst = dmrg_worst.max((trace.eigenvalue - exact).abs());
            instances += 1;
        }
    }

    outcome(
        als_ok && gn_ok && tucker_worst < 1e-10 && dmrg_worst < 1e-8,
        format!(
            "(a) ALS s=8 R=5 N=3: loss {:.1e} after {} sweeps, monotone {}; \
             (b) Gauss-Newton: loss {:.1e} after {} iterations; \
             (c) Tucker worst final loss {tucker_worst:.1e}; \
             (d) DMRG {instances} instances, worst |error| {dmrg_worst:.1e}",
            als.final_loss(),
            als.sweeps.len(),
            monotone(&losses),
            gn.final_loss(),
            gn.steps.len()
        ),
    )
}

/// How often the ALS protocol converges when only the seed changes.
fn als_robustness() -> String {
    let mut hits = 0;
    for seed in 0..40 {
        let mut p = CpdProblem::exact(&[8, 8, 8], 5, seed, 0.1);
        if cpd_als(&mut p, 50, 1e-10).unwrap().converged {
            hits += 1;
        }
    }
    format!("ALS reached 1e-10 within 50 sweeps for {hits}/40 seeds")
}

fn c8_determinism() -> Outcome {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let first = support::every_subcommand(a.path());
    let second = support::every_subcommand(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|((_, x), (_, y))| x != y)
        .map(|((name, _), _)| name.as_str())
        .collect();
    outcome(
        first.len() == second.len() && differing.is_empty(),
        format!(
            "{} outputs compared across two runs, differing: {differing:?}",
            first.len()
        ),
    )
}

#[test]
fn acceptance() {
    let results = [
        criterion("1 kronecker", 1.0, c1_kronecker),
        criterion("2 dimension tree", 5.0, c2_dimension_tree),
        criterion("3 structured inverse", 1.0, c3_structured_inverse),
        criterion("4 autodiff", 60.0, c4_autodiff),
        criterion("5 semantics", 60.0, c5_semantics),
        criterion("6 paths", 30.0, c6_paths),
        criterion("7 methods", 120.0, c7_methods),
        criterion("8 determinism", 120.0, c8_determinism),
    ];
    println!("info: {}", als_robustness());
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len());
}
