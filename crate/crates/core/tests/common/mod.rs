//! Oracles, feeds and the graph corpus shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

pub mod ad;

use einad_core::autodiff::{gradients, hessian, hvp, jacobian, jvp, vjp};
use einad_core::methods::cpd::{als_update_graphs, cpd_graph, mttkrp_graphs};
use einad_core::methods::dmrg::dmrg_graph;
use einad_core::methods::tucker::tucker_graph;
use einad_core::optimizer::{
    cse, decompose_inverse, distribute, fuse_einsums, normalize_algebra, optimize_paths,
    prune_identity, prune_inverse,
};
use einad_core::{
    run, DenseTensor, EinsumSpec, FeedDict, Graph, Label, NodeId, Result, UniformStream,
};

/// Variables whose name starts with `S` are fed well-conditioned square
/// matrices (`random + 2n·I`), so graphs with inverses stay accurate.
pub fn feed_for(g: &Graph, seed: u64) -> FeedDict {
    let root = UniformStream::new(seed);
    let mut feed = FeedDict::new();
    for (name, id) in g.variables() {
        let shape = g.shape(id).to_vec();
        let mut t = DenseTensor::random(&shape, &mut root.substream(name));
        if name.starts_with('S') {
            let half = shape.len() / 2;
            let n: usize = shape[..half].iter().product();
            let cols = t.len() / n;
            let data = t.data_mut();
            for i in 0..n.min(cols) {
                data[i * cols + i] += 2.0 * n as f64;
            }
        }
        feed.insert(name.to_string(), t);
    }
    feed
}

pub fn eval(g: &Graph, feed: &FeedDict, roots: &[NodeId]) -> Vec<DenseTensor> {
    run(g, feed, roots).expect("graph evaluates")
}

pub fn eval1(g: &Graph, feed: &FeedDict, root: NodeId) -> DenseTensor {
    eval(g, feed, &[root]).remove(0)
}

/// Largest relative error over paired outputs.
pub fn max_rel(a: &[DenseTensor], b: &[DenseTensor]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            assert_eq!(x.shape(), y.shape());
            x.rel_error(y)
        })
        .fold(0.0, f64::max)
}

/// Central-difference Jacobian of `output` with respect to variable `var`,
/// shaped `shape(output) ++ shape(var)`.
pub fn fd_jacobian(g: &Graph, feed: &FeedDict, output: NodeId, var: &str, h: f64) -> DenseTensor {
    let base = feed[var].clone();
    let out_len: usize = g.shape(output).iter().product();
    let mut data = vec![0.0; out_len * base.len()];
    for j in 0..base.len() {
        let mut f = feed.clone();
        let mut plus = base.clone();
        plus.data_mut()[j] += h;
        f.insert(var.to_string(), plus);
        let up = eval1(g, &f, output);
        let mut minus = base.clone();
        minus.data_mut()[j] -= h;
        f.insert(var.to_string(), minus);
        let down = eval1(g, &f, output);
        for i in 0..out_len {
            data[i * base.len() + j] = (up.data()[i] - down.data()[i]) / (2.0 * h);
        }
    }
    let mut shape = g.shape(output).to_vec();
    shape.extend_from_slice(base.shape());
    DenseTensor::new(shape, data).unwrap()
}

/// Einsum by summing over every label assignment.
pub fn naive_einsum(spec: &EinsumSpec, inputs: &[&DenseTensor]) -> DenseTensor {
    let labels: Vec<Label> = spec.labels().into_iter().collect();
    let extents: Vec<usize> = labels.iter().map(|&l| spec.extent(l)).collect();
    let pos = |l: Label| labels.iter().position(|&x| x == l).unwrap();
    let out_shape = spec.output_shape();
    let mut out = DenseTensor::zeros(&out_shape);
    let total: usize = extents.iter().product();
    let mut assign = vec![0usize; labels.len()];
    for flat in 0..total {
        let mut rem = flat;
        for k in (0..labels.len()).rev() {
            assign[k] = rem % extents[k];
            rem /= extents[k];
        }
        let mut p = 1.0;
        for (ops, t) in spec.operands.iter().zip(inputs) {
            let idx: Vec<usize> = ops.iter().map(|&l| assign[pos(l)]).collect();
            p *= t.get(&idx);
        }
        let oidx: Vec<usize> = spec.output.iter().map(|&l| assign[pos(l)]).collect();
        let cur = out.get(&oidx);
        out.set(&oidx, cur + p);
    }
    out
}

/// Random einsum over up to `max_operands` operands of order 1 to 3, with
/// extents 2 to 6. Every label appears at least once; output labels are a
/// random subset of the labels used.
pub fn random_spec(seed: u64, max_operands: usize) -> EinsumSpec {
    let mut s = UniformStream::new(seed);
    let mut pick = |n: usize| {
        ((s.next_f64() + 1.0) * 0.5 * n as f64)
            .floor()
            .min(n as f64 - 1.0) as usize
    };
    let n_ops = 2 + pick(max_operands - 1);
    let n_labels = 2 + pick(5);
    let extents: BTreeMap<Label, usize> =
        (0..n_labels as Label).map(|l| (l, 2 + pick(5))).collect();
    let mut operands: Vec<Vec<Label>> = Vec::new();
    for _ in 0..n_ops {
        let order = (1 + pick(3)).min(n_labels);
        let mut ops = Vec::new();
        while ops.len() < order {
            let l = pick(n_labels) as Label;
            if !ops.contains(&l) {
                ops.push(l);
            }
        }
        operands.push(ops);
    }
    let used: Vec<Label> = {
        let mut u: Vec<Label> = operands.iter().flatten().copied().collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    let output: Vec<Label> = used.iter().copied().filter(|_| pick(3) == 0).collect();
    let extents = used.iter().map(|l| (*l, extents[l])).collect();
    EinsumSpec::new(operands, output, extents).unwrap()
}

pub struct Case {
    pub name: &'static str,
    pub graph: Graph,
    pub roots: Vec<NodeId>,
    /// Sites for the dimension-tree pass, when the roots are a family of
    /// per-site updates.
    pub sites: Option<Vec<NodeId>>,
}

fn case(name: &'static str, graph: Graph, roots: Vec<NodeId>) -> Case {
    Case {
        name,
        graph,
        roots,
        sites: None,
    }
}

fn vars(g: &mut Graph, specs: &[(&str, &[usize])]) -> Vec<NodeId> {
    specs
        .iter()
        .map(|(n, s)| g.variable(n, s).unwrap())
        .collect()
}

/// Test graphs covering every rewrite: distribution, identity pruning,
/// fusion, inverse decomposition and pruning, CSE with transposed
/// subscripts, contraction paths, dimension trees, algebraic cleanup, and
/// derivative graphs of the tensor methods.
pub fn corpus() -> Vec<Case> {
    let mut out = Vec::new();

    // distribution of a contraction over a sum
    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[3, 4]), ("B", &[3, 4]), ("C", &[4, 2])]);
    let s = g.add(&[v[0], v[1]]).unwrap();
    let r = g.einsum_str("ij,jk->ik", &[s, v[2]]).unwrap();
    out.push(case("distribute_sum", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(
        &mut g,
        &[("A", &[3, 3]), ("B", &[3, 3]), ("C", &[3, 3]), ("D", &[3])],
    );
    let d = g.sub(v[1], v[2]).unwrap();
    let m = g.einsum_str("ij,jk->ik", &[v[0], d]).unwrap();
    let sc = g.scale(1.5, m);
    let r = g.einsum_str("ik,k->i", &[sc, v[3]]).unwrap();
    out.push(case("distribute_difference_nested", g, vec![r]));

    // identity pruning
    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[3, 4]), ("B", &[4, 2])]);
    let i = g.identity(4).unwrap();
    let r = g.einsum_str("ij,jk,kl->il", &[v[0], i, v[1]]).unwrap();
    out.push(case("identity_in_chain", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[3, 3])]);
    let i = g.identity(3).unwrap();
    let r = g.einsum_str("ab,cd->abcd", &[v[0], i]).unwrap();
    let i2 = g.identity(2).unwrap();
    let sym = g.einsum_str("ik,jl->ijkl", &[i2, i2]).unwrap();
    out.push(case("identity_structural", g, vec![r, sym]));

    // fusion
    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[2, 3]), ("B", &[3, 4]), ("C", &[4, 5])]);
    let ab = g.einsum_str("ij,jk->ik", &[v[0], v[1]]).unwrap();
    let r = g.einsum_str("ik,kl->il", &[ab, v[2]]).unwrap();
    out.push(case("fuse_chain", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[2, 3, 4]), ("B", &[4, 3])]);
    let t = g.transpose(v[0], &[2, 0, 1]).unwrap();
    let m = g.einsum_str("kij,kj->i", &[t, v[1]]).unwrap();
    let r = g.einsum_str("i,i->", &[m, m]).unwrap();
    out.push(case("fuse_through_transpose_repeated_input", g, vec![r]));

    // structured inverses
    let mut g = Graph::new();
    let v = vars(&mut g, &[("S1", &[3, 3]), ("S2", &[2, 2]), ("Y", &[3, 2])]);
    let k = g.einsum_str("ab,cd->acbd", &[v[0], v[1]]).unwrap();
    let inv = g.inverse(k).unwrap();
    let r = g.einsum_str("acbd,bd->ac", &[inv, v[2]]).unwrap();
    out.push(case("kronecker_inverse", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("S1", &[3, 3])]);
    let sc = g.scale(2.0, v[0]);
    let neg = g.negate(sc);
    let r = g.inverse(neg).unwrap();
    out.push(case("inverse_of_scaled_negation", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("S1", &[3, 3]), ("A", &[3, 2])]);
    let inv = g.inverse(v[0]).unwrap();
    let r = g.einsum_str("ij,jk,kl->il", &[inv, v[0], v[1]]).unwrap();
    out.push(case("prune_inverse_pair", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("S1", &[2, 3, 2, 3])]);
    let inv = g.inverse(v[0]).unwrap();
    let r = g.inverse(inv).unwrap();
    out.push(case("inverse_of_inverse", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[4, 2])]);
    let i = g.identity(4).unwrap();
    let inv = g.inverse(i).unwrap();
    let r = g.einsum_str("ij,jk->ik", &[inv, v[0]]).unwrap();
    out.push(case("inverse_of_identity", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("S1", &[3, 3]), ("B", &[3, 3])]);
    let inv = g.inverse(v[0]).unwrap();
    let r = g.einsum_str("ij,jk->ik", &[inv, v[1]]).unwrap();
    out.push(case("dense_inverse", g, vec![r]));

    // CSE with equivalent subscripts
    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[3, 4]), ("B", &[4, 5])]);
    let x = g.einsum_str("ij,jk->ik", &[v[0], v[1]]).unwrap();
    let y = g.einsum_str("ab,bc->ca", &[v[0], v[1]]).unwrap();
    let yt = g.transpose(y, &[1, 0]).unwrap();
    let r = g.add(&[x, yt]).unwrap();
    out.push(case("cse_transposed_duplicate", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[2, 3, 4]), ("B", &[4, 3])]);
    let x = g.einsum_str("ijk,kj->i", &[v[0], v[1]]).unwrap();
    let y = g.einsum_str("pqr,rq->p", &[v[0], v[1]]).unwrap();
    out.push(case("same_diagram_two_subscripts", g, vec![x, y]));

    // contraction paths
    let mut g = Graph::new();
    let v = vars(
        &mut g,
        &[
            ("A", &[2, 6]),
            ("B", &[6, 5]),
            ("C", &[5, 3]),
            ("D", &[3, 6]),
        ],
    );
    let r = g.einsum_str("ab,bc,cd,de->ae", &v).unwrap();
    out.push(case("matrix_chain", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(
        &mut g,
        &[
            ("A", &[3, 4, 5]),
            ("B", &[4, 2]),
            ("C", &[5, 2]),
            ("D", &[2]),
        ],
    );
    let r = g.einsum_str("ijk,jr,kr,r->i", &v).unwrap();
    out.push(case("star_contraction", g, vec![r]));

    // dimension trees
    let mut g = Graph::new();
    let cpd = cpd_graph(&mut g, &[3, 4, 3], 2).unwrap();
    let roots = mttkrp_graphs(&mut g, &cpd).unwrap();
    out.push(Case {
        name: "mttkrp_family",
        graph: g,
        roots,
        sites: Some(cpd.factors.clone()),
    });

    let mut g = Graph::new();
    let cpd = cpd_graph(&mut g, &[3, 3, 2, 2], 2).unwrap();
    let roots = mttkrp_graphs(&mut g, &cpd).unwrap();
    out.push(Case {
        name: "mttkrp_family_order4",
        graph: g,
        roots,
        sites: Some(cpd.factors.clone()),
    });

    let mut g = Graph::new();
    let t = tucker_graph(&mut g, &[3, 4, 3], &[2, 2, 2]).unwrap();
    out.push(Case {
        name: "ttmc_family",
        graph: g,
        roots: t.ttmc.clone(),
        sites: Some(t.factors.clone()),
    });

    // algebra
    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[3, 2]), ("B", &[3, 2])]);
    let a2 = g.scale(2.0, v[0]);
    let s = g.add(&[v[0], v[0], v[1]]).unwrap();
    let r = g.sub(s, a2).unwrap();
    out.push(case("algebra_cancellation", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[3, 3]), ("B", &[3, 3])]);
    let a3 = g.scale(3.0, v[0]);
    let z = g.sub(a3, a3).unwrap();
    let r = g.einsum_str("ij,jk->ik", &[z, v[1]]).unwrap();
    let neg = g.negate(v[1]);
    let r2 = g.add(&[r, neg]).unwrap();
    out.push(case("algebra_zero_operand", g, vec![r2]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("x", &[4]), ("A", &[4, 3])]);
    let n = g.inner(v[0], v[0]).unwrap();
    let sc = g.scale_by(n, v[1]).unwrap();
    let r = g.einsum_str("ij,i->j", &[sc, v[0]]).unwrap();
    out.push(case("scalar_factor", g, vec![r]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[4, 4]), ("b", &[4])]);
    let tr = g.einsum_str("ii->", &[v[0]]).unwrap();
    let dg = g.einsum_str("ii->i", &[v[0]]).unwrap();
    let outer = g.einsum_str("i,j->ij", &[dg, v[1]]).unwrap();
    let r = g.scale_by(tr, outer).unwrap();
    out.push(case("trace_and_diagonal", g, vec![r]));

    // tensor-method graphs and their derivatives
    let mut g = Graph::new();
    let cpd = cpd_graph(&mut g, &[3, 3, 3], 2).unwrap();
    out.push(case("cpd_loss", g, vec![cpd.loss]));

    let mut g = Graph::new();
    let cpd = cpd_graph(&mut g, &[3, 2, 3], 2).unwrap();
    let roots = gradients(&mut g, cpd.loss, &cpd.factors).unwrap();
    out.push(case("cpd_gradients", g, roots));

    let mut g = Graph::new();
    let cpd = cpd_graph(&mut g, &[3, 4, 3], 2).unwrap();
    let roots = als_update_graphs(&mut g, &cpd).unwrap();
    out.push(Case {
        name: "cpd_als_updates",
        graph: g,
        roots,
        sites: Some(cpd.factors.clone()),
    });

    let mut g = Graph::new();
    let cpd = cpd_graph(&mut g, &[3, 3, 2], 2).unwrap();
    let v = g.variable("V0", &[3, 2]).unwrap();
    let jv = jvp(&mut g, v, cpd.residual, cpd.factors[0]).unwrap();
    let r = vjp(&mut g, jv, cpd.residual, cpd.factors[1]).unwrap();
    out.push(case("gauss_newton_block", g, vec![r]));

    let mut g = Graph::new();
    let t = tucker_graph(&mut g, &[3, 3, 3], &[2, 2, 2]).unwrap();
    out.push(case("tucker_loss", g, vec![t.loss]));

    let mut g = Graph::new();
    let d = dmrg_graph(&mut g, &[2, 2, 2], &[1, 2, 2, 1], &[1, 2, 2, 1]).unwrap();
    let u = g.variable("U1", &[2, 2, 2]).unwrap();
    let r = hvp(&mut g, d.numerator, d.mps[1], u).unwrap();
    out.push(case("dmrg_hvp", g, vec![r]));

    let mut g = Graph::new();
    let d = dmrg_graph(&mut g, &[2, 3, 2], &[1, 2, 2, 1], &[1, 2, 2, 1]).unwrap();
    let roots = gradients(&mut g, d.objective, &d.mps).unwrap();
    out.push(case("dmrg_rayleigh_gradients", g, roots));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[3, 3]), ("x", &[3])]);
    let q = g.einsum_str("i,ij,j->", &[v[1], v[0], v[1]]).unwrap();
    let h = hessian(&mut g, q, &[v[1]]).unwrap()[0][0];
    out.push(case("quadratic_form_hessian", g, vec![h]));

    let mut g = Graph::new();
    let v = vars(
        &mut g,
        &[
            ("B", &[3, 3]),
            ("C", &[3, 3]),
            ("D", &[3, 3]),
            ("E", &[3, 3]),
            ("x", &[3, 3]),
        ],
    );
    let a1 = g.einsum_str("ab,cd->acbd", &[v[0], v[1]]).unwrap();
    let a2 = g.einsum_str("ab,cd->acbd", &[v[2], v[3]]).unwrap();
    let f = g.einsum_str("acbd,bdef,ef->ac", &[a1, a2, v[4]]).unwrap();
    let j = jacobian(&mut g, f, &[v[4]]).unwrap()[0];
    out.push(case("kronecker_jacobian", g, vec![j]));

    let mut g = Graph::new();
    let v = vars(&mut g, &[("A", &[3, 2]), ("B", &[2, 3])]);
    let m = g.einsum_str("ij,jk->ik", &[v[0], v[1]]).unwrap();
    let s = g.add(&[m, m]).unwrap();
    let neg = g.negate(s);
    let r = g.einsum_str("ik,ik->", &[neg, m]).unwrap();
    out.push(case("negated_sum_inner", g, vec![r]));

    out
}

pub type Pass = fn(&mut Graph, &[NodeId]) -> Result<(Vec<NodeId>, usize)>;

pub const PASSES: [(&str, Pass); 8] = [
    ("distribute", distribute),
    ("fuse_einsums", fuse_einsums),
    ("decompose_inverse", decompose_inverse),
    ("prune_identity", prune_identity),
    ("prune_inverse", prune_inverse),
    ("normalize_algebra", normalize_algebra),
    ("optimize_paths", optimize_paths),
    ("cse", cse),
];

pub fn spec_of(subscripts: &str, shapes: &[&[usize]]) -> EinsumSpec {
    EinsumSpec::parse(subscripts, shapes).unwrap()
}

/// Matrix chains, MTTKRP and TTMc shapes.
pub fn structured_specs() -> Vec<EinsumSpec> {
    let mut out = Vec::new();
    for dims in [
        vec![2, 6, 5, 3, 6],
        vec![10, 2, 10, 2],
        vec![3, 3, 3, 3, 3, 3],
        vec![8, 1, 8, 1, 8],
        vec![5, 20, 5, 20],
        vec![30, 4, 25, 6, 12],
    ] {
        let n = dims.len() - 1;
        let letters: Vec<char> = ('a'..='z').take(n + 1).collect();
        let ops: Vec<String> = (0..n)
            .map(|k| format!("{}{}", letters[k], letters[k + 1]))
            .collect();
        let text = format!("{}->{}{}", ops.join(","), letters[0], letters[n]);
        let shapes: Vec<Vec<usize>> = (0..n).map(|k| vec![dims[k], dims[k + 1]]).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        out.push(spec_of(&text, &refs));
    }
    for (s, r) in [(6, 6), (8, 2), (4, 10), (20, 5)] {
        out.push(spec_of("ijk,jr,kr->ir", &[&[s, s, s], &[s, r], &[s, r]]));
        out.push(spec_of(
            "ijkl,jr,kr,lr->ir",
            &[&[s, s, s, s], &[s, r], &[s, r], &[s, r]],
        ));
        out.push(spec_of("ijk,jb,kc->ibc", &[&[s, s, s], &[s, r], &[s, r]]));
        out.push(spec_of(
            "ijkl,jb,kc,ld->ibcd",
            &[&[s, s, s, s], &[s, r], &[s, r], &[s, r]],
        ));
    }
    out
}

/// Chains with total dimension at most 256 for the dense eigensolver
/// comparison.
pub fn dmrg_shapes() -> Vec<Vec<usize>> {
    vec![
        vec![2, 2],
        vec![2, 2, 2],
        vec![2, 2, 2, 2],
        vec![2, 2, 2, 2, 2],
        vec![2; 6],
        vec![2; 7],
        vec![2; 8],
        vec![3, 3],
        vec![3, 3, 3],
        vec![3, 3, 3, 3],
        vec![3; 5],
        vec![4, 4, 4, 4],
        vec![2, 3, 4, 2],
    ]
}
