//! Graph files shared by the CLI tests and the acceptance run. The copies
//! under `tests/data` are checked against these builders.
#![allow(dead_code)]

use einad_core::autodiff::jacobian;
use einad_core::methods::cpd::cpd_graph;
use einad_core::{Graph, NodeId};

/// `(A + B) C` over scalars.
pub fn fig1() -> Graph {
    let mut g = Graph::new();
    let a = g.variable("A", &[]).unwrap();
    let b = g.variable("B", &[]).unwrap();
    let c = g.variable("C", &[]).unwrap();
    let s = g.add(&[a, b]).unwrap();
    let f = g.einsum_str(",->", &[s, c]).unwrap();
    g.set_sink("f", f);
    g
}

pub const CPD_EXTENTS: [usize; 3] = [4, 5, 6];
pub const CPD_RANK: usize = 3;

/// CP loss of `X` against factors `A0 A1 A2`.
pub fn cpd_loss() -> Graph {
    let mut g = Graph::new();
    let c = cpd_graph(&mut g, &CPD_EXTENTS, CPD_RANK).unwrap();
    g.set_sink("loss", c.loss);
    g
}

/// Sum of two order-3 tensors.
pub fn add3() -> Graph {
    let mut g = Graph::new();
    let x = g.variable("X", &[2, 3, 4]).unwrap();
    let y = g.variable("Y", &[2, 3, 4]).unwrap();
    let s = g.add(&[x, y]).unwrap();
    g.set_sink("sum", s);
    g
}

/// `f(x) = (B⊗C)(D⊗E)x` with every factor `n×n` and `x` stored as `n×n`.
/// Returns the graph, `x` and `f`.
pub fn kronecker_function(n: usize) -> (Graph, NodeId, NodeId) {
    let mut g = Graph::new();
    let b = g.variable("B", &[n, n]).unwrap();
    let c = g.variable("C", &[n, n]).unwrap();
    let d = g.variable("D", &[n, n]).unwrap();
    let e = g.variable("E", &[n, n]).unwrap();
    let x = g.variable("x", &[n, n]).unwrap();
    let a1 = g.einsum_str("ab,cd->acbd", &[b, c]).unwrap();
    let a2 = g.einsum_str("ab,cd->acbd", &[d, e]).unwrap();
    let f = g.einsum_str("acbd,bdef,ef->ac", &[a1, a2, x]).unwrap();
    (g, x, f)
}

/// Explicit Jacobian of [`kronecker_function`] in `x`, as sink `jac_x`.
pub fn kronecker_jacobian(n: usize) -> Graph {
    let (mut g, x, f) = kronecker_function(n);
    let j = jacobian(&mut g, f, &[x]).unwrap()[0];
    g.set_sink("jac_x", j);
    g.compact()
}

pub fn all() -> Vec<(&'static str, Graph)> {
    vec![
        ("fig1", fig1()),
        ("cpd_loss", cpd_loss()),
        ("add3", add3()),
        ("kronecker8", kronecker_jacobian(8)),
    ]
}
