use crate::graph::{Graph, NodeId, Op};

use super::path::{self, identity_flags};

/// Flop estimate of everything reachable from `roots`: each einsum is
/// costed as a left-to-right pairwise fold, a tensor inverse as `m^3` for an
/// `m×m` matricization; elementwise nodes are free.
pub fn estimate_flops(g: &Graph, roots: &[NodeId]) -> u64 {
    g.topo_order(roots)
        .into_iter()
        .map(|n| node_flops(g, n))
        .sum()
}

pub fn node_flops(g: &Graph, n: NodeId) -> u64 {
    match g.op(n) {
        Op::Einsum { spec, inputs } => {
            path::left_fold(spec, &identity_flags(g, inputs)).total_flops()
        }
        Op::Inverse(_) => {
            let shape = g.shape(n);
            let m: u64 = shape[..shape.len() / 2].iter().map(|&e| e as u64).product();
            m * m * m
        }
        _ => 0,
    }
}

/// Number of einsum nodes reachable from `roots` that take `x` as an input.
pub fn contractions_touching(g: &Graph, roots: &[NodeId], x: NodeId) -> usize {
    g.topo_order(roots)
        .into_iter()
        .filter(|&n| matches!(g.op(n), Op::Einsum { inputs, .. } if inputs.contains(&x)))
        .count()
}

/// Flops of the einsum nodes reachable from `roots` that take `x` as an
/// input.
pub fn flops_touching(g: &Graph, roots: &[NodeId], x: NodeId) -> u64 {
    g.topo_order(roots)
        .into_iter()
        .filter(|&n| matches!(g.op(n), Op::Einsum { inputs, .. } if inputs.contains(&x)))
        .map(|n| node_flops(g, n))
        .sum()
}
