//! Pushes einsums below sums: `einsum(a + b, c) = einsum(a, c) + einsum(b, c)`.
//! Negation and literal scaling are hoisted the same way, and transposes are
//! lowered to one-operand einsums so that fusion can absorb them.

use crate::error::Result;
use crate::graph::{EinsumSpec, Graph, Label, NodeId, Op};

use super::rewrite;

pub fn distribute(g: &mut Graph, roots: &[NodeId]) -> Result<(Vec<NodeId>, usize)> {
    rewrite(g, roots, |g, n, ins| match g.op(n).clone() {
        Op::Transpose(_, perm) => {
            let labels: Vec<Label> = (0..perm.len() as Label).collect();
            let out: Vec<Label> = perm.iter().map(|&p| p as Label).collect();
            let lowered = g.einsum_labels(vec![labels], out, &ins)?;
            let (spec, inputs) = match g.op(lowered).clone() {
                Op::Einsum { spec, inputs } => (spec, inputs),
                _ => return Ok(Some(lowered)),
            };
            Ok(Some(distribute_einsum(g, &spec, &inputs)?))
        }
        Op::Einsum { spec, .. } => {
            if ins.iter().any(|&x| g.op(x).is_linear_combination()) {
                Ok(Some(distribute_einsum(g, &spec, &ins)?))
            } else {
                Ok(None)
            }
        }
        _ => Ok(None),
    })
}

fn distribute_einsum(g: &mut Graph, spec: &EinsumSpec, inputs: &[NodeId]) -> Result<NodeId> {
    let Some(k) = inputs.iter().position(|&x| g.op(x).is_linear_combination()) else {
        return g.einsum(spec.clone(), inputs);
    };
    let with = |g: &mut Graph, x: NodeId| -> Result<NodeId> {
        let mut ins = inputs.to_vec();
        ins[k] = x;
        distribute_einsum(g, spec, &ins)
    };
    match g.op(inputs[k]).clone() {
        Op::Add(terms) => {
            let parts = terms
                .into_iter()
                .map(|t| with(g, t))
                .collect::<Result<Vec<_>>>()?;
            g.add(&parts)
        }
        Op::Sub(a, b) => {
            let (a, b) = (with(g, a)?, with(g, b)?);
            g.sub(a, b)
        }
        Op::Negate(a) => {
            let a = with(g, a)?;
            Ok(g.negate(a))
        }
        Op::ScalarMul(c, a) => {
            let a = with(g, a)?;
            Ok(g.scale(c, a))
        }
        _ => unreachable!("checked linear combination"),
    }
}
