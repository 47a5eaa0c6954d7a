//! Collects like terms of sums, drops zeros and pulls scalar constants out of
//! einsums.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::graph::{Graph, NodeId, Op};

use super::rewrite;

/// Adds `c · x` into `terms`, looking through nested linear combinations.
fn expand(g: &Graph, x: NodeId, c: f64, terms: &mut BTreeMap<(u64, NodeId), f64>) {
    match g.op(x) {
        Op::Add(xs) => {
            for &t in xs {
                expand(g, t, c, terms);
            }
        }
        Op::Sub(a, b) => {
            expand(g, *a, c, terms);
            expand(g, *b, -c, terms);
        }
        Op::Negate(a) => expand(g, *a, -c, terms),
        Op::ScalarMul(d, a) => expand(g, *a, c * d, terms),
        _ if g.is_zero(x) => {}
        _ => *terms.entry((g.uid(x), x)).or_insert(0.0) += c,
    }
}

fn rebuild(g: &mut Graph, n: NodeId) -> Result<NodeId> {
    let mut terms = BTreeMap::new();
    expand(g, n, 1.0, &mut terms);
    let parts: Vec<NodeId> = terms
        .into_iter()
        .filter(|&(_, c)| c != 0.0)
        .map(|((_, x), c)| {
            if c == -1.0 {
                g.negate(x)
            } else {
                g.scale(c, x)
            }
        })
        .collect();
    match parts.len() {
        0 => {
            let shape = g.shape(n).to_vec();
            Ok(g.zeros(&shape))
        }
        _ => g.add(&parts),
    }
}

pub fn normalize_algebra(g: &mut Graph, roots: &[NodeId]) -> Result<(Vec<NodeId>, usize)> {
    rewrite(g, roots, |g, n, ins| {
        let rebuilt = g.with_inputs(n, &ins)?;
        match g.op(rebuilt).clone() {
            op if op.is_linear_combination() => Ok(Some(rebuild(g, rebuilt)?)),
            Op::Einsum { spec, inputs } => {
                if inputs.iter().any(|&x| g.is_zero(x)) {
                    let shape = g.shape(rebuilt).to_vec();
                    return Ok(Some(g.zeros(&shape)));
                }
                let mut factor = 1.0;
                let mut ops = Vec::new();
                let mut kept = Vec::new();
                for (o, &x) in spec.operands.iter().zip(&inputs) {
                    match g.op(x) {
                        Op::Constant(t) if t.order() == 0 => factor *= t.as_scalar(),
                        _ => {
                            ops.push(o.clone());
                            kept.push(x);
                        }
                    }
                }
                if factor == 1.0 && kept.len() == inputs.len() {
                    return Ok(Some(rebuilt));
                }
                if kept.is_empty() {
                    // a product of scalars
                    return Ok(Some(g.scalar(factor)));
                }
                let e = g.einsum_labels(ops, spec.output.clone(), &kept)?;
                Ok(Some(g.scale(factor, e)))
            }
            _ => Ok(Some(rebuilt)),
        }
    })
}
