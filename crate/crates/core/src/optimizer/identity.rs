//! Removes identity deltas from einsums by merging the labels they tie
//! together. A delta whose two labels are both output axes is kept: it is
//! part of the result's structure.

use crate::error::Result;
use crate::graph::{EinsumSpec, Graph, Label, NodeId, Op};

use super::rewrite;

pub fn prune_identity(g: &mut Graph, roots: &[NodeId]) -> Result<(Vec<NodeId>, usize)> {
    rewrite(g, roots, |g, n, ins| {
        let Op::Einsum { spec, .. } = g.op(n).clone() else {
            return Ok(None);
        };
        match prune_einsum(g, &spec, &ins)? {
            Some((spec, inputs, factor)) => {
                let e = g.einsum(spec, &inputs)?;
                Ok(Some(g.scale(factor, e)))
            }
            None => Ok(None),
        }
    })
}

fn is_unit_scalar(g: &Graph, x: NodeId) -> bool {
    matches!(g.op(x), Op::Constant(t) if t.order() == 0 && t.as_scalar() == 1.0)
}

/// Returns the simplified einsum and a scalar factor, or `None` if nothing
/// applies.
fn prune_einsum(
    g: &Graph,
    spec: &EinsumSpec,
    inputs: &[NodeId],
) -> Result<Option<(EinsumSpec, Vec<NodeId>, f64)>> {
    let mut ops = spec.operands.clone();
    let mut out = spec.output.clone();
    let mut ins = inputs.to_vec();
    let mut factor = 1.0;
    let mut changed = false;
    'outer: loop {
        if ins.len() < 2 {
            break;
        }
        for k in 0..ins.len() {
            if is_unit_scalar(g, ins[k]) {
                ops.remove(k);
                ins.remove(k);
                changed = true;
                continue 'outer;
            }
            if !matches!(g.op(ins[k]), Op::Identity(_)) {
                continue;
            }
            let (a, b) = (ops[k][0], ops[k][1]);
            let elsewhere = |l: Label, ops: &[Vec<Label>]| {
                ops.iter()
                    .enumerate()
                    .any(|(j, o)| j != k && o.contains(&l))
            };
            if a == b {
                if !elsewhere(a, &ops) && !out.contains(&a) {
                    factor *= spec.extent(a) as f64;
                } else if !elsewhere(a, &ops) {
                    // I(a,a) is a ones vector over an output axis; keep it
                    continue;
                }
                ops.remove(k);
                ins.remove(k);
                changed = true;
                continue 'outer;
            }
            if out.contains(&a) && out.contains(&b) {
                continue;
            }
            let (keep, drop) = if out.contains(&a) { (a, b) } else { (b, a) };
            let mut new_ops: Vec<Vec<Label>> = ops
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, o)| {
                    o.iter()
                        .map(|&l| if l == drop { keep } else { l })
                        .collect()
                })
                .collect();
            let new_out: Vec<Label> = out
                .iter()
                .map(|&l| if l == drop { keep } else { l })
                .collect();
            let covered = new_out
                .iter()
                .all(|l| new_ops.iter().any(|o| o.contains(l)));
            if !covered {
                continue;
            }
            ops = std::mem::take(&mut new_ops);
            out = new_out;
            ins.remove(k);
            changed = true;
            continue 'outer;
        }
        break;
    }
    if !changed {
        return Ok(None);
    }
    let used: std::collections::BTreeSet<Label> = ops.iter().flatten().copied().collect();
    let extents = used.iter().map(|&l| (l, spec.extent(l))).collect();
    Ok(Some((EinsumSpec::new(ops, out, extents)?, ins, factor)))
}
