//! Reverse-mode differentiation producing new graph nodes.
//!
//! Vector-Jacobian products and explicit Jacobians share one backward pass.
//! Every adjoint carries a (possibly empty) block of leading "prefix" axes:
//! for a VJP the prefix is empty and the seed is the vector `v`; for an
//! explicit Jacobian the prefix has the output's shape and the seed is the
//! product of one identity delta per output axis. The adjoint of a node `x`
//! therefore has shape `prefix ++ shape(x)`.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::graph::{EinsumSpec, Graph, Label, NodeId, Op};
use crate::tensor::DenseTensor;

/// Map from node to its accumulated adjoint (or Jacobian) node.
pub type AdjointMap = HashMap<NodeId, NodeId>;

/// Nodes lying on some path from `output` down to one of `wrt`.
fn on_path(g: &Graph, output: NodeId, wrt: &[NodeId]) -> HashSet<NodeId> {
    let targets: HashSet<NodeId> = wrt.iter().copied().collect();
    let mut live = HashSet::new();
    for n in g.topo_order(&[output]) {
        if targets.contains(&n) || g.inputs(n).iter().any(|c| live.contains(c)) {
            live.insert(n);
        }
    }
    live
}

fn backprop(
    g: &mut Graph,
    output: NodeId,
    seed: NodeId,
    prefix: &[usize],
    wrt: &[NodeId],
) -> Result<AdjointMap> {
    let live = on_path(g, output, wrt);
    let targets: HashSet<NodeId> = wrt.iter().copied().collect();
    let p = prefix.len();
    let mut pending: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    let mut adjoints = AdjointMap::new();
    if !live.contains(&output) {
        return Ok(adjoints);
    }
    pending.insert(output, vec![seed]);
    let order = g.topo_order(&[output]);
    for &n in order.iter().rev() {
        let Some(parts) = pending.remove(&n) else {
            continue;
        };
        let adj = g.add(&parts)?;
        adjoints.insert(n, adj);
        if targets.contains(&n) && g.inputs(n).iter().all(|c| !live.contains(c)) {
            continue;
        }
        let op = g.op(n).clone();
        let push = |x: NodeId, contribution: NodeId, pending: &mut HashMap<NodeId, Vec<NodeId>>| {
            if live.contains(&x) {
                pending.entry(x).or_default().push(contribution);
            }
        };
        match op {
            Op::Variable(_) | Op::Constant(_) | Op::Identity(_) => {}
            Op::Clone { of, .. } => push(of, adj, &mut pending),
            Op::Add(inputs) => {
                for x in inputs {
                    push(x, adj, &mut pending);
                }
            }
            Op::Sub(a, b) => {
                push(a, adj, &mut pending);
                if live.contains(&b) {
                    let neg = g.negate(adj);
                    push(b, neg, &mut pending);
                }
            }
            Op::Negate(a) => {
                if live.contains(&a) {
                    let neg = g.negate(adj);
                    push(a, neg, &mut pending);
                }
            }
            Op::ScalarMul(c, a) => {
                if live.contains(&a) {
                    let s = g.scale(c, adj);
                    push(a, s, &mut pending);
                }
            }
            Op::Transpose(a, perm) => {
                if live.contains(&a) {
                    let mut inv = vec![0; perm.len()];
                    for (k, &q) in perm.iter().enumerate() {
                        inv[q] = k;
                    }
                    let full: Vec<usize> = (0..p).chain(inv.iter().map(|&i| p + i)).collect();
                    let t = g.transpose(adj, &full)?;
                    push(a, t, &mut pending);
                }
            }
            Op::Einsum { spec, inputs } => {
                for k in 0..inputs.len() {
                    if !live.contains(&inputs[k]) {
                        continue;
                    }
                    let c = einsum_adjoint(g, &spec, &inputs, k, adj, p)?;
                    push(inputs[k], c, &mut pending);
                }
            }
            Op::Reciprocal(a) => {
                if live.contains(&a) {
                    // d(1/a) = -(1/a)^2 da, scalar so a Jacobian prefix broadcasts
                    let sq = g.einsum_labels(vec![vec![], vec![]], vec![], &[n, n])?;
                    let neg = g.scale(-1.0, sq);
                    let c = g.scale_by(neg, adj)?;
                    push(a, c, &mut pending);
                }
            }
            Op::Inverse(_) => return Err(Error::Unsupported("tensor inverse".into())),
        }
    }
    Ok(adjoints)
}

/// Contribution of an einsum's adjoint to operand `k`.
///
/// Labels of operand `k` that occur nowhere else are broadcast with a ones
/// vector; repeated labels of operand `k` are split apart with deltas.
fn einsum_adjoint(
    g: &mut Graph,
    spec: &EinsumSpec,
    inputs: &[NodeId],
    k: usize,
    adj: NodeId,
    p: usize,
) -> Result<NodeId> {
    let mut next: Label = spec.fresh_label();
    let mut fresh = || {
        let l = next;
        next += 1;
        l
    };
    let prefix: Vec<Label> = (0..p).map(|_| fresh()).collect();
    let mut ops: Vec<Vec<Label>> = Vec::new();
    let mut ins: Vec<NodeId> = Vec::new();
    let mut adj_labels = prefix.clone();
    adj_labels.extend_from_slice(&spec.output);
    ops.push(adj_labels);
    ins.push(adj);
    for (j, &x) in inputs.iter().enumerate() {
        if j != k {
            ops.push(spec.operands[j].clone());
            ins.push(x);
        }
    }
    let elsewhere = |l: Label| {
        spec.output.contains(&l)
            || spec
                .operands
                .iter()
                .enumerate()
                .any(|(j, o)| j != k && o.contains(&l))
    };
    let mut out = prefix;
    let mut anchor: HashMap<Label, Label> = HashMap::new();
    for &l in &spec.operands[k] {
        let e = spec.extent(l);
        match anchor.get(&l) {
            None => {
                let a = if elsewhere(l) {
                    l
                } else {
                    let f = fresh();
                    let ones = g.constant(DenseTensor::from_fn(&[e], |_| 1.0));
                    ops.push(vec![f]);
                    ins.push(ones);
                    f
                };
                anchor.insert(l, a);
                out.push(a);
            }
            Some(&a) => {
                let f = fresh();
                let id = g.identity(e)?;
                ops.push(vec![a, f]);
                ins.push(id);
                out.push(f);
            }
        }
    }
    g.einsum_labels(ops, out, &ins)
}

fn check_reachable(g: &Graph, output: NodeId, wrt: &[NodeId]) -> Result<()> {
    let reach = g.reachable(&[output]);
    for &w in wrt {
        if !reach.contains(&w) {
            return Err(Error::Unreachable(g.display_name(w)));
        }
    }
    Ok(())
}

fn collect(g: &mut Graph, adjoints: &AdjointMap, wrt: &[NodeId], prefix: &[usize]) -> Vec<NodeId> {
    wrt.iter()
        .map(|w| match adjoints.get(w) {
            Some(&a) => a,
            None => {
                let mut shape = prefix.to_vec();
                shape.extend_from_slice(g.shape(*w));
                g.zeros(&shape)
            }
        })
        .collect()
}

/// Gradients of an order-0 output.
pub fn gradients(g: &mut Graph, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
    if !g.shape(output).is_empty() {
        return Err(Error::shape(format!(
            "gradients need a scalar output, got shape {:?}",
            g.shape(output)
        )));
    }
    check_reachable(g, output, wrt)?;
    let seed = g.scalar(1.0);
    let adj = backprop(g, output, seed, &[], wrt)?;
    Ok(collect(g, &adj, wrt, &[]))
}

/// `vᵀ J`: contracts `v` against every output axis of the Jacobian of
/// `output` with respect to `wrt`.
pub fn vjp(g: &mut Graph, v: NodeId, output: NodeId, wrt: NodeId) -> Result<NodeId> {
    if g.shape(v) != g.shape(output) {
        return Err(Error::shape(format!(
            "vjp seed has shape {:?}, output has {:?}",
            g.shape(v),
            g.shape(output)
        )));
    }
    check_reachable(g, output, &[wrt])?;
    let adj = backprop(g, output, v, &[], &[wrt])?;
    Ok(collect(g, &adj, &[wrt], &[])[0])
}

fn fresh_variable(g: &mut Graph, stem: &str, shape: &[usize]) -> Result<NodeId> {
    let mut k = 0usize;
    loop {
        let name = format!("{stem}#{k}");
        if g.variable_named(&name).is_none() {
            return g.variable(&name, shape);
        }
        k += 1;
    }
}

/// `J v`, built as the VJP of a VJP: with `w(u) = uᵀJ` (linear in the
/// dummy `u`), the VJP of `w` against `v` with respect to `u` is `J v`.
pub fn jvp(g: &mut Graph, v: NodeId, output: NodeId, wrt: NodeId) -> Result<NodeId> {
    if g.shape(v) != g.shape(wrt) {
        return Err(Error::shape(format!(
            "jvp vector has shape {:?}, input has {:?}",
            g.shape(v),
            g.shape(wrt)
        )));
    }
    check_reachable(g, output, &[wrt])?;
    let out_shape = g.shape(output).to_vec();
    let u = fresh_variable(g, "jvp_dummy", &out_shape)?;
    let w = vjp(g, u, output, wrt)?;
    if !g.reachable(&[w]).contains(&u) {
        // the Jacobian is identically zero
        return Ok(g.zeros(&out_shape));
    }
    vjp(g, v, w, u)
}

/// Hessian-vector product: the gradient of `<grad f, v>`.
pub fn hvp(g: &mut Graph, output: NodeId, wrt: NodeId, v: NodeId) -> Result<NodeId> {
    if g.shape(v) != g.shape(wrt) {
        return Err(Error::shape(format!(
            "hvp vector has shape {:?}, input has {:?}",
            g.shape(v),
            g.shape(wrt)
        )));
    }
    let grad = gradients(g, output, &[wrt])?[0];
    let dot = g.inner(grad, v)?;
    if !g.reachable(&[dot]).contains(&wrt) {
        return Ok(g.zeros(&g.shape(wrt).to_vec()));
    }
    Ok(gradients(g, dot, &[wrt])?[0])
}

/// Explicit Jacobians: for each `wrt`, a node of shape
/// `shape(output) ++ shape(wrt)`.
pub fn jacobian(g: &mut Graph, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
    check_reachable(g, output, wrt)?;
    jacobian_unchecked(g, output, wrt)
}

fn jacobian_unchecked(g: &mut Graph, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
    let prefix = g.shape(output).to_vec();
    let seed = if prefix.is_empty() {
        g.scalar(1.0)
    } else {
        let n = prefix.len() as Label;
        let mut ops = Vec::new();
        let mut ins = Vec::new();
        for (i, &e) in prefix.iter().enumerate() {
            ops.push(vec![i as Label, n + i as Label]);
            ins.push(g.identity(e)?);
        }
        let out: Vec<Label> = (0..2 * n).collect();
        g.einsum_labels(ops, out, &ins)?
    };
    let adj = backprop(g, output, seed, &prefix, wrt)?;
    Ok(collect(g, &adj, wrt, &prefix))
}

/// Explicit Hessian blocks `H[i][j]` of shape `shape(wrt_i) ++ shape(wrt_j)`.
pub fn hessian(g: &mut Graph, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Vec<NodeId>>> {
    let grads = gradients(g, output, wrt)?;
    let mut blocks = Vec::with_capacity(wrt.len());
    for &gr in &grads {
        blocks.push(jacobian_unchecked(g, gr, wrt)?);
    }
    Ok(blocks)
}
