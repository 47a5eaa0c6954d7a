//! Structured tensor inverses.
//!
//! `decompose_inverse` splits the inverse of an einsum that is an outer
//! product of independent factors into an outer product of smaller inverses.
//! `prune_inverse` cancels an einsum factor against its own inverse.

use std::collections::{BTreeSet, HashMap};

use crate::error::Result;
use crate::graph::{EinsumSpec, Graph, Label, NodeId, Op};

use super::rewrite;
use super::union_find::UnionFind;

fn sub_extents(spec: &EinsumSpec, ops: &[Vec<Label>]) -> std::collections::BTreeMap<Label, usize> {
    let used: BTreeSet<Label> = ops.iter().flatten().copied().collect();
    used.iter().map(|&l| (l, spec.extent(l))).collect()
}

pub fn decompose_inverse(g: &mut Graph, roots: &[NodeId]) -> Result<(Vec<NodeId>, usize)> {
    rewrite(g, roots, |g, n, ins| {
        if !matches!(g.op(n), Op::Inverse(_)) {
            return Ok(None);
        }
        match g.op(ins[0]).clone() {
            // (c·x)⁻¹ = c⁻¹·x⁻¹
            Op::ScalarMul(c, x) if c != 0.0 => {
                let inv = g.inverse(x)?;
                Ok(Some(g.scale(1.0 / c, inv)))
            }
            Op::Negate(x) => {
                let inv = g.inverse(x)?;
                Ok(Some(g.negate(inv)))
            }
            Op::Einsum { spec, inputs } => decompose(g, &spec, &inputs),
            _ => Ok(None),
        }
    })
}

fn decompose(g: &mut Graph, spec: &EinsumSpec, inputs: &[NodeId]) -> Result<Option<NodeId>> {
    let order = spec.output.len();
    if order == 0 || order % 2 != 0 {
        return Ok(None);
    }
    let half = order / 2;
    let m = spec.arity();

    // operands sharing any label are connected
    let mut uf = UnionFind::new(m);
    let mut owner: HashMap<Label, usize> = HashMap::new();
    for (k, ops) in spec.operands.iter().enumerate() {
        for &l in ops {
            match owner.get(&l) {
                Some(&j) => {
                    uf.union(j, k);
                }
                None => {
                    owner.insert(l, k);
                }
            }
        }
    }
    // a row axis and its paired column axis must stay together
    for j in 0..half {
        let (r, c) = (owner[&spec.output[j]], owner[&spec.output[j + half]]);
        uf.union(r, c);
    }
    let mut group_of: Vec<usize> = (0..m).map(|k| uf.find(k)).collect();
    let square = |group_of: &[usize], grp: usize| -> bool {
        let rows: usize = (0..half)
            .filter(|&j| group_of[owner[&spec.output[j]]] == grp)
            .map(|j| spec.extent(spec.output[j]))
            .product();
        let cols: usize = (half..order)
            .filter(|&j| group_of[owner[&spec.output[j]]] == grp)
            .map(|j| spec.extent(spec.output[j]))
            .product();
        rows == cols
    };
    let mut groups: Vec<usize> = group_of.clone();
    groups.sort_unstable();
    groups.dedup();
    // merge every non-square group into one; the merged group is square
    // because the whole matricization is
    let bad: Vec<usize> = groups
        .iter()
        .copied()
        .filter(|&gr| !square(&group_of, gr))
        .collect();
    if let Some(&first) = bad.first() {
        for x in group_of.iter_mut() {
            if bad.contains(x) {
                *x = first;
            }
        }
    }
    // groups without output axes are scalar factors; attach them to the
    // group owning the first output axis
    let anchor = group_of[owner[&spec.output[0]]];
    let has_axes =
        |gr: usize, group_of: &[usize]| spec.output.iter().any(|l| group_of[owner[l]] == gr);
    let snapshot = group_of.clone();
    for x in group_of.iter_mut() {
        if !has_axes(*x, &snapshot) {
            *x = anchor;
        }
    }
    let mut ordered: Vec<usize> = Vec::new();
    for l in &spec.output {
        let gr = group_of[owner[l]];
        if !ordered.contains(&gr) {
            ordered.push(gr);
        }
    }
    if ordered.len() < 2 {
        return Ok(None);
    }

    let mut outer_ops = Vec::new();
    let mut outer_ins = Vec::new();
    for &gr in &ordered {
        let members: Vec<usize> = (0..m).filter(|&k| group_of[k] == gr).collect();
        let rows: Vec<Label> = spec.output[..half]
            .iter()
            .copied()
            .filter(|l| group_of[owner[l]] == gr)
            .collect();
        let cols: Vec<Label> = spec.output[half..]
            .iter()
            .copied()
            .filter(|l| group_of[owner[l]] == gr)
            .collect();
        let ops: Vec<Vec<Label>> = members.iter().map(|&k| spec.operands[k].clone()).collect();
        let mut out = rows.clone();
        out.extend_from_slice(&cols);
        let extents = sub_extents(spec, &ops);
        let sub = EinsumSpec::new(ops, out, extents)?;
        let sub_ins: Vec<NodeId> = members.iter().map(|&k| inputs[k]).collect();
        let factor = g.einsum(sub, &sub_ins)?;
        let inv = g.inverse(factor)?;
        let mut labels = cols;
        labels.extend_from_slice(&rows);
        outer_ops.push(labels);
        outer_ins.push(inv);
    }
    let mut out: Vec<Label> = spec.output[half..].to_vec();
    out.extend_from_slice(&spec.output[..half]);
    let extents = sub_extents(spec, &outer_ops);
    let outer = EinsumSpec::new(outer_ops, out, extents)?;
    Ok(Some(g.einsum(outer, &outer_ins)?))
}

pub fn prune_inverse(g: &mut Graph, roots: &[NodeId]) -> Result<(Vec<NodeId>, usize)> {
    rewrite(g, roots, |g, n, ins| match g.op(n).clone() {
        Op::Inverse(_) => match g.op(ins[0]).clone() {
            Op::Identity(_) => Ok(Some(ins[0])),
            Op::Inverse(inner) => Ok(Some(inner)),
            _ => Ok(None),
        },
        Op::Einsum { spec, .. } => {
            let mut spec = spec;
            let mut inputs = ins.clone();
            let mut changed = false;
            while let Some((s, i)) = cancel_once(g, &spec, &inputs)? {
                spec = s;
                inputs = i;
                changed = true;
            }
            if changed {
                Ok(Some(g.einsum(spec, &inputs)?))
            } else {
                Ok(None)
            }
        }
        _ => Ok(None),
    })
}

/// Which half of the matched factor is contracted against the inverse.
#[derive(Clone, Copy)]
enum Side {
    /// `T · T⁻¹`: the columns of `T` meet the inverse.
    Right,
    /// `T⁻¹ · T`: the rows of `T` meet the inverse.
    Left,
}

const MATCH_BUDGET: usize = 20_000;

struct Matcher<'a> {
    g: &'a Graph,
    spec: &'a EinsumSpec,
    inputs: &'a [NodeId],
    pattern: &'a EinsumSpec,
    pattern_inputs: &'a [NodeId],
    skip: usize,
    budget: usize,
}

impl Matcher<'_> {
    fn search(
        &mut self,
        p: usize,
        used: &mut Vec<bool>,
        assign: &mut Vec<usize>,
        phi: &mut HashMap<Label, Label>,
        psi: &mut HashMap<Label, Label>,
        accept: &mut dyn FnMut(&[usize], &HashMap<Label, Label>) -> bool,
    ) -> bool {
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        if p == self.pattern_inputs.len() {
            return accept(assign, phi);
        }
        for q in 0..self.inputs.len() {
            if q == self.skip || used[q] || self.inputs[q] != self.pattern_inputs[p] {
                continue;
            }
            let pl = &self.pattern.operands[p];
            let el = &self.spec.operands[q];
            let mut added: Vec<(Label, Label)> = Vec::new();
            let mut ok = true;
            for (&a, &b) in pl.iter().zip(el) {
                match (phi.get(&a), psi.get(&b)) {
                    (Some(&x), _) if x != b => ok = false,
                    (_, Some(&y)) if y != a => ok = false,
                    (None, None) => {
                        phi.insert(a, b);
                        psi.insert(b, a);
                        added.push((a, b));
                    }
                    _ => {}
                }
                if !ok {
                    break;
                }
            }
            if ok {
                used[q] = true;
                assign.push(q);
                if self.search(p + 1, used, assign, phi, psi, accept) {
                    return true;
                }
                assign.pop();
                used[q] = false;
            }
            for (a, b) in added {
                phi.remove(&a);
                psi.remove(&b);
            }
        }
        false
    }
}

/// Finds one `T` / `T⁻¹` pair inside the einsum and replaces it by deltas.
fn cancel_once(
    g: &mut Graph,
    spec: &EinsumSpec,
    inputs: &[NodeId],
) -> Result<Option<(EinsumSpec, Vec<NodeId>)>> {
    for k in 0..inputs.len() {
        let Op::Inverse(t) = *g.op(inputs[k]) else {
            continue;
        };
        let inv_labels = spec.operands[k].clone();
        let half = inv_labels.len() / 2;
        if half == 0 {
            continue;
        }
        let (pattern, pattern_inputs) = match g.op(t) {
            Op::Einsum { spec, inputs } => (spec.clone(), inputs.clone()),
            _ => {
                let ls: Vec<Label> = (0..2 * half as Label).collect();
                let p = EinsumSpec::from_shapes(vec![ls.clone()], ls, &[g.shape(t)])?;
                (p, vec![t])
            }
        };
        for side in [Side::Right, Side::Left] {
            let (fixed_t, fixed_inv): (Vec<Label>, Vec<Label>) = match side {
                Side::Right => (pattern.output[half..].to_vec(), inv_labels[..half].to_vec()),
                Side::Left => (pattern.output[..half].to_vec(), inv_labels[half..].to_vec()),
            };
            let mut phi: HashMap<Label, Label> = HashMap::new();
            let mut psi: HashMap<Label, Label> = HashMap::new();
            let mut consistent = true;
            for (&a, &b) in fixed_t.iter().zip(&fixed_inv) {
                if phi.get(&a).is_some_and(|&x| x != b) || psi.get(&b).is_some_and(|&y| y != a) {
                    consistent = false;
                }
                phi.insert(a, b);
                psi.insert(b, a);
            }
            if !consistent {
                continue;
            }
            // labels of T whose images must not leak outside the match
            let private: BTreeSet<Label> = pattern
                .labels()
                .into_iter()
                .filter(|l| !pattern.output.contains(l))
                .chain(fixed_t.iter().copied())
                .collect();
            let mut found: Option<Vec<usize>> = None;
            let mut accept = |assign: &[usize], phi: &HashMap<Label, Label>| -> bool {
                for &pl in &private {
                    let el = phi[&pl];
                    if spec.output.contains(&el) {
                        return false;
                    }
                    let inside: usize = assign
                        .iter()
                        .map(|&q| spec.operands[q].iter().filter(|&&x| x == el).count())
                        .sum();
                    let in_inv = inv_labels.iter().filter(|&&x| x == el).count();
                    let expected = if fixed_t.contains(&pl) {
                        inside + in_inv
                    } else {
                        inside
                    };
                    if spec.count(el) != expected {
                        return false;
                    }
                }
                found = Some(assign.to_vec());
                true
            };
            let mut m = Matcher {
                g,
                spec,
                inputs,
                pattern: &pattern,
                pattern_inputs: &pattern_inputs,
                skip: k,
                budget: MATCH_BUDGET,
            };
            let _ = m.g;
            let mut used = vec![false; inputs.len()];
            let mut assign = Vec::new();
            m.search(0, &mut used, &mut assign, &mut phi, &mut psi, &mut accept);
            let Some(assign) = found else {
                continue;
            };
            // phi is restored by the search; rebuild it for the accepted match
            let mut phi: HashMap<Label, Label> = fixed_t
                .iter()
                .copied()
                .zip(fixed_inv.iter().copied())
                .collect();
            for (p, &q) in assign.iter().enumerate() {
                for (&a, &b) in pattern.operands[p].iter().zip(&spec.operands[q]) {
                    phi.insert(a, b);
                }
            }
            let mut ops = Vec::new();
            let mut ins = Vec::new();
            for (q, (o, &x)) in spec.operands.iter().zip(inputs).enumerate() {
                if q != k && !assign.contains(&q) {
                    ops.push(o.clone());
                    ins.push(x);
                }
            }
            for j in 0..half {
                let (a, b, e) = match side {
                    Side::Right => {
                        let r = pattern.output[j];
                        (phi[&r], inv_labels[half + j], pattern.extent(r))
                    }
                    Side::Left => {
                        let c = pattern.output[half + j];
                        (inv_labels[j], phi[&c], pattern.extent(c))
                    }
                };
                ops.push(vec![a, b]);
                ins.push(g.identity(e)?);
            }
            let extents = sub_extents(spec, &ops);
            return Ok(Some((
                EinsumSpec::new(ops, spec.output.clone(), extents)?,
                ins,
            )));
        }
    }
    Ok(None)
}
