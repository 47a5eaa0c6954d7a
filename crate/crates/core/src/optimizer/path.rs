//! Contraction-order search for multi-operand einsums.
//!
//! A plan is a sequence of pairwise steps in SSA form: operands are numbered
//! `0..n`, and step `i` produces tensor `n + i`. Each step costs
//! `2 * prod(extent of every label in either input)`, or nothing if either
//! side is a bare identity delta.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::graph::{EinsumSpec, Graph, Label, NodeId, Op};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContractionStep {
    pub lhs: usize,
    pub rhs: usize,
    pub lhs_labels: Vec<Label>,
    pub rhs_labels: Vec<Label>,
    pub output: Vec<Label>,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContractionPlan {
    pub operands: usize,
    pub steps: Vec<ContractionStep>,
}

impl ContractionPlan {
    pub fn total_flops(&self) -> u64 {
        flop_count(self)
    }

    /// For each SSA id, the operand leaves it covers.
    pub fn leaves(&self) -> Vec<Vec<usize>> {
        let mut cover: Vec<Vec<usize>> = (0..self.operands).map(|k| vec![k]).collect();
        for s in &self.steps {
            let mut c = cover[s.lhs].clone();
            c.extend_from_slice(&cover[s.rhs]);
            c.sort_unstable();
            cover.push(c);
        }
        cover
    }
}

/// Sum of the per-step costs; zero for a plan with no steps.
pub fn flop_count(plan: &ContractionPlan) -> u64 {
    plan.steps.iter().map(|s| s.flops).sum()
}

/// Strategy used by [`plan`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Search {
    Auto,
    Exhaustive,
    Greedy,
    LeftFold,
}

pub const EXHAUSTIVE_LIMIT: usize = 5;

struct Ctx<'a> {
    spec: &'a EinsumSpec,
    identity: &'a [bool],
    /// how many operands carry each label, plus one if it is in the output
    uses: HashMap<Label, usize>,
}

impl<'a> Ctx<'a> {
    fn new(spec: &'a EinsumSpec, identity: &'a [bool]) -> Self {
        let mut uses: HashMap<Label, usize> = HashMap::new();
        for ops in &spec.operands {
            for l in ops.iter().collect::<BTreeSet<_>>() {
                *uses.entry(*l).or_insert(0) += 1;
            }
        }
        for l in &spec.output {
            *uses.entry(*l).or_insert(0) += 1;
        }
        Self {
            spec,
            identity,
            uses,
        }
    }

    fn size(&self, labels: &[Label]) -> u64 {
        labels.iter().map(|l| self.spec.extent(*l) as u64).product()
    }

    fn step_flops(&self, a: &Item, b: &Item) -> u64 {
        if a.identity || b.identity {
            return 0;
        }
        let union: BTreeSet<Label> = a.labels.iter().chain(&b.labels).copied().collect();
        2 * union
            .iter()
            .map(|l| self.spec.extent(*l) as u64)
            .product::<u64>()
    }

    /// Labels of the contraction of `a` and `b` that are still needed by
    /// the operands outside `cover` or by the output.
    fn kept(&self, a: &Item, b: &Item, cover_uses: &HashMap<Label, usize>) -> Vec<Label> {
        let mut out = Vec::new();
        for &l in a.labels.iter().chain(&b.labels) {
            if out.contains(&l) {
                continue;
            }
            if self.uses[&l] > cover_uses.get(&l).copied().unwrap_or(0) {
                out.push(l);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
struct Item {
    id: usize,
    labels: Vec<Label>,
    identity: bool,
    /// label -> number of covered operands carrying it
    uses: HashMap<Label, usize>,
}

fn leaf_items(ctx: &Ctx) -> Vec<Item> {
    ctx.spec
        .operands
        .iter()
        .enumerate()
        .map(|(k, ops)| {
            let mut labels = Vec::new();
            for &l in ops {
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
            let uses = labels.iter().map(|&l| (l, 1)).collect();
            Item {
                id: k,
                labels,
                identity: ctx.identity.get(k).copied().unwrap_or(false),
                uses,
            }
        })
        .collect()
}

fn merge(ctx: &Ctx, a: &Item, b: &Item, id: usize) -> (Item, ContractionStep) {
    let mut uses = a.uses.clone();
    for (&l, &c) in &b.uses {
        *uses.entry(l).or_insert(0) += c;
    }
    let output = ctx.kept(a, b, &uses);
    let step = ContractionStep {
        lhs: a.id,
        rhs: b.id,
        lhs_labels: a.labels.clone(),
        rhs_labels: b.labels.clone(),
        output: output.clone(),
        flops: ctx.step_flops(a, b),
    };
    (
        Item {
            id,
            labels: output,
            identity: false,
            uses,
        },
        step,
    )
}

fn finish(spec: &EinsumSpec, mut steps: Vec<ContractionStep>) -> ContractionPlan {
    if let Some(last) = steps.last_mut() {
        last.output = spec.output.clone();
    }
    ContractionPlan {
        operands: spec.arity(),
        steps,
    }
}

/// Contracts operands strictly left to right.
pub fn left_fold(spec: &EinsumSpec, identity: &[bool]) -> ContractionPlan {
    let ctx = Ctx::new(spec, identity);
    let items = leaf_items(&ctx);
    let n = items.len();
    let mut steps = Vec::new();
    let mut acc = items[0].clone();
    for item in items.iter().skip(1) {
        let (m, s) = merge(&ctx, &acc, item, n + steps.len());
        steps.push(s);
        acc = m;
    }
    finish(spec, steps)
}

/// Optimal plan by dynamic programming over operand subsets.
pub fn exhaustive(spec: &EinsumSpec, identity: &[bool]) -> ContractionPlan {
    let ctx = Ctx::new(spec, identity);
    let leaves = leaf_items(&ctx);
    let n = leaves.len();
    assert!(n <= 16, "exhaustive search limited to 16 operands");
    if n < 2 {
        return finish(spec, vec![]);
    }
    let full = (1usize << n) - 1;
    // best[S] = (cost, split A, item for S)
    let mut best: Vec<Option<(u64, usize, Item)>> = vec![None; full + 1];
    for (k, leaf) in leaves.iter().enumerate() {
        best[1 << k] = Some((0, 0, leaf.clone()));
    }
    let mut subsets: Vec<usize> = (1..=full).filter(|s| s.count_ones() >= 2).collect();
    subsets.sort_by_key(|s| (s.count_ones(), *s));
    for s in subsets {
        let low = s & s.wrapping_neg();
        let mut a = (s - 1) & s;
        let mut choice: Option<(u64, usize, Item)> = None;
        while a > 0 {
            // enumerate each unordered split once: A holds the lowest operand
            if a & low != 0 && a != s {
                let b = s ^ a;
                let (ca, _, ia) = best[a].as_ref().unwrap();
                let (cb, _, ib) = best[b].as_ref().unwrap();
                let (item, step) = merge(&ctx, ia, ib, 0);
                let cost = ca + cb + step.flops;
                if choice.as_ref().is_none_or(|(c, _, _)| cost < *c) {
                    choice = Some((cost, a, item));
                }
            }
            a = (a - 1) & s;
        }
        best[s] = choice;
    }
    let mut steps = Vec::new();
    emit(&ctx, &best, &leaves, full, &mut steps);
    finish(spec, steps)
}

fn emit(
    ctx: &Ctx,
    best: &[Option<(u64, usize, Item)>],
    leaves: &[Item],
    s: usize,
    steps: &mut Vec<ContractionStep>,
) -> Item {
    if s.count_ones() == 1 {
        return leaves[s.trailing_zeros() as usize].clone();
    }
    let (_, a, _) = best[s].as_ref().unwrap();
    let ia = emit(ctx, best, leaves, *a, steps);
    let ib = emit(ctx, best, leaves, s ^ *a, steps);
    let (item, step) = merge(ctx, &ia, &ib, leaves.len() + steps.len());
    steps.push(step);
    item
}

#[derive(Clone, Copy)]
enum Score {
    /// size of result minus sizes of the two inputs, then flops
    Memory,
    /// flops, then size of result
    Flops,
}

fn all_pairs(items: &[Item]) -> Vec<(usize, usize)> {
    (0..items.len())
        .flat_map(|i| (i + 1..items.len()).map(move |j| (i, j)))
        .collect()
}

/// Candidate pairs: pairs sharing a label when any pair does, else all.
fn candidate_pairs(items: &[Item]) -> Vec<(usize, usize)> {
    let shares = |i: usize, j: usize| items[i].labels.iter().any(|l| items[j].labels.contains(l));
    let all = all_pairs(items);
    let shared: Vec<(usize, usize)> = all.iter().copied().filter(|&(i, j)| shares(i, j)).collect();
    if shared.is_empty() {
        all
    } else {
        shared
    }
}

/// Replaces items `i < j` by their contraction and returns the step.
fn contract_pair(
    ctx: &Ctx,
    items: &mut Vec<Item>,
    i: usize,
    j: usize,
    id: usize,
) -> ContractionStep {
    let b = items.remove(j);
    let a = items.remove(i);
    let (m, st) = merge(ctx, &a, &b, id);
    items.push(m);
    st
}

/// Greedy completion of `items`; new tensors are numbered from `next_id`.
fn greedy_from(
    ctx: &Ctx,
    mut items: Vec<Item>,
    next_id: usize,
    score: Score,
) -> Vec<ContractionStep> {
    let mut steps = Vec::new();
    while items.len() > 1 {
        let mut best: Option<((i128, i128), usize, usize)> = None;
        for (i, j) in candidate_pairs(&items) {
            let (m, st) = merge(ctx, &items[i], &items[j], 0);
            let removed = ctx.size(&m.labels) as i128
                - ctx.size(&items[i].labels) as i128
                - ctx.size(&items[j].labels) as i128;
            let key = match score {
                Score::Memory => (removed, st.flops as i128),
                Score::Flops => (st.flops as i128, removed),
            };
            if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
                best = Some((key, i, j));
            }
        }
        let (_, i, j) = best.unwrap();
        let id = next_id + steps.len();
        steps.push(contract_pair(ctx, &mut items, i, j, id));
    }
    steps
}

fn greedy_with(ctx: &Ctx, score: Score) -> Vec<ContractionStep> {
    let items = leaf_items(ctx);
    let n = items.len();
    greedy_from(ctx, items, n, score)
}

/// Operand count up to which [`greedy`] looks one step ahead.
pub const ROLLOUT_LIMIT: usize = 8;

/// Picks each pair by its own cost plus the cost of finishing greedily from
/// the resulting state, under either scoring rule. Every pair is a
/// candidate here, so small disconnected operands can be combined early.
fn greedy_rollout(ctx: &Ctx) -> Vec<ContractionStep> {
    let mut items = leaf_items(ctx);
    let n = items.len();
    let mut steps = Vec::new();
    while items.len() > 1 {
        let mut best: Option<(u64, usize, usize)> = None;
        for (i, j) in all_pairs(&items) {
            let mut rest = items.clone();
            let id = n + steps.len();
            let st = contract_pair(ctx, &mut rest, i, j, id);
            let finish = [Score::Memory, Score::Flops]
                .into_iter()
                .map(|s| flop_sum(&greedy_from(ctx, rest.clone(), id + 1, s)))
                .min()
                .unwrap();
            let total = st.flops + finish;
            if best.is_none_or(|(c, _, _)| total < c) {
                best = Some((total, i, j));
            }
        }
        let (_, i, j) = best.unwrap();
        let id = n + steps.len();
        steps.push(contract_pair(ctx, &mut items, i, j, id));
    }
    steps
}

fn flop_sum(steps: &[ContractionStep]) -> u64 {
    steps.iter().map(|s| s.flops).sum()
}

/// Greedy pairwise search. Two scoring rules are run, plus a one-step
/// lookahead for einsums of up to [`ROLLOUT_LIMIT`] operands, and the
/// cheapest plan is kept.
pub fn greedy(spec: &EinsumSpec, identity: &[bool]) -> ContractionPlan {
    let ctx = Ctx::new(spec, identity);
    let mut best = finish(spec, greedy_with(&ctx, Score::Memory));
    let mut candidates = vec![finish(spec, greedy_with(&ctx, Score::Flops))];
    if spec.arity() <= ROLLOUT_LIMIT {
        candidates.push(finish(spec, greedy_rollout(&ctx)));
    }
    for c in candidates {
        if c.total_flops() < best.total_flops() {
            best = c;
        }
    }
    best
}

/// Exhaustive for small einsums, greedy otherwise; never worse than the
/// left-to-right fold.
pub fn plan(spec: &EinsumSpec, identity: &[bool], search: Search) -> ContractionPlan {
    if spec.arity() < 2 {
        return finish(spec, vec![]);
    }
    let chosen = match search {
        Search::Exhaustive => return exhaustive(spec, identity),
        Search::Greedy => greedy(spec, identity),
        Search::LeftFold => return left_fold(spec, identity),
        Search::Auto if spec.arity() <= EXHAUSTIVE_LIMIT => return exhaustive(spec, identity),
        Search::Auto => greedy(spec, identity),
    };
    let fold = left_fold(spec, identity);
    if fold.total_flops() < chosen.total_flops() {
        fold
    } else {
        chosen
    }
}

/// Identity-operand flags for an einsum node's inputs.
pub fn identity_flags(g: &Graph, inputs: &[NodeId]) -> Vec<bool> {
    inputs
        .iter()
        .map(|&x| matches!(g.op(x), Op::Identity(_)))
        .collect()
}

/// Plan for an einsum node of the graph.
pub fn plan_node(g: &Graph, node: NodeId, search: Search) -> Result<ContractionPlan> {
    match g.op(node) {
        Op::Einsum { spec, inputs } => Ok(plan(spec, &identity_flags(g, inputs), search)),
        _ => Err(Error::invalid(format!(
            "{} is not an einsum",
            g.display_name(node)
        ))),
    }
}

/// Builds the binary einsum nodes of `plan` and returns the root.
pub fn build_tree(
    g: &mut Graph,
    spec: &EinsumSpec,
    inputs: &[NodeId],
    plan: &ContractionPlan,
) -> Result<NodeId> {
    if plan.steps.is_empty() {
        return g.einsum(spec.clone(), inputs);
    }
    let mut ssa: Vec<NodeId> = inputs.to_vec();
    for (i, s) in plan.steps.iter().enumerate() {
        let lhs_labels = if s.lhs < inputs.len() {
            spec.operands[s.lhs].clone()
        } else {
            s.lhs_labels.clone()
        };
        let rhs_labels = if s.rhs < inputs.len() {
            spec.operands[s.rhs].clone()
        } else {
            s.rhs_labels.clone()
        };
        let used: BTreeSet<Label> = lhs_labels.iter().chain(&rhs_labels).copied().collect();
        let extents = used.iter().map(|&l| (l, spec.extent(l))).collect();
        let out = if i + 1 == plan.steps.len() {
            spec.output.clone()
        } else {
            s.output.clone()
        };
        let step_spec = EinsumSpec::new(vec![lhs_labels, rhs_labels], out, extents)?;
        let node = g.einsum(step_spec, &[ssa[s.lhs], ssa[s.rhs]])?;
        ssa.push(node);
    }
    Ok(*ssa.last().unwrap())
}

/// Replaces an einsum node by the binary tree of its chosen plan.
pub fn opt_contract_path(g: &mut Graph, node: NodeId) -> Result<(NodeId, ContractionPlan)> {
    let (spec, inputs) = match g.op(node) {
        Op::Einsum { spec, inputs } => (spec.clone(), inputs.clone()),
        _ => {
            return Err(Error::invalid(format!(
                "{} is not an einsum",
                g.display_name(node)
            )))
        }
    };
    let p = plan(&spec, &identity_flags(g, &inputs), Search::Auto);
    let root = build_tree(g, &spec, &inputs, &p)?;
    Ok((root, p))
}

/// Contraction tree that admits the inputs in `order` one after another:
/// before `order[i]` joins, a subtree containing every earlier constrained
/// input (and any unconstrained ones the search wants) is fixed, and none of
/// `order[i+1..]` is part of it.
pub fn opt_contract_path_w_constraint(
    g: &mut Graph,
    node: NodeId,
    order: &[NodeId],
) -> Result<NodeId> {
    let (spec, inputs) = match g.op(node) {
        Op::Einsum { spec, inputs } => (spec.clone(), inputs.clone()),
        _ => {
            return Err(Error::invalid(format!(
                "{} is not an einsum",
                g.display_name(node)
            )))
        }
    };
    for &x in order {
        if !inputs.contains(&x) {
            return Err(Error::invalid(format!(
                "constraint {} is not an input of the einsum",
                g.display_name(x)
            )));
        }
    }
    if inputs.len() < 2 {
        return Ok(node);
    }

    #[derive(Clone)]
    struct Part {
        node: NodeId,
        labels: Vec<Label>,
        /// the original input when this is still a leaf
        leaf: Option<NodeId>,
    }
    let mut parts: Vec<Part> = inputs
        .iter()
        .zip(&spec.operands)
        .map(|(&x, l)| Part {
            node: x,
            labels: l.clone(),
            leaf: Some(x),
        })
        .collect();

    for (i, &target) in order.iter().enumerate() {
        let later = &order[i + 1..];
        let chosen: Vec<usize> = (0..parts.len())
            .filter(|&k| parts[k].leaf.is_none_or(|x| !later.contains(&x)))
            .collect();
        if chosen.len() < 2 {
            continue;
        }
        let rest: Vec<usize> = (0..parts.len()).filter(|k| !chosen.contains(k)).collect();
        let needed: BTreeSet<Label> = rest
            .iter()
            .flat_map(|&k| parts[k].labels.iter().copied())
            .chain(spec.output.iter().copied())
            .collect();
        let sub_ops: Vec<Vec<Label>> = chosen.iter().map(|&k| parts[k].labels.clone()).collect();
        let mut sub_out: Vec<Label> = Vec::new();
        for &l in sub_ops.iter().flatten() {
            if needed.contains(&l) && !sub_out.contains(&l) {
                sub_out.push(l);
            }
        }
        let used: BTreeSet<Label> = sub_ops.iter().flatten().copied().collect();
        let extents = used.iter().map(|&l| (l, spec.extent(l))).collect();
        let sub = EinsumSpec::new(sub_ops, sub_out, extents)?;
        let sub_inputs: Vec<NodeId> = chosen.iter().map(|&k| parts[k].node).collect();
        let p = plan(&sub, &identity_flags(g, &sub_inputs), Search::Auto);

        // lowest step covering every occurrence of the target
        let targets: Vec<usize> = chosen
            .iter()
            .enumerate()
            .filter(|(_, &k)| parts[k].leaf == Some(target))
            .map(|(pos, _)| pos)
            .collect();
        let cover = p.leaves();
        let Some(lca) =
            (sub.arity()..cover.len()).find(|&id| targets.iter().all(|t| cover[id].contains(t)))
        else {
            continue;
        };
        // build just that subtree
        let mut ssa: HashMap<usize, (NodeId, Vec<Label>)> = HashMap::new();
        for (pos, &k) in chosen.iter().enumerate() {
            ssa.insert(pos, (parts[k].node, parts[k].labels.clone()));
        }
        for (si, s) in p.steps.iter().enumerate() {
            let id = sub.arity() + si;
            if !cover[id].iter().all(|x| cover[lca].contains(x)) {
                continue;
            }
            let (ln, ll) = ssa[&s.lhs].clone();
            let (rn, rl) = ssa[&s.rhs].clone();
            // the subtree root keeps what the rest of the einsum still needs
            let out = if id == lca {
                let outside: BTreeSet<Label> = (0..sub.arity())
                    .filter(|x| !cover[lca].contains(x))
                    .flat_map(|x| sub.operands[x].iter().copied())
                    .chain(sub.output.iter().copied())
                    .collect();
                let mut o = Vec::new();
                for &l in ll.iter().chain(&rl) {
                    if outside.contains(&l) && !o.contains(&l) {
                        o.push(l);
                    }
                }
                o
            } else {
                s.output.clone()
            };
            let used: BTreeSet<Label> = ll.iter().chain(&rl).copied().collect();
            let extents = used.iter().map(|&l| (l, spec.extent(l))).collect();
            let step_spec = EinsumSpec::new(vec![ll, rl], out.clone(), extents)?;
            let n = g.einsum(step_spec, &[ln, rn])?;
            ssa.insert(id, (n, out));
            if id == lca {
                break;
            }
        }
        let (root, labels) = ssa[&lca].clone();
        let absorbed: Vec<usize> = cover[lca].iter().map(|&pos| chosen[pos]).collect();
        let mut next: Vec<Part> = Vec::new();
        let mut placed = false;
        for (k, part) in parts.iter().enumerate() {
            if absorbed.contains(&k) {
                if !placed {
                    next.push(Part {
                        node: root,
                        labels: labels.clone(),
                        leaf: None,
                    });
                    placed = true;
                }
            } else {
                next.push(part.clone());
            }
        }
        parts = next;
    }

    if parts.len() == 1 {
        // the last subtree already produced everything; fix the output order
        let p = &parts[0];
        let used: BTreeSet<Label> = p.labels.iter().copied().collect();
        let extents = used.iter().map(|&l| (l, spec.extent(l))).collect();
        let s = EinsumSpec::new(vec![p.labels.clone()], spec.output.clone(), extents)?;
        return g.einsum(s, &[p.node]);
    }
    let ops: Vec<Vec<Label>> = parts.iter().map(|p| p.labels.clone()).collect();
    let used: BTreeSet<Label> = ops.iter().flatten().copied().collect();
    let extents = used.iter().map(|&l| (l, spec.extent(l))).collect();
    let last = EinsumSpec::new(ops, spec.output.clone(), extents)?;
    let last_inputs: Vec<NodeId> = parts.iter().map(|p| p.node).collect();
    let p = plan(&last, &identity_flags(g, &last_inputs), Search::Auto);
    build_tree(g, &last, &last_inputs, &p)
}
