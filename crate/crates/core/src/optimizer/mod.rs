//! Graph rewrites and the optimization pipeline.

pub mod algebra;
pub mod cost;
pub mod cse;
pub mod dimtree;
pub mod distribute;
pub mod fuse;
pub mod identity;
pub mod inverse;
pub mod path;
pub mod union_find;

use std::collections::HashMap;

use serde::Serialize;

use crate::error::Result;
use crate::graph::{Graph, NodeId, Op};

pub use algebra::normalize_algebra;
pub use cost::{contractions_touching, estimate_flops, flops_touching};
pub use cse::cse;
pub use dimtree::{dimension_tree_with_orders, generate_dimension_tree};
pub use distribute::distribute;
pub use fuse::{build_uf, fuse_einsums, DimUnionFind};
pub use identity::prune_identity;
pub use inverse::{decompose_inverse, prune_inverse};
pub use path::{opt_contract_path, opt_contract_path_w_constraint, ContractionPlan};
pub use union_find::UnionFind;

/// Bottom-up rewrite of everything reachable from `roots`.
///
/// `f` sees each node with its already rewritten inputs and returns the
/// replacement, or `None` to rebuild the node unchanged over the new inputs.
/// Returns the new roots and how many nodes `f` replaced.
pub(crate) fn rewrite<F>(g: &mut Graph, roots: &[NodeId], mut f: F) -> Result<(Vec<NodeId>, usize)>
where
    F: FnMut(&mut Graph, NodeId, Vec<NodeId>) -> Result<Option<NodeId>>,
{
    let mut memo: HashMap<NodeId, NodeId> = HashMap::new();
    let mut count = 0;
    for n in g.topo_order(roots) {
        let ins: Vec<NodeId> = g.inputs(n).iter().map(|x| memo[x]).collect();
        let new = match f(g, n, ins.clone())? {
            Some(x) => {
                let default = g.with_inputs(n, &ins)?;
                if x != default {
                    count += 1;
                }
                x
            }
            None => g.with_inputs(n, &ins)?,
        };
        memo.insert(n, new);
    }
    Ok((roots.iter().map(|r| memo[r]).collect(), count))
}

/// Names under which the pipeline records its passes.
pub const PASS_NAMES: [&str; 9] = [
    "distribute",
    "fuse",
    "decompose_inverse",
    "prune_identity",
    "prune_inverse",
    "normalize_algebra",
    "path",
    "cse",
    "dimension_tree",
];

#[derive(Clone, Debug, Serialize)]
pub struct PassStat {
    pub pass: String,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub flops_before: u64,
    pub flops_after: u64,
    pub rewrites: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PassReport {
    pub passes: Vec<PassStat>,
    /// Roots after each pass, for dumping intermediate graphs.
    #[serde(skip)]
    pub snapshots: Vec<(String, Vec<NodeId>)>,
}

impl PassReport {
    fn record(
        &mut self,
        g: &Graph,
        pass: &str,
        before: &[NodeId],
        after: &[NodeId],
        rewrites: usize,
    ) {
        self.passes.push(PassStat {
            pass: pass.to_string(),
            nodes_before: g.topo_order(before).len(),
            nodes_after: g.topo_order(after).len(),
            flops_before: estimate_flops(g, before),
            flops_after: estimate_flops(g, after),
            rewrites,
        });
        self.snapshots.push((pass.to_string(), after.to_vec()));
    }

    /// Cost-model flops before the first pass and after the last.
    pub fn flops(&self) -> Option<(u64, u64)> {
        Some((
            self.passes.first()?.flops_before,
            self.passes.last()?.flops_after,
        ))
    }

    /// One line per pass, then the overall node and flop change.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<18} {:>15} {:>25} {:>8}\n",
            "pass", "nodes", "flops", "rewrites"
        );
        for p in &self.passes {
            s += &format!(
                "{:<18} {:>15} {:>25} {:>8}\n",
                p.pass,
                format!("{} -> {}", p.nodes_before, p.nodes_after),
                format!("{} -> {}", p.flops_before, p.flops_after),
                p.rewrites
            );
        }
        if let (Some(first), Some(last)) = (self.passes.first(), self.passes.last()) {
            s += &format!(
                "total nodes {} -> {}, flops {} -> {}",
                first.nodes_before, last.nodes_after, first.flops_before, last.flops_after
            );
            if last.flops_after > 0 {
                s += &format!(
                    " (ratio {:.3})",
                    first.flops_before as f64 / last.flops_after as f64
                );
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, Default)]
pub enum PathStrategy {
    /// Each einsum gets its own cheapest contraction order.
    #[default]
    Unconstrained,
    /// `roots[i]` is the update of `sites[i]`; see [`generate_dimension_tree`].
    DimensionTree { sites: Vec<NodeId> },
    /// `roots[i]` absorbs its inputs in `orders[i]`; see
    /// [`dimension_tree_with_orders`].
    Ordered { orders: Vec<Vec<NodeId>> },
}

#[derive(Clone, Debug)]
pub struct Options {
    pub max_symbolic_iterations: usize,
    pub path: PathStrategy,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_symbolic_iterations: 20,
            path: PathStrategy::Unconstrained,
        }
    }
}

type Pass = fn(&mut Graph, &[NodeId]) -> Result<(Vec<NodeId>, usize)>;

fn apply(
    g: &mut Graph,
    report: &mut PassReport,
    name: &str,
    pass: Pass,
    roots: Vec<NodeId>,
) -> Result<Vec<NodeId>> {
    let (after, n) = pass(g, &roots)?;
    report.record(g, name, &roots, &after, n);
    Ok(after)
}

/// Replaces every einsum with three or more operands by its cheapest binary
/// contraction tree.
pub fn optimize_paths(g: &mut Graph, roots: &[NodeId]) -> Result<(Vec<NodeId>, usize)> {
    rewrite(g, roots, |g, n, ins| {
        if !matches!(g.op(n), Op::Einsum { .. }) || ins.len() < 3 {
            return Ok(None);
        }
        let node = g.with_inputs(n, &ins)?;
        if !matches!(g.op(node), Op::Einsum { .. }) {
            return Ok(Some(node));
        }
        Ok(Some(opt_contract_path(g, node)?.0))
    })
}

/// Runs the full pipeline on `roots`:
/// distribute, fuse, then the symbolic loop (inverse decomposition, identity
/// and inverse pruning, algebraic normalization, distribute, fuse) until the
/// roots stop changing, then contraction paths and CSE.
pub fn optimize_roots(
    g: &mut Graph,
    roots: &[NodeId],
    opts: &Options,
) -> Result<(Vec<NodeId>, PassReport)> {
    let mut report = PassReport::default();
    let mut r = roots.to_vec();
    r = apply(g, &mut report, "distribute", distribute, r)?;
    r = apply(g, &mut report, "fuse", fuse_einsums, r)?;
    for _ in 0..opts.max_symbolic_iterations {
        let start = r.clone();
        r = apply(g, &mut report, "decompose_inverse", decompose_inverse, r)?;
        r = apply(g, &mut report, "prune_identity", prune_identity, r)?;
        r = apply(g, &mut report, "prune_inverse", prune_inverse, r)?;
        r = apply(g, &mut report, "normalize_algebra", normalize_algebra, r)?;
        r = apply(g, &mut report, "distribute", distribute, r)?;
        r = apply(g, &mut report, "fuse", fuse_einsums, r)?;
        if r == start {
            break;
        }
    }
    match &opts.path {
        PathStrategy::Unconstrained => {
            r = apply(g, &mut report, "path", optimize_paths, r)?;
            r = apply(g, &mut report, "cse", cse, r)?;
        }
        PathStrategy::DimensionTree { sites } => {
            let before = r.clone();
            r = generate_dimension_tree(g, &r, sites)?;
            report.record(g, "dimension_tree", &before, &r, 0);
        }
        PathStrategy::Ordered { orders } => {
            let before = r.clone();
            r = dimension_tree_with_orders(g, &r, orders)?;
            report.record(g, "dimension_tree", &before, &r, 0);
        }
    }
    Ok((r, report))
}

/// Optimizes every sink of `g` in place.
pub fn optimize(g: &mut Graph) -> Result<PassReport> {
    optimize_with(g, &Options::default())
}

pub fn optimize_with(g: &mut Graph, opts: &Options) -> Result<PassReport> {
    let names: Vec<String> = g.sinks().iter().map(|s| s.name.clone()).collect();
    let roots = g.sink_nodes();
    let (new, report) = optimize_roots(g, &roots, opts)?;
    for (name, n) in names.iter().zip(new) {
        g.set_sink(name, n);
    }
    Ok(report)
}
