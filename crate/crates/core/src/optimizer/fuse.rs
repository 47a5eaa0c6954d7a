//! Collapses trees of einsums into single einsums.
//!
//! The tree under an einsum is linearized (an intermediate consumed twice
//! is expanded once per use), every (tree node, axis label) pair becomes a
//! union-find element, and the elements tied together by operand/output
//! correspondences share one label of the fused spec.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::graph::{EinsumSpec, Graph, Label, NodeId, Op};

use super::rewrite;
use super::union_find::UnionFind;

enum Child {
    Tree(usize),
    Leaf(NodeId),
}

struct Occurrence {
    spec: EinsumSpec,
    children: Vec<Child>,
}

/// Union-find over the axes of a linearized einsum tree.
pub struct DimUnionFind {
    uf: UnionFind,
    index: HashMap<(usize, Label), usize>,
    extent: Vec<usize>,
    occurrences: Vec<Occurrence>,
}

fn strip_clone(g: &Graph, mut x: NodeId) -> NodeId {
    while let Op::Clone { of, .. } = g.op(x) {
        x = *of;
    }
    x
}

impl DimUnionFind {
    fn element(&mut self, occ: usize, l: Label) -> usize {
        let e = self.occurrences[occ].spec.extent(l);
        *self.index.entry((occ, l)).or_insert_with(|| {
            self.extent.push(e);
            self.uf.push()
        })
    }

    fn expand(&mut self, g: &Graph, n: NodeId) -> usize {
        let (spec, inputs) = match g.op(n) {
            Op::Einsum { spec, inputs } => (spec.clone(), inputs.clone()),
            _ => unreachable!("expand only visits einsums"),
        };
        let id = self.occurrences.len();
        self.occurrences.push(Occurrence {
            spec,
            children: Vec::new(),
        });
        let mut children = Vec::new();
        for x in inputs {
            let x = strip_clone(g, x);
            if matches!(g.op(x), Op::Einsum { .. }) {
                children.push(Child::Tree(self.expand(g, x)));
            } else {
                children.push(Child::Leaf(x));
            }
        }
        self.occurrences[id].children = children;
        id
    }

    /// Two axes end up in one set iff a chain of shared subscripts links
    /// them.
    pub fn build(g: &Graph, root: NodeId) -> Result<Self> {
        let mut d = DimUnionFind {
            uf: UnionFind::new(0),
            index: HashMap::new(),
            extent: Vec::new(),
            occurrences: Vec::new(),
        };
        d.expand(g, root);
        for t in 0..d.occurrences.len() {
            let labels: Vec<Label> = d.occurrences[t].spec.extents.keys().copied().collect();
            for l in labels {
                d.element(t, l);
            }
        }
        for t in 0..d.occurrences.len() {
            for k in 0..d.occurrences[t].children.len() {
                let Child::Tree(c) = d.occurrences[t].children[k] else {
                    continue;
                };
                let parent_labels = d.occurrences[t].spec.operands[k].clone();
                let child_labels = d.occurrences[c].spec.output.clone();
                for (pl, cl) in parent_labels.into_iter().zip(child_labels) {
                    let (a, b) = (d.element(t, pl), d.element(c, cl));
                    if d.extent[a] != d.extent[b] {
                        return Err(Error::Inconsistent(format!(
                            "fused axes have extents {} and {}",
                            d.extent[a], d.extent[b]
                        )));
                    }
                    d.uf.union(a, b);
                }
            }
        }
        Ok(d)
    }

    pub fn find(&mut self, occurrence: usize, label: Label) -> usize {
        let e = self.index[&(occurrence, label)];
        self.uf.find(e)
    }

    /// Number of distinct axis sets.
    pub fn set_count(&mut self) -> usize {
        let n = self.uf.len();
        let mut roots: Vec<usize> = (0..n).map(|x| self.uf.find(x)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    /// The fused spec (one label per set, numbered by first appearance)
    /// and its leaf inputs.
    pub fn fused(&mut self) -> Result<(EinsumSpec, Vec<NodeId>)> {
        let mut leaves: Vec<(usize, usize, NodeId)> = Vec::new();
        self.collect_leaves(0, &mut leaves);
        let mut names: HashMap<usize, Label> = HashMap::new();
        let mut extents = BTreeMap::new();
        let mut operands = Vec::new();
        let mut inputs = Vec::new();
        for (occ, k, x) in leaves {
            let labels = self.occurrences[occ].spec.operands[k].clone();
            let mut ops = Vec::new();
            for l in labels {
                let r = self.find(occ, l);
                let n = names.len() as Label;
                let name = *names.entry(r).or_insert(n);
                extents.insert(name, self.extent[r]);
                ops.push(name);
            }
            operands.push(ops);
            inputs.push(x);
        }
        let out_labels = self.occurrences[0].spec.output.clone();
        let mut output = Vec::new();
        for l in out_labels {
            let r = self.find(0, l);
            output.push(
                *names
                    .get(&r)
                    .ok_or_else(|| Error::einsum("fused output axis is not carried by any leaf"))?,
            );
        }
        Ok((EinsumSpec::new(operands, output, extents)?, inputs))
    }

    fn collect_leaves(&self, occ: usize, out: &mut Vec<(usize, usize, NodeId)>) {
        for (k, c) in self.occurrences[occ].children.iter().enumerate() {
            match c {
                Child::Leaf(x) => out.push((occ, k, *x)),
                Child::Tree(t) => self.collect_leaves(*t, out),
            }
        }
    }
}

/// Union-find over the axes of the einsum tree rooted at `root`.
pub fn build_uf(g: &Graph, root: NodeId) -> Result<DimUnionFind> {
    DimUnionFind::build(g, root)
}

/// Rewrites every maximal einsum tree into one einsum node and removes clone
/// nodes.
pub fn fuse_einsums(g: &mut Graph, roots: &[NodeId]) -> Result<(Vec<NodeId>, usize)> {
    rewrite(g, roots, |g, n, ins| match g.op(n).clone() {
        Op::Clone { .. } => Ok(Some(ins[0])),
        Op::Einsum { spec, .. } => {
            if !ins.iter().any(|&x| matches!(g.op(x), Op::Einsum { .. })) {
                return Ok(None);
            }
            let tmp = g.einsum(spec, &ins)?;
            if !matches!(g.op(tmp), Op::Einsum { .. }) {
                return Ok(Some(tmp));
            }
            let mut d = build_uf(g, tmp)?;
            let (fused, inputs) = d.fused()?;
            Ok(Some(g.einsum(fused, &inputs)?))
        }
        _ => Ok(None),
    })
}
