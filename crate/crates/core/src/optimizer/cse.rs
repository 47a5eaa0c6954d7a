//! Common subexpression elimination for einsums that differ only in the
//! order of their output axes. Exact duplicates are already merged by
//! hash-consing; this pass replaces a permuted duplicate by a transpose of
//! the surviving node.

use std::collections::HashMap;

use crate::error::Result;
use crate::graph::{canonicalize, Graph, Label, NodeId, Op, OutputOrder};

use super::rewrite;

type Key = (Vec<Vec<Label>>, Vec<Label>, Vec<u64>);

fn key_of(g: &Graph, n: NodeId) -> Option<(Key, Vec<Label>)> {
    let Op::Einsum { spec, inputs } = g.op(n) else {
        return None;
    };
    let uids: Vec<u64> = inputs.iter().map(|&x| g.uid(x)).collect();
    let c = canonicalize(spec, &uids, OutputOrder::AsSet);
    let ordered: Vec<u64> = c.order.iter().map(|&k| uids[k]).collect();
    let (ops, out_set) = c.key;
    Some(((ops, out_set, ordered), c.spec.output))
}

fn cse_once(g: &mut Graph, roots: &[NodeId]) -> Result<(Vec<NodeId>, usize)> {
    let mut survivor: HashMap<Key, (NodeId, Vec<Label>)> = HashMap::new();
    let mut mine: HashMap<NodeId, (Key, Vec<Label>)> = HashMap::new();
    for n in g.topo_order(roots) {
        let Some((key, out)) = key_of(g, n) else {
            continue;
        };
        survivor
            .entry(key.clone())
            .and_modify(|s| {
                if n < s.0 {
                    *s = (n, out.clone());
                }
            })
            .or_insert((n, out.clone()));
        mine.insert(n, (key, out));
    }
    rewrite(g, roots, |g, n, _| {
        let Some((key, out_n)) = mine.get(&n) else {
            return Ok(None);
        };
        let (s, out_s) = &survivor[key];
        if *s == n {
            return Ok(None);
        }
        let perm: Vec<usize> = out_n
            .iter()
            .map(|l| out_s.iter().position(|x| x == l).expect("same output set"))
            .collect();
        // if the survivor is rewritten too, the next round merges again
        Ok(Some(g.transpose(*s, &perm)?))
    })
}

/// Repeats until no permuted duplicates remain.
pub fn cse(g: &mut Graph, roots: &[NodeId]) -> Result<(Vec<NodeId>, usize)> {
    let mut roots = roots.to_vec();
    let mut total = 0;
    for _ in 0..16 {
        let (r, n) = cse_once(g, &roots)?;
        roots = r;
        total += n;
        if n == 0 {
            break;
        }
    }
    Ok((roots, total))
}
