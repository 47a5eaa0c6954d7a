//! Dimension-tree contraction order for a family of factor updates.
//!
//! Update `i` of a sweep contracts a large tensor with every factor except
//! factor `i`. Absorbing the factors from the back (`N-1, N-2, ..., i+1`)
//! and then from the front (`0, 1, ..., i-1`) makes consecutive updates
//! share their first intermediates, so the large tensor is touched by only
//! two contractions per sweep once common subexpressions are merged.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op};

use super::cse::cse;
use super::path::opt_contract_path_w_constraint;
use super::rewrite;

/// Absorption order of the sites for update `i`: back to front down to
/// `i + 1`, then front to back up to `i - 1`.
pub fn site_order(sites: &[NodeId], i: usize) -> Vec<NodeId> {
    let n = sites.len();
    let mut order: Vec<NodeId> = (i + 1..n).rev().map(|j| sites[j]).collect();
    order.extend((0..i).map(|j| sites[j]));
    order
}

/// Rewrites the einsums under `roots[i]` to absorb `sites` in
/// [`site_order`]`(sites, i)`, then merges common subexpressions.
pub fn generate_dimension_tree(
    g: &mut Graph,
    roots: &[NodeId],
    sites: &[NodeId],
) -> Result<Vec<NodeId>> {
    if roots.len() != sites.len() {
        return Err(Error::invalid(format!(
            "dimension tree needs one root per site, got {} roots and {} sites",
            roots.len(),
            sites.len()
        )));
    }
    let orders: Vec<Vec<NodeId>> = (0..sites.len()).map(|i| site_order(sites, i)).collect();
    dimension_tree_with_orders(g, roots, &orders)
}

/// Like [`generate_dimension_tree`] with an explicit absorption order per
/// root.
///
/// An einsum reachable from several roots follows the first of them. Its
/// inputs missing from the order, other than its largest input, join after
/// the ordered ones so they cannot split a shared prefix.
pub fn dimension_tree_with_orders(
    g: &mut Graph,
    roots: &[NodeId],
    orders: &[Vec<NodeId>],
) -> Result<Vec<NodeId>> {
    if roots.len() != orders.len() {
        return Err(Error::invalid("dimension tree needs one order per root"));
    }
    let mut owner: HashMap<NodeId, usize> = HashMap::new();
    for (i, &r) in roots.iter().enumerate() {
        for n in g.topo_order(&[r]) {
            owner.entry(n).or_insert(i);
        }
    }
    let (new_roots, _) = rewrite(g, roots, |g, n, ins| {
        let Op::Einsum { .. } = g.op(n) else {
            return Ok(None);
        };
        if ins.len() < 3 {
            return Ok(None);
        }
        let old = g.inputs(n);
        let mut order = Vec::new();
        for s in &orders[owner[&n]] {
            if let Some(p) = old.iter().position(|x| x == s) {
                if !order.contains(&ins[p]) {
                    order.push(ins[p]);
                }
            }
        }
        let largest = ins
            .iter()
            .copied()
            .max_by_key(|&x| (g.shape(x).iter().product::<usize>(), std::cmp::Reverse(x)));
        for &x in &ins {
            if Some(x) != largest && !order.contains(&x) {
                order.push(x);
            }
        }
        let node = g.with_inputs(n, &ins)?;
        if !matches!(g.op(node), Op::Einsum { .. }) {
            return Ok(Some(node));
        }
        Ok(Some(opt_contract_path_w_constraint(g, node, &order)?))
    })?;
    Ok(cse(g, &new_roots)?.0)
}
