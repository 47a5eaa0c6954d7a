use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Graph, NodeId};

/// DOT rendering of everything reachable from the sinks.
pub fn to_dot(g: &Graph) -> String {
    let sinks = g.sink_nodes();
    to_dot_roots(g, &sinks)
}

/// DOT rendering of everything reachable from `roots`. Nodes are numbered in
/// topological order so the text is stable for a given graph.
pub fn to_dot_roots(g: &Graph, roots: &[NodeId]) -> String {
    let order = g.topo_order(roots);
    let pos: HashMap<NodeId, usize> = order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut out = String::from("digraph G {\n");
    for (i, &n) in order.iter().enumerate() {
        let label = format!("{}\\n{:?}", escape(&g.describe(n)), g.shape(n));
        let extra = if roots.contains(&n) {
            ", peripheries=2"
        } else {
            ""
        };
        let _ = writeln!(out, "  n{i} [label=\"{label}\"{extra}];");
    }
    for (i, &n) in order.iter().enumerate() {
        for (k, c) in g.inputs(n).into_iter().enumerate() {
            let _ = writeln!(out, "  n{} -> n{i} [label=\"{k}\"];", pos[&c]);
        }
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
