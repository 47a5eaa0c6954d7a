//! JSON graph format.
//!
//! ```json
//! {
//!   "nodes": [
//!     {"kind": "variable", "uid": "…", "shape": [2, 3], "name": "A"},
//!     {"kind": "einsum", "uid": "…", "shape": [2], "inputs": ["…"],
//!      "spec": {"operands": [[0, 1]], "output": [0], "extents": [[0, 2], [1, 3]]}}
//!   ],
//!   "sinks": [{"name": "out", "uid": "…"}]
//! }
//! ```
//!
//! Nodes appear inputs-first and each shared node is written once.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EinsumSpec, Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Variable {
        uid: String,
        shape: Vec<usize>,
        name: String,
    },
    Constant {
        uid: String,
        shape: Vec<usize>,
        data: Vec<f64>,
    },
    Identity {
        uid: String,
        shape: Vec<usize>,
        extent: usize,
    },
    Einsum {
        uid: String,
        shape: Vec<usize>,
        inputs: Vec<String>,
        spec: EinsumSpec,
    },
    Add {
        uid: String,
        shape: Vec<usize>,
        inputs: Vec<String>,
    },
    Sub {
        uid: String,
        shape: Vec<usize>,
        inputs: Vec<String>,
    },
    Negate {
        uid: String,
        shape: Vec<usize>,
        inputs: Vec<String>,
    },
    ScalarMul {
        uid: String,
        shape: Vec<usize>,
        factor: f64,
        inputs: Vec<String>,
    },
    Inverse {
        uid: String,
        shape: Vec<usize>,
        inputs: Vec<String>,
    },
    Transpose {
        uid: String,
        shape: Vec<usize>,
        perm: Vec<usize>,
        inputs: Vec<String>,
    },
    Reciprocal {
        uid: String,
        shape: Vec<usize>,
        inputs: Vec<String>,
    },
    Clone {
        uid: String,
        shape: Vec<usize>,
        clone_of: String,
        tag: u32,
    },
}

#[derive(Serialize, Deserialize)]
struct SinkRecord {
    name: String,
    uid: String,
}

#[derive(Serialize, Deserialize)]
struct Document {
    nodes: Vec<Record>,
    sinks: Vec<SinkRecord>,
}

fn hex(uid: u64) -> String {
    format!("{uid:016x}")
}

pub fn to_json(g: &Graph) -> String {
    let order = g.topo_order(&g.sink_nodes());
    let ids = |xs: Vec<NodeId>| xs.into_iter().map(|x| hex(g.uid(x))).collect::<Vec<_>>();
    let nodes = order
        .iter()
        .map(|&n| {
            let uid = hex(g.uid(n));
            let shape = g.shape(n).to_vec();
            let inputs = ids(g.inputs(n));
            match g.op(n) {
                Op::Variable(name) => Record::Variable {
                    uid,
                    shape,
                    name: name.clone(),
                },
                Op::Constant(t) => Record::Constant {
                    uid,
                    shape,
                    data: t.data().to_vec(),
                },
                Op::Identity(e) => Record::Identity {
                    uid,
                    shape,
                    extent: *e,
                },
                Op::Einsum { spec, .. } => Record::Einsum {
                    uid,
                    shape,
                    inputs,
                    spec: spec.clone(),
                },
                Op::Add(_) => Record::Add { uid, shape, inputs },
                Op::Sub(..) => Record::Sub { uid, shape, inputs },
                Op::Negate(_) => Record::Negate { uid, shape, inputs },
                Op::ScalarMul(c, _) => Record::ScalarMul {
                    uid,
                    shape,
                    factor: *c,
                    inputs,
                },
                Op::Inverse(_) => Record::Inverse { uid, shape, inputs },
                Op::Transpose(_, perm) => Record::Transpose {
                    uid,
                    shape,
                    perm: perm.clone(),
                    inputs,
                },
                Op::Reciprocal(_) => Record::Reciprocal { uid, shape, inputs },
                Op::Clone { of, tag } => Record::Clone {
                    uid,
                    shape,
                    clone_of: hex(g.uid(*of)),
                    tag: *tag,
                },
            }
        })
        .collect();
    let sinks = g
        .sinks()
        .iter()
        .map(|s| SinkRecord {
            name: s.name.clone(),
            uid: hex(g.uid(s.node)),
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&Document { nodes, sinks })
        .expect("graph documents always serialize");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> Result<Graph> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut g = Graph::new();
    let mut map: HashMap<String, NodeId> = HashMap::new();
    for (pos, rec) in doc.nodes.into_iter().enumerate() {
        let lookup = |map: &HashMap<String, NodeId>, xs: &[String]| -> Result<Vec<NodeId>> {
            xs.iter()
                .map(|x| {
                    map.get(x).copied().ok_or_else(|| {
                        Error::invalid(format!("node {pos} refers to unknown or later uid {x}"))
                    })
                })
                .collect()
        };
        let arity = |xs: &[NodeId], n: usize| -> Result<()> {
            if xs.len() != n {
                return Err(Error::invalid(format!(
                    "node {pos} expects {n} inputs, found {}",
                    xs.len()
                )));
            }
            Ok(())
        };
        let (uid, shape, id) = match rec {
            Record::Variable { uid, shape, name } => {
                let id = g.variable(&name, &shape)?;
                (uid, shape, id)
            }
            Record::Constant { uid, shape, data } => {
                let id = g.constant(DenseTensor::new(shape.clone(), data)?);
                (uid, shape, id)
            }
            Record::Identity { uid, shape, extent } => (uid, shape, g.identity(extent)?),
            Record::Einsum {
                uid,
                shape,
                inputs,
                spec,
            } => {
                let ins = lookup(&map, &inputs)?;
                let spec = EinsumSpec::new(spec.operands, spec.output, spec.extents)?;
                (uid, shape, g.einsum(spec, &ins)?)
            }
            Record::Add { uid, shape, inputs } => {
                let ins = lookup(&map, &inputs)?;
                (uid, shape, g.add(&ins)?)
            }
            Record::Sub { uid, shape, inputs } => {
                let ins = lookup(&map, &inputs)?;
                arity(&ins, 2)?;
                (uid, shape, g.sub(ins[0], ins[1])?)
            }
            Record::Negate { uid, shape, inputs } => {
                let ins = lookup(&map, &inputs)?;
                arity(&ins, 1)?;
                (uid, shape, g.negate(ins[0]))
            }
            Record::ScalarMul {
                uid,
                shape,
                factor,
                inputs,
            } => {
                let ins = lookup(&map, &inputs)?;
                arity(&ins, 1)?;
                (uid, shape, g.scale(factor, ins[0]))
            }
            Record::Inverse { uid, shape, inputs } => {
                let ins = lookup(&map, &inputs)?;
                arity(&ins, 1)?;
                (uid, shape, g.inverse(ins[0])?)
            }
            Record::Transpose {
                uid,
                shape,
                perm,
                inputs,
            } => {
                let ins = lookup(&map, &inputs)?;
                arity(&ins, 1)?;
                (uid, shape, g.transpose(ins[0], &perm)?)
            }
            Record::Reciprocal { uid, shape, inputs } => {
                let ins = lookup(&map, &inputs)?;
                arity(&ins, 1)?;
                (uid, shape, g.reciprocal(ins[0])?)
            }
            Record::Clone {
                uid,
                shape,
                clone_of,
                tag,
            } => {
                let of = lookup(&map, std::slice::from_ref(&clone_of))?[0];
                (uid, shape, g.clone_with_tag(of, tag))
            }
        };
        if g.shape(id) != shape.as_slice() {
            return Err(Error::shape(format!(
                "node {pos} declares shape {shape:?} but its inputs give {:?}",
                g.shape(id)
            )));
        }
        map.insert(uid, id);
    }
    for s in doc.sinks {
        let id = *map.get(&s.uid).ok_or_else(|| {
            Error::invalid(format!("sink `{}` refers to unknown uid {}", s.name, s.uid))
        })?;
        g.set_sink(&s.name, id);
    }
    Ok(g)
}
