//! Hash-consed, append-only computational graph over dense tensors.
//!
//! Nodes are immutable and live in an arena owned by [`Graph`]. Every node
//! carries a content hash (`uid`) computed from its kind, its canonicalized
//! payload and the uids of its inputs; constructing a structurally identical
//! node returns the existing one.

pub mod dot;
pub mod serialize;
pub mod spec;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{check_perm, DenseTensor};
pub use spec::{canonicalize, Canonical, EinsumSpec, Label, OutputOrder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Variable(String),
    Constant(Arc<DenseTensor>),
    /// Order-2 Kronecker delta of the given extent.
    Identity(usize),
    /// Inputs are stored in canonical order, matching `spec.operands`.
    Einsum {
        spec: EinsumSpec,
        inputs: Vec<NodeId>,
    },
    /// Inputs sorted by uid.
    Add(Vec<NodeId>),
    Sub(NodeId, NodeId),
    Negate(NodeId),
    ScalarMul(f64, NodeId),
    /// Inverse of the matricization splitting the axes in half. The result
    /// has the column extents followed by the row extents.
    Inverse(NodeId),
    /// `out.shape[k] = in.shape[perm[k]]`.
    Transpose(NodeId, Vec<usize>),
    /// Elementwise `1/x` of an order-0 tensor.
    Reciprocal(NodeId),
    /// Copy of a node used while linearizing einsum trees.
    Clone {
        of: NodeId,
        tag: u32,
    },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Variable(_) => "variable",
            Op::Constant(_) => "constant",
            Op::Identity(_) => "identity",
            Op::Einsum { .. } => "einsum",
            Op::Add(_) => "add",
            Op::Sub(..) => "sub",
            Op::Negate(_) => "negate",
            Op::ScalarMul(..) => "scalar_mul",
            Op::Inverse(_) => "inverse",
            Op::Transpose(..) => "transpose",
            Op::Reciprocal(_) => "reciprocal",
            Op::Clone { .. } => "clone",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Variable(_) | Op::Constant(_) | Op::Identity(_) => vec![],
            Op::Einsum { inputs, .. } | Op::Add(inputs) => inputs.clone(),
            Op::Sub(a, b) => vec![*a, *b],
            Op::Negate(a)
            | Op::ScalarMul(_, a)
            | Op::Inverse(a)
            | Op::Transpose(a, _)
            | Op::Reciprocal(a)
            | Op::Clone { of: a, .. } => vec![*a],
        }
    }

    /// True for kinds that are linear in every input jointly (used by
    /// algebraic normalization).
    pub fn is_linear_combination(&self) -> bool {
        matches!(
            self,
            Op::Add(_) | Op::Sub(..) | Op::Negate(_) | Op::ScalarMul(..)
        )
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub uid: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sink {
    pub name: String,
    pub node: NodeId,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    by_uid: HashMap<u64, NodeId>,
    variables: BTreeMap<String, NodeId>,
    sinks: Vec<Sink>,
    next_tag: u32,
}

/// FNV-1a over explicit byte writes, followed by a SplitMix64 finalizer.
/// Stable across platforms and toolchains, unlike `DefaultHasher`.
struct StableHasher(u64);

impl StableHasher {
    fn new(kind: &str) -> Self {
        let mut h = Self(0xcbf2_9ce4_8422_2325);
        h.bytes(kind.as_bytes());
        h
    }

    fn bytes(&mut self, b: &[u8]) {
        for &x in b {
            self.0 ^= x as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn u64(&mut self, x: u64) {
        self.bytes(&x.to_le_bytes());
    }

    fn list(&mut self, xs: impl IntoIterator<Item = u64>) {
        let mut n = 0u64;
        for x in xs {
            self.u64(x);
            n += 1;
        }
        self.u64(n);
    }

    fn finish(self) -> u64 {
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.index()].op
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.index()].shape
    }

    pub fn uid(&self, id: NodeId) -> u64 {
        self.nodes[id.index()].uid
    }

    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.op(id).inputs()
    }

    pub fn by_uid(&self, uid: u64) -> Option<NodeId> {
        self.by_uid.get(&uid).copied()
    }

    pub fn variable_named(&self, name: &str) -> Option<NodeId> {
        self.variables.get(name).copied()
    }

    pub fn variables(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.variables.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn sinks(&self) -> &[Sink] {
        &self.sinks
    }

    pub fn sink_nodes(&self) -> Vec<NodeId> {
        self.sinks.iter().map(|s| s.node).collect()
    }

    pub fn sink(&self, name: &str) -> Option<NodeId> {
        self.sinks.iter().find(|s| s.name == name).map(|s| s.node)
    }

    /// Adds or replaces the sink called `name`.
    pub fn set_sink(&mut self, name: &str, node: NodeId) {
        if let Some(s) = self.sinks.iter_mut().find(|s| s.name == name) {
            s.node = node;
        } else {
            self.sinks.push(Sink {
                name: name.to_string(),
                node,
            });
        }
    }

    pub fn clear_sinks(&mut self) {
        self.sinks.clear();
    }

    fn intern(&mut self, op: Op, shape: Vec<usize>, mut uid: u64) -> NodeId {
        loop {
            match self.by_uid.get(&uid) {
                Some(&id) if self.nodes[id.index()].op == op => return id,
                Some(_) => {
                    // 64-bit collision between different nodes: probe onward
                    let mut h = StableHasher::new("rehash");
                    h.u64(uid);
                    uid = h.finish();
                }
                None => break,
            }
        }
        let id = NodeId(self.nodes.len() as u32);
        if let Op::Variable(name) = &op {
            self.variables.insert(name.clone(), id);
        }
        self.nodes.push(Node { op, shape, uid });
        self.by_uid.insert(uid, id);
        id
    }

    pub fn variable(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(format!("variable `{name}` has a zero extent")));
        }
        if let Some(&id) = self.variables.get(name) {
            if self.shape(id) != shape {
                return Err(Error::shape(format!(
                    "variable `{name}` redeclared with shape {shape:?}, was {:?}",
                    self.shape(id)
                )));
            }
            return Ok(id);
        }
        let mut h = StableHasher::new("variable");
        h.bytes(name.as_bytes());
        h.list(shape.iter().map(|&e| e as u64));
        let uid = h.finish();
        Ok(self.intern(Op::Variable(name.to_string()), shape.to_vec(), uid))
    }

    pub fn constant(&mut self, t: DenseTensor) -> NodeId {
        let mut h = StableHasher::new("constant");
        h.list(t.shape().iter().map(|&e| e as u64));
        h.list(t.data().iter().map(|x| x.to_bits()));
        let uid = h.finish();
        let shape = t.shape().to_vec();
        self.intern(Op::Constant(Arc::new(t)), shape, uid)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(DenseTensor::scalar(v))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.constant(DenseTensor::zeros(shape))
    }

    /// True if `id` is a constant whose entries are all zero.
    pub fn is_zero(&self, id: NodeId) -> bool {
        matches!(self.op(id), Op::Constant(t) if t.data().iter().all(|&x| x == 0.0))
    }

    pub fn identity(&mut self, extent: usize) -> Result<NodeId> {
        if extent == 0 {
            return Err(Error::shape("identity extent must be positive"));
        }
        let mut h = StableHasher::new("identity");
        h.u64(extent as u64);
        let uid = h.finish();
        Ok(self.intern(Op::Identity(extent), vec![extent, extent], uid))
    }

    pub fn einsum(&mut self, spec: EinsumSpec, inputs: &[NodeId]) -> Result<NodeId> {
        if spec.arity() != inputs.len() {
            return Err(Error::einsum(format!(
                "spec has {} operands but {} inputs were given",
                spec.arity(),
                inputs.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::einsum("einsum needs at least one input"));
        }
        for (k, &x) in inputs.iter().enumerate() {
            let want = spec.operand_shape(k);
            if self.shape(x) != want.as_slice() {
                return Err(Error::shape(format!(
                    "einsum `{spec}` operand {k} expects shape {want:?}, input has {:?}",
                    self.shape(x)
                )));
            }
        }
        if spec.is_identity() {
            return Ok(inputs[0]);
        }
        let keys: Vec<u64> = inputs.iter().map(|&x| self.uid(x)).collect();
        let canon = canonicalize(&spec, &keys, OutputOrder::Exact);
        let inputs: Vec<NodeId> = canon.order.iter().map(|&k| inputs[k]).collect();
        let shape = canon.spec.output_shape();
        let mut h = StableHasher::new("einsum");
        for ops in &canon.spec.operands {
            h.list(ops.iter().map(|&l| l as u64));
        }
        h.list(canon.spec.output.iter().map(|&l| l as u64));
        h.list(canon.spec.extents.values().map(|&e| e as u64));
        h.list(inputs.iter().map(|&x| self.uid(x)));
        let uid = h.finish();
        Ok(self.intern(
            Op::Einsum {
                spec: canon.spec,
                inputs,
            },
            shape,
            uid,
        ))
    }

    /// Einsum from a letter subscript string such as `"ij,jk->ik"`.
    pub fn einsum_str(&mut self, subscripts: &str, inputs: &[NodeId]) -> Result<NodeId> {
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|&x| self.shape(x).to_vec()).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        let spec = EinsumSpec::parse(subscripts, &refs)?;
        self.einsum(spec, inputs)
    }

    /// Einsum from per-operand labels; extents are read from the inputs.
    pub fn einsum_labels(
        &mut self,
        operands: Vec<Vec<Label>>,
        output: Vec<Label>,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|&x| self.shape(x).to_vec()).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        let spec = EinsumSpec::from_shapes(operands, output, &refs)?;
        self.einsum(spec, inputs)
    }

    /// Contracts `axes_a` of `a` against `axes_b` of `b`; free axes of `a`
    /// come first in the result.
    pub fn tensordot(
        &mut self,
        a: NodeId,
        b: NodeId,
        axes_a: &[usize],
        axes_b: &[usize],
    ) -> Result<NodeId> {
        if axes_a.len() != axes_b.len() {
            return Err(Error::shape("tensordot axis lists differ in length"));
        }
        let na = self.shape(a).len();
        let nb = self.shape(b).len();
        let la: Vec<Label> = (0..na as Label).collect();
        let mut lb: Vec<Label> = (na as Label..(na + nb) as Label).collect();
        for (&x, &y) in axes_a.iter().zip(axes_b) {
            if x >= na || y >= nb {
                return Err(Error::shape("tensordot axis out of range"));
            }
            lb[y] = la[x];
        }
        let mut out: Vec<Label> = (0..na)
            .filter(|i| !axes_a.contains(i))
            .map(|i| la[i])
            .collect();
        out.extend((0..nb).filter(|j| !axes_b.contains(j)).map(|j| lb[j]));
        self.einsum_labels(vec![la, lb], out, &[a, b])
    }

    /// Full contraction `Σ a ⊙ b` of two same-shaped nodes.
    pub fn inner(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "inner product of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let l: Vec<Label> = (0..self.shape(a).len() as Label).collect();
        self.einsum_labels(vec![l.clone(), l], vec![], &[a, b])
    }

    pub fn add(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::invalid("add needs at least one input"))?;
        for &x in inputs {
            if self.shape(x) != self.shape(first) {
                return Err(Error::shape(format!(
                    "add of shapes {:?} and {:?}",
                    self.shape(first),
                    self.shape(x)
                )));
            }
        }
        if inputs.len() == 1 {
            return Ok(first);
        }
        let mut sorted = inputs.to_vec();
        sorted.sort_by_key(|&x| (self.uid(x), x));
        let mut h = StableHasher::new("add");
        h.list(sorted.iter().map(|&x| self.uid(x)));
        let uid = h.finish();
        let shape = self.shape(first).to_vec();
        Ok(self.intern(Op::Add(sorted), shape, uid))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "sub of shapes {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut h = StableHasher::new("sub");
        h.u64(self.uid(a));
        h.u64(self.uid(b));
        let uid = h.finish();
        let shape = self.shape(a).to_vec();
        Ok(self.intern(Op::Sub(a, b), shape, uid))
    }

    pub fn negate(&mut self, a: NodeId) -> NodeId {
        let mut h = StableHasher::new("negate");
        h.u64(self.uid(a));
        let uid = h.finish();
        let shape = self.shape(a).to_vec();
        self.intern(Op::Negate(a), shape, uid)
    }

    /// Multiplies by a literal; `1.0` returns `a` itself.
    pub fn scale(&mut self, c: f64, a: NodeId) -> NodeId {
        if c == 1.0 {
            return a;
        }
        let mut h = StableHasher::new("scalar_mul");
        h.u64(c.to_bits());
        h.u64(self.uid(a));
        let uid = h.finish();
        let shape = self.shape(a).to_vec();
        self.intern(Op::ScalarMul(c, a), shape, uid)
    }

    /// Multiplies `a` by an order-0 node, expressed as an einsum.
    pub fn scale_by(&mut self, s: NodeId, a: NodeId) -> Result<NodeId> {
        if !self.shape(s).is_empty() {
            return Err(Error::shape("scale_by expects an order-0 factor"));
        }
        let l: Vec<Label> = (0..self.shape(a).len() as Label).collect();
        self.einsum_labels(vec![vec![], l.clone()], l, &[s, a])
    }

    pub fn inverse(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if shape.len() % 2 != 0 {
            return Err(Error::shape(format!(
                "tensor inverse needs even order, got shape {shape:?}"
            )));
        }
        let n = shape.len() / 2;
        let rows: usize = shape[..n].iter().product();
        let cols: usize = shape[n..].iter().product();
        if rows != cols {
            return Err(Error::shape(format!(
                "tensor inverse needs a square matricization, got {rows}x{cols}"
            )));
        }
        let mut out = shape[n..].to_vec();
        out.extend_from_slice(&shape[..n]);
        let mut h = StableHasher::new("inverse");
        h.u64(self.uid(a));
        let uid = h.finish();
        Ok(self.intern(Op::Inverse(a), out, uid))
    }

    pub fn transpose(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        check_perm(perm, shape.len())?;
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(a);
        }
        let out = perm.iter().map(|&p| shape[p]).collect();
        let mut h = StableHasher::new("transpose");
        h.u64(self.uid(a));
        h.list(perm.iter().map(|&p| p as u64));
        let uid = h.finish();
        Ok(self.intern(Op::Transpose(a, perm.to_vec()), out, uid))
    }

    pub fn reciprocal(&mut self, a: NodeId) -> Result<NodeId> {
        if !self.shape(a).is_empty() {
            return Err(Error::shape("reciprocal expects an order-0 input"));
        }
        let mut h = StableHasher::new("reciprocal");
        h.u64(self.uid(a));
        let uid = h.finish();
        Ok(self.intern(Op::Reciprocal(a), vec![], uid))
    }

    /// A fresh copy of `of` with a new identity.
    pub fn clone_node(&mut self, of: NodeId) -> NodeId {
        self.next_tag += 1;
        self.clone_with_tag(of, self.next_tag)
    }

    pub(crate) fn clone_with_tag(&mut self, of: NodeId, tag: u32) -> NodeId {
        self.next_tag = self.next_tag.max(tag);
        let mut h = StableHasher::new("clone");
        h.u64(self.uid(of));
        h.u64(tag as u64);
        let uid = h.finish();
        let shape = self.shape(of).to_vec();
        self.intern(Op::Clone { of, tag }, shape, uid)
    }

    /// Rebuilds `id` with the same kind and payload but new inputs (given in
    /// the order of [`Op::inputs`]).
    pub fn with_inputs(&mut self, id: NodeId, inputs: &[NodeId]) -> Result<NodeId> {
        let op = self.op(id).clone();
        if op.inputs() == inputs {
            return Ok(id);
        }
        match op {
            Op::Variable(_) | Op::Constant(_) | Op::Identity(_) => Ok(id),
            Op::Einsum { spec, .. } => self.einsum(spec, inputs),
            Op::Add(_) => self.add(inputs),
            Op::Sub(..) => self.sub(inputs[0], inputs[1]),
            Op::Negate(_) => Ok(self.negate(inputs[0])),
            Op::ScalarMul(c, _) => Ok(self.scale(c, inputs[0])),
            Op::Inverse(_) => self.inverse(inputs[0]),
            Op::Transpose(_, perm) => self.transpose(inputs[0], &perm),
            Op::Reciprocal(_) => self.reciprocal(inputs[0]),
            Op::Clone { tag, .. } => Ok(self.clone_with_tag(inputs[0], tag)),
        }
    }

    /// Post-order of every node reachable from `roots` (inputs before
    /// consumers), deterministic in the order of `roots` and inputs.
    pub fn topo_order(&self, roots: &[NodeId]) -> Vec<NodeId> {
        let mut seen = HashSet::new();
        let mut order = Vec::new();
        for &r in roots {
            if !seen.insert(r) {
                continue;
            }
            let mut stack: Vec<(NodeId, usize)> = vec![(r, 0)];
            while let Some((n, i)) = stack.pop() {
                let ins = self.inputs(n);
                if i < ins.len() {
                    stack.push((n, i + 1));
                    let c = ins[i];
                    if seen.insert(c) {
                        stack.push((c, 0));
                    }
                } else {
                    order.push(n);
                }
            }
        }
        order
    }

    pub fn reachable(&self, roots: &[NodeId]) -> HashSet<NodeId> {
        self.topo_order(roots).into_iter().collect()
    }

    /// Number of consumers of each reachable node within the reachable set.
    pub fn consumer_counts(&self, roots: &[NodeId]) -> HashMap<NodeId, usize> {
        let mut counts: HashMap<NodeId, usize> = HashMap::new();
        for n in self.topo_order(roots) {
            counts.entry(n).or_insert(0);
            for c in self.inputs(n) {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        for &r in roots {
            *counts.entry(r).or_insert(0) += 1;
        }
        counts
    }

    /// Copies the nodes reachable from the sinks into a fresh graph.
    pub fn compact(&self) -> Graph {
        let roots = self.sink_nodes();
        let mut g = Graph::new();
        let map = self
            .copy_into(&mut g, &roots)
            .expect("copy of a valid graph");
        for s in &self.sinks {
            g.set_sink(&s.name, map[&s.node]);
        }
        g
    }

    /// Rebuilds the nodes reachable from `roots` inside `dst`, returning the
    /// id mapping.
    pub fn copy_into(&self, dst: &mut Graph, roots: &[NodeId]) -> Result<HashMap<NodeId, NodeId>> {
        let mut map: HashMap<NodeId, NodeId> = HashMap::new();
        for n in self.topo_order(roots) {
            let ins: Vec<NodeId> = self.inputs(n).iter().map(|x| map[x]).collect();
            let new = match self.op(n).clone() {
                Op::Variable(name) => dst.variable(&name, self.shape(n))?,
                Op::Constant(t) => dst.constant((*t).clone()),
                Op::Identity(e) => dst.identity(e)?,
                Op::Einsum { spec, .. } => dst.einsum(spec, &ins)?,
                Op::Add(_) => dst.add(&ins)?,
                Op::Sub(..) => dst.sub(ins[0], ins[1])?,
                Op::Negate(_) => dst.negate(ins[0]),
                Op::ScalarMul(c, _) => dst.scale(c, ins[0]),
                Op::Inverse(_) => dst.inverse(ins[0])?,
                Op::Transpose(_, p) => dst.transpose(ins[0], &p)?,
                Op::Reciprocal(_) => dst.reciprocal(ins[0])?,
                Op::Clone { tag, .. } => dst.clone_with_tag(ins[0], tag),
            };
            map.insert(n, new);
        }
        Ok(map)
    }

    /// Short human-readable description used in DOT labels and errors.
    pub fn describe(&self, id: NodeId) -> String {
        match self.op(id) {
            Op::Variable(name) => format!("Variable {name}"),
            Op::Constant(t) if t.order() == 0 => format!("Constant {}", t.as_scalar()),
            Op::Constant(_) => "Constant".to_string(),
            Op::Identity(e) => format!("Identity {e}"),
            Op::Einsum { spec, .. } => format!("Einsum {spec}"),
            Op::Add(_) => "Add".to_string(),
            Op::Sub(..) => "Sub".to_string(),
            Op::Negate(_) => "Negate".to_string(),
            Op::ScalarMul(c, _) => format!("ScalarMul {c}"),
            Op::Inverse(_) => "TensorInverse".to_string(),
            Op::Transpose(_, p) => format!("Transpose {p:?}"),
            Op::Reciprocal(_) => "Reciprocal".to_string(),
            Op::Clone { tag, .. } => format!("Clone {tag}"),
        }
    }

    /// Printable name of a node for error messages.
    pub fn display_name(&self, id: NodeId) -> String {
        match self.op(id) {
            Op::Variable(name) => name.clone(),
            _ => format!("{} ({})", self.describe(id), id),
        }
    }
}
