//! Memoized dense evaluation of graphs.

pub mod kernels;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::optimizer::path::{self, ContractionPlan, Search};
use crate::tensor::DenseTensor;

pub type FeedDict = HashMap<String, DenseTensor>;

#[derive(Clone, Debug, Default)]
pub struct ExecStats {
    /// Nodes evaluated, summed over runs.
    pub nodes_evaluated: usize,
    /// Flops of the executed contraction plans, summed over runs.
    pub flops: u64,
    /// How many times each node was evaluated.
    pub evaluations: HashMap<NodeId, usize>,
}

/// Evaluates nodes of one graph. [`Executor::run`] memoizes within a call;
/// [`Executor::run_incremental`] also keeps values across calls and only
/// recomputes nodes downstream of a feed that changed. Contraction plans are
/// always cached.
pub struct Executor<'g> {
    graph: &'g Graph,
    plans: HashMap<NodeId, ContractionPlan>,
    cache: HashMap<NodeId, Cached>,
    version: u64,
    stats: ExecStats,
}

/// A value kept across incremental runs, stamped with a version and the
/// versions of the inputs it was computed from.
struct Cached {
    value: Arc<DenseTensor>,
    version: u64,
    inputs: Vec<u64>,
}

impl<'g> Executor<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        Self {
            graph,
            plans: HashMap::new(),
            cache: HashMap::new(),
            version: 0,
            stats: ExecStats::default(),
        }
    }

    pub fn stats(&self) -> &ExecStats {
        &self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = ExecStats::default();
    }

    pub fn run(&mut self, feed: &FeedDict, out: &[NodeId]) -> Result<Vec<DenseTensor>> {
        let g = self.graph;
        let order = g.topo_order(out);
        let mut memo: HashMap<NodeId, Arc<DenseTensor>> = HashMap::with_capacity(order.len());
        for n in order {
            let value = self.eval(n, feed, &memo)?;
            self.stats.nodes_evaluated += 1;
            *self.stats.evaluations.entry(n).or_insert(0) += 1;
            memo.insert(n, value);
        }
        Ok(out.iter().map(|o| (*memo[o]).clone()).collect())
    }

    /// Like [`Executor::run`], reusing values from earlier incremental runs
    /// whose inputs are unchanged.
    pub fn run_incremental(&mut self, feed: &FeedDict, out: &[NodeId]) -> Result<Vec<DenseTensor>> {
        let g = self.graph;
        for n in g.topo_order(out) {
            let inputs = g.inputs(n);
            let seen: Vec<u64> = inputs.iter().map(|x| self.cache[x].version).collect();
            let fresh = match (g.op(n), self.cache.get(&n)) {
                (Op::Variable(name), Some(c)) => feed.get(name).is_some_and(|t| *c.value == *t),
                (_, Some(c)) => c.inputs == seen,
                (_, None) => false,
            };
            if fresh {
                continue;
            }
            let memo: HashMap<NodeId, Arc<DenseTensor>> = inputs
                .iter()
                .map(|x| (*x, self.cache[x].value.clone()))
                .collect();
            let value = self.eval(n, feed, &memo)?;
            self.stats.nodes_evaluated += 1;
            *self.stats.evaluations.entry(n).or_insert(0) += 1;
            self.version += 1;
            self.cache.insert(
                n,
                Cached {
                    value,
                    version: self.version,
                    inputs: seen,
                },
            );
        }
        Ok(out.iter().map(|o| (*self.cache[o].value).clone()).collect())
    }

    /// Drops the values kept by [`Executor::run_incremental`].
    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    fn eval(
        &mut self,
        n: NodeId,
        feed: &FeedDict,
        memo: &HashMap<NodeId, Arc<DenseTensor>>,
    ) -> Result<Arc<DenseTensor>> {
        let g = self.graph;
        let arg = |k: usize| -> &DenseTensor { &memo[&g.inputs(n)[k]] };
        let value = match g.op(n) {
            Op::Variable(name) => {
                let t = feed
                    .get(name)
                    .ok_or_else(|| Error::MissingFeed(name.clone()))?;
                if t.shape() != g.shape(n) {
                    return Err(Error::shape(format!(
                        "feed for `{name}` has shape {:?}, variable is {:?}",
                        t.shape(),
                        g.shape(n)
                    )));
                }
                t.clone()
            }
            Op::Constant(t) => (**t).clone(),
            Op::Identity(e) => kernels::identity_tensor(*e),
            Op::Clone { of, .. } => return Ok(memo[of].clone()),
            Op::Einsum { spec, inputs } => {
                let plan = self.plans.entry(n).or_insert_with(|| {
                    path::plan(spec, &path::identity_flags(g, inputs), Search::Auto)
                });
                self.stats.flops += plan.total_flops();
                let ins: Vec<&DenseTensor> = inputs.iter().map(|x| &*memo[x]).collect();
                kernels::einsum(spec, &ins, plan)?
            }
            Op::Add(inputs) => {
                let mut acc = (*memo[&inputs[0]]).clone();
                for x in &inputs[1..] {
                    acc.axpy(1.0, &memo[x]);
                }
                acc
            }
            Op::Sub(a, b) => memo[a].zip_with(&memo[b], |x, y| x - y)?,
            Op::Negate(_) => arg(0).map(|x| -x),
            Op::ScalarMul(c, _) => arg(0).scaled(*c),
            Op::Inverse(_) => kernels::tensor_inverse(arg(0))?,
            Op::Transpose(_, perm) => arg(0).permute(perm)?,
            Op::Reciprocal(_) => arg(0).map(|x| 1.0 / x),
        };
        Ok(Arc::new(value))
    }
}

/// One-shot evaluation.
pub fn run(g: &Graph, feed: &FeedDict, out: &[NodeId]) -> Result<Vec<DenseTensor>> {
    Executor::new(g).run(feed, out)
}
