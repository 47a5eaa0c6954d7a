//! CP decomposition: loss graph, alternating least squares with dimension
//! trees, and the MTTKRP graphs behind it.

use serde::Serialize;

use crate::autodiff::{gradients, hessian};
use crate::error::{Error, Result};
use crate::executor::{Executor, FeedDict};
use crate::graph::{Graph, Label, NodeId};
use crate::optimizer::{
    contractions_touching, estimate_flops, flops_touching, optimize_roots, Options, PassReport,
    PathStrategy,
};
use crate::rng::UniformStream;
use crate::tensor::DenseTensor;

pub fn factor_name(n: usize) -> String {
    format!("A{n}")
}

/// Nodes of the CP loss `½‖X − [[A0, …, A(N-1)]]‖²`.
#[derive(Clone, Debug)]
pub struct CpdGraph {
    pub extents: Vec<usize>,
    pub rank: usize,
    pub input: NodeId,
    pub factors: Vec<NodeId>,
    pub reconstruction: NodeId,
    pub residual: NodeId,
    pub loss: NodeId,
}

/// Builds the CP loss over variables `X` (shape `extents`) and `A0…`
/// (shape `extents[n] × rank`).
pub fn cpd_graph(g: &mut Graph, extents: &[usize], rank: usize) -> Result<CpdGraph> {
    if extents.is_empty() || rank == 0 || extents.contains(&0) {
        return Err(Error::invalid("CP problem needs positive extents and rank"));
    }
    let n = extents.len();
    let input = g.variable("X", extents)?;
    let factors = (0..n)
        .map(|k| g.variable(&factor_name(k), &[extents[k], rank]))
        .collect::<Result<Vec<_>>>()?;
    let r = n as Label;
    let ops: Vec<Vec<Label>> = (0..n as Label).map(|k| vec![k, r]).collect();
    let reconstruction = g.einsum_labels(ops, (0..r).collect(), &factors)?;
    let residual = g.sub(input, reconstruction)?;
    let sq = g.inner(residual, residual)?;
    let loss = g.scale(0.5, sq);
    Ok(CpdGraph {
        extents: extents.to_vec(),
        rank,
        input,
        factors,
        reconstruction,
        residual,
        loss,
    })
}

/// Newton update `A_n − H⁻¹·∇` of every factor, unoptimized. Minimizing
/// the loss over one factor is a linear least-squares problem, so this is
/// the exact alternating-least-squares step.
pub fn als_update_graphs(g: &mut Graph, cpd: &CpdGraph) -> Result<Vec<NodeId>> {
    let mut out = Vec::new();
    for &a in &cpd.factors {
        let grad = gradients(g, cpd.loss, &[a])?[0];
        let hes = hessian(g, cpd.loss, &[a])?[0][0];
        let inv = g.inverse(hes)?;
        let step = g.tensordot(inv, grad, &[2, 3], &[0, 1])?;
        out.push(g.sub(a, step)?);
    }
    Ok(out)
}

/// MTTKRP of every mode, as the gradient of `<X, [[A]]>` with respect to
/// each factor.
pub fn mttkrp_graphs(g: &mut Graph, cpd: &CpdGraph) -> Result<Vec<NodeId>> {
    let fit = g.inner(cpd.input, cpd.reconstruction)?;
    gradients(g, fit, &cpd.factors)
}

/// Optimizes per-factor update roots together, with the dimension-tree
/// path strategy over the factors.
pub fn optimize_sweep(
    g: &mut Graph,
    roots: &[NodeId],
    sites: &[NodeId],
) -> Result<(Vec<NodeId>, PassReport)> {
    let opts = Options {
        path: PathStrategy::DimensionTree {
            sites: sites.to_vec(),
        },
        ..Options::default()
    };
    optimize_roots(g, roots, &opts)
}

/// Data of a CP problem: the input tensor and the current factors.
#[derive(Clone, Debug)]
pub struct CpdProblem {
    pub extents: Vec<usize>,
    pub rank: usize,
    pub input: DenseTensor,
    pub factors: Vec<DenseTensor>,
}

/// Dense CP reconstruction by direct summation.
pub fn reconstruct(extents: &[usize], rank: usize, factors: &[DenseTensor]) -> DenseTensor {
    DenseTensor::from_fn(extents, |idx| {
        (0..rank)
            .map(|r| {
                idx.iter()
                    .enumerate()
                    .map(|(k, &i)| factors[k].get(&[i, r]))
                    .product::<f64>()
            })
            .sum()
    })
}

impl CpdProblem {
    /// Uniform(−1, 1) input and factors.
    pub fn random(extents: &[usize], rank: usize, seed: u64) -> Self {
        let root = UniformStream::new(seed);
        let input = DenseTensor::random(extents, &mut root.substream("X"));
        let factors = (0..extents.len())
            .map(|k| DenseTensor::random(&[extents[k], rank], &mut root.substream(&factor_name(k))))
            .collect();
        CpdProblem {
            extents: extents.to_vec(),
            rank,
            input,
            factors,
        }
    }

    /// Input of exact rank `rank`; the starting factors are the true ones
    /// plus `perturbation` times uniform(−1, 1) noise.
    pub fn exact(extents: &[usize], rank: usize, seed: u64, perturbation: f64) -> Self {
        let root = UniformStream::new(seed);
        let truth: Vec<DenseTensor> = (0..extents.len())
            .map(|k| {
                DenseTensor::random(
                    &[extents[k], rank],
                    &mut root.substream(&format!("true{k}")),
                )
            })
            .collect();
        let input = reconstruct(extents, rank, &truth);
        let factors = truth
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let noise =
                    DenseTensor::random(t.shape(), &mut root.substream(&format!("noise{k}")));
                let mut f = t.clone();
                f.axpy(perturbation, &noise);
                f
            })
            .collect();
        CpdProblem {
            extents: extents.to_vec(),
            rank,
            input,
            factors,
        }
    }

    pub fn feed(&self) -> FeedDict {
        let mut f = FeedDict::new();
        f.insert("X".to_string(), self.input.clone());
        for (k, a) in self.factors.iter().enumerate() {
            f.insert(factor_name(k), a.clone());
        }
        f
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SweepStats {
    /// Loss after each factor update.
    pub losses: Vec<f64>,
    /// Flops executed by the update graphs during the sweep.
    pub flops: u64,
}

/// Optimized ALS sweep graphs for one problem shape.
pub struct AlsSolver {
    pub graph: Graph,
    pub cpd: CpdGraph,
    pub updates: Vec<NodeId>,
    pub report: PassReport,
}

impl AlsSolver {
    pub fn new(extents: &[usize], rank: usize) -> Result<Self> {
        let mut graph = Graph::new();
        let cpd = cpd_graph(&mut graph, extents, rank)?;
        let raw = als_update_graphs(&mut graph, &cpd)?;
        let (updates, report) = optimize_sweep(&mut graph, &raw, &cpd.factors)?;
        Ok(AlsSolver {
            graph,
            cpd,
            updates,
            report,
        })
    }

    /// Number of contractions in the sweep graphs that read the input
    /// tensor.
    pub fn input_contractions(&self) -> usize {
        contractions_touching(&self.graph, &self.updates, self.cpd.input)
    }

    /// Cost-model flops of one sweep.
    pub fn sweep_flop_estimate(&self) -> u64 {
        estimate_flops(&self.graph, &self.updates)
    }

    /// Part of [`AlsSolver::sweep_flop_estimate`] spent reading the input.
    pub fn input_flop_estimate(&self) -> u64 {
        flops_touching(&self.graph, &self.updates, self.cpd.input)
    }

    pub fn executor(&self) -> Executor<'_> {
        Executor::new(&self.graph)
    }

    pub fn loss(&self, problem: &CpdProblem) -> Result<f64> {
        let mut ex = Executor::new(&self.graph);
        Ok(ex.run(&problem.feed(), &[self.cpd.loss])?[0].as_scalar())
    }

    /// Updates `A0 … A(N-1)` in turn. `ex` must come from
    /// [`AlsSolver::executor`]; values that do not depend on the updated
    /// factor are reused across updates.
    pub fn sweep(&self, ex: &mut Executor<'_>, problem: &mut CpdProblem) -> Result<SweepStats> {
        let mut stats = SweepStats::default();
        let start = ex.stats().flops;
        for n in 0..self.updates.len() {
            let new = ex
                .run_incremental(&problem.feed(), &[self.updates[n]])?
                .remove(0);
            if new.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("factor {n} became non-finite")));
            }
            problem.factors[n] = new;
            stats.losses.push(self.loss(problem)?);
        }
        stats.flops = ex.stats().flops - start;
        Ok(stats)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AlsTrace {
    pub initial_loss: f64,
    pub sweeps: Vec<SweepStats>,
    pub converged: bool,
}

impl AlsTrace {
    pub fn final_loss(&self) -> f64 {
        self.sweeps
            .last()
            .and_then(|s| s.losses.last().copied())
            .unwrap_or(self.initial_loss)
    }
}

/// Runs up to `max_sweeps` ALS sweeps, stopping once the loss is below
/// `tol`.
pub fn cpd_als(problem: &mut CpdProblem, max_sweeps: usize, tol: f64) -> Result<AlsTrace> {
    let solver = AlsSolver::new(&problem.extents, problem.rank)?;
    let mut ex = solver.executor();
    let initial_loss = solver.loss(problem)?;
    let mut sweeps = Vec::new();
    let mut converged = initial_loss < tol;
    while !converged && sweeps.len() < max_sweeps {
        let s = solver.sweep(&mut ex, problem)?;
        converged = s.losses.last().is_some_and(|&l| l < tol);
        sweeps.push(s);
    }
    Ok(AlsTrace {
        initial_loss,
        sweeps,
        converged,
    })
}

/// One ALS sweep over fresh graphs.
pub fn cpd_als_sweep(problem: &mut CpdProblem) -> Result<SweepStats> {
    let solver = AlsSolver::new(&problem.extents, problem.rank)?;
    let mut ex = solver.executor();
    solver.sweep(&mut ex, problem)
}

/// Cost-model flops of graphs optimized one root at a time, so nothing is
/// shared between roots.
#[derive(Clone, Copy, Debug, Default)]
pub struct IndependentCost {
    pub flops: u64,
    /// Part of `flops` spent in contractions that read `input`.
    pub input_flops: u64,
}

pub fn independent_cost(g: &mut Graph, roots: &[NodeId], input: NodeId) -> Result<IndependentCost> {
    let mut cost = IndependentCost::default();
    for &r in roots {
        let (opt, _) = optimize_roots(g, &[r], &Options::default())?;
        cost.flops += estimate_flops(g, &opt);
        cost.input_flops += flops_touching(g, &opt, input);
    }
    Ok(cost)
}

/// Cost of one ALS sweep without the dimension tree.
pub fn als_no_tree_cost(extents: &[usize], rank: usize) -> Result<IndependentCost> {
    let mut g = Graph::new();
    let cpd = cpd_graph(&mut g, extents, rank)?;
    let raw = als_update_graphs(&mut g, &cpd)?;
    independent_cost(&mut g, &raw, cpd.input)
}
