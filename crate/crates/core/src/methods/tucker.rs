//! Tucker decomposition by higher-order orthogonal iteration. The TTMc
//! tensors come from one dimension-tree-optimized graph family; each factor
//! update takes the leading eigenvectors of the TTMc Gram matrix.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::executor::{Executor, FeedDict};
use crate::graph::{Graph, Label, NodeId};
use crate::optimizer::{
    contractions_touching, estimate_flops, flops_touching, optimize_roots, Options, PassReport,
    PathStrategy,
};
use crate::rng::UniformStream;
use crate::tensor::DenseTensor;

use super::cpd::{factor_name, independent_cost, IndependentCost, SweepStats};
use super::linalg::{as_matrix, from_matrix, leading_eigenvectors, random_orthonormal};

/// Nodes of the Tucker model over variables `X` and `A0…` (`extents[k] ×
/// ranks[k]`).
#[derive(Clone, Debug)]
pub struct TuckerGraph {
    pub extents: Vec<usize>,
    pub ranks: Vec<usize>,
    pub input: NodeId,
    pub factors: Vec<NodeId>,
    /// `X ×ₖ Aₖᵀ` over every mode.
    pub core: NodeId,
    pub reconstruction: NodeId,
    /// `½‖X − G ×ₖ Aₖ‖²`.
    pub loss: NodeId,
    /// `Yₙ = X ×ₖ Aₖᵀ` over every mode but `n`, with mode `n` first and the
    /// other modes in order.
    pub ttmc: Vec<NodeId>,
}

fn check_shape(extents: &[usize], ranks: &[usize]) -> Result<()> {
    if extents.is_empty() || extents.len() != ranks.len() {
        return Err(Error::invalid("Tucker problem needs one rank per mode"));
    }
    for (&s, &r) in extents.iter().zip(ranks) {
        if r == 0 || r > s {
            return Err(Error::invalid(format!(
                "Tucker rank {r} does not fit extent {s}"
            )));
        }
    }
    Ok(())
}

pub fn tucker_graph(g: &mut Graph, extents: &[usize], ranks: &[usize]) -> Result<TuckerGraph> {
    check_shape(extents, ranks)?;
    let n = extents.len();
    let input = g.variable("X", extents)?;
    let factors = (0..n)
        .map(|k| g.variable(&factor_name(k), &[extents[k], ranks[k]]))
        .collect::<Result<Vec<_>>>()?;
    let nl = n as Label;
    let x_labels: Vec<Label> = (0..nl).collect();
    let a_labels = |k: usize| vec![k as Label, nl + k as Label];

    let mut ops = vec![x_labels.clone()];
    ops.extend((0..n).map(a_labels));
    let mut ins = vec![input];
    ins.extend_from_slice(&factors);
    let core = g.einsum_labels(ops, (nl..2 * nl).collect(), &ins)?;

    let mut ops = vec![(nl..2 * nl).collect::<Vec<_>>()];
    ops.extend((0..n).map(a_labels));
    let mut ins = vec![core];
    ins.extend_from_slice(&factors);
    let reconstruction = g.einsum_labels(ops, x_labels.clone(), &ins)?;
    let residual = g.sub(input, reconstruction)?;
    let sq = g.inner(residual, residual)?;
    let loss = g.scale(0.5, sq);

    let mut ttmc = Vec::with_capacity(n);
    for m in 0..n {
        let mut ops = vec![x_labels.clone()];
        let mut ins = vec![input];
        let mut out = vec![m as Label];
        for k in (0..n).filter(|&k| k != m) {
            ops.push(a_labels(k));
            ins.push(factors[k]);
            out.push(nl + k as Label);
        }
        ttmc.push(g.einsum_labels(ops, out, &ins)?);
    }
    Ok(TuckerGraph {
        extents: extents.to_vec(),
        ranks: ranks.to_vec(),
        input,
        factors,
        core,
        reconstruction,
        loss,
        ttmc,
    })
}

#[derive(Clone, Debug)]
pub struct TuckerProblem {
    pub extents: Vec<usize>,
    pub ranks: Vec<usize>,
    pub input: DenseTensor,
    /// Factors with orthonormal columns.
    pub factors: Vec<DenseTensor>,
}

/// Dense `G ×ₖ Aₖ` by direct summation.
pub fn reconstruct(core: &DenseTensor, factors: &[DenseTensor]) -> DenseTensor {
    let extents: Vec<usize> = factors.iter().map(|a| a.shape()[0]).collect();
    let core_shape = core.shape().to_vec();
    let total: usize = core_shape.iter().product();
    DenseTensor::from_fn(&extents, |idx| {
        let mut sum = 0.0;
        let mut r = vec![0usize; core_shape.len()];
        for flat in 0..total {
            let mut rem = flat;
            for k in (0..r.len()).rev() {
                r[k] = rem % core_shape[k];
                rem /= core_shape[k];
            }
            let mut p = core.get(&r);
            for (k, a) in factors.iter().enumerate() {
                p *= a.get(&[idx[k], r[k]]);
            }
            sum += p;
        }
        sum
    })
}

fn orthonormal_factors(
    extents: &[usize],
    ranks: &[usize],
    root: &UniformStream,
    stem: &str,
) -> Result<Vec<DenseTensor>> {
    extents
        .iter()
        .zip(ranks)
        .enumerate()
        .map(|(k, (&s, &r))| {
            let q = random_orthonormal(s, r, &mut root.substream(&format!("{stem}{k}")))?;
            from_matrix(&q, &[s, r])
        })
        .collect()
}

impl TuckerProblem {
    /// Uniform(−1, 1) input and random orthonormal starting factors.
    pub fn random(extents: &[usize], ranks: &[usize], seed: u64) -> Result<Self> {
        check_shape(extents, ranks)?;
        let root = UniformStream::new(seed);
        Ok(TuckerProblem {
            extents: extents.to_vec(),
            ranks: ranks.to_vec(),
            input: DenseTensor::random(extents, &mut root.substream("X")),
            factors: orthonormal_factors(extents, ranks, &root, "A")?,
        })
    }

    /// Input of exact multilinear rank `ranks` with random orthonormal
    /// starting factors unrelated to the true ones.
    pub fn exact(extents: &[usize], ranks: &[usize], seed: u64) -> Result<Self> {
        check_shape(extents, ranks)?;
        let root = UniformStream::new(seed);
        let core = DenseTensor::random(ranks, &mut root.substream("core"));
        let truth = orthonormal_factors(extents, ranks, &root, "true")?;
        Ok(TuckerProblem {
            extents: extents.to_vec(),
            ranks: ranks.to_vec(),
            input: reconstruct(&core, &truth),
            factors: orthonormal_factors(extents, ranks, &root, "A")?,
        })
    }

    pub fn feed(&self) -> FeedDict {
        let mut f = FeedDict::new();
        f.insert("X".to_string(), self.input.clone());
        for (k, a) in self.factors.iter().enumerate() {
            f.insert(factor_name(k), a.clone());
        }
        f
    }

    /// Largest entry of `AₖᵀAₖ − I` over all factors.
    pub fn orthonormality_error(&self) -> f64 {
        self.factors
            .iter()
            .map(|a| {
                let m = as_matrix(a, a.shape()[0]);
                let d = m.transpose() * &m - nalgebra::DMatrix::identity(m.ncols(), m.ncols());
                d.abs().max()
            })
            .fold(0.0, f64::max)
    }
}

/// TTMc graphs optimized with and without the dimension tree.
pub struct TuckerSolver {
    pub graph: Graph,
    pub tucker: TuckerGraph,
    /// Dimension-tree TTMc roots, used by [`TuckerSolver::sweep`].
    pub ttmc: Vec<NodeId>,
    /// Cost of computing every `Yₙ` on its own.
    pub no_tree: IndependentCost,
    pub report: PassReport,
}

impl TuckerSolver {
    pub fn new(extents: &[usize], ranks: &[usize]) -> Result<Self> {
        let mut graph = Graph::new();
        let tucker = tucker_graph(&mut graph, extents, ranks)?;
        let opts = Options {
            path: PathStrategy::DimensionTree {
                sites: tucker.factors.clone(),
            },
            ..Options::default()
        };
        let (ttmc, report) = optimize_roots(&mut graph, &tucker.ttmc, &opts)?;
        let no_tree = independent_cost(&mut graph, &tucker.ttmc, tucker.input)?;
        Ok(TuckerSolver {
            graph,
            tucker,
            ttmc,
            no_tree,
            report,
        })
    }

    pub fn sweep_flop_estimate(&self) -> u64 {
        estimate_flops(&self.graph, &self.ttmc)
    }

    pub fn no_tree_flop_estimate(&self) -> u64 {
        self.no_tree.flops
    }

    /// Part of [`TuckerSolver::sweep_flop_estimate`] spent reading the input.
    pub fn input_flop_estimate(&self) -> u64 {
        flops_touching(&self.graph, &self.ttmc, self.tucker.input)
    }

    pub fn input_contractions(&self) -> usize {
        contractions_touching(&self.graph, &self.ttmc, self.tucker.input)
    }

    pub fn executor(&self) -> Executor<'_> {
        Executor::new(&self.graph)
    }

    pub fn loss(&self, problem: &TuckerProblem) -> Result<f64> {
        let mut ex = Executor::new(&self.graph);
        Ok(ex.run(&problem.feed(), &[self.tucker.loss])?[0].as_scalar())
    }

    /// Updates `A0 … A(N-1)` in turn and returns the TTMc tensor used for
    /// each update.
    pub fn sweep_with_ttmc(
        &self,
        ex: &mut Executor<'_>,
        problem: &mut TuckerProblem,
    ) -> Result<(SweepStats, Vec<DenseTensor>)> {
        let mut stats = SweepStats::default();
        let mut ys = Vec::with_capacity(self.ttmc.len());
        let start = ex.stats().flops;
        for n in 0..self.ttmc.len() {
            let y = ex
                .run_incremental(&problem.feed(), &[self.ttmc[n]])?
                .remove(0);
            let s = problem.extents[n];
            let m = as_matrix(&y, s);
            let gram = &m * m.transpose();
            if gram.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("TTMc of mode {n} is not finite")));
            }
            let a = leading_eigenvectors(&gram, problem.ranks[n]);
            problem.factors[n] = from_matrix(&a, &[s, problem.ranks[n]])?;
            stats.losses.push(self.loss(problem)?);
            ys.push(y);
        }
        stats.flops = ex.stats().flops - start;
        Ok((stats, ys))
    }

    pub fn sweep(&self, ex: &mut Executor<'_>, problem: &mut TuckerProblem) -> Result<SweepStats> {
        Ok(self.sweep_with_ttmc(ex, problem)?.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TuckerTrace {
    pub initial_loss: f64,
    pub sweeps: Vec<SweepStats>,
    pub converged: bool,
    /// Largest `‖AₖᵀAₖ − I‖_max` seen after any update.
    pub orthonormality_error: f64,
}

impl TuckerTrace {
    pub fn final_loss(&self) -> f64 {
        self.sweeps
            .last()
            .and_then(|s| s.losses.last().copied())
            .unwrap_or(self.initial_loss)
    }
}

/// Runs up to `max_sweeps` HOOI sweeps. Stops when the loss is below `tol`
/// or stops changing by more than `tol`.
pub fn tucker_hooi(
    problem: &mut TuckerProblem,
    max_sweeps: usize,
    tol: f64,
) -> Result<TuckerTrace> {
    let solver = TuckerSolver::new(&problem.extents, &problem.ranks)?;
    let mut ex = solver.executor();
    let initial_loss = solver.loss(problem)?;
    let mut sweeps: Vec<SweepStats> = Vec::new();
    let mut converged = initial_loss < tol;
    let mut ortho: f64 = problem.orthonormality_error();
    let mut last = initial_loss;
    while !converged && sweeps.len() < max_sweeps {
        let s = solver.sweep(&mut ex, problem)?;
        ortho = ortho.max(problem.orthonormality_error());
        let now = s.losses.last().copied().unwrap_or(last);
        converged = now < tol || (last - now).abs() < tol;
        last = now;
        sweeps.push(s);
    }
    Ok(TuckerTrace {
        initial_loss,
        sweeps,
        converged,
        orthonormality_error: ortho,
    })
}

/// One HOOI sweep over fresh graphs, returning the TTMc tensors it used.
pub fn tucker_ttmc_sweep(problem: &mut TuckerProblem) -> Result<Vec<DenseTensor>> {
    let solver = TuckerSolver::new(&problem.extents, &problem.ranks)?;
    let mut ex = solver.executor();
    Ok(solver.sweep_with_ttmc(&mut ex, problem)?.1)
}
