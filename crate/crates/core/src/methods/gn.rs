//! Gauss-Newton for the CP loss with an implicit `JᵀJ` action solved by
//! conjugate gradient.

use serde::Serialize;

use crate::autodiff::{gradients, jvp, vjp};
use crate::error::{Error, Result};
use crate::executor::{Executor, FeedDict};
use crate::graph::{Graph, NodeId};
use crate::optimizer::{optimize_roots, Options, PassReport};
use crate::tensor::DenseTensor;

use super::cpd::{cpd_graph, CpdGraph, CpdProblem};
use super::linalg::conjugate_gradient;

#[derive(Clone, Debug, Serialize)]
pub struct GnOptions {
    /// Tikhonov term added to `JᵀJ`.
    pub lambda: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Step halvings tried when the full step increases the loss.
    pub max_halvings: usize,
}

impl Default for GnOptions {
    fn default() -> Self {
        GnOptions {
            lambda: 1e-4,
            cg_tol: 1e-10,
            cg_max_iter: 200,
            max_halvings: 30,
        }
    }
}

pub fn direction_name(k: usize) -> String {
    format!("V{k}")
}

/// Optimized gradient and Gauss-Newton matvec graphs.
pub struct GnSolver {
    pub graph: Graph,
    pub cpd: CpdGraph,
    pub grads: Vec<NodeId>,
    /// `(JᵀJ v)_m` for the stacked direction `v = (V0, …)`.
    pub matvec: Vec<NodeId>,
    pub directions: Vec<NodeId>,
    pub report: PassReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct GnStep {
    pub loss_before: f64,
    pub loss_after: f64,
    pub cg_iterations: usize,
    pub cg_converged: bool,
    /// Fraction of the CG step taken after halving.
    pub step: f64,
}

fn flatten(ts: &[DenseTensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(v: &[f64], like: &[DenseTensor]) -> Result<Vec<DenseTensor>> {
    let mut out = Vec::with_capacity(like.len());
    let mut at = 0;
    for t in like {
        out.push(DenseTensor::new(
            t.shape().to_vec(),
            v[at..at + t.len()].to_vec(),
        )?);
        at += t.len();
    }
    Ok(out)
}

impl GnSolver {
    pub fn new(extents: &[usize], rank: usize) -> Result<Self> {
        let mut g = Graph::new();
        let cpd = cpd_graph(&mut g, extents, rank)?;
        let directions = cpd
            .factors
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                let shape = g.shape(a).to_vec();
                g.variable(&direction_name(k), &shape)
            })
            .collect::<Result<Vec<_>>>()?;
        let parts = cpd
            .factors
            .iter()
            .zip(&directions)
            .map(|(&a, &v)| jvp(&mut g, v, cpd.residual, a))
            .collect::<Result<Vec<_>>>()?;
        let jv = g.add(&parts)?;
        let jtjv = cpd
            .factors
            .iter()
            .map(|&a| vjp(&mut g, jv, cpd.residual, a))
            .collect::<Result<Vec<_>>>()?;
        let grads = gradients(&mut g, cpd.loss, &cpd.factors)?;
        let mut roots = jtjv;
        roots.extend_from_slice(&grads);
        let (opt, report) = optimize_roots(&mut g, &roots, &Options::default())?;
        let n = cpd.factors.len();
        Ok(GnSolver {
            graph: g,
            cpd,
            grads: opt[n..].to_vec(),
            matvec: opt[..n].to_vec(),
            directions,
            report,
        })
    }

    pub fn executor(&self) -> Executor<'_> {
        Executor::new(&self.graph)
    }

    pub fn loss(&self, ex: &mut Executor<'_>, problem: &CpdProblem) -> Result<f64> {
        Ok(ex.run(&problem.feed(), &[self.cpd.loss])?[0].as_scalar())
    }

    /// `JᵀJ v` at the current factors, for `v` stacked like the factors.
    pub fn apply(
        &self,
        ex: &mut Executor<'_>,
        problem: &CpdProblem,
        v: &[f64],
    ) -> Result<Vec<f64>> {
        let mut feed: FeedDict = problem.feed();
        for (k, t) in unflatten(v, &problem.factors)?.into_iter().enumerate() {
            feed.insert(direction_name(k), t);
        }
        Ok(flatten(&ex.run_incremental(&feed, &self.matvec)?))
    }

    /// One damped Gauss-Newton step: solve `(JᵀJ + λI) p = ∇` by CG, then
    /// take `a − p`, halving the step while the loss goes up.
    pub fn step(
        &self,
        ex: &mut Executor<'_>,
        problem: &mut CpdProblem,
        opts: &GnOptions,
    ) -> Result<GnStep> {
        let loss_before = self.loss(ex, problem)?;
        let grad = flatten(&ex.run_incremental(&problem.feed(), &self.grads)?);
        let cg = conjugate_gradient(
            |v| {
                let mut out = self.apply(ex, problem, v)?;
                for (o, x) in out.iter_mut().zip(v) {
                    *o += opts.lambda * x;
                }
                Ok(out)
            },
            &grad,
            opts.cg_tol,
            opts.cg_max_iter,
        )?;
        if cg.x.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("Gauss-Newton step is not finite".into()));
        }
        let start = flatten(&problem.factors);
        let mut t = 1.0;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = start.iter().zip(&cg.x).map(|(a, p)| a - t * p).collect();
            let mut candidate = problem.clone();
            candidate.factors = unflatten(&trial, &problem.factors)?;
            let loss = self.loss(ex, &candidate)?;
            if loss <= loss_before {
                *problem = candidate;
                return Ok(GnStep {
                    loss_before,
                    loss_after: loss,
                    cg_iterations: cg.iterations,
                    cg_converged: cg.converged,
                    step: t,
                });
            }
            t *= 0.5;
        }
        Ok(GnStep {
            loss_before,
            loss_after: loss_before,
            cg_iterations: cg.iterations,
            cg_converged: cg.converged,
            step: 0.0,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GnTrace {
    pub initial_loss: f64,
    pub steps: Vec<GnStep>,
    pub converged: bool,
}

impl GnTrace {
    pub fn final_loss(&self) -> f64 {
        self.steps
            .last()
            .map_or(self.initial_loss, |s| s.loss_after)
    }
}

/// Runs up to `max_iter` Gauss-Newton steps, stopping once the loss is
/// below `tol`.
pub fn cpd_gauss_newton(
    problem: &mut CpdProblem,
    max_iter: usize,
    tol: f64,
    opts: &GnOptions,
) -> Result<GnTrace> {
    let solver = GnSolver::new(&problem.extents, problem.rank)?;
    let mut ex = solver.executor();
    let initial_loss = solver.loss(&mut ex, problem)?;
    let mut steps = Vec::new();
    let mut converged = initial_loss < tol;
    while !converged && steps.len() < max_iter {
        let s = solver.step(&mut ex, problem, opts)?;
        converged = s.loss_after < tol;
        let stalled = s.step == 0.0;
        steps.push(s);
        if stalled {
            break;
        }
    }
    Ok(GnTrace {
        initial_loss,
        steps,
        converged,
    })
}

/// One Gauss-Newton step over fresh graphs.
pub fn cpd_gauss_newton_step(problem: &mut CpdProblem, opts: &GnOptions) -> Result<GnStep> {
    let solver = GnSolver::new(&problem.extents, problem.rank)?;
    let mut ex = solver.executor();
    solver.step(&mut ex, problem, opts)
}
