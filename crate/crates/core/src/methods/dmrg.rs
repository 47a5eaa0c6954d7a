//! One-site DMRG: the smallest eigenvalue of an MPO over an MPS, with local
//! operators taken from the Hessian of the Rayleigh numerator.
//!
//! MPO site `k` has shape `(c_k, s_k, s_k, c_{k+1})` (bra leg first), MPS
//! site `k` has shape `(b_k, s_k, b_{k+1})`, and boundary bonds are 1. The
//! MPS is kept in mixed canonical form around the site being solved, so the
//! local problem is an ordinary symmetric eigenproblem and the norm of the
//! state is the norm of that site.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::autodiff::{hessian, hvp};
use crate::error::{Error, Result};
use crate::executor::{Executor, FeedDict};
use crate::graph::{Graph, Label, NodeId};
use crate::optimizer::{
    contractions_touching, estimate_flops, optimize_roots, Options, PassReport,
};
use crate::rng::UniformStream;
use crate::tensor::DenseTensor;

use super::linalg::{as_matrix, from_matrix, lanczos_smallest, sym_eigen, thin_qr};

/// Local dimension up to which the local Hessian is built and solved
/// densely.
pub const DENSE_LIMIT: usize = 64;

pub fn mpo_name(k: usize) -> String {
    format!("W{k}")
}

pub fn mps_name(k: usize) -> String {
    format!("V{k}")
}

pub fn direction_name(k: usize) -> String {
    format!("U{k}")
}

/// Bond dimensions `b_0 … b_N` of an MPS with the given physical extents:
/// the exact ones, `min(∏_{j<k} s_j, ∏_{j≥k} s_j)`, optionally capped.
pub fn mps_bonds(phys: &[usize], cap: Option<usize>) -> Vec<usize> {
    let n = phys.len();
    (0..=n)
        .map(|k| {
            let left = phys[..k].iter().fold(1usize, |a, &s| a.saturating_mul(s));
            let right = phys[k..].iter().fold(1usize, |a, &s| a.saturating_mul(s));
            let b = left.min(right);
            cap.map_or(b, |c| b.min(c.max(1)))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct DmrgGraph {
    pub mpo: Vec<NodeId>,
    pub mps: Vec<NodeId>,
    /// `⟨V, W V⟩`
    pub numerator: NodeId,
    /// `⟨V, V⟩`
    pub denominator: NodeId,
    /// The Rayleigh quotient `⟨V, W V⟩ / ⟨V, V⟩`.
    pub objective: NodeId,
}

pub fn dmrg_graph(
    g: &mut Graph,
    phys: &[usize],
    mpo_bonds: &[usize],
    mps_bonds: &[usize],
) -> Result<DmrgGraph> {
    let n = phys.len();
    if n == 0 || mpo_bonds.len() != n + 1 || mps_bonds.len() != n + 1 {
        return Err(Error::invalid(
            "DMRG problem needs N sites and N+1 bonds for each chain",
        ));
    }
    if mpo_bonds[0] != 1 || mpo_bonds[n] != 1 || mps_bonds[0] != 1 || mps_bonds[n] != 1 {
        return Err(Error::invalid("DMRG boundary bonds must be 1"));
    }
    if phys.contains(&0) || mpo_bonds.contains(&0) || mps_bonds.contains(&0) {
        return Err(Error::invalid("DMRG extents must be positive"));
    }
    let mpo = (0..n)
        .map(|k| {
            g.variable(
                &mpo_name(k),
                &[mpo_bonds[k], phys[k], phys[k], mpo_bonds[k + 1]],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mps = (0..n)
        .map(|k| g.variable(&mps_name(k), &[mps_bonds[k], phys[k], mps_bonds[k + 1]]))
        .collect::<Result<Vec<_>>>()?;

    // label blocks: ket bonds, bra bonds, MPO bonds, ket legs, bra legs
    let nb = (n + 1) as Label;
    let ns = n as Label;
    let ket_bond = |k: usize| k as Label;
    let bra_bond = |k: usize| nb + k as Label;
    let mpo_bond = |k: usize| 2 * nb + k as Label;
    let ket_leg = |k: usize| 3 * nb + k as Label;
    let bra_leg = |k: usize| 3 * nb + ns + k as Label;

    let mut ops = Vec::new();
    let mut ins = Vec::new();
    for k in 0..n {
        ops.push(vec![bra_bond(k), bra_leg(k), bra_bond(k + 1)]);
        ins.push(mps[k]);
        ops.push(vec![mpo_bond(k), bra_leg(k), ket_leg(k), mpo_bond(k + 1)]);
        ins.push(mpo[k]);
        ops.push(vec![ket_bond(k), ket_leg(k), ket_bond(k + 1)]);
        ins.push(mps[k]);
    }
    let numerator = g.einsum_labels(ops, vec![], &ins)?;

    let mut ops = Vec::new();
    let mut ins = Vec::new();
    for k in 0..n {
        ops.push(vec![bra_bond(k), ket_leg(k), bra_bond(k + 1)]);
        ops.push(vec![ket_bond(k), ket_leg(k), ket_bond(k + 1)]);
        ins.push(mps[k]);
        ins.push(mps[k]);
    }
    let denominator = g.einsum_labels(ops, vec![], &ins)?;
    let inv = g.reciprocal(denominator)?;
    let objective = g.scale_by(inv, numerator)?;
    Ok(DmrgGraph {
        mpo,
        mps,
        numerator,
        denominator,
        objective,
    })
}

#[derive(Clone, Debug)]
pub struct DmrgProblem {
    pub phys: Vec<usize>,
    pub mpo_bonds: Vec<usize>,
    pub mps_bonds: Vec<usize>,
    pub mpo: Vec<DenseTensor>,
    pub mps: Vec<DenseTensor>,
}

fn mpo_bond_dims(n: usize, rank: usize) -> Vec<usize> {
    (0..=n)
        .map(|k| if k == 0 || k == n { 1 } else { rank })
        .collect()
}

fn random_mps(phys: &[usize], bonds: &[usize], root: &UniformStream) -> Vec<DenseTensor> {
    (0..phys.len())
        .map(|k| {
            DenseTensor::random(
                &[bonds[k], phys[k], bonds[k + 1]],
                &mut root.substream(&mps_name(k)),
            )
        })
        .collect()
}

impl DmrgProblem {
    /// Random MPO of bond `mpo_rank`, symmetrized in its physical legs, and
    /// a random MPS with [`mps_bonds`]`(phys, mps_rank)`.
    pub fn random(
        phys: &[usize],
        mpo_rank: usize,
        mps_rank: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if phys.is_empty() || mpo_rank == 0 {
            return Err(Error::invalid(
                "DMRG problem needs at least one site and a positive MPO rank",
            ));
        }
        let n = phys.len();
        let root = UniformStream::new(seed);
        let mpo_bonds = mpo_bond_dims(n, mpo_rank);
        let mpo = (0..n)
            .map(|k| {
                let raw = DenseTensor::random(
                    &[mpo_bonds[k], phys[k], phys[k], mpo_bonds[k + 1]],
                    &mut root.substream(&mpo_name(k)),
                );
                let swapped = raw.permute(&[0, 2, 1, 3])?;
                raw.zip_with(&swapped, |a, b| 0.5 * (a + b))
            })
            .collect::<Result<Vec<_>>>()?;
        let mps_bonds = mps_bonds(phys, mps_rank);
        let mps = random_mps(phys, &mps_bonds, &root);
        Ok(DmrgProblem {
            phys: phys.to_vec(),
            mpo_bonds,
            mps_bonds,
            mpo,
            mps,
        })
    }

    /// The identity operator as a bond-1 MPO, with a random MPS.
    pub fn identity(phys: &[usize], mps_rank: Option<usize>, seed: u64) -> Result<Self> {
        if phys.is_empty() {
            return Err(Error::invalid("DMRG problem needs at least one site"));
        }
        let n = phys.len();
        let root = UniformStream::new(seed);
        let mpo = phys
            .iter()
            .map(|&s| DenseTensor::identity(s).reshape(&[1, s, s, 1]))
            .collect::<Result<Vec<_>>>()?;
        let mps_bonds = mps_bonds(phys, mps_rank);
        let mps = random_mps(phys, &mps_bonds, &root);
        Ok(DmrgProblem {
            phys: phys.to_vec(),
            mpo_bonds: vec![1; n + 1],
            mps_bonds,
            mpo,
            mps,
        })
    }

    pub fn sites(&self) -> usize {
        self.phys.len()
    }

    pub fn total_dimension(&self) -> usize {
        self.phys.iter().product()
    }

    pub fn feed(&self) -> FeedDict {
        let mut f = FeedDict::new();
        for k in 0..self.sites() {
            f.insert(mpo_name(k), self.mpo[k].clone());
            f.insert(mps_name(k), self.mps[k].clone());
        }
        f
    }

    fn local_dim(&self, k: usize) -> usize {
        self.mps[k].len()
    }

    /// Moves the orthogonality center from `k` to `k + 1`.
    fn shift_right(&mut self, k: usize) -> Result<()> {
        let (b0, s, b1) = (self.mps_bonds[k], self.phys[k], self.mps_bonds[k + 1]);
        let (q, r) = thin_qr(&as_matrix(&self.mps[k], b0 * s));
        self.mps[k] = from_matrix(&q, &[b0, s, b1])?;
        let next = &self.mps[k + 1];
        let m = r * as_matrix(next, b1);
        self.mps[k + 1] = from_matrix(&m, next.shape())?;
        Ok(())
    }

    /// Moves the orthogonality center from `k` to `k - 1`.
    fn shift_left(&mut self, k: usize) -> Result<()> {
        let (b0, s, b1) = (self.mps_bonds[k], self.phys[k], self.mps_bonds[k + 1]);
        let (q, r) = thin_qr(&as_matrix(&self.mps[k], b0).transpose());
        self.mps[k] = from_matrix(&q.transpose(), &[b0, s, b1])?;
        let prev = &self.mps[k - 1];
        let rows = prev.len() / b0;
        let m = as_matrix(prev, rows) * r.transpose();
        self.mps[k - 1] = from_matrix(&m, prev.shape())?;
        Ok(())
    }

    /// Right-canonical form with the center at site 0, scaled to unit norm.
    pub fn canonicalize(&mut self) -> Result<()> {
        for k in (1..self.sites()).rev() {
            self.shift_left(k)?;
        }
        let norm = self.mps[0].norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Numerical("MPS has zero norm".into()));
        }
        self.mps[0] = self.mps[0].scaled(1.0 / norm);
        Ok(())
    }
}

/// The MPO as a dense `d×d` matrix, row index over bra legs and column index
/// over ket legs, site 0 most significant.
pub fn dense_operator(mpo: &[DenseTensor]) -> DMatrix<f64> {
    let phys: Vec<usize> = mpo.iter().map(|w| w.shape()[1]).collect();
    let d: usize = phys.iter().product();
    let digits = |mut i: usize| {
        let mut out = vec![0; phys.len()];
        for k in (0..phys.len()).rev() {
            out[k] = i % phys[k];
            i /= phys[k];
        }
        out
    };
    DMatrix::from_fn(d, d, |row, col| {
        let (p, q) = (digits(row), digits(col));
        let mut env = vec![1.0];
        for (k, w) in mpo.iter().enumerate() {
            let c1 = w.shape()[3];
            let mut next = vec![0.0; c1];
            for (c0, &e) in env.iter().enumerate() {
                for (c, slot) in next.iter_mut().enumerate() {
                    *slot += e * w.get(&[c0, p[k], q[k], c]);
                }
            }
            env = next;
        }
        env[0]
    })
}

/// The state as a dense vector, site 0 most significant.
pub fn dense_state(mps: &[DenseTensor]) -> Vec<f64> {
    let mut acc = vec![vec![1.0]];
    for v in mps {
        let (b0, s, b1) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let mut next = Vec::with_capacity(acc.len() * s);
        for row in &acc {
            for p in 0..s {
                let mut out = vec![0.0; b1];
                for (a, &x) in row.iter().enumerate().take(b0) {
                    for (b, slot) in out.iter_mut().enumerate() {
                        *slot += x * v.get(&[a, p, b]);
                    }
                }
                next.push(out);
            }
        }
        acc = next;
    }
    acc.into_iter().map(|r| r[0]).collect()
}

/// Smallest eigenvalue of the dense matricized MPO.
pub fn dense_smallest_eigenvalue(mpo: &[DenseTensor]) -> f64 {
    sym_eigen(&dense_operator(mpo)).0[0]
}

/// Local Hessian and HVP graphs of the numerator for every site, optimized
/// across sites.
pub struct DmrgSolver {
    pub graph: Graph,
    pub dmrg: DmrgGraph,
    pub directions: Vec<NodeId>,
    /// `H_k U_k` where `H_k` is half the Hessian of the numerator in site `k`.
    pub hvp: Vec<NodeId>,
    /// `H_k` as an order-6 tensor.
    pub hessian: Vec<NodeId>,
    /// Optimized numerator, denominator and objective.
    pub objective: [NodeId; 3],
    pub report: PassReport,
}

impl DmrgSolver {
    pub fn new(problem: &DmrgProblem) -> Result<Self> {
        let mut g = Graph::new();
        let dmrg = dmrg_graph(
            &mut g,
            &problem.phys,
            &problem.mpo_bonds,
            &problem.mps_bonds,
        )?;
        let n = problem.sites();
        let mut directions = Vec::with_capacity(n);
        let mut hvps = Vec::with_capacity(n);
        let mut hessians = Vec::with_capacity(n);
        for k in 0..n {
            let v = dmrg.mps[k];
            let shape = g.shape(v).to_vec();
            let u = g.variable(&direction_name(k), &shape)?;
            directions.push(u);
            let hv = hvp(&mut g, dmrg.numerator, v, u)?;
            hvps.push(g.scale(0.5, hv));
            let h = hessian(&mut g, dmrg.numerator, &[v])?[0][0];
            hessians.push(g.scale(0.5, h));
        }
        let opts = Options::default();
        let (hvp, report) = optimize_roots(&mut g, &hvps, &opts)?;
        let (hessian, _) = optimize_roots(&mut g, &hessians, &opts)?;
        let (obj, _) = optimize_roots(
            &mut g,
            &[dmrg.numerator, dmrg.denominator, dmrg.objective],
            &opts,
        )?;
        Ok(DmrgSolver {
            graph: g,
            dmrg,
            directions,
            hvp,
            hessian,
            objective: [obj[0], obj[1], obj[2]],
            report,
        })
    }

    pub fn executor(&self) -> Executor<'_> {
        Executor::new(&self.graph)
    }

    /// Cost-model flops of one HVP at every site.
    pub fn hvp_flop_estimate(&self) -> u64 {
        estimate_flops(&self.graph, &self.hvp)
    }

    /// Largest number of contractions touching one MPO site across the HVP
    /// graphs of all sites.
    pub fn max_mpo_contractions(&self) -> usize {
        self.dmrg
            .mpo
            .iter()
            .map(|&w| contractions_touching(&self.graph, &self.hvp, w))
            .max()
            .unwrap_or(0)
    }

    pub fn rayleigh_quotient(&self, ex: &mut Executor<'_>, problem: &DmrgProblem) -> Result<f64> {
        Ok(ex.run_incremental(&problem.feed(), &[self.objective[2]])?[0].as_scalar())
    }

    /// `H_k u` for the flattened direction `u`.
    pub fn apply(
        &self,
        ex: &mut Executor<'_>,
        problem: &DmrgProblem,
        k: usize,
        u: &[f64],
    ) -> Result<Vec<f64>> {
        let mut feed = problem.feed();
        feed.insert(
            direction_name(k),
            DenseTensor::new(problem.mps[k].shape().to_vec(), u.to_vec())?,
        );
        Ok(ex
            .run_incremental(&feed, &[self.hvp[k]])?
            .remove(0)
            .into_data())
    }

    /// The local operator of site `k` as a dense matrix.
    pub fn local_matrix(
        &self,
        ex: &mut Executor<'_>,
        problem: &DmrgProblem,
        k: usize,
    ) -> Result<DMatrix<f64>> {
        let h = ex
            .run_incremental(&problem.feed(), &[self.hessian[k]])?
            .remove(0);
        Ok(as_matrix(&h, problem.local_dim(k)))
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LocalStep {
    pub site: usize,
    pub dimension: usize,
    pub eigenvalue: f64,
    /// Rayleigh quotient of the whole state after the update.
    pub rayleigh: f64,
    pub dense: bool,
    pub matvecs: usize,
    pub restarts: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DmrgTrace {
    pub initial_rayleigh: f64,
    pub sweeps: Vec<Vec<LocalStep>>,
    pub converged: bool,
    pub eigenvalue: f64,
}

fn solve_site(
    solver: &DmrgSolver,
    ex: &mut Executor<'_>,
    problem: &mut DmrgProblem,
    k: usize,
    tol: f64,
    stream: &mut UniformStream,
) -> Result<LocalStep> {
    let d = problem.local_dim(k);
    let mut step = LocalStep {
        site: k,
        dimension: d,
        dense: d <= DENSE_LIMIT,
        ..LocalStep::default()
    };
    let vector = if step.dense {
        let (vals, vecs) = sym_eigen(&solver.local_matrix(ex, problem, k)?);
        step.eigenvalue = vals[0];
        vecs.column(0).iter().copied().collect::<Vec<_>>()
    } else {
        let start = problem.mps[k].data().to_vec();
        let r = lanczos_smallest(|u| solver.apply(ex, problem, k, u), &start, tol, 40, stream)?;
        step.eigenvalue = r.value;
        step.matvecs = r.matvecs;
        step.restarts = r.restarts;
        r.vector
    };
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numerical(format!(
            "local eigenvector at site {k} is degenerate"
        )));
    }
    let shape = problem.mps[k].shape().to_vec();
    problem.mps[k] = DenseTensor::new(shape, vector.iter().map(|x| x / norm).collect())?;
    step.rayleigh = solver.rayleigh_quotient(ex, problem)?;
    Ok(step)
}

/// One left-to-right then right-to-left sweep. The orthogonality center must
/// be at site 0 on entry and is there again on exit.
pub fn dmrg_sweep_with(
    solver: &DmrgSolver,
    ex: &mut Executor<'_>,
    problem: &mut DmrgProblem,
    tol: f64,
    stream: &mut UniformStream,
) -> Result<Vec<LocalStep>> {
    let n = problem.sites();
    let mut steps = Vec::with_capacity(2 * n);
    for k in 0..n {
        steps.push(solve_site(solver, ex, problem, k, tol, stream)?);
        if k + 1 < n {
            problem.shift_right(k)?;
        }
    }
    for k in (0..n.saturating_sub(1)).rev() {
        problem.shift_left(k + 1)?;
        steps.push(solve_site(solver, ex, problem, k, tol, stream)?);
    }
    Ok(steps)
}

/// Canonicalizes, then sweeps until the eigenvalue changes by less than
/// `tol` between sweeps or `max_sweeps` is reached.
pub fn dmrg(
    problem: &mut DmrgProblem,
    max_sweeps: usize,
    tol: f64,
    seed: u64,
) -> Result<DmrgTrace> {
    let solver = DmrgSolver::new(problem)?;
    let mut ex = solver.executor();
    problem.canonicalize()?;
    let mut stream = UniformStream::new(seed).substream("lanczos");
    let initial_rayleigh = solver.rayleigh_quotient(&mut ex, problem)?;
    let mut sweeps: Vec<Vec<LocalStep>> = Vec::new();
    let mut last = initial_rayleigh;
    let mut converged = false;
    while !converged && sweeps.len() < max_sweeps {
        let steps = dmrg_sweep_with(&solver, &mut ex, problem, tol.min(1e-10), &mut stream)?;
        let now = steps.last().map_or(last, |s| s.eigenvalue);
        converged = (last - now).abs() < tol;
        last = now;
        sweeps.push(steps);
    }
    Ok(DmrgTrace {
        initial_rayleigh,
        sweeps,
        converged,
        eigenvalue: last,
    })
}

/// One sweep over fresh graphs; returns the updated state's eigenvalue
/// estimate.
pub fn dmrg_sweep(problem: &mut DmrgProblem, seed: u64) -> Result<f64> {
    let solver = DmrgSolver::new(problem)?;
    let mut ex = solver.executor();
    problem.canonicalize()?;
    let mut stream = UniformStream::new(seed).substream("lanczos");
    let steps = dmrg_sweep_with(&solver, &mut ex, problem, 1e-10, &mut stream)?;
    Ok(steps.last().map_or(f64::NAN, |s| s.eigenvalue))
}

/// Local Hessian and HVP graphs of site `k` on their own, unoptimized.
pub fn dmrg_local_hessian(g: &mut Graph, dmrg: &DmrgGraph, k: usize) -> Result<(NodeId, NodeId)> {
    let v = *dmrg
        .mps
        .get(k)
        .ok_or_else(|| Error::invalid(format!("site {k} is out of range")))?;
    let shape = g.shape(v).to_vec();
    let u = g.variable(&direction_name(k), &shape)?;
    let h = hessian(g, dmrg.numerator, &[v])?[0][0];
    let h = g.scale(0.5, h);
    let hv = hvp(g, dmrg.numerator, v, u)?;
    let hv = g.scale(0.5, hv);
    Ok((h, hv))
}
