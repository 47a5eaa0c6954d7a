//! Benchmark driver: runs one configured method and reports losses,
//! convergence and flop counts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimizer::PassStat;

use super::config::{InputKind, Method, ProblemConfig};
use super::cpd::{als_no_tree_cost, AlsSolver, CpdProblem};
use super::dmrg::{dense_smallest_eigenvalue, dmrg_sweep_with, DmrgProblem, DmrgSolver};
use super::gn::{GnOptions, GnSolver};
use super::tucker::{TuckerProblem, TuckerSolver};
use crate::rng::UniformStream;

/// Dense oracle eigenvalues are computed up to this total dimension.
pub const DENSE_ORACLE_LIMIT: usize = 1024;

#[derive(Clone, Debug, Default, Serialize)]
pub struct FlopReport {
    /// Cost-model flops of one sweep (one iteration for Gauss-Newton, one HVP
    /// per site for DMRG).
    pub estimate: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_tree_estimate: Option<u64>,
    /// `estimate / no_tree_estimate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_ratio: Option<f64>,
    /// Part of `estimate` in contractions that read the input tensor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_estimate: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_tree_input_estimate: Option<u64>,
    /// Flops the executor actually performed over the whole run.
    pub executed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub config: ProblemConfig,
    /// Loss, or Rayleigh quotient for DMRG, before the first iteration.
    pub initial: f64,
    /// Value after each iteration.
    pub history: Vec<f64>,
    #[serde(rename = "final")]
    pub final_value: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Every recorded value, including the ones inside a sweep, was
    /// non-increasing up to 1e-10 relative.
    pub monotone: bool,
    pub flops: FlopReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_contractions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_iterations: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orthonormality_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense_eigenvalue: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalue_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_mpo_contractions: Option<usize>,
    pub warnings: Vec<String>,
    pub passes: Vec<PassStat>,
}

impl BenchReport {
    fn new(config: &ProblemConfig, initial: f64) -> Self {
        BenchReport {
            config: config.clone(),
            initial,
            history: Vec::new(),
            final_value: initial,
            iterations_run: 0,
            converged: false,
            monotone: true,
            flops: FlopReport::default(),
            input_contractions: None,
            cg_iterations: None,
            orthonormality_error: None,
            dense_eigenvalue: None,
            eigenvalue_error: None,
            max_mpo_contractions: None,
            warnings: Vec::new(),
            passes: Vec::new(),
        }
    }

    /// Human-readable summary: the value column, flop counts and pass
    /// statistics.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let join = |xs: &[usize]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("x")
        };
        let mut s = format!(
            "method {}  extents {}  ranks {}  seed {}\n",
            c.method.as_str(),
            join(&c.extents),
            join(&c.ranks),
            c.seed
        );
        s += &format!("{:>5}  {:>22}\n", "iter", "value");
        s += &format!("{:>5}  {:>22.15e}\n", 0, self.initial);
        for (k, v) in self.history.iter().enumerate() {
            s += &format!("{:>5}  {:>22.15e}\n", k + 1, v);
        }
        s += &format!(
            "converged {}  monotone {}  iterations {}  final {:.15e}\n",
            self.converged, self.monotone, self.iterations_run, self.final_value
        );
        let f = &self.flops;
        s += &format!("flops per iteration {}", f.estimate);
        if let (Some(n), Some(r)) = (f.no_tree_estimate, f.tree_ratio) {
            s += &format!("  without dimension tree {n}  ratio {r:.4}");
        }
        s += &format!("  executed {}\n", f.executed);
        if let (Some(a), Some(b)) = (f.input_estimate, f.no_tree_input_estimate) {
            s += &format!("input-tensor flops {a}  without dimension tree {b}\n");
        }
        if let Some(n) = self.input_contractions {
            s += &format!("input contractions per sweep {n}\n");
        }
        if let Some(cg) = &self.cg_iterations {
            s += &format!("cg iterations {cg:?}\n");
        }
        if let Some(e) = self.orthonormality_error {
            s += &format!("orthonormality error {e:.3e}\n");
        }
        if let (Some(d), Some(e)) = (self.dense_eigenvalue, self.eigenvalue_error) {
            s += &format!("dense eigenvalue {d:.15e}  error {e:.3e}\n");
        }
        if let Some(n) = self.max_mpo_contractions {
            s += &format!("max contractions touching one MPO site {n}\n");
        }
        for w in &self.warnings {
            s += &format!("warning: {w}\n");
        }
        s += "passes\n";
        let report = crate::optimizer::PassReport {
            passes: self.passes.clone(),
            snapshots: Vec::new(),
        };
        s += &report.to_text();
        s
    }

    /// Appends the values seen during one iteration.
    fn push(&mut self, values: &[f64]) -> Result<()> {
        let mut prev = self.final_value;
        for &v in values {
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "{} produced a non-finite value at iteration {}",
                    self.config.method.as_str(),
                    self.iterations_run + 1
                )));
            }
            if v > prev + 1e-10 * prev.abs().max(1.0) {
                self.monotone = false;
            }
            prev = v;
        }
        self.final_value = prev;
        self.history.push(prev);
        self.iterations_run += 1;
        Ok(())
    }
}

fn cpd_problem(c: &ProblemConfig) -> CpdProblem {
    match c.input {
        InputKind::Random => CpdProblem::random(&c.extents, c.ranks[0], c.seed),
        InputKind::Exact => CpdProblem::exact(&c.extents, c.ranks[0], c.seed, c.perturbation),
    }
}

fn bench_als(c: &ProblemConfig) -> Result<BenchReport> {
    let mut problem = cpd_problem(c);
    let solver = AlsSolver::new(&c.extents, c.ranks[0])?;
    let mut ex = solver.executor();
    let mut report = BenchReport::new(c, solver.loss(&problem)?);
    while report.iterations_run < c.iterations && report.final_value >= c.tolerance {
        let s = solver.sweep(&mut ex, &mut problem)?;
        report.push(&s.losses)?;
    }
    report.converged = report.final_value < c.tolerance;
    let estimate = solver.sweep_flop_estimate();
    let no_tree = als_no_tree_cost(&c.extents, c.ranks[0])?;
    report.flops = FlopReport {
        estimate,
        no_tree_estimate: Some(no_tree.flops),
        tree_ratio: Some(estimate as f64 / no_tree.flops as f64),
        input_estimate: Some(solver.input_flop_estimate()),
        no_tree_input_estimate: Some(no_tree.input_flops),
        executed: ex.stats().flops,
    };
    report.input_contractions = Some(solver.input_contractions());
    report.passes = solver.report.passes.clone();
    Ok(report)
}

fn bench_gn(c: &ProblemConfig) -> Result<BenchReport> {
    let mut problem = cpd_problem(c);
    let solver = GnSolver::new(&c.extents, c.ranks[0])?;
    let mut ex = solver.executor();
    let opts = GnOptions::default();
    let mut report = BenchReport::new(c, solver.loss(&mut ex, &problem)?);
    let mut cg = Vec::new();
    while report.iterations_run < c.iterations && report.final_value >= c.tolerance {
        let s = solver.step(&mut ex, &mut problem, &opts)?;
        cg.push(s.cg_iterations);
        if !s.cg_converged {
            report.warnings.push(format!(
                "iteration {}: CG did not converge in {} iterations, best iterate used",
                report.iterations_run + 1,
                s.cg_iterations
            ));
        }
        report.push(&[s.loss_after])?;
        if s.step == 0.0 {
            report.warnings.push(format!(
                "iteration {}: no step halving decreased the loss, stopping",
                report.iterations_run
            ));
            break;
        }
    }
    report.converged = report.final_value < c.tolerance;
    report.cg_iterations = Some(cg);
    report.flops = FlopReport {
        estimate: crate::optimizer::estimate_flops(&solver.graph, &solver.matvec),
        executed: ex.stats().flops,
        ..FlopReport::default()
    };
    report.passes = solver.report.passes.clone();
    Ok(report)
}

fn bench_tucker(c: &ProblemConfig) -> Result<BenchReport> {
    let ranks = c.tucker_ranks()?;
    let mut problem = match c.input {
        InputKind::Random => TuckerProblem::random(&c.extents, &ranks, c.seed)?,
        InputKind::Exact => TuckerProblem::exact(&c.extents, &ranks, c.seed)?,
    };
    let solver = TuckerSolver::new(&c.extents, &ranks)?;
    let mut ex = solver.executor();
    let mut report = BenchReport::new(c, solver.loss(&problem)?);
    let mut ortho = problem.orthonormality_error();
    while report.iterations_run < c.iterations && report.final_value >= c.tolerance {
        let before = report.final_value;
        let s = solver.sweep(&mut ex, &mut problem)?;
        ortho = ortho.max(problem.orthonormality_error());
        report.push(&s.losses)?;
        if (before - report.final_value).abs() < c.tolerance {
            break;
        }
    }
    report.converged = report.final_value < c.tolerance;
    let estimate = solver.sweep_flop_estimate();
    let no_tree = solver.no_tree_flop_estimate();
    report.flops = FlopReport {
        estimate,
        no_tree_estimate: Some(no_tree),
        tree_ratio: Some(estimate as f64 / no_tree as f64),
        input_estimate: Some(solver.input_flop_estimate()),
        no_tree_input_estimate: Some(solver.no_tree.input_flops),
        executed: ex.stats().flops,
    };
    report.input_contractions = Some(solver.input_contractions());
    report.orthonormality_error = Some(ortho);
    report.passes = solver.report.passes.clone();
    Ok(report)
}

fn bench_dmrg(c: &ProblemConfig) -> Result<BenchReport> {
    let mut problem = DmrgProblem::random(&c.extents, c.ranks[0], c.mps_rank, c.seed)?;
    let solver = DmrgSolver::new(&problem)?;
    let mut ex = solver.executor();
    problem.canonicalize()?;
    let mut stream = UniformStream::new(c.seed).substream("lanczos");
    let mut report = BenchReport::new(c, solver.rayleigh_quotient(&mut ex, &problem)?);
    let mut restarts = 0;
    while report.iterations_run < c.iterations {
        let before = report.final_value;
        let steps = dmrg_sweep_with(
            &solver,
            &mut ex,
            &mut problem,
            c.tolerance.min(1e-10),
            &mut stream,
        )?;
        restarts += steps.iter().map(|s| s.restarts).sum::<usize>();
        let values: Vec<f64> = steps.iter().map(|s| s.rayleigh).collect();
        report.push(&values)?;
        if (before - report.final_value).abs() < c.tolerance {
            report.converged = true;
            break;
        }
    }
    if restarts > 0 {
        report
            .warnings
            .push(format!("Lanczos restarted {restarts} times"));
    }
    if problem.total_dimension() <= DENSE_ORACLE_LIMIT {
        let exact = dense_smallest_eigenvalue(&problem.mpo);
        report.dense_eigenvalue = Some(exact);
        report.eigenvalue_error = Some((report.final_value - exact).abs());
    }
    report.flops = FlopReport {
        estimate: solver.hvp_flop_estimate(),
        executed: ex.stats().flops,
        ..FlopReport::default()
    };
    report.max_mpo_contractions = Some(solver.max_mpo_contractions());
    report.passes = solver.report.passes.clone();
    Ok(report)
}

/// Validates `config` and runs its method.
pub fn run_bench(config: &ProblemConfig) -> Result<BenchReport> {
    config.validate()?;
    match config.method {
        Method::CpdAls => bench_als(config),
        Method::CpdGn => bench_gn(config),
        Method::Tucker => bench_tucker(config),
        Method::Dmrg => bench_dmrg(config),
    }
}
