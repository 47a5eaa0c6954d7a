//! The CP, Tucker and DMRG objectives used by the derivative checks, and
//! dense helpers for comparing derivative actions.

use einad_core::autodiff::gradients;
use einad_core::methods::cpd::cpd_graph;
use einad_core::methods::dmrg::{dmrg_graph, mps_name};
use einad_core::methods::tucker::tucker_graph;
use einad_core::{DenseTensor, FeedDict, Graph, NodeId, UniformStream};

use super::eval1;

pub const SEEDS: u64 = 20;
pub const FD_TOL: f64 = 1e-4;
pub const EXACT_TOL: f64 = 1e-10;
pub const H: f64 = 1e-5;

pub struct Problem {
    pub name: &'static str,
    pub graph: Graph,
    /// Scalar objective.
    pub objective: NodeId,
    /// A tensor-valued intermediate, for Jacobian products.
    pub tensor: NodeId,
    pub vars: Vec<(String, NodeId)>,
}

pub fn cpd() -> Problem {
    let mut g = Graph::new();
    let c = cpd_graph(&mut g, &[3, 2, 3], 2).unwrap();
    let vars = c
        .factors
        .iter()
        .enumerate()
        .map(|(k, &a)| (format!("A{k}"), a))
        .collect();
    Problem {
        name: "cpd",
        graph: g,
        objective: c.loss,
        tensor: c.reconstruction,
        vars,
    }
}

pub fn tucker() -> Problem {
    let mut g = Graph::new();
    let t = tucker_graph(&mut g, &[3, 3, 2], &[2, 2, 2]).unwrap();
    let vars = t
        .factors
        .iter()
        .enumerate()
        .map(|(k, &a)| (format!("A{k}"), a))
        .collect();
    Problem {
        name: "tucker",
        graph: g,
        objective: t.loss,
        tensor: t.core,
        vars,
    }
}

pub fn dmrg() -> Problem {
    let mut g = Graph::new();
    let d = dmrg_graph(&mut g, &[2, 2, 2], &[1, 2, 2, 1], &[1, 2, 2, 1]).unwrap();
    let tensor = gradients(&mut g, d.numerator, &[d.mps[1]]).unwrap()[0];
    let vars = d
        .mps
        .iter()
        .enumerate()
        .map(|(k, &v)| (mps_name(k), v))
        .collect();
    Problem {
        name: "dmrg",
        graph: g,
        objective: d.objective,
        tensor,
        vars,
    }
}

pub fn problems() -> Vec<Problem> {
    vec![cpd(), tucker(), dmrg()]
}

/// `J v` for an explicit Jacobian `J` of shape `out ++ var`.
pub fn jac_times(j: &DenseTensor, v: &DenseTensor) -> Vec<f64> {
    let n = v.len();
    j.data()
        .chunks(n)
        .map(|row| row.iter().zip(v.data()).map(|(a, b)| a * b).sum())
        .collect()
}

/// `uᵀ J`.
pub fn times_jac(u: &DenseTensor, j: &DenseTensor) -> Vec<f64> {
    let n = j.len() / u.len();
    let mut out = vec![0.0; n];
    for (row, &ui) in j.data().chunks(n).zip(u.data()) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += ui * x;
        }
    }
    out
}

pub fn rel(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

pub fn direction(shape: &[usize], seed: u64, name: &str) -> DenseTensor {
    DenseTensor::random(shape, &mut UniformStream::new(seed).substream(name))
}

/// Central difference of `output` along `v` in variable `var`.
pub fn fd_directional(
    g: &Graph,
    feed: &FeedDict,
    output: NodeId,
    var: &str,
    v: &DenseTensor,
) -> DenseTensor {
    let mut f = feed.clone();
    let mut plus = feed[var].clone();
    plus.axpy(H, v);
    f.insert(var.to_string(), plus);
    let up = eval1(g, &f, output);
    let mut minus = feed[var].clone();
    minus.axpy(-H, v);
    f.insert(var.to_string(), minus);
    let down = eval1(g, &f, output);
    up.zip_with(&down, |a, b| (a - b) / (2.0 * H)).unwrap()
}
