//! Whole-graph entry points behind the command-line tool: building derivative
//! graphs over named sinks, random feeds and evaluation of named outputs.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{gradients, hessian, hvp, jacobian, jvp, vjp};
use crate::error::{Error, Result};
use crate::executor::{Executor, FeedDict};
use crate::graph::{Graph, NodeId};
use crate::rng::UniformStream;
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeriveMode {
    Grad,
    Jacobian,
    Hessian,
    Hvp,
    Jvp,
    Vjp,
}

impl DeriveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeriveMode::Grad => "grad",
            DeriveMode::Jacobian => "jacobian",
            DeriveMode::Hessian => "hessian",
            DeriveMode::Hvp => "hvp",
            DeriveMode::Jvp => "jvp",
            DeriveMode::Vjp => "vjp",
        }
    }
}

impl fmt::Display for DeriveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeriveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grad" => DeriveMode::Grad,
            "jacobian" => DeriveMode::Jacobian,
            "hessian" => DeriveMode::Hessian,
            "hvp" => DeriveMode::Hvp,
            "jvp" => DeriveMode::Jvp,
            "vjp" => DeriveMode::Vjp,
            other => {
                return Err(Error::Precondition(format!(
                    "unknown derivative mode `{other}`"
                )))
            }
        })
    }
}

/// Name of the direction variable `derive` introduces for `hvp`/`jvp` in
/// `wrt`, and for `vjp` of sink `of`.
pub fn direction_name(mode: DeriveMode, name: &str) -> String {
    match mode {
        DeriveMode::Vjp => format!("cot_{name}"),
        _ => format!("dir_{name}"),
    }
}

/// The sink `of`, or the only sink when `of` is `None`.
pub fn select_sink(g: &Graph, of: Option<&str>) -> Result<(String, NodeId)> {
    match of {
        Some(name) => g
            .sink(name)
            .map(|n| (name.to_string(), n))
            .ok_or_else(|| Error::Precondition(format!("graph has no output `{name}`"))),
        None => match g.sinks() {
            [s] => Ok((s.name.clone(), s.node)),
            [] => Err(Error::Precondition("graph has no outputs".into())),
            many => Err(Error::Precondition(format!(
                "graph has {} outputs, choose one of: {}",
                many.len(),
                many.iter()
                    .map(|s| s.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
        },
    }
}

/// Builds a graph whose sinks are the requested derivatives of sink `of`
/// with respect to the variables `wrt` (all variables, by name, if empty).
///
/// Sinks are named `grad_x`, `jac_x`, `hess_x_y`, `hvp_x`, `jvp_x` and
/// `vjp_x`. Product modes add direction variables, see [`direction_name`].
pub fn derive(g: &Graph, mode: DeriveMode, of: Option<&str>, wrt: &[String]) -> Result<Graph> {
    let (out_name, out) = select_sink(g, of)?;
    let mut names: Vec<String> = wrt.to_vec();
    if names.is_empty() {
        names = g.variables().map(|(n, _)| n.to_string()).collect();
        names.sort();
    }
    let vars = names
        .iter()
        .map(|n| {
            g.variable_named(n)
                .ok_or_else(|| Error::UnknownVariable(n.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    if matches!(
        mode,
        DeriveMode::Grad | DeriveMode::Hessian | DeriveMode::Hvp
    ) && !g.shape(out).is_empty()
    {
        return Err(Error::Precondition(format!(
            "{mode} needs a scalar output, `{out_name}` has shape {:?}",
            g.shape(out)
        )));
    }
    let mut d = g.clone();
    d.clear_sinks();
    match mode {
        DeriveMode::Grad => {
            for (n, x) in names.iter().zip(gradients(&mut d, out, &vars)?) {
                d.set_sink(&format!("grad_{n}"), x);
            }
        }
        DeriveMode::Jacobian => {
            for (n, x) in names.iter().zip(jacobian(&mut d, out, &vars)?) {
                d.set_sink(&format!("jac_{n}"), x);
            }
        }
        DeriveMode::Hessian => {
            let blocks = hessian(&mut d, out, &vars)?;
            for (ni, row) in names.iter().zip(blocks) {
                for (nj, x) in names.iter().zip(row) {
                    d.set_sink(&format!("hess_{ni}_{nj}"), x);
                }
            }
        }
        DeriveMode::Hvp | DeriveMode::Jvp => {
            for (n, &x) in names.iter().zip(&vars) {
                let shape = d.shape(x).to_vec();
                let v = fresh_variable(&mut d, &direction_name(mode, n), &shape)?;
                let r = if mode == DeriveMode::Hvp {
                    hvp(&mut d, out, x, v)?
                } else {
                    jvp(&mut d, v, out, x)?
                };
                d.set_sink(&format!("{mode}_{n}"), r);
            }
        }
        DeriveMode::Vjp => {
            let shape = d.shape(out).to_vec();
            let u = fresh_variable(&mut d, &direction_name(mode, &out_name), &shape)?;
            for (n, &x) in names.iter().zip(&vars) {
                let r = vjp(&mut d, u, out, x)?;
                d.set_sink(&format!("vjp_{n}"), r);
            }
        }
    }
    Ok(d.compact())
}

fn fresh_variable(g: &mut Graph, name: &str, shape: &[usize]) -> Result<NodeId> {
    if g.variable_named(name).is_some() {
        return Err(Error::Precondition(format!(
            "direction variable `{name}` clashes with an existing variable"
        )));
    }
    g.variable(name, shape)
}

/// Random feeds for every variable of `g` not already in `given`. Entries of
/// variable `x` come from substream `x` of `seed`.
pub fn random_feed(g: &Graph, seed: u64, given: &FeedDict) -> FeedDict {
    let root = UniformStream::new(seed);
    let mut feed = given.clone();
    for (name, id) in g.variables() {
        if !feed.contains_key(name) {
            let t = DenseTensor::random(g.shape(id), &mut root.substream(name));
            feed.insert(name.to_string(), t);
        }
    }
    feed
}

/// Evaluates the named sinks (all sinks if `outputs` is empty). Returns the
/// values and the flops of the executed contraction plans.
pub fn evaluate(
    g: &Graph,
    feed: &FeedDict,
    outputs: &[String],
) -> Result<(Vec<(String, DenseTensor)>, u64)> {
    let names: Vec<String> = if outputs.is_empty() {
        g.sinks().iter().map(|s| s.name.clone()).collect()
    } else {
        outputs.to_vec()
    };
    let nodes = names
        .iter()
        .map(|n| {
            g.sink(n)
                .ok_or_else(|| Error::Precondition(format!("graph has no output `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ex = Executor::new(g);
    let values = ex.run(feed, &nodes)?;
    Ok((names.into_iter().zip(values).collect(), ex.stats().flops))
}
