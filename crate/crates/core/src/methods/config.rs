//! Problem configuration files for the benchmark drivers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CpdAls,
    CpdGn,
    Tucker,
    Dmrg,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::CpdAls => "cpd-als",
            Method::CpdGn => "cpd-gn",
            Method::Tucker => "tucker",
            Method::Dmrg => "dmrg",
        }
    }
}

/// How the input tensor of a decomposition is generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// Uniform(−1, 1) entries.
    #[default]
    Random,
    /// Exactly representable at the requested ranks.
    Exact,
}

fn default_iterations() -> usize {
    50
}

fn default_tolerance() -> f64 {
    1e-10
}

fn default_perturbation() -> f64 {
    0.1
}

/// A benchmark problem. The order (or number of sites) is the length of
/// `extents`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub method: Method,
    /// Mode extents, or physical extents per site for DMRG.
    pub extents: Vec<usize>,
    /// CP rank, Tucker ranks (one per mode, or one for all) or MPO rank.
    pub ranks: Vec<usize>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub input: InputKind,
    /// Noise on the true factors when starting CP from an exact input.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    /// Cap on the MPS bond dimension; exact bonds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mps_rank: Option<usize>,
}

impl ProblemConfig {
    pub fn new(method: Method, extents: Vec<usize>, ranks: Vec<usize>) -> Self {
        ProblemConfig {
            method,
            extents,
            ranks,
            iterations: default_iterations(),
            seed: 0,
            tolerance: default_tolerance(),
            input: InputKind::Random,
            perturbation: default_perturbation(),
            mps_rank: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ProblemConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.extents.is_empty() || self.extents.contains(&0) {
            return Err(Error::invalid(
                "extents must be a non-empty list of positive integers",
            ));
        }
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return Err(Error::invalid(
                "ranks must be a non-empty list of positive integers",
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !self.perturbation.is_finite() || self.perturbation < 0.0 {
            return Err(Error::invalid("perturbation must be non-negative"));
        }
        match self.method {
            Method::CpdAls | Method::CpdGn | Method::Dmrg if self.ranks.len() != 1 => {
                Err(Error::invalid(format!(
                    "{} takes a single rank, got {}",
                    self.method.as_str(),
                    self.ranks.len()
                )))
            }
            Method::Tucker => {
                let ranks = self.tucker_ranks()?;
                for (&s, &r) in self.extents.iter().zip(&ranks) {
                    if r > s {
                        return Err(Error::invalid(format!(
                            "Tucker rank {r} exceeds extent {s}"
                        )));
                    }
                }
                Ok(())
            }
            Method::Dmrg if self.input == InputKind::Exact => {
                Err(Error::invalid("dmrg has no exact input mode"))
            }
            _ => Ok(()),
        }
    }

    /// Per-mode Tucker ranks, broadcasting a single entry.
    pub fn tucker_ranks(&self) -> Result<Vec<usize>> {
        match self.ranks.len() {
            1 => Ok(vec![self.ranks[0]; self.extents.len()]),
            n if n == self.extents.len() => Ok(self.ranks.clone()),
            n => Err(Error::invalid(format!(
                "Tucker needs 1 or {} ranks, got {n}",
                self.extents.len()
            ))),
        }
    }
}
