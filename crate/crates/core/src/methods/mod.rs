//! Tensor-method drivers built only from autodiff and optimizer output.

pub mod bench;
pub mod config;
pub mod cpd;
pub mod dmrg;
pub mod gn;
pub mod linalg;
pub mod tucker;

pub use bench::{run_bench, BenchReport};
pub use config::{InputKind, Method, ProblemConfig};
