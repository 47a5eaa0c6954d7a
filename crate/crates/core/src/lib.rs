//! Symbolic differentiation and optimization of einsum graphs.
//!
//! Expressions are built as hash-consed graphs of dense tensor operations
//! whose only contraction primitive is `einsum`. [`autodiff`] turns them into
//! derivative graphs, [`optimizer`] rewrites those graphs into cheaper
//! equivalent ones and [`executor`] evaluates them.

pub mod autodiff;
pub mod driver;
pub mod error;
pub mod executor;
pub mod graph;
pub mod methods;
pub mod optimizer;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use executor::{run, Executor, FeedDict};
pub use graph::{EinsumSpec, Graph, Label, NodeId, Op};
pub use rng::UniformStream;
pub use tensor::DenseTensor;
