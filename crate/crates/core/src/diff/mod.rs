//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is a define-by-run tape: every op evaluates eagerly, checks its
//! output for non-finite values, and records its parents. [`Graph::backward`]
//! walks the tape once in reverse creation order, which is a reverse
//! topological order by construction.

mod array;
mod check;
mod conv;
mod graph;
mod optim;
mod params;

pub use array::Array;
pub use check::{check_gradients, check_gradients_at, GraphFn};
pub use conv::{Conv2d, PadMode};
pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamState, OptimMode, OptimizerConfig};
pub use params::{ParamVector, Segment};
