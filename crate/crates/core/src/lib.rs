//! Multi-graph transformer representation learning.
//!
//! Each input graph gets its own input component (raw-feature and positional
//! embeddings followed by graph-transformer layers). Every graph feeds a single
//! shared transformer core through a size-unification step, and the core's
//! output is mean-fused into one vector per node. Per-graph heads handle
//! attribute reconstruction, link recovery and node classification. A core
//! pretrained on labelled graphs can be transferred to a sparsely labelled
//! graph, or used to reason about labels on a graph with none at all.

pub mod apocalypse;
pub mod cli;
pub mod error;
pub mod graph;
pub mod io;
pub mod model;
pub mod preprocess;
pub mod training;
pub mod tensor;

pub use error::{G5Error, Result};
