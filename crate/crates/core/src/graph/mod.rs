//! Input graphs: loading, splits and label-sparsity sampling.

mod dataset;
mod loader;
mod split;
pub mod synthetic;

pub use dataset::{GraphDataset, MultiSourceSet, SplitName, Splits};
pub use loader::{load_citation_graph, parse_citation_graph};
pub use split::{make_split, sample_training_ratio, SplitPolicy};
