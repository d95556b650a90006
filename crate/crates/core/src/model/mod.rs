//! The network: per-graph input components, size unification, the shared
//! transformer core, mean fusion and per-graph output heads.

mod config;
mod forward;
mod layer;
mod posenc;
mod state;

use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, Residual};
pub use forward::{
    classify, classify_logits, embed_subgraph, encode, fuse, input_forward, link_logits, predict_proba,
    reconstruct, representations, universal_forward, unify, Encoded,
};
pub use layer::{g_transformer_layer, Groups, LayerOutput, LayerParams};
pub use posenc::position_embedding;
pub use state::{head_prefix, input_prefix, GraphSlot, Init, ModelState, CORE};

/// Training mode draws dropout masks from the given stream; eval mode is deterministic.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}
