//! The context-augmented non-autoregressive generator and its critic.
//!
//! The generator turns a start/goal observation pair plus a latent noise
//! vector into per-step action logits: learnable queries (with the embedded
//! observations injected at the first and last position) pass through a stack
//! of decoder blocks whose cross-attention reads a learnable memory bank
//! shared across all samples, with the caption-supervised context tokens
//! appended to that memory so every plan query can attend to them. The
//! context tokens never occupy output positions. The critic scores a
//! flattened sequence of per-step action probabilities in (0, 1).

mod backward;
mod checkpoint;
mod config;
mod forward;
mod state;

pub use backward::{
    backward_caption_embedding, backward_context, backward_generator_sample,
    backward_observation_embedding, critic_backward, finish_shared_kv, SharedKvGrads,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{CriticConfig, GeneratorConfig};
pub use forward::{
    argmax_lowest, build_queries, compute_context, critic_forward, decoder_forward, embed_caption,
    embed_observation, generator_forward, positional_code, shared_kv, CapCache, ContextCache,
    CriticCache, DecoderCache, ForwardCaches, MlpCache, PlanSampler, QueryCache, SharedKv,
    NORM_EPS,
};
pub(crate) use forward::{critic_forward_cached, embed_caption_cached};
pub use state::{
    init_parameters, Attention, CriticParams, DecoderBlock, LayerNorm, Linear, Mlp2, ModelState,
    Params,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what}: expected dimension {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("horizon {horizon} outside supported range 1..={max}")]
    HorizonOutOfRange { horizon: usize, max: usize },
    #[error("critic input row {row} is not in the probability simplex: {detail}")]
    NotInSimplex { row: usize, detail: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}
