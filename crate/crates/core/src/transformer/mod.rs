//! Encoder-decoder Transformer with encoder-decoder attention capture.

mod batch;
mod capture;
pub mod checkpoint;
mod config;
mod decoding;
mod model;

pub use batch::Batch;
pub use capture::{AttentionStack, Matrix};
pub use config::ModelConfig;
pub use decoding::{beam_search, greedy_search, Hypothesis};
pub use model::{multi_head_attention, AttentionWeights, Decoded, Encoded, Transformer};
