use crate::error::{bail, Result};

/// Transformer hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Source embedding, target embedding and output projection share one table.
    pub shared_embeddings: bool,
    pub max_positions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            d_emb: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            dropout: 0.1,
            shared_embeddings: true,
            max_positions: 256,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_emb / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.d_emb == 0
            || self.n_layers == 0
            || self.n_heads == 0
            || self.d_ff == 0
            || self.max_positions == 0
        {
            bail!(Parameter, "model dimensions must be positive: {self:?}");
        }
        if self.d_emb % self.n_heads != 0 {
            bail!(Parameter, "d_emb {} is not divisible by {} heads", self.d_emb, self.n_heads);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Parameter, "dropout {} outside [0, 1)", self.dropout);
        }
        Ok(())
    }
}
