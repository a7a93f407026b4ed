use alloc::format;

use crate::error::{Error, Result};

/// Shape and seeding of the toy decoder.
///
/// Layer numbers are 1-based throughout the crate: `prune_layer = 1` is the first decoder
/// layer, which is where scores are read and tokens are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub rope_base: f32,
    pub weight_seed: u64,
    pub prune_layer: usize,
    /// Use one projection for queries and keys. Random independent projections have no
    /// preferred query/key phase, so RoPE produces no systematic distance decay; tying them
    /// makes the long-range decay (and therefore the end-of-sequence bias) appear.
    pub shared_qk: bool,
}

impl ModelConfig {
    pub fn new(num_layers: usize, num_heads: usize, head_dim: usize, ffn_dim: usize) -> Self {
        Self {
            num_layers,
            num_heads,
            head_dim,
            hidden_dim: num_heads * head_dim,
            ffn_dim,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.weight_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.head_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(format!(
                "all dimensions must be positive (layers={}, heads={}, head_dim={}, ffn_dim={})",
                self.num_layers, self.num_heads, self.head_dim, self.ffn_dim
            )));
        }
        if self.hidden_dim != self.num_heads * self.head_dim {
            return Err(Error::Config(format!(
                "hidden_dim {} must equal num_heads {} x head_dim {}",
                self.hidden_dim, self.num_heads, self.head_dim
            )));
        }
        if self.head_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "head_dim {} must be even for rotary pairs",
                self.head_dim
            )));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return Err(Error::Config(format!("rope_base {} must be positive", self.rope_base)));
        }
        if self.prune_layer == 0 || self.prune_layer > self.num_layers {
            return Err(Error::Config(format!(
                "prune_layer {} must be in 1..={}",
                self.prune_layer, self.num_layers
            )));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    /// The desk-scale toy model: 4 layers, 4 heads of width 16.
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            head_dim: 16,
            hidden_dim: 64,
            ffn_dim: 128,
            rope_base: 10_000.0,
            weight_seed: 7,
            prune_layer: 1,
            shared_qk: true,
        }
    }
}
