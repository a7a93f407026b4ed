//! The desk-scale causal decoder used for scoring and forwarding.

mod config;
mod decoder;
mod mask;
mod rope;

pub use config::ModelConfig;
pub use decoder::{
    attention_logits, attention_probs, init_model, LayerPass, LayerWeights, ModelWeights, PrefillOutput,
};
pub use mask::{AttentionMaskSpec, Span, MASKED_LOGIT};
pub use rope::{rope_apply, RopeTable};
