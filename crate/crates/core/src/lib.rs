//! Shallow-layer visual token pruning for causal decoders.
//!
//! The pipeline segments the visual prefix by frame similarity, scores visual tokens from
//! the last text token under a block-diagonal segment mask, removes the content-agnostic
//! positional component of those scores, keeps the top-K tokens and then refines them
//! segment by segment (pre-filter, deduplicate, post-fill).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, caches and the experiment
//! CLI live in the `sharp` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod error;
pub mod flops;
pub mod metrics;
pub mod model;
pub mod poscalib;
pub mod regdedup;
pub mod segmask;
pub mod sequence;
pub mod tensor;
pub mod videogen;

pub use error::{Error, Result};
pub use model::{init_model, AttentionMaskSpec, ModelConfig, ModelWeights};
pub use sequence::{ScoreVector, TokenSequence};
pub use tensor::{cosine_sim, Matrix};
