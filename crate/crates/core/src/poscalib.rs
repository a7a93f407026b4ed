//! Positional-bias calibration.
//!
//! A probe sequence whose visual tokens are all the homogeneous token is scored exactly like
//! a production sequence. Whatever structure its score vector has comes from positional
//! encoding alone, so it is subtracted (scaled by `lambda`) from real scores before ranking.
//! Only the ranking changes; hidden states are never touched.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{AttentionMaskSpec, ModelWeights};
use crate::sequence::{ScoreVector, TokenSequence};
use crate::tensor::{fnv1a_bytes, Matrix, FNV_OFFSET};
use crate::videogen::homogeneous_like;

/// Identifies the exact scoring topology a profile was measured under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProfileKey {
    pub visual_len: usize,
    pub text_len: usize,
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub prune_layer: usize,
    pub mask_signature: u64,
    /// Fingerprint of the prompt tokens used in the probe.
    pub text_signature: u64,
    pub weight_checksum: u64,
}

impl ProfileKey {
    pub fn for_sequence(weights: &ModelWeights, seq: &TokenSequence, mask: &AttentionMaskSpec) -> Self {
        Self {
            visual_len: seq.visual_len(),
            text_len: seq.text_len(),
            frames: seq.frames(),
            tokens_per_frame: seq.tokens_per_frame(),
            prune_layer: weights.config().prune_layer,
            mask_signature: mask.signature(),
            text_signature: text_signature(seq.text()),
            weight_checksum: weights.checksum(),
        }
    }

    /// Single 64-bit digest of the whole key, used for file names.
    pub fn digest(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for v in [
            self.visual_len as u64,
            self.text_len as u64,
            self.frames as u64,
            self.tokens_per_frame as u64,
            self.prune_layer as u64,
            self.mask_signature,
            self.text_signature,
            self.weight_checksum,
        ] {
            h = fnv1a_bytes(h, &v.to_le_bytes());
        }
        h
    }
}

pub fn text_signature(text: &Matrix) -> u64 {
    let h = fnv1a_bytes(FNV_OFFSET, &(text.rows() as u64).to_le_bytes());
    text.fold_checksum(h)
}

/// Per-visual-position bias `b_i` measured on the homogeneous probe.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasProfile {
    pub bias: Vec<f32>,
    pub key: ProfileKey,
}

impl BiasProfile {
    pub fn len(&self) -> usize {
        self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias.is_empty()
    }

    pub fn spread(&self) -> f32 {
        let max = self.bias.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let min = self.bias.iter().copied().fold(f32::INFINITY, f32::min);
        max - min
    }
}

/// Scores the homogeneous counterpart of `seq` (same layout, same prompt) under `mask`.
pub fn estimate_bias(weights: &ModelWeights, seq: &TokenSequence, mask: &AttentionMaskSpec) -> Result<BiasProfile> {
    if mask.len() != seq.len() {
        return Err(Error::LayoutMismatch);
    }
    let probe = homogeneous_like(seq)?;
    let (_, scores) = weights.score_prefix(&probe, mask)?;
    Ok(BiasProfile {
        bias: scores.values,
        key: ProfileKey::for_sequence(weights, seq, mask),
    })
}

/// `scores - lambda * bias`, element-wise.
pub fn debias(scores: &ScoreVector, profile: &BiasProfile, lambda: f32) -> Result<ScoreVector> {
    if scores.len() != profile.len() || scores.layer != profile.key.prune_layer {
        return Err(Error::LayoutMismatch);
    }
    Ok(ScoreVector {
        values: scores
            .values
            .iter()
            .zip(&profile.bias)
            .map(|(s, b)| s - lambda * b)
            .collect(),
        layer: scores.layer,
        debiased: true,
    })
}

/// Source of bias profiles; implementations may cache.
///
/// `Sync` implementations can be shared by parallel trials.
pub trait ProfileStore {
    fn lookup(&self, key: &ProfileKey) -> Option<BiasProfile>;
    fn insert(&self, profile: &BiasProfile);
}

/// Never caches; every lookup misses.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCache;

impl ProfileStore for NoCache {
    fn lookup(&self, _key: &ProfileKey) -> Option<BiasProfile> {
        None
    }

    fn insert(&self, _profile: &BiasProfile) {}
}

/// Returns the cached profile for this scoring setup, estimating and storing it on a miss.
pub fn profile_for(
    store: &dyn ProfileStore,
    weights: &ModelWeights,
    seq: &TokenSequence,
    mask: &AttentionMaskSpec,
) -> Result<BiasProfile> {
    let key = ProfileKey::for_sequence(weights, seq, mask);
    if let Some(p) = store.lookup(&key) {
        if p.key == key && p.len() == seq.visual_len() {
            return Ok(p);
        }
    }
    let p = estimate_bias(weights, seq, mask)?;
    store.insert(&p);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::videogen::homogeneous;

    fn setup() -> (ModelWeights, TokenSequence, AttentionMaskSpec) {
        let cfg = ModelConfig::default();
        let w = init_model(&cfg).unwrap();
        let seq = homogeneous(8, 4, 4, &cfg).unwrap();
        let mask = AttentionMaskSpec::causal(seq.len());
        (w, seq, mask)
    }

    #[test]
    fn profile_shape_and_determinism() {
        let (w, seq, mask) = setup();
        let a = estimate_bias(&w, &seq, &mask).unwrap();
        let b = estimate_bias(&w, &seq, &mask).unwrap();
        assert_eq!(a.len(), 32);
        assert_eq!(a, b);
        assert!(a.spread() > 0.0);
    }

    #[test]
    fn lambda_zero_is_identity() {
        let (w, seq, mask) = setup();
        let p = estimate_bias(&w, &seq, &mask).unwrap();
        let (_, s) = w.score_prefix(&seq, &mask).unwrap();
        let out = debias(&s, &p, 0.0).unwrap();
        assert_eq!(out.values, s.values);
        assert!(out.debiased);
    }

    #[test]
    fn homogeneous_scores_cancel() {
        let (w, seq, mask) = setup();
        let p = estimate_bias(&w, &seq, &mask).unwrap();
        let (_, s) = w.score_prefix(&seq, &mask).unwrap();
        let out = debias(&s, &p, 1.0).unwrap();
        assert!(out.values.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let (w, seq, mask) = setup();
        let p = estimate_bias(&w, &seq, &mask).unwrap();
        let short = ScoreVector {
            values: alloc::vec![0.0; 31],
            layer: 1,
            debiased: false,
        };
        assert_eq!(debias(&short, &p, 0.6).unwrap_err(), Error::LayoutMismatch);
        let wrong_layer = ScoreVector {
            values: alloc::vec![0.0; 32],
            layer: 2,
            debiased: false,
        };
        assert_eq!(debias(&wrong_layer, &p, 0.6).unwrap_err(), Error::LayoutMismatch);
        assert_eq!(
            estimate_bias(&w, &seq, &AttentionMaskSpec::causal(10)).unwrap_err(),
            Error::LayoutMismatch
        );
    }

    #[test]
    fn lambda_is_additive() {
        let (w, seq, mask) = setup();
        let p = estimate_bias(&w, &seq, &mask).unwrap();
        let s = ScoreVector {
            values: (0..32).map(|i| i as f32 * 0.25 - 3.0).collect(),
            layer: 1,
            debiased: false,
        };
        let once = debias(&s, &p, 0.9).unwrap();
        let twice = debias(&debias(&s, &p, 0.4).unwrap(), &p, 0.5).unwrap();
        for (a, b) in once.values.iter().zip(&twice.values) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
