//! Rotary positional encoding.
//!
//! Each head's channels are rotated in adjacent pairs `(2k, 2k + 1)` by the angle
//! `position * base^(-2k / head_dim)`. Angles and the rotation itself are evaluated in
//! `f64`, so relative-position invariance holds to `f32` output rounding even at large
//! positions.

use alloc::vec::Vec;

use super::config::ModelConfig;

/// Inverse frequencies for one head, shared across heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeTable {
    num_heads: usize,
    head_dim: usize,
    inv_freq: Vec<f64>,
}

impl RopeTable {
    pub fn new(config: &ModelConfig) -> Self {
        let half = config.head_dim / 2;
        let base = config.rope_base as f64;
        let inv_freq = (0..half)
            .map(|k| libm::pow(base, -(2.0 * k as f64) / config.head_dim as f64))
            .collect();
        Self {
            num_heads: config.num_heads,
            head_dim: config.head_dim,
            inv_freq,
        }
    }

    pub fn inv_freq(&self) -> &[f64] {
        &self.inv_freq
    }

    /// Rotates a full hidden-width vector in place.
    pub fn rotate_in_place(&self, vec: &mut [f32], position: usize) {
        debug_assert_eq!(vec.len(), self.num_heads * self.head_dim);
        let pos = position as f64;
        for (k, &f) in self.inv_freq.iter().enumerate() {
            let (s, c) = libm::sincos(pos * f);
            for h in 0..self.num_heads {
                let i = h * self.head_dim + 2 * k;
                let x0 = vec[i] as f64;
                let x1 = vec[i + 1] as f64;
                vec[i] = (x0 * c - x1 * s) as f32;
                vec[i + 1] = (x0 * s + x1 * c) as f32;
            }
        }
    }

    pub fn rotate(&self, vec: &[f32], position: usize) -> Vec<f32> {
        let mut out = vec.to_vec();
        self.rotate_in_place(&mut out, position);
        out
    }
}

/// Returns `R_position * vec` for a hidden-width vector.
pub fn rope_apply(vec: &[f32], position: usize, config: &ModelConfig) -> Vec<f32> {
    RopeTable::new(config).rotate(vec, position)
}
