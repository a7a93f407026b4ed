//! Synthetic video-token sequences with known scene structure.
//!
//! Every token (visual and text) carries a shared offset along the all-ones direction, the
//! same direction the homogeneous "black frame" token uses. Visual tokens add a per-scene
//! center plus Gaussian noise; text tokens add seeded Gaussian content.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::segmask::SegmentPartition;
use crate::sequence::TokenSequence;
use crate::tensor::{cosine_sim, norm, Matrix};

/// Per-component value of the homogeneous token.
pub const HOMOGENEOUS_LEVEL: f32 = 0.1;

/// Upper bound on the cosine similarity between consecutive scene centers.
pub const MAX_CONSECUTIVE_CENTER_COS: f32 = 0.5;

pub const DEFAULT_SHARED_OFFSET: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub frames: usize,
    pub center_seed: u64,
}

/// A planted token at `slot` of `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeedleSpec {
    pub frame: usize,
    pub slot: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub scenes: Vec<SceneSpec>,
    pub tokens_per_frame: usize,
    pub noise_sigma: f32,
    pub needles: Vec<NeedleSpec>,
    pub text_len: usize,
    pub data_seed: u64,
    /// Per-component value of the offset shared by all tokens.
    pub shared_offset: f32,
}

impl SyntheticSpec {
    /// `scenes` scenes of `frames_per_scene` frames each, center seeds derived from `data_seed`.
    pub fn uniform(scenes: usize, frames_per_scene: usize, tokens_per_frame: usize, noise_sigma: f32, text_len: usize, data_seed: u64) -> Self {
        Self {
            scenes: (0..scenes)
                .map(|s| SceneSpec {
                    frames: frames_per_scene,
                    center_seed: data_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(s as u64 + 1),
                })
                .collect(),
            tokens_per_frame,
            noise_sigma,
            needles: Vec::new(),
            text_len,
            data_seed,
            shared_offset: DEFAULT_SHARED_OFFSET,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.scenes.iter().map(|s| s.frames).sum()
    }

    pub fn visual_len(&self) -> usize {
        self.total_frames() * self.tokens_per_frame
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes.is_empty() {
            return Err(Error::Empty("synthetic spec has no scenes"));
        }
        if self.scenes.iter().any(|s| s.frames == 0) || self.tokens_per_frame == 0 {
            return Err(Error::Empty("scenes need frames and frames need tokens"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(alloc::format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        let frames = self.total_frames();
        for n in &self.needles {
            if n.frame >= frames {
                return Err(Error::OutOfRange {
                    what: "needle frame",
                    value: n.frame,
                    min: 0,
                    max: frames - 1,
                });
            }
            if n.slot >= self.tokens_per_frame {
                return Err(Error::OutOfRange {
                    what: "needle slot",
                    value: n.slot,
                    min: 0,
                    max: self.tokens_per_frame - 1,
                });
            }
        }
        Ok(())
    }
}

/// A generated sequence with its oracle scene partition and needle positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub sequence: TokenSequence,
    pub truth: SegmentPartition,
    /// Visual indices of planted tokens, ascending.
    pub needles: Vec<usize>,
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn scene_center(seed: u64, attempt: u64, d: usize, offset: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0xd1b5_4a32_d192_ed03));
    normal_vec(&mut rng, d).into_iter().map(|x| x + offset).collect()
}

pub fn generate(spec: &SyntheticSpec, config: &ModelConfig) -> Result<SyntheticVideo> {
    spec.validate()?;
    let d = config.hidden_dim;
    let p = spec.tokens_per_frame;
    let frames = spec.total_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.data_seed);

    let mut centers: Vec<Vec<f32>> = Vec::with_capacity(spec.scenes.len());
    for scene in &spec.scenes {
        let mut attempt = 0u64;
        let center = loop {
            let c = scene_center(scene.center_seed, attempt, d, spec.shared_offset);
            let ok = match centers.last() {
                Some(prev) => cosine_sim(prev, &c)? < MAX_CONSECUTIVE_CENTER_COS,
                None => true,
            };
            if ok {
                break c;
            }
            attempt += 1;
        };
        centers.push(center);
    }

    let mut visual = Matrix::zeros(frames * p, d);
    let mut boundaries = Vec::with_capacity(spec.scenes.len() - 1);
    let mut frame = 0usize;
    for (scene, center) in spec.scenes.iter().zip(&centers) {
        if frame > 0 {
            boundaries.push(frame);
        }
        for f in frame..frame + scene.frames {
            for t in 0..p {
                let row = visual.row_mut(f * p + t);
                for (x, &c) in row.iter_mut().zip(center) {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    *x = c + spec.noise_sigma * z;
                }
            }
        }
        frame += scene.frames;
    }

    let mut needles = Vec::with_capacity(spec.needles.len());
    for n in &spec.needles {
        let idx = n.frame * p + n.slot;
        let mut nrng = ChaCha8Rng::seed_from_u64(n.seed);
        let dir = normal_vec(&mut nrng, d);
        let row = visual.row_mut(idx);
        let scale = norm(row) / norm(&dir);
        for (x, v) in row.iter_mut().zip(dir) {
            *x = v * scale;
        }
        needles.push(idx);
    }
    needles.sort_unstable();
    needles.dedup();

    let mut text = Matrix::zeros(spec.text_len, d);
    for i in 0..spec.text_len {
        for x in text.row_mut(i) {
            let z: f32 = StandardNormal.sample(&mut rng);
            *x = spec.shared_offset + z;
        }
    }

    Ok(SyntheticVideo {
        sequence: TokenSequence::new(visual, text, frames, p)?,
        truth: SegmentPartition::from_boundaries(boundaries, frames, p)?,
        needles,
    })
}

/// The information-free token: every component equal to [`HOMOGENEOUS_LEVEL`].
pub fn homogeneous_token(dim: usize) -> Vec<f32> {
    vec![HOMOGENEOUS_LEVEL; dim]
}

/// A "black" video with a blank prompt: every visual and text token is the homogeneous token.
pub fn homogeneous(frames: usize, tokens_per_frame: usize, text_len: usize, config: &ModelConfig) -> Result<TokenSequence> {
    if frames == 0 || tokens_per_frame == 0 || text_len == 0 {
        return Err(Error::Empty("homogeneous sequence needs frames, tokens and text"));
    }
    let d = config.hidden_dim;
    let tok = homogeneous_token(d);
    let visual = Matrix::from_vec(frames * tokens_per_frame, d, tok.repeat(frames * tokens_per_frame))?;
    let text = Matrix::from_vec(text_len, d, tok.repeat(text_len))?;
    TokenSequence::new(visual, text, frames, tokens_per_frame)
}

/// Homogeneous visual tokens under the text of `seq`.
pub fn homogeneous_like(seq: &TokenSequence) -> Result<TokenSequence> {
    let d = seq.dim();
    let n_v = seq.visual_len();
    let visual = Matrix::from_vec(n_v, d, homogeneous_token(d).repeat(n_v))?;
    TokenSequence::new(visual, seq.text().clone(), seq.frames(), seq.tokens_per_frame())
}

/// Overwrites the visual tokens at `positions` with `query_align`, rescaled to the norm of the
/// token being replaced.
pub fn plant_needle(seq: &TokenSequence, positions: &[usize], query_align: &[f32]) -> Result<TokenSequence> {
    let mut out = seq.clone();
    if positions.is_empty() {
        return Ok(out);
    }
    if query_align.len() != seq.dim() {
        return Err(Error::Shape {
            what: "needle direction",
            expected: seq.dim(),
            got: query_align.len(),
        });
    }
    let qn = norm(query_align);
    if qn == 0.0 {
        return Err(Error::DegenerateVector);
    }
    let n_v = seq.visual_len();
    for &p in positions {
        if p >= n_v {
            return Err(Error::OutOfRange {
                what: "needle position",
                value: p,
                min: 0,
                max: n_v.saturating_sub(1),
            });
        }
        let row = out.visual_mut().row_mut(p);
        let mut scale = norm(row) / qn;
        if scale == 0.0 || !scale.is_finite() {
            scale = 1.0;
        }
        for (x, &q) in row.iter_mut().zip(query_align) {
            *x = q * scale;
        }
    }
    Ok(out)
}

/// Input-space direction that maximises the prune-layer logit between the last text token
/// and a key placed at `position`: the query, counter-rotated by the relative offset and
/// pulled back through the key projection, summed over heads.
///
/// The query is taken from the prune layer's input, computed under plain causal attention.
pub fn needle_direction(weights: &ModelWeights, seq: &TokenSequence, position: usize) -> Result<Vec<f32>> {
    if seq.text_len() == 0 {
        return Err(Error::EmptyText);
    }
    let cfg = weights.config();
    let n = seq.len();
    let positions = seq.positions();
    let mask = crate::model::AttentionMaskSpec::causal(n);
    let hidden = if cfg.prune_layer > 1 {
        weights.run_layers(1, cfg.prune_layer - 1, &seq.concat(), &positions, &mask)?
    } else {
        seq.concat()
    };
    let layer = weights.layer(cfg.prune_layer);
    let last = hidden.row(n - 1);
    let d = cfg.hidden_dim;
    let ms: f32 = last.iter().map(|v| v * v).sum::<f32>() / d as f32;
    let inv = 1.0 / libm::sqrtf(ms + 1e-6);
    let x: Vec<f32> = last.iter().zip(&layer.attn_norm).map(|(v, g)| v * inv * g).collect();
    let xm = Matrix::from_vec(1, d, x)?;
    let q = xm.matmul(&layer.wq)?;
    // R_T q rotated back by the key position: the best key direction is R_{T - j} q
    let rel = (n - 1) - position;
    let target_key = weights.rope().rotate(q.row(0), rel);
    // pull back through W_k: u = target_key * W_k^T
    let mut u = vec![0.0f32; d];
    for (i, ui) in u.iter_mut().enumerate() {
        *ui = crate::tensor::dot(layer.wk.row(i), &target_key);
    }
    Ok(u)
}

/// Replaces every needle of `video` with a blend of the query-aligned direction and the
/// token it replaces: `strength = 1` plants the pure [`needle_direction`], `strength = 0`
/// leaves the token unchanged. Norms are preserved.
pub fn align_needles(weights: &ModelWeights, video: &SyntheticVideo, strength: f32) -> Result<SyntheticVideo> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Config(alloc::format!("needle strength {strength} must be in [0, 1]")));
    }
    let mut seq = video.sequence.clone();
    for &pos in &video.needles {
        let u = needle_direction(weights, &video.sequence, pos)?;
        let bg = video.sequence.visual().row(pos);
        let (un, bn) = (norm(&u), norm(bg));
        if un == 0.0 || bn == 0.0 {
            return Err(Error::DegenerateVector);
        }
        let dir: Vec<f32> = u
            .iter()
            .zip(bg)
            .map(|(a, b)| strength * a / un + (1.0 - strength) * b / bn)
            .collect();
        seq = plant_needle(&seq, &[pos], &dir)?;
    }
    Ok(SyntheticVideo {
        sequence: seq,
        truth: video.truth.clone(),
        needles: video.needles.clone(),
    })
}
