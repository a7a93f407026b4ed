//! Seeded pre-norm decoder: RMS norm, masked multi-head attention with RoPE, SiLU MLP,
//! residual connections.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::mask::{AttentionMaskSpec, MASKED_LOGIT};
use super::rope::RopeTable;
use crate::error::{Error, Result};
use crate::sequence::{ScoreVector, TokenSequence};
use crate::tensor::{fnv1a_bytes, Matrix, FNV_OFFSET};

const RMS_EPS: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ffn_norm: Vec<f32>,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

/// Immutable decoder weights. Cheap to share across threads by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    layers: Vec<LayerWeights>,
    rope: RopeTable,
    checksum: u64,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f32) -> Matrix {
    let dist = Normal::new(0.0f32, std).expect("std is finite and positive");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

/// Draws every projection from `N(0, 1/fan_in)` with a ChaCha8 stream seeded by
/// `config.weight_seed`. Norm gains start at one.
pub fn init_model(config: &ModelConfig) -> Result<ModelWeights> {
    config.validate()?;
    let d = config.hidden_dim;
    let m = config.ffn_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.weight_seed);
    let sd = 1.0 / libm::sqrtf(d as f32);
    let sm = 1.0 / libm::sqrtf(m as f32);
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        let wq = gaussian(&mut rng, d, d, sd);
        let wk_drawn = gaussian(&mut rng, d, d, sd);
        let wk = if config.shared_qk { wq.clone() } else { wk_drawn };
        let wv = gaussian(&mut rng, d, d, sd);
        let wo = gaussian(&mut rng, d, d, sd);
        let w_up = gaussian(&mut rng, d, m, sd);
        let w_down = gaussian(&mut rng, m, d, sm);
        layers.push(LayerWeights {
            attn_norm: vec![1.0; d],
            wq,
            wk,
            wv,
            wo,
            ffn_norm: vec![1.0; d],
            w_up,
            w_down,
        });
    }
    let mut checksum = fnv1a_bytes(FNV_OFFSET, &config.weight_seed.to_le_bytes());
    for l in &layers {
        checksum = crate::tensor::fnv1a_f32(checksum, &l.attn_norm);
        for w in [&l.wq, &l.wk, &l.wv, &l.wo, &l.w_up, &l.w_down] {
            checksum = w.fold_checksum(checksum);
        }
        checksum = crate::tensor::fnv1a_f32(checksum, &l.ffn_norm);
    }
    Ok(ModelWeights {
        rope: RopeTable::new(config),
        config: config.clone(),
        layers,
        checksum,
    })
}

/// Output of one decoder layer.
#[derive(Debug, Clone)]
pub struct LayerPass {
    pub output: Matrix,
    /// Head-averaged pre-softmax logits of the requested row over all columns (masked cells
    /// hold [`MASKED_LOGIT`]).
    pub captured_row: Option<Vec<f32>>,
}

/// Result of a full prefill.
#[derive(Debug, Clone)]
pub struct PrefillOutput {
    pub hidden: Matrix,
    /// Output of the prune layer, i.e. the states that would be pruned and forwarded.
    pub prune_hidden: Matrix,
    pub scores: ScoreVector,
}

fn rms_norm(x: &Matrix, gain: &[f32]) -> Matrix {
    let mut out = x.clone();
    let d = x.cols();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let ms: f32 = row.iter().map(|v| v * v).sum::<f32>() / d as f32;
        let inv = 1.0 / libm::sqrtf(ms + RMS_EPS);
        for (v, g) in row.iter_mut().zip(gain) {
            *v *= inv * g;
        }
    }
    out
}

#[inline]
fn silu(x: f32) -> f32 {
    x / (1.0 + libm::expf(-x))
}

/// Softmax restricted to the permitted columns of one row; masked cells get exactly zero.
pub(crate) fn masked_softmax_row(logits: &mut [f32], mask: &AttentionMaskSpec, row: usize) {
    let spans = mask.row(row);
    let mut max = f32::NEG_INFINITY;
    for s in spans {
        for &v in &logits[s.start..s.end] {
            max = max.max(v);
        }
    }
    let mut sum = 0.0f32;
    let mut out = vec![0.0f32; logits.len()];
    for s in spans {
        for j in s.start..s.end {
            let e = libm::expf(logits[j] - max);
            out[j] = e;
            sum += e;
        }
    }
    let inv = 1.0 / sum;
    for (l, o) in logits.iter_mut().zip(out) {
        *l = o * inv;
    }
}

impl ModelWeights {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// FNV-1a checksum over every weight; identifies the model in bias caches.
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn rope(&self) -> &RopeTable {
        &self.rope
    }

    /// Weights of the 1-based decoder layer `layer`.
    pub fn layer(&self, layer: usize) -> &LayerWeights {
        &self.layers[layer - 1]
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.config.num_layers {
            return Err(Error::OutOfRange {
                what: "layer",
                value: layer,
                min: 1,
                max: self.config.num_layers,
            });
        }
        Ok(())
    }

    fn check_inputs(&self, hidden: &Matrix, positions: &[usize], mask: &AttentionMaskSpec) -> Result<()> {
        if hidden.cols() != self.config.hidden_dim {
            return Err(Error::Shape {
                what: "hidden width",
                expected: self.config.hidden_dim,
                got: hidden.cols(),
            });
        }
        if positions.len() != hidden.rows() {
            return Err(Error::Shape {
                what: "positions",
                expected: hidden.rows(),
                got: positions.len(),
            });
        }
        if mask.len() != hidden.rows() {
            return Err(Error::Shape {
                what: "mask rows",
                expected: hidden.rows(),
                got: mask.len(),
            });
        }
        Ok(())
    }

    /// Rotated queries and keys plus values for one layer.
    fn project(&self, layer: usize, hidden: &Matrix, positions: &[usize]) -> Result<(Matrix, Matrix, Matrix)> {
        let w = self.layer(layer);
        let x = rms_norm(hidden, &w.attn_norm);
        let mut q = x.matmul(&w.wq)?;
        let mut k = if self.config.shared_qk { q.clone() } else { x.matmul(&w.wk)? };
        let v = x.matmul(&w.wv)?;
        for (i, &p) in positions.iter().enumerate() {
            self.rope.rotate_in_place(q.row_mut(i), p);
            self.rope.rotate_in_place(k.row_mut(i), p);
        }
        Ok((q, k, v))
    }

    fn head_logits_row(&self, q: &Matrix, k: &Matrix, head: usize, row: usize, mask: &AttentionMaskSpec, out: &mut [f32]) {
        let hd = self.config.head_dim;
        let scale = 1.0 / libm::sqrtf(hd as f32);
        let lo = head * hd;
        let qi = &q.row(row)[lo..lo + hd];
        out.fill(MASKED_LOGIT);
        for s in mask.row(row) {
            for j in s.start..s.end {
                let kj = &k.row(j)[lo..lo + hd];
                out[j] = crate::tensor::dot(qi, kj) * scale;
            }
        }
    }

    /// Per-head `N x N` pre-softmax logits of `layer` for the given layer input.
    pub fn layer_logits(
        &self,
        layer: usize,
        hidden: &Matrix,
        positions: &[usize],
        mask: &AttentionMaskSpec,
    ) -> Result<Vec<Matrix>> {
        self.check_layer(layer)?;
        self.check_inputs(hidden, positions, mask)?;
        let (q, k, _) = self.project(layer, hidden, positions)?;
        let n = hidden.rows();
        let mut heads = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let mut m = Matrix::zeros(n, n);
            for i in 0..n {
                self.head_logits_row(&q, &k, h, i, mask, m.row_mut(i));
            }
            heads.push(m);
        }
        Ok(heads)
    }

    /// Runs one decoder layer.
    pub fn forward_layer(
        &self,
        layer: usize,
        hidden: &Matrix,
        positions: &[usize],
        mask: &AttentionMaskSpec,
        capture_row: Option<usize>,
    ) -> Result<LayerPass> {
        self.check_layer(layer)?;
        self.check_inputs(hidden, positions, mask)?;
        let w = self.layer(layer);
        let n = hidden.rows();
        let d = self.config.hidden_dim;
        let hd = self.config.head_dim;
        let heads = self.config.num_heads;
        let (q, k, v) = self.project(layer, hidden, positions)?;

        let mut context = Matrix::zeros(n, d);
        let mut captured = capture_row.map(|_| vec![0.0f32; n]);
        let mut buf = vec![0.0f32; n];
        for h in 0..heads {
            let lo = h * hd;
            for i in 0..n {
                self.head_logits_row(&q, &k, h, i, mask, &mut buf);
                if capture_row == Some(i) {
                    if let Some(c) = captured.as_mut() {
                        for (c, &l) in c.iter_mut().zip(&buf) {
                            *c += l / heads as f32;
                        }
                    }
                }
                masked_softmax_row(&mut buf, mask, i);
                let ctx = &mut context.row_mut(i)[lo..lo + hd];
                for s in mask.row(i) {
                    for j in s.start..s.end {
                        let p = buf[j];
                        let vj = &v.row(j)[lo..lo + hd];
                        for (c, &x) in ctx.iter_mut().zip(vj) {
                            *c += p * x;
                        }
                    }
                }
            }
        }
        if let (Some(row), Some(c)) = (capture_row, captured.as_mut()) {
            // masked cells were averaged too; restore the sentinel exactly
            for j in 0..n {
                if !mask.permits(row, j) {
                    c[j] = MASKED_LOGIT;
                }
            }
        }

        let attn = context.matmul(&w.wo)?;
        let mut resid = hidden.clone();
        for (r, a) in resid.as_mut_slice().iter_mut().zip(attn.as_slice()) {
            *r += a;
        }
        let x2 = rms_norm(&resid, &w.ffn_norm);
        let mut up = x2.matmul(&w.w_up)?;
        for u in up.as_mut_slice() {
            *u = silu(*u);
        }
        let down = up.matmul(&w.w_down)?;
        for (r, dv) in resid.as_mut_slice().iter_mut().zip(down.as_slice()) {
            *r += dv;
        }
        Ok(LayerPass {
            output: resid,
            captured_row: captured,
        })
    }

    /// Runs layers `first..=last` (1-based) with one mask for all of them.
    pub fn run_layers(
        &self,
        first: usize,
        last: usize,
        hidden: &Matrix,
        positions: &[usize],
        mask: &AttentionMaskSpec,
    ) -> Result<Matrix> {
        let mut h = hidden.clone();
        for layer in first..=last {
            h = self.forward_layer(layer, &h, positions, mask, None)?.output;
        }
        Ok(h)
    }

    /// Runs layers `1..=prune_layer` on `seq` under `mask`, returning the prune-layer
    /// output and the captured score vector.
    pub fn score_prefix(&self, seq: &TokenSequence, mask: &AttentionMaskSpec) -> Result<(Matrix, ScoreVector)> {
        let masks: Vec<&AttentionMaskSpec> = (0..self.config.prune_layer).map(|_| mask).collect();
        self.score_prefix_with(seq, &masks)
    }

    fn score_prefix_with(&self, seq: &TokenSequence, masks: &[&AttentionMaskSpec]) -> Result<(Matrix, ScoreVector)> {
        if seq.text_len() == 0 {
            return Err(Error::EmptyText);
        }
        let positions = seq.positions();
        let last_text = seq.len() - 1;
        let mut h = seq.concat();
        let prune_layer = self.config.prune_layer;
        let mut captured = None;
        for layer in 1..=prune_layer {
            let capture = (layer == prune_layer).then_some(last_text);
            let pass = self.forward_layer(layer, &h, &positions, masks[layer - 1], capture)?;
            h = pass.output;
            if pass.captured_row.is_some() {
                captured = pass.captured_row;
            }
        }
        let mut values = captured.expect("prune layer captured");
        values.truncate(seq.visual_len());
        Ok((
            h,
            ScoreVector {
                values,
                layer: prune_layer,
                debiased: false,
            },
        ))
    }

    /// Full prefill with one mask per layer.
    pub fn prefill(&self, seq: &TokenSequence, masks: &[AttentionMaskSpec]) -> Result<PrefillOutput> {
        if masks.len() != self.config.num_layers {
            return Err(Error::Shape {
                what: "per-layer masks",
                expected: self.config.num_layers,
                got: masks.len(),
            });
        }
        let refs: Vec<&AttentionMaskSpec> = masks.iter().collect();
        let (prune_hidden, scores) = self.score_prefix_with(seq, &refs)?;
        let positions = seq.positions();
        let mut h = prune_hidden.clone();
        for layer in self.config.prune_layer + 1..=self.config.num_layers {
            h = self.forward_layer(layer, &h, &positions, &masks[layer - 1], None)?.output;
        }
        Ok(PrefillOutput {
            hidden: h,
            prune_hidden,
            scores,
        })
    }

    /// Inputs to every layer, for inspection (`result[l - 1]` feeds layer `l`).
    pub fn layer_inputs(&self, seq: &TokenSequence, masks: &[AttentionMaskSpec]) -> Result<Vec<Matrix>> {
        if masks.len() != self.config.num_layers {
            return Err(Error::Shape {
                what: "per-layer masks",
                expected: self.config.num_layers,
                got: masks.len(),
            });
        }
        let positions = seq.positions();
        let mut inputs = Vec::with_capacity(masks.len());
        let mut h = seq.concat();
        for (l, m) in masks.iter().enumerate() {
            inputs.push(h.clone());
            h = self.forward_layer(l + 1, &h, &positions, m, None)?.output;
        }
        Ok(inputs)
    }
}

/// Per-head logits of `layer`, taking `seq` as that layer's input at positions `0..N`.
pub fn attention_logits(
    seq: &TokenSequence,
    weights: &ModelWeights,
    layer: usize,
    mask: &AttentionMaskSpec,
) -> Result<Vec<Matrix>> {
    weights.layer_logits(layer, &seq.concat(), &seq.positions(), mask)
}

/// Row-wise softmax of a logit matrix over each row's permitted columns.
pub fn attention_probs(logits: &Matrix, mask: &AttentionMaskSpec) -> Result<Matrix> {
    if logits.rows() != mask.len() {
        return Err(Error::Shape {
            what: "mask rows",
            expected: logits.rows(),
            got: mask.len(),
        });
    }
    let mut p = logits.clone();
    for i in 0..p.rows() {
        masked_softmax_row(p.row_mut(i), mask, i);
    }
    Ok(p)
}
