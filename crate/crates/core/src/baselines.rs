//! Reference pruners. Each one emits the same `PruneResult` as the full pipeline so the
//! harness can compare them directly.
//!
//! * raw top-K: causal scoring at the prune layer, no segment mask, no debiasing, no
//!   refinement (FastV-style).
//! * uniform: evenly spaced visual indices.
//! * random: a seeded sample without replacement.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{AttentionMaskSpec, ModelWeights};
use crate::poscalib::{NoCache, ProfileStore};
use crate::regdedup::{
    assemble_and_forward, prune_pipeline_with, topk_indices, NullClock, PruneConfig, PruneResult, PruneStats,
    RegisterEntry, SegmentStats, StageClock, StageTimings,
};
use crate::sequence::{ScoreVector, TokenSequence};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    RawAttentionTopK,
    Uniform,
    Random,
}

/// Every pruner the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrunerKind {
    Sharp,
    Baseline(BaselineKind),
}

impl PrunerKind {
    pub const ALL: [PrunerKind; 4] = [
        PrunerKind::Sharp,
        PrunerKind::Baseline(BaselineKind::RawAttentionTopK),
        PrunerKind::Baseline(BaselineKind::Uniform),
        PrunerKind::Baseline(BaselineKind::Random),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sharp => "sharp",
            Self::Baseline(BaselineKind::RawAttentionTopK) => "fastv",
            Self::Baseline(BaselineKind::Uniform) => "uniform",
            Self::Baseline(BaselineKind::Random) => "random",
        }
    }

    /// Runs this pruner. `seed` is only read by the random baseline; `store` only by sharp.
    pub fn run(
        self,
        seq: &TokenSequence,
        weights: &ModelWeights,
        config: &PruneConfig,
        store: &dyn ProfileStore,
        seed: u64,
    ) -> Result<PruneResult> {
        self.run_timed(seq, weights, config, store, seed, &NullClock)
    }

    /// As [`run`](Self::run), timing stages with `clock`. Baselines only report `attn`
    /// (scoring and selection) and `forward`.
    pub fn run_timed(
        self,
        seq: &TokenSequence,
        weights: &ModelWeights,
        config: &PruneConfig,
        store: &dyn ProfileStore,
        seed: u64,
        clock: &dyn StageClock,
    ) -> Result<PruneResult> {
        let r = config.retention;
        match self {
            Self::Sharp => prune_pipeline_with(seq, weights, config, store, clock),
            Self::Baseline(BaselineKind::RawAttentionTopK) => run_baseline("fastv", seq, weights, r, clock, |k, w, s| {
                let (h, raw) = w.score_prefix(s, &AttentionMaskSpec::causal(s.len()))?;
                Ok((h, topk_indices(&raw, k)?, Some(raw)))
            }),
            Self::Baseline(BaselineKind::Uniform) => run_baseline("uniform", seq, weights, r, clock, |k, w, s| {
                Ok((causal_prefix(s, w)?, uniform_indices(s.visual_len(), k), None))
            }),
            Self::Baseline(BaselineKind::Random) => run_baseline("random", seq, weights, r, clock, |k, w, s| {
                Ok((causal_prefix(s, w)?, random_indices(s.visual_len(), k, seed), None))
            }),
        }
    }
}

impl FromStr for PrunerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown pruner `{s}` (expected sharp | fastv | uniform | random)")))
    }
}

impl fmt::Display for PrunerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn budget(retention: f32, visual_len: usize) -> Result<usize> {
    let cfg = PruneConfig::default().with_retention(retention);
    cfg.validate()?;
    cfg.budget(visual_len)
}

/// Hidden states at the prune layer under plain causal attention.
fn causal_prefix(seq: &TokenSequence, weights: &ModelWeights) -> Result<Matrix> {
    if seq.text_len() == 0 {
        return Err(Error::EmptyText);
    }
    let mask = AttentionMaskSpec::causal(seq.len());
    weights.run_layers(1, weights.config().prune_layer, &seq.concat(), &seq.positions(), &mask)
}

type Selection = (Matrix, Vec<usize>, Option<ScoreVector>);

/// Shared tail of every baseline: `select` returns the prune-layer hidden states, the
/// chosen indices and (optionally) the scores they came from.
fn run_baseline(
    pruner: &'static str,
    seq: &TokenSequence,
    weights: &ModelWeights,
    retention: f32,
    clock: &dyn StageClock,
    select: impl FnOnce(usize, &ModelWeights, &TokenSequence) -> Result<Selection>,
) -> Result<PruneResult> {
    let n_v = seq.visual_len();
    let k = budget(retention, n_v)?;
    let t0 = clock.now_ns();
    let (prune_hidden, selected, raw_scores) = select(k, weights, seq)?;
    let t_attn = clock.now_ns();
    let entries: Vec<RegisterEntry> = selected
        .iter()
        .map(|&i| RegisterEntry::new(i, prune_hidden.row(i).to_vec()))
        .collect();
    let (retained, output) = assemble_and_forward(weights, &prune_hidden, n_v, &entries)?;
    let t_end = clock.now_ns();
    let stats = PruneStats {
        visual_len: n_v,
        requested_retention: retention,
        budget: k,
        selected: k,
        prefiltered: 0,
        deduped: k,
        filled: k,
        shortfall: 0,
        retained: k,
        absorbed: 0,
        dropped: n_v - k,
        per_segment: alloc::vec![SegmentStats {
            segment: 0,
            tokens: n_v,
            selected: k,
            prefiltered: 0,
            remaining: n_v - k,
            deduped: k,
            clusters: 0,
            filled: k,
            shortfall: 0,
        }],
    };
    Ok(PruneResult {
        pruner,
        visual_len: n_v,
        text_len: seq.text_len(),
        entries,
        selected,
        retained,
        output,
        ranking_scores: raw_scores.clone(),
        raw_scores,
        partition: None,
        stats,
        timings: StageTimings {
            attn: t_attn - t0,
            forward: t_end - t_attn,
            total: t_end - t0,
            ..StageTimings::default()
        },
    })
}

/// Top-K on raw causal attention scores of the prune layer.
pub fn prune_raw_topk(seq: &TokenSequence, weights: &ModelWeights, retention: f32) -> Result<PruneResult> {
    PrunerKind::Baseline(BaselineKind::RawAttentionTopK).run(seq, weights, &with_retention(retention), &NoCache, 0)
}

/// Indices `floor(i * N_v / K)` for `i < K`.
pub fn uniform_indices(visual_len: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| i * visual_len / k).collect()
}

pub fn prune_uniform(seq: &TokenSequence, weights: &ModelWeights, retention: f32) -> Result<PruneResult> {
    PrunerKind::Baseline(BaselineKind::Uniform).run(seq, weights, &with_retention(retention), &NoCache, 0)
}

/// `k` distinct indices below `visual_len`, ascending, determined by `seed`.
pub fn random_indices(visual_len: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, visual_len, k).into_vec();
    idx.sort_unstable();
    idx
}

pub fn prune_random(seq: &TokenSequence, weights: &ModelWeights, retention: f32, seed: u64) -> Result<PruneResult> {
    PrunerKind::Baseline(BaselineKind::Random).run(seq, weights, &with_retention(retention), &NoCache, seed)
}

fn with_retention(retention: f32) -> PruneConfig {
    PruneConfig::default().with_retention(retention)
}
