use alloc::vec::Vec;

use super::steps::{cluster_scan, dedup, postfill, prefilter, topk_select, RegisterEntry};
use super::PruneConfig;
use crate::error::{Error, Result};
use crate::model::{AttentionMaskSpec, ModelWeights};
use crate::poscalib::{debias, profile_for, ProfileStore};
use crate::segmask::{build_segment_mask, detect_boundaries, frame_pool, SegmentPartition};
use crate::sequence::{ScoreVector, TokenSequence};
use crate::tensor::Matrix;

/// Monotonic nanosecond clock used to time pipeline stages. The core has no clock of its
/// own; callers with `std` pass one in.
pub trait StageClock {
    fn now_ns(&self) -> u64;
}

/// Reports zero for every stage.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullClock;

impl StageClock for NullClock {
    fn now_ns(&self) -> u64 {
        0
    }
}

/// Wall time per stage in nanoseconds. `attn` covers segmentation, masked scoring, bias
/// lookup, debiasing and top-K; `forward` covers the layers after the prune layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTimings {
    pub attn: u64,
    pub filter: u64,
    pub dedup: u64,
    pub fill: u64,
    pub forward: u64,
    pub total: u64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> u64 {
        self.attn + self.filter + self.dedup + self.fill + self.forward
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegmentStats {
    pub segment: usize,
    pub tokens: usize,
    pub selected: usize,
    /// Non-register tokens absorbed during pre-filtering.
    pub prefiltered: usize,
    /// Non-register tokens left for clustering.
    pub remaining: usize,
    pub deduped: usize,
    pub clusters: usize,
    pub filled: usize,
    pub shortfall: usize,
}

/// Counters for one pruning run. `retained + absorbed + dropped == visual_len`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneStats {
    pub visual_len: usize,
    pub requested_retention: f32,
    pub budget: usize,
    pub selected: usize,
    pub prefiltered: usize,
    pub deduped: usize,
    pub filled: usize,
    pub shortfall: usize,
    pub retained: usize,
    pub absorbed: usize,
    pub dropped: usize,
    pub per_segment: Vec<SegmentStats>,
}

impl PruneStats {
    pub fn achieved_retention(&self) -> f32 {
        self.retained as f32 / self.visual_len as f32
    }
}

/// Tokens entering the layers after the prune layer, with their original RoPE positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedSequence {
    pub hidden: Matrix,
    pub positions: Vec<usize>,
    pub visual_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub pruner: &'static str,
    pub visual_len: usize,
    pub text_len: usize,
    /// One entry per retained visual token, ascending by original index.
    pub entries: Vec<RegisterEntry>,
    /// Top-K (or sampled) indices before refinement, ascending.
    pub selected: Vec<usize>,
    pub retained: RetainedSequence,
    /// Final hidden states after every decoder layer.
    pub output: Matrix,
    pub raw_scores: Option<ScoreVector>,
    pub ranking_scores: Option<ScoreVector>,
    pub partition: Option<SegmentPartition>,
    pub stats: PruneStats,
    pub timings: StageTimings,
}

impl PruneResult {
    /// Original indices of retained tokens, ascending.
    pub fn retained_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// Indices retained as an entry or absorbed into one.
    pub fn covered_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .entries
            .iter()
            .flat_map(|e| core::iter::once(e.index).chain(e.absorbed.iter().copied()))
            .collect();
        v.sort_unstable();
        v
    }

    pub fn achieved_retention(&self) -> f32 {
        self.stats.achieved_retention()
    }

    /// For each original visual index, the position in the retained visual block of the
    /// entry that carries it, or `None` if it was dropped.
    pub fn index_map(&self) -> Vec<Option<usize>> {
        let mut map = alloc::vec![None; self.visual_len];
        for (slot, e) in self.entries.iter().enumerate() {
            map[e.index] = Some(slot);
            for &a in &e.absorbed {
                map[a] = Some(slot);
            }
        }
        map
    }
}

/// Builds the pruned sequence from `entries` (ascending) plus every text row of
/// `prune_hidden`, then runs the remaining layers under plain causal attention.
pub fn assemble_and_forward(
    weights: &ModelWeights,
    prune_hidden: &Matrix,
    visual_len: usize,
    entries: &[RegisterEntry],
) -> Result<(RetainedSequence, Matrix)> {
    let d = prune_hidden.cols();
    let n = prune_hidden.rows();
    let mut rows: Vec<&[f32]> = Vec::with_capacity(entries.len() + n - visual_len);
    let mut positions = Vec::with_capacity(rows.capacity());
    for e in entries {
        rows.push(&e.representative);
        positions.push(e.index);
    }
    for t in visual_len..n {
        rows.push(prune_hidden.row(t));
        positions.push(t);
    }
    let hidden = Matrix::from_rows(&rows, d)?;
    let cfg = weights.config();
    let output = if cfg.prune_layer < cfg.num_layers {
        let mask = AttentionMaskSpec::causal(hidden.rows());
        weights.run_layers(cfg.prune_layer + 1, cfg.num_layers, &hidden, &positions, &mask)?
    } else {
        hidden.clone()
    };
    Ok((
        RetainedSequence {
            hidden,
            positions,
            visual_len: entries.len(),
        },
        output,
    ))
}

pub(crate) fn provenance(entries: &[RegisterEntry], visual_len: usize) -> (usize, usize, usize) {
    let retained = entries.len();
    let absorbed: usize = entries.iter().map(|e| e.absorbed.len()).sum();
    (retained, absorbed, visual_len - retained - absorbed)
}

/// Full pipeline with stage timing from `clock`.
pub fn prune_pipeline_with(
    seq: &TokenSequence,
    weights: &ModelWeights,
    config: &PruneConfig,
    store: &dyn ProfileStore,
    clock: &dyn StageClock,
) -> Result<PruneResult> {
    config.validate()?;
    if seq.text_len() == 0 {
        return Err(Error::EmptyText);
    }
    let n_v = seq.visual_len();
    let k = config.budget(n_v)?;
    let t0 = clock.now_ns();

    let partition = detect_boundaries(&frame_pool(seq)?, config.tau_seg, seq.tokens_per_frame())?;
    let mask = build_segment_mask(&partition, seq.text_len())?;
    let (prune_hidden, raw) = weights.score_prefix(seq, &mask)?;
    let profile = profile_for(store, weights, seq, &mask)?;
    let ranking = debias(&raw, &profile, config.lambda)?;
    let selected = topk_select(&ranking, k, &partition, &prune_hidden)?;
    let selected_idx = selected.indices();
    let t_attn = clock.now_ns();

    let mut per_segment = Vec::with_capacity(partition.len());
    let mut refined: Vec<(Vec<RegisterEntry>, Vec<usize>, usize)> = Vec::with_capacity(partition.len());
    for seg in selected.segments {
        let target = seg.entries.len();
        let mut regs = seg.entries;
        let remaining = prefilter(&prune_hidden, seg.range.clone(), &mut regs, config.tau_filter, config.merge_rule)?;
        per_segment.push(SegmentStats {
            segment: seg.segment,
            tokens: seg.range.len(),
            selected: target,
            prefiltered: seg.range.len() - target - remaining.len(),
            remaining: remaining.len(),
            ..SegmentStats::default()
        });
        refined.push((regs, remaining, target));
    }
    let t_filter = clock.now_ns();

    for (regs, _, _) in refined.iter_mut() {
        *regs = dedup(core::mem::take(regs), config.tau_merge, config.merge_rule)?;
    }
    let t_dedup = clock.now_ns();

    let mut entries = Vec::with_capacity(k);
    for ((regs, remaining, target), st) in refined.into_iter().zip(per_segment.iter_mut()) {
        st.deduped = regs.len();
        let clusters = cluster_scan(&prune_hidden, &remaining, config.tau_cluster)?;
        st.clusters = clusters.len();
        let (filled, shortfall) = postfill(regs, &clusters, target, config.beta)?;
        st.filled = filled.len();
        st.shortfall = shortfall;
        entries.extend(filled);
    }
    entries.sort_unstable_by_key(|e| e.index);
    let t_fill = clock.now_ns();

    let (retained, output) = assemble_and_forward(weights, &prune_hidden, n_v, &entries)?;
    let t_end = clock.now_ns();

    let (n_ret, n_abs, n_drop) = provenance(&entries, n_v);
    let stats = PruneStats {
        visual_len: n_v,
        requested_retention: config.retention,
        budget: k,
        selected: per_segment.iter().map(|s| s.selected).sum(),
        prefiltered: per_segment.iter().map(|s| s.prefiltered).sum(),
        deduped: per_segment.iter().map(|s| s.deduped).sum(),
        filled: per_segment.iter().map(|s| s.filled).sum(),
        shortfall: per_segment.iter().map(|s| s.shortfall).sum(),
        retained: n_ret,
        absorbed: n_abs,
        dropped: n_drop,
        per_segment,
    };
    debug_assert_eq!(stats.filled, n_ret);
    Ok(PruneResult {
        pruner: "sharp",
        visual_len: n_v,
        text_len: seq.text_len(),
        entries,
        selected: selected_idx,
        retained,
        output,
        raw_scores: Some(raw),
        ranking_scores: Some(ranking),
        partition: Some(partition),
        stats,
        timings: StageTimings {
            attn: t_attn - t0,
            filter: t_filter - t_attn,
            dedup: t_dedup - t_filter,
            fill: t_fill - t_dedup,
            forward: t_end - t_fill,
            total: t_end - t0,
        },
    })
}

/// Full pipeline without stage timing.
pub fn prune_pipeline(
    seq: &TokenSequence,
    weights: &ModelWeights,
    config: &PruneConfig,
    store: &dyn ProfileStore,
) -> Result<PruneResult> {
    prune_pipeline_with(seq, weights, config, store, &NullClock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::poscalib::NoCache;
    use crate::videogen::{generate, homogeneous, SyntheticSpec};

    fn small() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn homogeneous_collapses_to_one_pivot() {
        let cfg = small();
        let w = init_model(&cfg).unwrap();
        let seq = homogeneous(8, 4, 3, &cfg).unwrap();
        let r = prune_pipeline(&seq, &w, &PruneConfig::default(), &NoCache).unwrap();
        assert_eq!(r.partition.as_ref().unwrap().len(), 1);
        assert_eq!(r.stats.selected, 8);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].index, *r.selected.first().unwrap());
        assert_eq!(r.stats.absorbed, 31);
        assert_eq!(r.stats.dropped, 0);
        assert_eq!(r.stats.shortfall, 7);
        assert!(r.index_map().iter().all(|m| *m == Some(0)));
    }

    #[test]
    fn full_retention_without_merges_keeps_everything() {
        let cfg = small();
        let w = init_model(&cfg).unwrap();
        let v = generate(&SyntheticSpec::uniform(2, 3, 4, 0.2, 2, 8), &cfg).unwrap();
        let pc = PruneConfig {
            retention: 1.0,
            tau_merge: 1.0,
            ..PruneConfig::default()
        };
        let r = prune_pipeline(&v.sequence, &w, &pc, &NoCache).unwrap();
        assert_eq!(r.retained_indices(), (0..24).collect::<Vec<_>>());
        assert_eq!(r.retained.positions.len(), 26);
        assert_eq!(r.output.rows(), 26);
        for (i, e) in r.entries.iter().enumerate() {
            assert_eq!(e.representative.as_slice(), r.retained.hidden.row(i));
        }
    }

    #[test]
    fn stats_add_up() {
        let cfg = small();
        let w = init_model(&cfg).unwrap();
        let v = generate(&SyntheticSpec::uniform(3, 3, 4, 0.3, 2, 21), &cfg).unwrap();
        let r = prune_pipeline(&v.sequence, &w, &PruneConfig::default().with_retention(0.3), &NoCache).unwrap();
        let s = &r.stats;
        assert_eq!(s.budget, 11);
        assert_eq!(s.selected, 11);
        assert!(s.filled <= s.selected);
        assert_eq!(s.filled + s.shortfall, s.selected);
        assert_eq!(s.retained + s.absorbed + s.dropped, 36);
        assert_eq!(r.timings, StageTimings::default());
        for st in &s.per_segment {
            assert_eq!(st.tokens, st.selected + st.prefiltered + st.remaining);
        }
    }

    #[test]
    fn tiny_budget_is_rejected() {
        let cfg = small();
        let w = init_model(&cfg).unwrap();
        let seq = homogeneous(2, 2, 1, &cfg).unwrap();
        assert!(prune_pipeline(&seq, &w, &PruneConfig::default().with_retention(0.1), &NoCache).is_err());
    }
}
