//! Analytic prefill FLOP counts for a plain multi-head decoder.
//!
//! One layer over `n` tokens costs `4nd² + 2n²d + 2ndm`: the four attention projections,
//! the score and value products, and the two FFN matrices. Only visual tokens are counted.
//! Layers up to the prune layer see every visual token, later layers see `round(R·N_v)`.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::regdedup::PruneStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsParams {
    pub hidden: usize,
    pub ffn: usize,
    pub layers: usize,
    /// 1-based; layers `1..=prune_layer` run unpruned.
    pub prune_layer: usize,
}

impl FlopsParams {
    pub fn new(hidden: usize, ffn: usize, layers: usize, prune_layer: usize) -> Result<Self> {
        let p = Self {
            hidden,
            ffn,
            layers,
            prune_layer,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_model(cfg: &ModelConfig) -> Result<Self> {
        Self::new(cfg.hidden_dim, cfg.ffn_dim, cfg.num_layers, cfg.prune_layer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.ffn == 0 || self.layers == 0 {
            return Err(Error::Config("FLOP model dimensions must be positive".into()));
        }
        if self.prune_layer == 0 || self.prune_layer > self.layers {
            return Err(Error::OutOfRange {
                what: "prune layer",
                value: self.prune_layer,
                min: 1,
                max: self.layers,
            });
        }
        Ok(())
    }

    fn pruned_layers(&self) -> f64 {
        (self.layers - self.prune_layer) as f64
    }
}

/// FLOPs of one decoder layer over `n` tokens.
pub fn layer_flops(n: usize, params: &FlopsParams) -> f64 {
    let n = n as f64;
    let d = params.hidden as f64;
    let m = params.ffn as f64;
    4.0 * n * d * d + 2.0 * n * n * d + 2.0 * n * d * m
}

/// Similarity work spent by the refinement stages. Reported on its own and never folded
/// into `FlopsReport::total` or `ratio`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OverheadFlops {
    pub filter: f64,
    pub dedup: f64,
    pub fill: f64,
}

impl OverheadFlops {
    pub fn total(&self) -> f64 {
        self.filter + self.dedup + self.fill
    }
}

/// Counts one cosine similarity in `d` dimensions as `6d` FLOPs (a dot product and two
/// squared norms) and applies it to the comparisons each stage performed.
pub fn refinement_overhead(stats: &PruneStats, hidden: usize) -> OverheadFlops {
    let sim = 6.0 * hidden as f64;
    let mut o = OverheadFlops::default();
    for s in &stats.per_segment {
        let candidates = (s.tokens - s.selected) as f64;
        o.filter += candidates * s.selected as f64 * sim;
        o.dedup += s.selected.saturating_sub(1) as f64 * sim;
        // clustering compares each remaining token once, diversity scores every center
        // against every surviving register
        o.fill += (s.remaining.saturating_sub(1) + s.clusters * s.deduped) as f64 * sim;
    }
    o
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopsReport {
    pub total: f64,
    pub per_layer_before: f64,
    pub per_layer_after: f64,
    /// `total` divided by the unpruned budget.
    pub ratio: f64,
    /// Tokens kept after the prune layer divided by `N_v`.
    pub retention: f64,
    pub retained_tokens: usize,
    pub overhead: OverheadFlops,
}

fn retained_count(visual_len: usize, retention: f64) -> Result<usize> {
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::Config(alloc::format!("retention {retention} must be in (0, 1]")));
    }
    Ok(libm::round(retention * visual_len as f64) as usize)
}

pub fn full_budget(visual_len: usize, params: &FlopsParams) -> f64 {
    params.layers as f64 * layer_flops(visual_len, params)
}

pub fn prefill_flops(visual_len: usize, params: &FlopsParams, retention: f64) -> Result<FlopsReport> {
    params.validate()?;
    if visual_len == 0 {
        return Err(Error::Empty("FLOP count needs at least one visual token"));
    }
    let kept = retained_count(visual_len, retention)?;
    let before = layer_flops(visual_len, params);
    let after = layer_flops(kept, params);
    let total = params.prune_layer as f64 * before + params.pruned_layers() * after;
    Ok(FlopsReport {
        total,
        per_layer_before: before,
        per_layer_after: after,
        ratio: total / full_budget(visual_len, params),
        retention: kept as f64 / visual_len as f64,
        retained_tokens: kept,
        overhead: OverheadFlops::default(),
    })
}

/// Retention whose prefill cost equals `target`, from the quadratic in the post-prune token
/// count. The result is continuous; `prefill_flops` then rounds it to whole tokens.
pub fn retention_for_budget(target: f64, params: &FlopsParams, visual_len: usize) -> Result<f64> {
    params.validate()?;
    if visual_len == 0 {
        return Err(Error::Empty("FLOP count needs at least one visual token"));
    }
    let full = full_budget(visual_len, params);
    let fixed = params.prune_layer as f64 * layer_flops(visual_len, params);
    let min = fixed + params.pruned_layers() * layer_flops(1, params);
    let slack = full * 1e-12;
    if !(target >= min - slack && target <= full + slack) {
        return Err(Error::UnreachableBudget { target, min, max: full });
    }
    if params.pruned_layers() == 0.0 || target >= full {
        return Ok(1.0);
    }
    let d = params.hidden as f64;
    let m = params.ffn as f64;
    // 2d·n² + (4d² + 2dm)·n - c = 0
    let a = 2.0 * d;
    let b = 4.0 * d * d + 2.0 * d * m;
    let c = (target - fixed) / params.pruned_layers();
    let n = (2.0 * c) / (b + libm::sqrt(b * b + 4.0 * a * c));
    Ok((n / visual_len as f64).clamp(1.0 / visual_len as f64, 1.0))
}
