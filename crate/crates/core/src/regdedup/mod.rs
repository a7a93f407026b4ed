//! Top-K pruning on (debiased) scores and per-segment register refinement.

mod pipeline;
mod steps;

pub use pipeline::{
    assemble_and_forward, prune_pipeline, prune_pipeline_with, NullClock, PruneResult, PruneStats, RetainedSequence,
    SegmentStats, StageClock, StageTimings,
};
pub use steps::{
    cluster_scan, dedup, diversity_score, postfill, prefilter, topk_indices, topk_select, Cluster, ClusterSet,
    EntryOrigin, RegisterEntry, RegisterSet, SegmentRegisters, Stage,
};

use alloc::format;

use crate::error::{Error, Result};

/// How an absorbed token changes the representative it merges into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeRule {
    /// Running mean over the representative and every token it absorbed.
    #[default]
    Mean,
    /// Keep the pivot's vector; absorbed tokens only contribute provenance.
    KeepPivot,
}

impl core::str::FromStr for MergeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "keep-pivot" => Ok(Self::KeepPivot),
            other => Err(Error::Config(format!("unknown merge rule `{other}` (expected mean | keep-pivot)"))),
        }
    }
}

impl core::fmt::Display for MergeRule {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::KeepPivot => "keep-pivot",
        })
    }
}

/// Pruning hyperparameters. Every threshold comparison is strict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    /// Fraction of visual tokens kept, `K = round(retention * N_v)`.
    pub retention: f32,
    pub lambda: f32,
    pub beta: f32,
    pub tau_seg: f32,
    pub tau_filter: f32,
    pub tau_merge: f32,
    pub tau_cluster: f32,
    pub merge_rule: MergeRule,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            retention: 0.25,
            lambda: 0.6,
            beta: 0.008,
            tau_seg: 0.9,
            tau_filter: 0.7,
            tau_merge: 0.8,
            tau_cluster: 0.4,
            merge_rule: MergeRule::Mean,
        }
    }
}

impl PruneConfig {
    pub fn with_retention(mut self, retention: f32) -> Self {
        self.retention = retention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f32| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be in (0, 1]")))
            }
        };
        unit("retention", self.retention)?;
        unit("tau_seg", self.tau_seg)?;
        unit("tau_filter", self.tau_filter)?;
        unit("tau_merge", self.tau_merge)?;
        unit("tau_cluster", self.tau_cluster)?;
        if !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda = {} must be finite", self.lambda)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!("beta = {} must be finite and >= 0", self.beta)));
        }
        Ok(())
    }

    /// `round(retention * n_visual)`, rejecting budgets below one token.
    pub fn budget(&self, n_visual: usize) -> Result<usize> {
        let k = libm::roundf(self.retention * n_visual as f32) as usize;
        if k < 1 {
            return Err(Error::Config(format!(
                "retention {} keeps no tokens out of {n_visual}",
                self.retention
            )));
        }
        Ok(k.min(n_visual))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn defaults_match_published_hyperparameters() {
        let c = PruneConfig::default();
        assert_eq!((c.lambda, c.beta), (0.6, 0.008));
        assert_eq!((c.tau_seg, c.tau_filter, c.tau_merge, c.tau_cluster), (0.9, 0.7, 0.8, 0.4));
        assert_eq!(c.merge_rule, MergeRule::Mean);
        c.validate().unwrap();
    }

    #[test]
    fn budget_rounds_and_rejects_empty() {
        let c = PruneConfig::default().with_retention(0.2);
        assert_eq!(c.budget(128).unwrap(), 26);
        assert!(PruneConfig::default().with_retention(0.01).budget(10).is_err());
        assert!(PruneConfig::default().with_retention(0.0).validate().is_err());
        assert!(PruneConfig::default().with_retention(1.5).validate().is_err());
    }

    #[test]
    fn merge_rule_names() {
        assert_eq!("keep-pivot".parse::<MergeRule>().unwrap(), MergeRule::KeepPivot);
        assert_eq!(MergeRule::Mean.to_string(), "mean");
        assert!("median".parse::<MergeRule>().is_err());
    }
}
