//! Per-run quality measures computed from a `PruneResult`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::regdedup::PruneResult;
use crate::segmask::SegmentPartition;

/// Fraction of `planted` indices that survive as an entry or were absorbed into one.
/// With nothing planted the rate is 1.
pub fn needle_retention(result: &PruneResult, planted: &[usize]) -> f64 {
    if planted.is_empty() {
        return 1.0;
    }
    let covered = result.covered_indices();
    let hits = planted.iter().filter(|i| covered.binary_search(i).is_ok()).count();
    hits as f64 / planted.len() as f64
}

/// Median of `sorted`, averaging the two middle values for even lengths.
fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// End-bias index: median retained original index divided by `N_v`.
pub fn bias_concentration(result: &PruneResult) -> Result<f64> {
    end_bias_index(&result.retained_indices(), result.visual_len)
}

/// Same as [`bias_concentration`] on a bare ascending index list.
pub fn end_bias_index(retained: &[usize], visual_len: usize) -> Result<f64> {
    if retained.is_empty() || visual_len == 0 {
        return Err(Error::Empty("end-bias index needs retained tokens"));
    }
    Ok(median(retained) / visual_len as f64)
}

/// Fraction of ground-truth segments holding at least one retained entry.
pub fn segment_coverage(result: &PruneResult, truth: &SegmentPartition) -> f64 {
    let mut hit: Vec<bool> = alloc::vec![false; truth.len()];
    for i in result.retained_indices() {
        if i < truth.visual_len() {
            hit[truth.segment_of(i)] = true;
        }
    }
    hit.iter().filter(|&&h| h).count() as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{prune_uniform, uniform_indices};
    use crate::model::{init_model, ModelConfig};
    use crate::videogen::{generate, SyntheticSpec};

    fn uniform_result(r: f32) -> (PruneResult, SegmentPartition) {
        let cfg = ModelConfig {
            num_layers: 2,
            ..ModelConfig::default()
        };
        let w = init_model(&cfg).unwrap();
        let v = generate(&SyntheticSpec::uniform(3, 2, 4, 0.1, 2, 4), &cfg).unwrap();
        (prune_uniform(&v.sequence, &w, r).unwrap(), v.truth)
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[3]), 3.0);
        assert_eq!(median(&[1, 4]), 2.5);
        assert_eq!(median(&[0, 2, 9]), 2.0);
    }

    #[test]
    fn end_bias_of_tail_retention() {
        // last K of N: median N - K/2 - 1/2, so the index is 1 - R/2 - 1/(2N)
        let idx: Vec<usize> = (75..100).collect();
        let e = end_bias_index(&idx, 100).unwrap();
        assert!((e - (1.0 - 0.125 - 0.005)).abs() < 1e-12);
        assert!(end_bias_index(&[], 10).is_err());
    }

    #[test]
    fn uniform_is_centered() {
        let idx = uniform_indices(96, 24);
        let e = end_bias_index(&idx, 96).unwrap();
        assert!((e - 0.5).abs() <= 1.0 / 12.0);
    }

    #[test]
    fn needle_rates() {
        let (r, truth) = uniform_result(0.5);
        // uniform at R = .5 over 24 tokens keeps the even indices
        assert_eq!(needle_retention(&r, &[]), 1.0);
        assert_eq!(needle_retention(&r, &[0, 2]), 1.0);
        assert_eq!(needle_retention(&r, &[0, 1, 2, 3]), 0.5);
        assert_eq!(needle_retention(&r, &[1]), 0.0);
        assert_eq!(segment_coverage(&r, &truth), 1.0);
    }

    #[test]
    fn coverage_counts_segments() {
        let (mut r, truth) = uniform_result(0.5);
        r.entries.retain(|e| e.index < 8);
        assert!((segment_coverage(&r, &truth) - 1.0 / 3.0).abs() < 1e-12);
    }
}
