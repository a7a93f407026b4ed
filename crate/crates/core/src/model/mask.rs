//! Attention masks as per-row lists of permitted column spans.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{fnv1a_bytes, FNV_OFFSET};

/// Logit written into masked cells. Softmax maps it to exactly zero.
pub const MASKED_LOGIT: f32 = -1.0e9;

/// Half-open column interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    #[inline]
    pub fn contains(&self, j: usize) -> bool {
        self.start <= j && j < self.end
    }
}

/// Which columns each query row may attend to.
///
/// Invariants, checked at construction: spans are non-empty, sorted and disjoint; every
/// permitted column of row `i` is `<= i`; row `i` always permits column `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMaskSpec {
    rows: Vec<Vec<Span>>,
}

impl AttentionMaskSpec {
    /// Plain lower-triangular causal mask.
    pub fn causal(n: usize) -> Self {
        Self {
            rows: (0..n).map(|i| vec![Span::new(0, i + 1)]).collect(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<Span>>) -> Result<Self> {
        for (i, spans) in rows.iter().enumerate() {
            let mut prev_end = 0usize;
            let mut has_self = false;
            for (k, s) in spans.iter().enumerate() {
                if s.is_empty() {
                    return Err(Error::Mask(format!("row {i}: empty span {}..{}", s.start, s.end)));
                }
                if k > 0 && s.start < prev_end {
                    return Err(Error::Mask(format!("row {i}: spans overlap or are unsorted")));
                }
                if s.end > i + 1 {
                    return Err(Error::Mask(format!(
                        "row {i}: span {}..{} permits a future column",
                        s.start, s.end
                    )));
                }
                has_self |= s.contains(i);
                prev_end = s.end;
            }
            if !has_self {
                return Err(Error::Mask(format!("row {i} does not permit itself")));
            }
        }
        Ok(Self { rows })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Span] {
        &self.rows[i]
    }

    pub fn permits(&self, i: usize, j: usize) -> bool {
        self.rows[i].iter().any(|s| s.contains(j))
    }

    pub fn permitted_count(&self, i: usize) -> usize {
        self.rows[i].iter().map(Span::len).sum()
    }

    /// True when every cell permitted here is also permitted by `other`.
    pub fn is_subset_of(&self, other: &AttentionMaskSpec) -> bool {
        self.len() == other.len()
            && self.rows.iter().enumerate().all(|(i, spans)| {
                spans
                    .iter()
                    .all(|s| (s.start..s.end).all(|j| other.permits(i, j)))
            })
    }

    /// Stable 64-bit fingerprint of the mask layout.
    pub fn signature(&self) -> u64 {
        let mut h = fnv1a_bytes(FNV_OFFSET, &(self.rows.len() as u64).to_le_bytes());
        for spans in &self.rows {
            h = fnv1a_bytes(h, &(spans.len() as u64).to_le_bytes());
            for s in spans {
                h = fnv1a_bytes(h, &(s.start as u64).to_le_bytes());
                h = fnv1a_bytes(h, &(s.end as u64).to_le_bytes());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_first_row_sees_only_itself() {
        let m = AttentionMaskSpec::causal(4);
        assert_eq!(m.row(0), &[Span::new(0, 1)]);
        assert!(m.permits(3, 0) && !m.permits(2, 3));
    }

    #[test]
    fn rejects_future_columns() {
        let err = AttentionMaskSpec::from_rows(vec![vec![Span::new(0, 2)], vec![Span::new(0, 2)]]);
        assert!(matches!(err, Err(Error::Mask(_))));
    }

    #[test]
    fn rejects_missing_diagonal() {
        let err = AttentionMaskSpec::from_rows(vec![vec![Span::new(0, 1)], vec![Span::new(0, 1)]]);
        assert!(err.is_err());
    }

    #[test]
    fn signature_distinguishes_layouts() {
        let a = AttentionMaskSpec::causal(3);
        let b = AttentionMaskSpec::from_rows(vec![
            vec![Span::new(0, 1)],
            vec![Span::new(1, 2)],
            vec![Span::new(0, 3)],
        ])
        .unwrap();
        assert_ne!(a.signature(), b.signature());
        assert!(b.is_subset_of(&a));
        assert!(!a.is_subset_of(&b));
    }
}
