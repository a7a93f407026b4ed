//! Segment-aware causal masking.
//!
//! Frames are mean-pooled, a boundary is inserted before frame `i` whenever the cosine
//! similarity of pooled frames `i - 1` and `i` is strictly below `tau_seg`, and visual rows
//! may then only attend to the causal prefix of their own segment. Text rows keep full
//! causal visibility so the last text token scores every segment.

use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::model::{AttentionMaskSpec, Span};
use crate::sequence::TokenSequence;
use crate::tensor::{cosine_sim, mean_of, Matrix};

/// Contiguous, frame-aligned segments covering the visual prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPartition {
    boundaries: Vec<usize>,
    segments: Vec<Range<usize>>,
    frames: usize,
    tokens_per_frame: usize,
}

impl SegmentPartition {
    /// `boundaries` are the frame indices that start a new segment (never 0).
    pub fn from_boundaries(mut boundaries: Vec<usize>, frames: usize, tokens_per_frame: usize) -> Result<Self> {
        if frames == 0 || tokens_per_frame == 0 {
            return Err(Error::Empty("segment partition needs at least one frame"));
        }
        boundaries.sort_unstable();
        boundaries.dedup();
        if let Some(&b) = boundaries.iter().find(|&&b| b == 0 || b >= frames) {
            return Err(Error::OutOfRange {
                what: "segment boundary frame",
                value: b,
                min: 1,
                max: frames - 1,
            });
        }
        let mut segments = Vec::with_capacity(boundaries.len() + 1);
        let mut start = 0usize;
        for &b in &boundaries {
            segments.push(start * tokens_per_frame..b * tokens_per_frame);
            start = b;
        }
        segments.push(start * tokens_per_frame..frames * tokens_per_frame);
        Ok(Self {
            boundaries,
            segments,
            frames,
            tokens_per_frame,
        })
    }

    /// The whole visual prefix as one segment.
    pub fn single(frames: usize, tokens_per_frame: usize) -> Result<Self> {
        Self::from_boundaries(Vec::new(), frames, tokens_per_frame)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Visual-token ranges `[start, end)`.
    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn visual_len(&self) -> usize {
        self.frames * self.tokens_per_frame
    }

    /// Segment id of a visual token.
    pub fn segment_of(&self, visual_index: usize) -> usize {
        let frame = visual_index / self.tokens_per_frame;
        self.boundaries.partition_point(|&b| b <= frame)
    }

    /// Segment id of each frame, in frame order.
    pub fn frame_segments(&self) -> Vec<usize> {
        (0..self.frames)
            .map(|f| self.boundaries.partition_point(|&b| b <= f))
            .collect()
    }
}

/// Mean of each frame's tokens, one row per frame.
pub fn frame_pool(seq: &TokenSequence) -> Result<Matrix> {
    let p = seq.tokens_per_frame();
    if p == 0 || seq.frames() == 0 {
        return Err(Error::Empty("frame_pool needs non-empty frames"));
    }
    let d = seq.dim();
    let rows: Vec<Vec<f32>> = (0..seq.frames())
        .map(|f| mean_of((f * p..(f + 1) * p).map(|i| seq.visual().row(i)), d))
        .collect();
    Matrix::from_rows(&rows, d)
}

/// Inserts a boundary before frame `i` iff `sim(pooled[i-1], pooled[i]) < tau_seg`.
pub fn detect_boundaries(pooled: &Matrix, tau_seg: f32, tokens_per_frame: usize) -> Result<SegmentPartition> {
    if pooled.rows() == 0 {
        return Err(Error::Empty("detect_boundaries needs at least one pooled frame"));
    }
    if !(tau_seg > 0.0 && tau_seg <= 1.0) {
        return Err(Error::Config(alloc::format!("tau_seg {tau_seg} must be in (0, 1]")));
    }
    let mut boundaries = Vec::new();
    for i in 1..pooled.rows() {
        if cosine_sim(pooled.row(i - 1), pooled.row(i))? < tau_seg {
            boundaries.push(i);
        }
    }
    // a frame with zero norm only reaches cosine_sim when there are two or more frames
    if pooled.rows() == 1 && crate::tensor::norm(pooled.row(0)) == 0.0 {
        return Err(Error::DegenerateVector);
    }
    SegmentPartition::from_boundaries(boundaries, pooled.rows(), tokens_per_frame)
}

/// Block-diagonal causal mask over `N_v + text_len` positions.
pub fn build_segment_mask(partition: &SegmentPartition, text_len: usize) -> Result<AttentionMaskSpec> {
    if text_len == 0 {
        return Err(Error::EmptyText);
    }
    let n_v = partition.visual_len();
    let mut rows = Vec::with_capacity(n_v + text_len);
    for seg in partition.segments() {
        for i in seg.clone() {
            rows.push(alloc::vec![Span::new(seg.start, i + 1)]);
        }
    }
    for i in n_v..n_v + text_len {
        rows.push(alloc::vec![Span::new(0, i + 1)]);
    }
    AttentionMaskSpec::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn seq_from_frames(frames: &[[f32; 2]], p: usize) -> TokenSequence {
        let rows: Vec<[f32; 2]> = frames.iter().flat_map(|f| core::iter::repeat(*f).take(p)).collect();
        TokenSequence::new(
            Matrix::from_rows(&rows, 2).unwrap(),
            Matrix::from_rows(&[[1.0f32, 1.0]], 2).unwrap(),
            frames.len(),
            p,
        )
        .unwrap()
    }

    #[test]
    fn pooling_with_one_token_per_frame_is_identity() {
        let seq = seq_from_frames(&[[1.0, 2.0], [3.0, -1.0]], 1);
        assert_eq!(frame_pool(&seq).unwrap(), *seq.visual());
    }

    #[test]
    fn pooling_averages_a_frame() {
        let v = Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]], 2).unwrap();
        let seq = TokenSequence::new(v, Matrix::from_rows(&[[1.0f32, 0.0]], 2).unwrap(), 1, 2).unwrap();
        assert_eq!(frame_pool(&seq).unwrap().row(0), &[0.5, 0.5]);
    }

    #[test]
    fn identical_frames_form_one_segment() {
        let seq = seq_from_frames(&[[1.0, 1.0]; 5], 3);
        let part = detect_boundaries(&frame_pool(&seq).unwrap(), 0.9, 3).unwrap();
        assert!(part.boundaries().is_empty());
        assert_eq!(part.segments(), &[0..15]);
    }

    #[test]
    fn alternating_orthogonal_frames_split_everywhere() {
        let seq = seq_from_frames(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]], 2);
        let part = detect_boundaries(&frame_pool(&seq).unwrap(), 0.9, 2).unwrap();
        assert_eq!(part.boundaries(), &[1, 2, 3]);
        assert_eq!(part.segments(), &[0..2, 2..4, 4..6, 6..8]);
    }

    #[test]
    fn tie_at_threshold_keeps_continuity() {
        // cos((1,0),(1,1)) = 1/sqrt(2) exactly as computed, so tau equal to it is no boundary
        let seq = seq_from_frames(&[[1.0, 0.0], [1.0, 1.0]], 1);
        let pooled = frame_pool(&seq).unwrap();
        let s = cosine_sim(pooled.row(0), pooled.row(1)).unwrap();
        assert!(detect_boundaries(&pooled, s, 1).unwrap().boundaries().is_empty());
        assert_eq!(detect_boundaries(&pooled, s + 1e-6, 1).unwrap().boundaries(), &[1]);
    }

    #[test]
    fn zero_frame_is_degenerate() {
        let seq = seq_from_frames(&[[1.0, 0.0], [0.0, 0.0]], 1);
        let err = detect_boundaries(&frame_pool(&seq).unwrap(), 0.9, 1).unwrap_err();
        assert_eq!(err, Error::DegenerateVector);
    }

    #[test]
    fn two_segment_mask_rows() {
        let part = SegmentPartition::from_boundaries(vec![4], 8, 1).unwrap();
        let mask = build_segment_mask(&part, 2).unwrap();
        let row5: Vec<usize> = (0..10).filter(|&j| mask.permits(5, j)).collect();
        assert_eq!(row5, vec![4, 5]);
        let text: Vec<usize> = (0..10).filter(|&j| mask.permits(9, j)).collect();
        assert_eq!(text, (0..10).collect::<Vec<_>>());
        assert!(mask.permits(8, 0) && !mask.permits(8, 9));
    }

    #[test]
    fn single_segment_mask_is_causal() {
        let part = SegmentPartition::single(3, 2).unwrap();
        assert_eq!(build_segment_mask(&part, 2).unwrap(), AttentionMaskSpec::causal(8));
    }

    #[test]
    fn mask_needs_text() {
        let part = SegmentPartition::single(2, 2).unwrap();
        assert_eq!(build_segment_mask(&part, 0).unwrap_err(), Error::EmptyText);
    }

    #[test]
    fn segment_lookup() {
        let part = SegmentPartition::from_boundaries(vec![2, 3], 5, 2).unwrap();
        assert_eq!(part.segments(), &[0..4, 4..6, 6..10]);
        let ids: Vec<usize> = (0..10).map(|i| part.segment_of(i)).collect();
        assert_eq!(ids, vec![0, 0, 0, 0, 1, 1, 2, 2, 2, 2]);
        assert_eq!(part.frame_segments(), vec![0, 0, 1, 2, 2]);
        assert!(SegmentPartition::from_boundaries(vec![5], 5, 2).is_err());
    }
}
