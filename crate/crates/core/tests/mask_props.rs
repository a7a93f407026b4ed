use proptest::prelude::*;
use sharp_core::model::{attention_logits, init_model, AttentionMaskSpec, ModelConfig};
use sharp_core::segmask::{build_segment_mask, SegmentPartition};
use sharp_core::Matrix;
use sharp_core::TokenSequence;

fn partition() -> impl Strategy<Value = SegmentPartition> {
    (1usize..10, 1usize..4).prop_flat_map(|(frames, p)| {
        proptest::collection::vec(1..frames.max(2), 0..frames).prop_map(move |b| {
            let b: Vec<usize> = b.into_iter().filter(|&x| x < frames).collect();
            SegmentPartition::from_boundaries(b, frames, p).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn visual_rows_stay_inside_their_segment(part in partition(), n_t in 1usize..4) {
        let mask = build_segment_mask(&part, n_t).unwrap();
        let n_v = part.visual_len();
        for i in 0..n_v {
            for j in 0..mask.len() {
                let same = j < n_v && part.segment_of(i) == part.segment_of(j);
                prop_assert_eq!(mask.permits(i, j), same && j <= i);
            }
        }
        for i in n_v..mask.len() {
            prop_assert_eq!(mask.permitted_count(i), i + 1);
        }
    }

    #[test]
    fn adding_boundaries_only_removes_edges(part in partition(), n_t in 1usize..3) {
        let coarse = SegmentPartition::single(part.frames(), part.tokens_per_frame()).unwrap();
        let fine = build_segment_mask(&part, n_t).unwrap();
        let base = build_segment_mask(&coarse, n_t).unwrap();
        prop_assert!(fine.is_subset_of(&base));
        prop_assert!(base.is_subset_of(&AttentionMaskSpec::causal(base.len())));
        prop_assert_eq!(base, AttentionMaskSpec::causal(fine.len()));
    }
}

#[test]
fn masked_probabilities_are_normalized() {
    let cfg = ModelConfig { num_layers: 1, ..ModelConfig::default() };
    let w = init_model(&cfg).unwrap();
    let d = cfg.hidden_dim;
    let n_v = 12;
    let v: Vec<f32> = (0..n_v * d).map(|i| ((i * 7919) % 23) as f32 / 23.0 - 0.4).collect();
    let t: Vec<f32> = (0..2 * d).map(|i| ((i * 31) % 11) as f32 / 11.0).collect();
    let seq = TokenSequence::new(Matrix::from_vec(n_v, d, v).unwrap(), Matrix::from_vec(2, d, t).unwrap(), 6, 2).unwrap();
    let part = SegmentPartition::from_boundaries(vec![2, 5], 6, 2).unwrap();
    let mask = build_segment_mask(&part, 2).unwrap();
    for logits in attention_logits(&seq, &w, 1, &mask).unwrap() {
        let p = sharp_core::model::attention_probs(&logits, &mask).unwrap();
        for i in 0..p.rows() {
            let sum: f32 = p.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
            for j in 0..p.cols() {
                if !mask.permits(i, j) {
                    assert_eq!(p.row(i)[j], 0.0);
                }
            }
        }
    }
}
