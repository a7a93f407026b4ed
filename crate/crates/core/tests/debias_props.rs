use proptest::prelude::*;
use sharp_core::model::{init_model, AttentionMaskSpec, ModelConfig};
use sharp_core::poscalib::{debias, estimate_bias, BiasProfile};
use sharp_core::videogen::{generate, homogeneous, SyntheticSpec};
use sharp_core::ScoreVector;

fn profile_and_scores(seed: u64) -> (BiasProfile, ScoreVector) {
    let cfg = ModelConfig { num_layers: 2, ..ModelConfig::default() }.with_seed(seed);
    let w = init_model(&cfg).unwrap();
    let v = generate(&SyntheticSpec::uniform(2, 3, 3, 0.1, 2, seed), &cfg).unwrap();
    let mask = AttentionMaskSpec::causal(v.sequence.len());
    let p = estimate_bias(&w, &v.sequence, &mask).unwrap();
    let (_, s) = w.score_prefix(&v.sequence, &mask).unwrap();
    (p, s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn debias_is_linear_in_lambda(seed in 0u64..1000, a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let (p, s) = profile_and_scores(seed);
        let da = debias(&s, &p, a).unwrap();
        let db = debias(&s, &p, b).unwrap();
        let dab = debias(&s, &p, a + b).unwrap();
        for i in 0..s.len() {
            // (s - a·b_i) + (s - b·b_i) - s = s - (a + b)·b_i
            let lhs = da.values[i] + db.values[i] - s.values[i];
            prop_assert!((lhs - dab.values[i]).abs() <= 1e-4 * (1.0 + s.values[i].abs()));
        }
    }

    #[test]
    fn zero_profile_is_neutral(seed in 0u64..1000, lambda in -3.0f32..3.0) {
        let (mut p, s) = profile_and_scores(seed);
        p.bias.iter_mut().for_each(|b| *b = 0.0);
        prop_assert_eq!(debias(&s, &p, lambda).unwrap().values, s.values);
    }
}

#[test]
fn homogeneous_self_cancellation_across_layouts() {
    for (frames, p, n_t, seed) in [(4, 4, 2, 0), (16, 8, 4, 3), (32, 8, 1, 9)] {
        let cfg = ModelConfig::default().with_seed(seed);
        let w = init_model(&cfg).unwrap();
        let seq = homogeneous(frames, p, n_t, &cfg).unwrap();
        let mask = AttentionMaskSpec::causal(seq.len());
        let prof = estimate_bias(&w, &seq, &mask).unwrap();
        let (_, s) = w.score_prefix(&seq, &mask).unwrap();
        let out = debias(&s, &prof, 1.0).unwrap();
        assert!(out.values.iter().all(|v| v.abs() < 1e-6));
    }
}
