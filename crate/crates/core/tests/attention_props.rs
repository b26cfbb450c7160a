//! Properties of attention scoring, pruning and sequence rewriting.

use boostkit_core::attention::{
    aggregate_vocab, prune_vocab, rest_importance, rewrite_sequence, self_importance, HeadReduction, TokenImportance,
    Vocabulary,
};
use boostkit_nn::{encoder_logits, init_encoder, AttentionTrace, EncoderConfig};
use proptest::prelude::*;

fn config() -> EncoderConfig {
    EncoderConfig { vocab_size: 12, max_len: 16, width: 8, heads: 2, layers: 3, ffn_width: 8, classes: 2, cls_token: 0 }
}

fn seq_strategy() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..12, 1..12).prop_map(|mut v| {
        v.insert(0, 0);
        v
    })
}

#[test]
fn hand_traced_corpus() {
    // Two single-head, two-layer traces over three positions.
    let a = AttentionTrace::new(
        2,
        1,
        3,
        [[0.6, 0.2, 0.2], [0.1, 0.2, 0.7], [0.3, 0.3, 0.4], [0.2, 0.4, 0.4], [0.4, 0.3, 0.3], [0.5, 0.25, 0.25]]
            .concat(),
    )
    .unwrap();
    let b = AttentionTrace::new(2, 1, 2, [[0.5, 0.5], [0.9, 0.1], [0.3, 0.7], [0.6, 0.4]].concat()).unwrap();
    let s1 = [0u32, 3, 5];
    let s2 = [0u32, 5];
    let scores = aggregate_vocab([(&s1[..], &a), (&s2[..], &b)], 0, HeadReduction::Mean).unwrap();
    // Token 3 at position 1 of s1: self 0.4, path 0.7 * 0.5.
    assert!((scores.get(3).unwrap() - (0.4 + 0.35)).abs() < 1e-15);
    // Token 5 at position 2 of s1: self 0.5, path 0.3 * a(0,0;1) = 0.3 * 0.2.
    // Token 5 at position 1 of s2: self 0.6, path to position 0 with 0.9, then 0.3.
    assert!((scores.get(5).unwrap() - (0.5 + 0.06 + 0.6 + 0.27)).abs() < 1e-15);
    assert_eq!(scores.len(), 2);
}

proptest! {
    #[test]
    fn rewrite_is_idempotent_and_order_preserving(seq in seq_strategy(), keep in prop::collection::btree_set(1u32..12, 0..11)) {
        let v = Vocabulary::new(keep.iter().copied(), 0, 1);
        let once = rewrite_sequence(&seq, &v);
        prop_assert_eq!(rewrite_sequence(&once, &v), once.clone());
        prop_assert_eq!(once[0], 0);
        let expected: Vec<u32> = seq.iter().copied().filter(|t| *t == 0 || keep.contains(t)).collect();
        prop_assert_eq!(once, expected);
    }

    #[test]
    fn scores_are_bounded_by_occurrences(seqs in prop::collection::vec(seq_strategy(), 1..4), seed in any::<u64>()) {
        prop_assume!(seqs.iter().all(|s| s.len() >= 2));
        let cfg = config();
        let params = init_encoder(&cfg, seed).unwrap();
        let traces: Vec<AttentionTrace> = seqs.iter().map(|s| encoder_logits(&params, &cfg, s).unwrap().1).collect();
        for (s, t) in seqs.iter().zip(&traces) {
            for p in 0..s.len() {
                let r = rest_importance(t, p, HeadReduction::Mean).unwrap();
                let si = self_importance(t, p, HeadReduction::Mean).unwrap();
                prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&si));
            }
        }
        let scores = aggregate_vocab(seqs.iter().map(|s| &s[..]).zip(&traces), 0, HeadReduction::Max).unwrap();
        for (tok, v) in scores.iter() {
            let occ = seqs.iter().flatten().filter(|&&x| x == tok).count() as f64;
            prop_assert!(v >= 0.0 && v <= 2.0 * occ);
        }
    }

    #[test]
    fn pruning_is_monotone(scores in prop::collection::vec(0.0f64..5.0, 11), sigmas in prop::collection::vec(0.1f64..=1.0, 1..5)) {
        let mut s = TokenImportance::default();
        for (t, v) in (1u32..12).zip(&scores) {
            s.add(t, *v);
        }
        let mut v = Vocabulary::new(1..12, 0, 0);
        for sigma in sigmas {
            let next = prune_vocab(&s, &v, sigma).unwrap();
            prop_assert!(next.tokens().is_subset(v.tokens()));
            prop_assert!(next.contains(0));
            prop_assert_eq!(next.content_len(), ((sigma * v.content_len() as f64 - 1e-9).ceil() as usize).max(1));
            v = next;
        }
    }
}
