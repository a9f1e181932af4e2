use std::collections::{BTreeSet, HashSet};

use musegraph::sampler::{
    batch_rng, sample_batch, sample_khop, sample_target_window, unfold_targets, window_from_anchor,
    Fanout, SamplerConfig, TargetWindow,
};
use musegraph::synth::{random_score, SynthParams};
use musegraph::{build_score_graph, EdgeType, GraphOptions, Note, Score, ScoreGraph};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synth_graph(seed: u64, max_notes: usize, options: GraphOptions) -> ScoreGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_score_graph(
        &random_score(&mut rng, &SynthParams::varied(max_notes)),
        options,
    )
    .unwrap()
}

#[test]
fn every_onset_group_gets_anchored() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let score = random_score(&mut rng, &SynthParams::fixed(100));
    let g = build_score_graph(&score, GraphOptions::default()).unwrap();
    let groups: BTreeSet<i64> = g.note_onsets.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut draws = batch_rng(5, 0);
    for _ in 0..100_000 {
        let w = sample_target_window(&g, 0, 8, &mut draws).unwrap();
        seen.insert(g.note_onsets[w.lo]);
    }
    assert_eq!(seen, groups);
}

#[test]
fn single_score_unbounded_batch_is_the_whole_graph() {
    for seed in 0..20 {
        let g = synth_graph(
            seed,
            120,
            GraphOptions {
                inverse_edges: seed % 2 == 0,
                metrical: false,
            },
        );
        let cfg = SamplerConfig {
            target_size: g.note_count,
            batch_size: 1,
            fanouts: vec![Fanout::Unbounded; 3],
            seed,
            include_metrical: false,
        };
        let batch = sample_batch(std::slice::from_ref(&g), &cfg, &mut batch_rng(seed, 0)).unwrap();
        assert_eq!(batch.total_targets(), g.note_count);
        assert_eq!(batch.note_source_ids, (0..g.note_count).collect::<Vec<_>>());
        assert_eq!(batch.note_features, g.note_features);
        for ty in EdgeType::ALL.into_iter().filter(|t| t.is_note_relation()) {
            assert_eq!(
                batch.layer_edges[0]
                    .get(&ty)
                    .map(Vec::as_slice)
                    .unwrap_or_default(),
                g.edges_of(ty),
                "{ty}"
            );
        }
        assert!(batch.layer_edges[1..]
            .iter()
            .all(|l| l.values().all(Vec::is_empty)));
    }
}

#[test]
fn corpus_smaller_than_batch_clamps() {
    let corpus = vec![
        synth_graph(1, 40, GraphOptions::default()),
        synth_graph(2, 40, GraphOptions::default()),
    ];
    let batch = sample_batch(
        &corpus,
        &SamplerConfig::pitch_spelling(),
        &mut batch_rng(0, 0),
    )
    .unwrap();
    assert_eq!(batch.scores.len(), 2);
    let ids: HashSet<_> = batch.scores.iter().map(|r| r.score_index).collect();
    assert_eq!(ids.len(), 2);
}

#[test]
fn unfold_rows_follow_score_order() {
    let corpus: Vec<_> = (0..4)
        .map(|s| synth_graph(s, 60, GraphOptions::default()))
        .collect();
    let cfg = SamplerConfig {
        target_size: 12,
        batch_size: 4,
        seed: 3,
        ..Default::default()
    };
    let batch = sample_batch(&corpus, &cfg, &mut batch_rng(3, 0)).unwrap();
    let view = unfold_targets(&batch, 12).unwrap();
    assert_eq!(view.shape(), (4, 12, batch.note_features.cols));
    for (b, rec) in batch.scores.iter().enumerate() {
        let mask = view.mask_row(b);
        assert_eq!(mask.iter().filter(|&&m| m).count(), rec.target_count);
        for s in 0..rec.target_count {
            assert_eq!(
                view.at(b, s),
                batch.note_features.row(rec.target_offset + s)
            );
        }
    }
}

fn onset_lists() -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(0i64..4, 1..60).prop_map(|steps| {
        let mut t = 0;
        steps
            .into_iter()
            .map(|s| {
                t += s / 2;
                t
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn windows_respect_budget_and_groups(onsets in onset_lists(), s in 1usize..20, pick in any::<prop::sample::Index>()) {
        let anchor = pick.index(onsets.len());
        let (lo, hi, truncated) = window_from_anchor(&onsets, anchor, s);
        prop_assert!(hi - lo <= s && hi > lo);
        if onsets.len() <= s {
            prop_assert_eq!((lo, hi), (0, onsets.len()));
        } else {
            prop_assert_eq!(onsets[lo], onsets[anchor]);
            prop_assert!(lo <= anchor && (anchor < hi || truncated));
        }
        prop_assert!(lo == 0 || onsets[lo - 1] != onsets[lo]);
        let complete = hi == onsets.len() || onsets[hi] != onsets[hi - 1];
        prop_assert!(complete || truncated);
        if truncated {
            prop_assert!(onsets[lo..hi].iter().all(|&o| o == onsets[lo]));
        }
    }

    #[test]
    fn khop_edges_are_source_edges_within_fanout(seed in 0u64..5_000, s in 1usize..50, f in 1usize..4) {
        let g = synth_graph(seed, 80, GraphOptions { inverse_edges: seed % 3 == 0, metrical: false });
        let mut rng = batch_rng(seed, 1);
        let w: TargetWindow = sample_target_window(&g, 0, s, &mut rng).unwrap();
        let fanouts = vec![Fanout::Limited(f); 3];
        let sub = sample_khop(&g, &w, &fanouts, &mut rng);
        let all: HashSet<_> = g.edges.iter().flat_map(|(&t, l)| l.iter().map(move |&e| (t, e))).collect();
        let mut seen_dst = HashSet::new();
        for layer in &sub.layer_edges {
            for (&ty, list) in layer {
                let mut count = std::collections::HashMap::new();
                for &e in list {
                    prop_assert!(all.contains(&(ty, e)));
                    prop_assert!(sub.node_set.binary_search(&e.0).is_ok());
                    *count.entry(e.1).or_insert(0usize) += 1;
                }
                prop_assert!(count.values().all(|&c| c <= f));
            }
            // A node's in-edges are drawn in one layer only.
            let dsts: HashSet<_> = layer.values().flatten().map(|e| e.1).collect();
            prop_assert!(dsts.is_disjoint(&seen_dst));
            seen_dst.extend(dsts);
        }
        prop_assert_eq!(&sub.hops[0], &w.node_ids().collect::<Vec<_>>());
    }
}

#[test]
fn empty_scores_are_skipped() {
    let empty = build_score_graph(&Score::new(vec![], 4), GraphOptions::default()).unwrap();
    let one = build_score_graph(
        &Score::new(vec![Note::new(0, 0, 4, 60)], 4),
        GraphOptions::default(),
    )
    .unwrap();
    let corpus = vec![empty.clone(), one];
    let batch = sample_batch(&corpus, &SamplerConfig::default(), &mut batch_rng(0, 0)).unwrap();
    assert_eq!(batch.scores.len(), 1);
    assert_eq!(batch.scores[0].score_index, 1);
    assert!(sample_batch(&[empty], &SamplerConfig::default(), &mut batch_rng(0, 0)).is_err());
}
