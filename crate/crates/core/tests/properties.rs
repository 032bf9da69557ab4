//! Randomized invariants of corpus handling, prediction and metrics.

use std::collections::BTreeSet;

use proptest::prelude::*;
use relmention::classifier::{predict, PairScore, PredictionSet, TripleKey};
use relmention::corpus::{corpus_stats, parse_docred, to_docred_json, Document, Entity, Fact, FactIndex, Mention, RelationSchema, Span};
use relmention::encoder::{encode_tokens, EmbeddingTable};
use relmention::evaluation::{gold_triples, micro_f1, subset_partition, subset_report};
use relmention::numerics::{Param, Tensor2};
use relmention::training::{clip_gradients, lr_at};

const NAMES: [&str; 6] = ["Ada", "Paris", "the city", "He", "France", "Lovelace"];

fn schema() -> RelationSchema {
    RelationSchema::new(vec!["r0".into(), "r1".into(), "r2".into()]).unwrap()
}

prop_compose! {
    fn document(id: usize)(
        sentence_lens in prop::collection::vec(2usize..8, 1..3),
        mention_counts in prop::collection::vec(1usize..4, 0..5),
        picks in prop::collection::vec(any::<u32>(), 64),
    ) -> Document {
        let sentences: Vec<Vec<String>> = sentence_lens
            .iter()
            .enumerate()
            .map(|(s, &n)| (0..n).map(|k| format!("t{}_{}", s, (k + s) % 5)).collect())
            .collect();
        let mut pick = picks.into_iter().cycle();
        let entities: Vec<Entity> = mention_counts
            .iter()
            .enumerate()
            .map(|(index, &q)| Entity {
                index,
                entity_type: "T".into(),
                mentions: (0..q)
                    .map(|_| {
                        let s = pick.next().unwrap() as usize % sentences.len();
                        let len = sentences[s].len();
                        let start = pick.next().unwrap() as usize % len;
                        let end = start + 1 + pick.next().unwrap() as usize % (len - start);
                        Mention {
                            surface: NAMES[pick.next().unwrap() as usize % NAMES.len()].into(),
                            sentence_index: s,
                            span: Span { start, end },
                        }
                    })
                    .collect(),
            })
            .collect();
        let n = entities.len();
        let mut seen = BTreeSet::new();
        let mut facts = Vec::new();
        if n >= 2 {
            for _ in 0..(pick.next().unwrap() % 5) {
                let h = pick.next().unwrap() as usize % n;
                let t = (h + 1 + pick.next().unwrap() as usize % (n - 1)) % n;
                let r = pick.next().unwrap() as usize % 3;
                if seen.insert((h, t, r)) {
                    facts.push(Fact { head: h, tail: t, relation: r, evidence: vec![] });
                }
            }
        }
        Document { id: format!("doc{id}"), sentences, entities, facts }
    }
}

fn corpus() -> impl Strategy<Value = Vec<Document>> {
    (1usize..6).prop_flat_map(|n| (0..n).map(document).collect::<Vec<_>>())
}

fn keys() -> impl Strategy<Value = BTreeSet<TripleKey>> {
    prop::collection::btree_set(
        (0usize..3, 0usize..4, 0usize..4, 0usize..4).prop_map(|(d, h, t, r)| TripleKey {
            doc: format!("d{d}"),
            head: h,
            tail: t,
            relation: r,
        }),
        0..20,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parse_serialize_round_trip(docs in corpus()) {
        let schema = schema();
        for d in &docs {
            d.validate(3).unwrap();
        }
        let bytes = to_docred_json(&docs, &schema).unwrap();
        let back = parse_docred(&bytes, &schema).unwrap();
        prop_assert_eq!(&back, &docs);
        prop_assert_eq!(to_docred_json(&back, &schema).unwrap(), bytes);
    }

    #[test]
    fn stats_are_permutation_invariant(docs in corpus(), rot in 0usize..6) {
        let mut other = docs.clone();
        let len = other.len();
        other.rotate_left(rot % len);
        other.reverse();
        prop_assert_eq!(corpus_stats(&docs).unwrap(), corpus_stats(&other).unwrap());
    }

    #[test]
    fn fact_index_is_monotone(docs in corpus(), extra in corpus(), queries in corpus()) {
        let small = FactIndex::build(&docs);
        let mut big = small.clone();
        for d in &extra {
            big.add_document(d);
        }
        for q in &queries {
            for f in &q.facts {
                for r in 0..3 {
                    if small.contains_fact(q, f.head, f.tail, r) {
                        prop_assert!(big.contains_fact(q, f.head, f.tail, r));
                    }
                }
            }
        }
        let empty = FactIndex::new();
        for q in &queries {
            for f in &q.facts {
                prop_assert!(!empty.contains_fact(q, f.head, f.tail, f.relation));
            }
        }
    }

    #[test]
    fn predict_is_monotone_in_threshold(probs in prop::collection::vec(prop::collection::vec(0.001f64..0.999, 3), 1..8),
                                        a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let scores: Vec<PairScore> = probs
            .iter()
            .enumerate()
            .map(|(i, p)| PairScore { head: i, tail: i + 1, logits: vec![0.0; 3], probs: p.clone() })
            .collect();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let loose = predict("d", &scores, lo).unwrap();
        let strict = predict("d", &scores, hi).unwrap();
        for k in strict.keys() {
            prop_assert!(loose.contains(k));
        }
    }

    #[test]
    fn micro_f1_is_relabeling_symmetric(pred in keys(), gold in keys(), perm in Just([2usize, 0, 3, 1])) {
        let relabel = |s: &BTreeSet<TripleKey>| -> BTreeSet<TripleKey> {
            s.iter().map(|k| TripleKey { relation: perm[k.relation], ..k.clone() }).collect()
        };
        let a = micro_f1(pred.iter(), &gold);
        let b = micro_f1(relabel(&pred).iter(), &relabel(&gold));
        prop_assert_eq!(a, b);
        prop_assert!(a.f1 >= 0.0 && a.f1 <= 1.0);
        let expected = if a.precision + a.recall == 0.0 { 0.0 } else { 2.0 * a.precision * a.recall / (a.precision + a.recall) };
        prop_assert_eq!(a.f1, expected);
    }

    #[test]
    fn subset_chain_holds(docs in corpus()) {
        let gold = gold_triples(&docs);
        let part = subset_partition(&gold, &docs).unwrap();
        prop_assert!(part.m2.is_subset(&part.m1) && part.m1.is_subset(&part.all));
        let mut pred = PredictionSet::new();
        for k in gold.iter().step_by(2) {
            pred.insert(k.clone(), 0.9);
        }
        let rows = subset_report(&pred, &docs).unwrap();
        prop_assert!(rows[2].gold <= rows[1].gold && rows[1].gold <= rows[0].gold);
        prop_assert!(rows[2].predicted <= rows[1].predicted && rows[1].predicted <= rows[0].predicted);
    }

    #[test]
    fn window_mean_ignores_token_order(ids in prop::collection::vec(0usize..6, 1..6), seed in any::<u64>()) {
        let table = EmbeddingTable {
            param: Param::new(Tensor2::from_vec(6, 3, (0..18).map(|k| (k as f64 * 0.37 + seed as f64 * 1e-3).sin()).collect()).unwrap()),
        };
        let mut rev = ids.clone();
        rev.reverse();
        let (a, b) = (encode_tokens(&ids, &table), encode_tokens(&rev, &table));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn clipped_norm_is_bounded(g in prop::collection::vec(-50.0f64..50.0, 1..10), max in 0.01f64..10.0) {
        let mut p = Param::zeros(g.len(), 1);
        p.grad = Tensor2::column(g);
        clip_gradients(&mut [&mut p], max).unwrap();
        prop_assert!(p.grad.squared_norm().sqrt() <= max + 1e-9);
    }

    #[test]
    fn schedule_is_continuous_with_one_peak(total in 1usize..300, warm in 0.0f64..0.99, peak in 1e-6f64..1.0) {
        let lrs: Vec<f64> = (0..=total).map(|s| lr_at(s, total, peak, warm).unwrap()).collect();
        let top = lrs.iter().cloned().fold(0.0, f64::max);
        prop_assert!(top <= peak * (1.0 + 1e-12));
        let at = lrs.iter().position(|&l| l == top).unwrap();
        prop_assert!(lrs[..=at].windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(lrs[at..].windows(2).all(|w| w[1] <= w[0]));
        // no jump larger than the steeper of the two slopes
        let t = total as f64;
        let slope = peak * (1.0 / (warm * t).max(1.0)).max(1.0 / (t * (1.0 - warm)));
        prop_assert!(lrs.windows(2).all(|w| (w[1] - w[0]).abs() <= slope * (1.0 + 1e-9)));
        prop_assert_eq!(*lrs.last().unwrap(), 0.0);
    }
}
