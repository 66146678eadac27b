use std::collections::{BTreeMap, BTreeSet};

use nuer_core::corpus::{
    generate_corpus, magnitude_audit_sample, magnitude_bucket, numeral_value, parse_dataset, sentence_bucket,
    split_corpus, write_dataset, GenConfig, SplitRatios,
};
use nuer_core::fitb::score_predictions;
use nuer_core::nn::softmax;
use nuer_core::qa::{select_span, token_f1};
use nuer_core::tagger::f1_score;
use nuer_core::tokenizer::{build_vocab, Vocabulary};
use nuer_core::Corpus;
use proptest::prelude::*;

fn small_corpus(seed: u64, n: usize, questions: bool) -> Corpus {
    generate_corpus(&GenConfig {
        n_sentences: n,
        seed,
        questions,
        entity_mix: GenConfig::uniform_mix(),
        ..Default::default()
    })
    .unwrap()
}

fn bucket_shares(c: &Corpus) -> BTreeMap<Option<i32>, f64> {
    let mut m = BTreeMap::new();
    for s in &c.sentences {
        *m.entry(sentence_bucket(s)).or_insert(0.0) += 1.0 / c.len() as f64;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_a_disjoint_cover(seed in 0u64..1000, n in 3usize..120, split_seed in 0u64..50) {
        let c = small_corpus(seed, n, false);
        let (tr, va, te) = split_corpus(&c, SplitRatios::default(), split_seed).unwrap();
        prop_assert_eq!(va.len(), (n as f64 * 0.10 + 1e-9).floor() as usize);
        prop_assert_eq!(te.len(), (n as f64 * 0.15 + 1e-9).floor() as usize);
        prop_assert_eq!(tr.len() + va.len() + te.len(), n);
        let ids: BTreeSet<&str> = tr.sentences.iter().chain(&va.sentences).chain(&te.sentences)
            .map(|s| s.id.as_str()).collect();
        prop_assert_eq!(ids.len(), n);
        let again = split_corpus(&c, SplitRatios::default(), split_seed).unwrap();
        prop_assert_eq!(again.0, tr);
    }

    #[test]
    fn audit_sample_preserves_bucket_shares(seed in 0u64..1000, n_corpus in 20usize..200, frac in 0.05f64..1.0, s in 0u64..100) {
        let c = small_corpus(seed, n_corpus, false);
        let n = ((n_corpus as f64 * frac) as usize).max(1);
        let sample = magnitude_audit_sample(&c, n, s).unwrap();
        prop_assert_eq!(sample.len(), n);
        let src = bucket_shares(&c);
        let got = bucket_shares(&sample);
        for (k, share) in &src {
            let g = got.get(k).copied().unwrap_or(0.0);
            prop_assert!((g - share).abs() <= 1.0 / n as f64 + 1e-12, "bucket {:?}: {} vs {}", k, g, share);
        }
        // subset in corpus order
        let pos: Vec<usize> = sample.sentences.iter()
            .map(|x| c.sentences.iter().position(|y| y.id == x.id).unwrap()).collect();
        prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn select_span_is_the_brute_force_argmax(
        logits in prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 1..24),
        max_len in 1usize..10,
    ) {
        let start = softmax(&logits.iter().map(|x| x.0).collect::<Vec<_>>()).unwrap();
        let end = softmax(&logits.iter().map(|x| x.1).collect::<Vec<_>>()).unwrap();
        let (i, j) = select_span(&start, &end, max_len);
        prop_assert!(i <= j && j < i + max_len);
        let n = start.len();
        let mut best = f64::NEG_INFINITY;
        for a in 0..n {
            for b in a..n.min(a + max_len) {
                best = best.max(start[a] * end[b]);
            }
        }
        prop_assert_eq!(start[i] * end[j], best);
    }

    #[test]
    fn fitb_scores_behave(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 8), 1..20),
        golds in prop::collection::vec(0usize..8, 20),
    ) {
        let values: Vec<f64> = (0..8).map(|i| (i * i) as f64).collect();
        let answers = &golds[..rows.len()];
        let ks = [1, 2, 5, 8, 20];
        let m = score_predictions(&rows, answers, &values, &ks);
        let top: Vec<f64> = ks.iter().map(|k| m.top_k[k]).collect();
        prop_assert!(top.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(m.top_k[&8], 100.0);
        prop_assert_eq!(m.top_k[&20], 100.0);
        prop_assert_eq!(m.dist[&8], m.dist[&20]);
        prop_assert!(m.dist.values().all(|d| *d >= 0.0));
        // brute-force top-1
        let hits = rows.iter().zip(answers).filter(|(p, &g)| {
            let best = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            p.iter().position(|&x| x == best) == Some(g)
        }).count();
        prop_assert!((m.top_k[&1] - 100.0 * hits as f64 / rows.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn token_f1_is_bounded_and_symmetric(
        a in prop::collection::vec("[a-c]", 1..6),
        b in prop::collection::vec("[a-c]", 1..6),
    ) {
        let f = token_f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f - token_f1(&b, &a)).abs() < 1e-12);
        prop_assert_eq!(token_f1(&a, &a), 1.0);
    }

    #[test]
    fn f1_lies_between_precision_and_recall(p in 0.0f64..100.0, r in 0.0f64..100.0) {
        let f = f1_score(p, r);
        prop_assert!(f <= p.max(r) + 1e-9);
        prop_assert!(f >= p.min(r) - 1e-9 || p.min(r) == 0.0);
    }

    #[test]
    fn magnitude_bucket_is_monotone(a in 0.0f64..1e7, b in 0.0f64..1e7) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(magnitude_bucket(lo) <= magnitude_bucket(hi));
    }

    #[test]
    fn grouped_integers_parse(n in 0u64..10_000_000) {
        let plain = n.to_string();
        let mut grouped = String::new();
        for (i, ch) in plain.chars().enumerate() {
            if i > 0 && (plain.len() - i) % 3 == 0 {
                grouped.push(',');
            }
            grouped.push(ch);
        }
        prop_assert_eq!(numeral_value(&plain), Some(n as f64));
        prop_assert_eq!(numeral_value(&grouped), Some(n as f64));
    }

    #[test]
    fn dataset_and_vocab_round_trip(seed in 0u64..1000, n in 1usize..40, questions: bool) {
        let c = small_corpus(seed, n, questions);
        let text = write_dataset(&c);
        let back = parse_dataset(&text, "mem").unwrap();
        prop_assert_eq!(&back.sentences, &c.sentences);
        prop_assert_eq!(write_dataset(&back), text);
        let v = build_vocab(&c, 1).unwrap();
        let v2 = Vocabulary::from_json(&v.to_json()).unwrap();
        prop_assert_eq!(v2.sha256(), v.sha256());
        for s in &c.sentences {
            for t in &s.tokens {
                prop_assert!(v.get(t).is_some());
            }
        }
    }
}
