use dualtrain_core::analysis::{
    apply_domain_filter, classify_question, taxonomy_confusion, train_domain_filter,
    DomainFilterConfig, DomainLabel, TaxonomyClass,
};
use dualtrain_core::corpus::{AlignedPair, Passage, Question, Split};
use dualtrain_core::evaluation::{bleu, meteor_lite, rouge_l, topk_accuracy};
use dualtrain_core::models::{
    Bm25Config, Bm25Retriever, DualEncoder, DualEncoderConfig, RetrievalExample, Retriever,
};
use proptest::prelude::*;

const WORDS: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];

fn sentence(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0..WORDS.len(), 1..max)
        .prop_map(|ix| ix.into_iter().map(|i| WORDS[i].to_string()).collect())
}

fn text(max: usize) -> impl Strategy<Value = String> {
    sentence(max).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_stay_in_unit_interval(h in sentence(10), r in sentence(10)) {
        for n in 1..=4 {
            let b = bleu(&[h.clone()], &[r.clone()], n).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
        }
        let m = meteor_lite(&h, &r);
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((rouge_l(&h, &r) - rouge_l(&r, &h)).abs() < 1e-15);
        prop_assert!(rouge_l(&h, &h) == 1.0);
    }

    #[test]
    fn bm25_retrieve_agrees_with_score(
        docs in prop::collection::vec(text(12), 1..15),
        q in text(5),
    ) {
        let pool: Vec<Passage> = docs
            .iter()
            .enumerate()
            .map(|(i, t)| Passage::new(format!("p{i:02}"), t.clone()).unwrap())
            .collect();
        let bm25 = Bm25Retriever::over(&pool, Bm25Config::default());
        let hits = bm25.retrieve(&q, pool.len()).unwrap();
        prop_assert_eq!(hits.len(), pool.len());
        for w in hits.windows(2) {
            prop_assert!(
                w[0].similarity > w[1].similarity
                    || (w[0].similarity == w[1].similarity && w[0].passage_id < w[1].passage_id)
            );
        }
        for h in &hits {
            let p = pool.iter().find(|p| p.id == h.passage_id).unwrap();
            let s = bm25.score(&q, &p.text).unwrap();
            prop_assert!((s - h.similarity).abs() <= 1e-12 * s.abs().max(1.0));
        }
    }

    #[test]
    fn recall_is_monotone_in_k(
        docs in prop::collection::vec(text(10), 2..30),
        picks in prop::collection::vec((any::<prop::sample::Index>(), text(4)), 1..10),
    ) {
        let pool: Vec<Passage> = docs
            .iter()
            .enumerate()
            .map(|(i, t)| Passage::new(format!("p{i:02}"), t.clone()).unwrap())
            .collect();
        let pairs: Vec<AlignedPair> = picks
            .iter()
            .enumerate()
            .map(|(i, (ix, q))| AlignedPair {
                question: Question::new(format!("q{i}"), q.clone()).unwrap(),
                passage: pool[ix.index(pool.len())].clone(),
                split: Split::TargetTest,
            })
            .collect();
        let ks: Vec<usize> = (1..=pool.len()).collect();
        let acc = topk_accuracy(&mut Bm25Retriever::default(), &pairs, &pool, &ks).unwrap();
        let values: Vec<f64> = ks.iter().map(|k| acc.at(*k).unwrap()).collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*values.last().unwrap(), 1.0);
    }

    #[test]
    fn comparison_wins_over_description(rest in "[a-z ]{0,30}") {
        let q = format!("What is the difference between {rest}");
        prop_assert_eq!(classify_question(&q), TaxonomyClass::Comparison);
    }

    #[test]
    fn confusion_rows_sum_to_100(
        gold in prop::collection::vec(text(6), 1..40),
        seed in any::<u64>(),
    ) {
        let openers = ["why", "how", "is", "what", "compare"];
        let gold: Vec<String> = gold
            .iter()
            .enumerate()
            .map(|(i, q)| format!("{} {q}", openers[(i as u64 ^ seed) as usize % 5]))
            .collect();
        let generated: Vec<String> = gold.iter().rev().cloned().collect();
        let m = taxonomy_confusion(&gold, &generated).unwrap();
        for (row, counts) in m.percent.iter().zip(&m.counts) {
            match row {
                Some(r) => prop_assert!((r.iter().sum::<f64>() - 100.0).abs() <= 1e-9),
                None => prop_assert!(counts.iter().all(|c| *c == 0)),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dual_encoder_gradient_matches_finite_differences(
        seed in any::<u64>(),
        dim in 2usize..6,
        items in prop::collection::vec((text(5), text(6), text(6)), 1..4),
        in_batch in any::<bool>(),
    ) {
        let enc = DualEncoder::new(DualEncoderConfig {
            dim,
            seed,
            in_batch_negatives: in_batch,
            ..DualEncoderConfig::default()
        })
        .unwrap();
        let batch: Vec<RetrievalExample> = items
            .into_iter()
            .map(|(q, p, n)| RetrievalExample { question: q, positive: p, negatives: vec![n] })
            .collect();
        let eps = 1e-5;
        for (token, g) in enc.gradient(&batch) {
            for (d, analytic) in g.iter().enumerate() {
                let mut plus = enc.clone();
                plus.embedding_mut(&token)[d] += eps;
                let mut minus = enc.clone();
                minus.embedding_mut(&token)[d] -= eps;
                let numeric = (plus.objective(&batch) - minus.objective(&batch)) / (2.0 * eps);
                let scale = analytic.abs().max(numeric.abs()).max(1e-6);
                prop_assert!((analytic - numeric).abs() / scale < 1e-4, "{token}[{d}]: {analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn domain_filter_acceptance_shrinks_with_alpha() {
    let labeled: Vec<(String, DomainLabel)> = (0..80)
        .map(|i| {
            if i % 2 == 0 {
                (format!("what is kernel trick {i}"), DomainLabel::InDomain)
            } else {
                (format!("where is the ferry port {i}"), DomainLabel::Ood)
            }
        })
        .collect();
    let model = train_domain_filter(&labeled, &DomainFilterConfig::default()).unwrap();
    let qs: Vec<String> = labeled.iter().map(|(q, _)| q.clone()).collect();
    let mut last = usize::MAX;
    for step in 0..=20 {
        let r = apply_domain_filter(&model, &qs, step as f64 / 20.0, None).unwrap();
        assert!(r.accepted.len() <= last);
        last = r.accepted.len();
    }
    let r = apply_domain_filter(&model, &qs, 0.0, None).unwrap();
    assert_eq!(r.accepted.len(), qs.len());
}
