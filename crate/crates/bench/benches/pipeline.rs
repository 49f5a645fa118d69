use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use dualtrain_core::augmentation::{build_synthetic, Direction, Task};
use dualtrain_core::config::RunConfig;
use dualtrain_core::corpus::{tokenize, CorpusBundle};
use dualtrain_core::evaluation::{qg_scores, topk_accuracy, REPORT_KS};
use dualtrain_core::filters::select_by_fraction;
use dualtrain_core::models::{
    Bm25Config, Bm25Retriever, DualEncoder, DualEncoderConfig, RetrievalExample,
};
use dualtrain_core::pipeline::{retrieval_examples, train_baseline};
use dualtrain_core::rng::SeededRng;
use dualtrain_core::synth::{desk_corpus, DeskCorpusConfig};

fn corpus() -> CorpusBundle {
    desk_corpus(&DeskCorpusConfig {
        source_pairs: 500,
        target_passages: 300,
        target_questions: 300,
        dev_pairs: 100,
        test_pairs: 100,
        ..DeskCorpusConfig::default()
    })
    .unwrap()
}

fn retrieval(c: &mut Criterion) {
    let bundle = corpus();
    c.bench_function("bm25 top-k accuracy, 100 questions", |b| {
        b.iter(|| {
            let mut bm25 = Bm25Retriever::new(Bm25Config::default());
            topk_accuracy(
                &mut bm25,
                &bundle.test_pairs,
                &bundle.candidate_passages,
                &REPORT_KS,
            )
            .unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let bundle = corpus();
    let refs: Vec<String> = bundle
        .test_pairs
        .iter()
        .map(|p| p.question.text.clone())
        .collect();
    let hyps: Vec<String> = refs
        .iter()
        .map(|r| tokenize(r).into_iter().rev().collect::<Vec<_>>().join(" "))
        .collect();
    c.bench_function("qg metrics, 100 pairs", |b| {
        b.iter(|| qg_scores(black_box(&hyps), black_box(&refs)).unwrap())
    });
}

fn dual_encoder(c: &mut Criterion) {
    let bundle = corpus();
    let cfg = RunConfig::default();
    let examples: Vec<RetrievalExample> =
        retrieval_examples(&bundle.source_pairs[..64], &cfg).unwrap();
    let enc = DualEncoder::new(DualEncoderConfig::default()).unwrap();
    c.bench_function("dual encoder gradient, batch of 32", |b| {
        b.iter(|| enc.gradient(black_box(&examples[..32])))
    });
    c.bench_function("dual encoder one epoch, 64 examples", |b| {
        b.iter_batched(
            || enc.clone(),
            |mut e| e.fit(&examples, 1, |_, _| {}).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn synthesis(c: &mut Criterion) {
    let bundle = corpus();
    let cfg = RunConfig::default();
    let (generator, mut retriever) = train_baseline(&bundle, &cfg).unwrap();
    let mut group = c.benchmark_group("synthetic cell, 300 targets");
    group.sample_size(10);
    for (label, direction, task) in [
        ("self qg", Direction::SelfTraining, Task::Qg),
        ("back qg", Direction::Back, Task::Qg),
    ] {
        group.bench_function(label, |b| {
            b.iter(|| {
                build_synthetic(
                    direction,
                    task,
                    generator.as_ref(),
                    retriever.as_mut(),
                    &bundle.target_passages,
                    &bundle.target_questions,
                    &cfg.decode,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn filtering(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let scores: Vec<f64> = (0..50_000).map(|_| rng.unit()).collect();
    c.bench_function("select 75% of 50k scores", |b| {
        b.iter(|| select_by_fraction(black_box(&scores), 0.75).unwrap())
    });
}

criterion_group!(
    benches,
    retrieval,
    metrics,
    dual_encoder,
    synthesis,
    filtering
);
criterion_main!(benches);
