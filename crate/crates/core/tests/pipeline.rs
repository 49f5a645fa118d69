use std::collections::HashMap;

use dualtrain_core::augmentation::{
    build_synthetic, export_synthetic, import_synthetic, Direction, SyntheticExample, Task,
};
use dualtrain_core::config::RunConfig;
use dualtrain_core::corpus::CorpusBundle;
use dualtrain_core::filters::{apply_filter, select_by_fraction, FilterKind, FilterPolicy};
use dualtrain_core::models::{Generator, Retriever};
use dualtrain_core::pipeline::{synthetic_cells, train_baseline};
use dualtrain_core::synth::{desk_corpus, DeskCorpusConfig};

fn small_bundle() -> CorpusBundle {
    desk_corpus(&DeskCorpusConfig {
        source_pairs: 300,
        target_passages: 80,
        target_questions: 80,
        dev_pairs: 20,
        test_pairs: 20,
        ..DeskCorpusConfig::default()
    })
    .unwrap()
}

fn models(bundle: &CorpusBundle) -> (Box<dyn Generator>, Box<dyn Retriever>) {
    train_baseline(bundle, &RunConfig::default()).unwrap()
}

#[test]
fn natural_side_ids_point_at_their_text() {
    let bundle = small_bundle();
    let (g, mut r) = models(&bundle);
    let cells = synthetic_cells(g.as_ref(), r.as_mut(), &bundle, &RunConfig::default()).unwrap();
    let passages: HashMap<&str, &str> = bundle
        .target_passages
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    let questions: HashMap<&str, &str> = bundle
        .target_questions
        .iter()
        .map(|q| (q.id.as_str(), q.text.as_str()))
        .collect();

    for e in &cells.qg_self {
        assert_eq!(
            passages[e.source_passage_id.as_deref().unwrap()],
            e.input_text
        );
        assert!(e.source_question_id.is_none());
    }
    for e in &cells.ir_back {
        assert_eq!(
            passages[e.source_passage_id.as_deref().unwrap()],
            e.output_text
        );
    }
    for e in &cells.qg_back {
        assert_eq!(
            questions[e.source_question_id.as_deref().unwrap()],
            e.output_text
        );
        // The retrieved passage is a pool member as well.
        assert_eq!(
            passages[e.source_passage_id.as_deref().unwrap()],
            e.input_text
        );
    }
    for e in &cells.ir_self {
        assert_eq!(
            questions[e.source_question_id.as_deref().unwrap()],
            e.input_text
        );
    }
}

#[test]
fn same_seed_same_cells() {
    let bundle = small_bundle();
    let cfg = RunConfig::default();
    let (g, mut r) = models(&bundle);
    let a = synthetic_cells(g.as_ref(), r.as_mut(), &bundle, &cfg).unwrap();
    let (g, mut r) = models(&bundle);
    let b = synthetic_cells(g.as_ref(), r.as_mut(), &bundle, &cfg).unwrap();
    assert_eq!(a, b);
}

fn governing(e: &SyntheticExample, kind: FilterKind) -> f64 {
    match (kind, e.task) {
        (FilterKind::SelfConsistency, Task::Qg) | (FilterKind::CrossConsistency, Task::Ir) => {
            e.gen_loglik.unwrap()
        }
        _ => e.ret_sim.unwrap(),
    }
}

#[test]
fn kept_flags_follow_from_exported_scores() {
    let bundle = small_bundle();
    let (g, mut r) = models(&bundle);
    for kind in [FilterKind::SelfConsistency, FilterKind::CrossConsistency] {
        let build = |task, r: &mut dyn Retriever| {
            build_synthetic(
                Direction::Back,
                task,
                g.as_ref(),
                r,
                &bundle.target_passages,
                &bundle.target_questions,
                &Default::default(),
            )
            .unwrap()
        };
        let mut s_g = build(Task::Qg, r.as_mut());
        let mut s_r = build(Task::Ir, r.as_mut());
        let policy = FilterPolicy {
            kind,
            accept_fraction: 0.75,
            absolute_threshold: None,
        };
        apply_filter(&policy, &mut s_g, &mut s_r, g.as_ref(), r.as_ref()).unwrap();

        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("synthetic.jsonl");
        let mut all = s_g.clone();
        all.extend(s_r.iter().cloned());
        export_synthetic(&all, &path).unwrap();
        let back = import_synthetic(&path).unwrap();
        assert_eq!(back, all);

        for task in [Task::Qg, Task::Ir] {
            let set: Vec<&SyntheticExample> = back.iter().filter(|e| e.task == task).collect();
            let scores: Vec<f64> = set.iter().map(|e| governing(e, kind)).collect();
            let sel = select_by_fraction(&scores, 0.75).unwrap();
            let flags: Vec<bool> = set.iter().map(|e| e.kept).collect();
            assert_eq!(sel.kept, flags, "{kind:?} {task:?}");
            assert_eq!(sel.n_kept(), (scores.len() * 3).div_ceil(4));
        }
    }
}
