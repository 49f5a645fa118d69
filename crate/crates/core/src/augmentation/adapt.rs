//! Iterative generate / filter / fine-tune loop with best-checkpoint reversion.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{build_synthetic, Direction, SyntheticExample, Task};
use crate::corpus::tokenize;
use crate::corpus::CorpusBundle;
use crate::error::{Error, Result};
use crate::evaluation::{bleu_with, generate_for_pairs, topk_accuracy, BleuSmoothing};
use crate::filters::{apply_filter, FilterPolicy, FilterReport};
use crate::models::{
    mine_negatives, Bm25Config, Bm25Retriever, DecodeConfig, Generator, RetrievalExample, Retriever,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskSelection {
    Qg,
    Ir,
    #[default]
    Both,
}

impl TaskSelection {
    pub fn tracks_qg(self) -> bool {
        self != TaskSelection::Ir
    }

    pub fn tracks_ir(self) -> bool {
        self != TaskSelection::Qg
    }
}

impl fmt::Display for TaskSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskSelection::Qg => "qg",
            TaskSelection::Ir => "ir",
            TaskSelection::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub mode: Direction,
    pub task: TaskSelection,
    /// Fine-tune both models every iteration, not only the tracked one.
    pub adapt_both: bool,
    pub max_iters: usize,
    pub decode: DecodeConfig,
    pub filter: FilterPolicy,
    pub negatives_k: usize,
    pub bm25: Bm25Config,
    /// Retrieval depth of the IR dev metric.
    pub dev_k: usize,
}

impl AdaptConfig {
    pub fn new(mode: Direction, task: TaskSelection) -> Self {
        AdaptConfig {
            mode,
            task,
            adapt_both: true,
            max_iters: 2,
            decode: DecodeConfig::default(),
            filter: FilterPolicy::default(),
            negatives_k: crate::models::negatives::DEFAULT_NEGATIVES,
            bm25: Bm25Config::default(),
            dev_k: 40,
        }
    }
}

/// Dev scores of the tracked tasks; untracked ones may be `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DevScores {
    pub qg: Option<f64>,
    pub ir: Option<f64>,
}

pub trait DevEvaluator {
    fn evaluate(
        &mut self,
        iteration: usize,
        task: TaskSelection,
        generator: &dyn Generator,
        retriever: &mut dyn Retriever,
        bundle: &CorpusBundle,
    ) -> Result<DevScores>;
}

/// Add-one smoothed BLEU-4 of generated dev questions and recall at `k` over the candidate pool.
#[derive(Clone, Debug)]
pub struct MetricDevEvaluator {
    pub decode: DecodeConfig,
    pub k: usize,
}

impl DevEvaluator for MetricDevEvaluator {
    fn evaluate(
        &mut self,
        _iteration: usize,
        task: TaskSelection,
        generator: &dyn Generator,
        retriever: &mut dyn Retriever,
        bundle: &CorpusBundle,
    ) -> Result<DevScores> {
        let pairs = &bundle.dev_pairs;
        let mut scores = DevScores::default();
        if task.tracks_qg() {
            let hyps = generate_for_pairs(generator, pairs, &self.decode)?;
            let hyps: Vec<Vec<String>> = hyps.iter().map(|h| tokenize(h)).collect();
            let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.question.tokens()).collect();
            scores.qg = Some(bleu_with(&hyps, &refs, 4, BleuSmoothing::AddOne)?);
        }
        if task.tracks_ir() {
            let acc = topk_accuracy(retriever, pairs, &bundle.candidate_passages, &[self.k])?;
            scores.ir = acc.at(self.k);
        }
        Ok(scores)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub dev_metric: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_qg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_ir: Option<f64>,
    pub sg_size: usize,
    pub sr_size: usize,
    pub kept_frac_g: f64,
    pub kept_frac_r: f64,
    pub best: bool,
    /// Seconds; left out of the JSON so histories stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptationHistory {
    pub iterations: Vec<IterationRecord>,
}

impl AdaptationHistory {
    pub fn best(&self) -> Option<&IterationRecord> {
        self.iterations.iter().find(|r| r.best)
    }

    /// Best dev metric minus the first iteration's.
    pub fn net_gain(&self) -> Option<f64> {
        Some(self.best()?.dev_metric - self.iterations.first()?.dev_metric)
    }
}

pub struct AdaptOutcome {
    pub generator: Box<dyn Generator>,
    pub retriever: Box<dyn Retriever>,
    pub history: AdaptationHistory,
    /// Synthetic sets of the best iteration, generator set first.
    pub best_synthetic: Vec<SyntheticExample>,
    pub filter_reports: Vec<FilterReport>,
}

struct Checkpoint {
    generator: Box<dyn Generator>,
    retriever: Box<dyn Retriever>,
    synthetic: Vec<SyntheticExample>,
    reports: Vec<FilterReport>,
}

fn dev_value(task: TaskSelection, s: &DevScores) -> Result<f64> {
    let missing =
        |what: &str| Error::InvalidArgument(format!("dev evaluator returned no {what} score"));
    let qg = || s.qg.ok_or_else(|| missing("qg"));
    let ir = || s.ir.ok_or_else(|| missing("ir"));
    Ok(match task {
        TaskSelection::Qg => qg()?,
        TaskSelection::Ir => ir()?,
        TaskSelection::Both => (qg()? + ir()?) / 2.0,
    })
}

/// Runs up to `max_iters` rounds, stopping after the first round in which a
/// tracked dev score falls below the previous round's. The returned models
/// are copies taken at the best round.
pub fn adapt(
    bundle: &CorpusBundle,
    mut generator: Box<dyn Generator>,
    mut retriever: Box<dyn Retriever>,
    config: &AdaptConfig,
    evaluator: &mut dyn DevEvaluator,
) -> Result<AdaptOutcome> {
    if config.max_iters < 1 {
        return Err(Error::InvalidArgument(
            "max_iters must be at least 1".into(),
        ));
    }
    if bundle.dev_pairs.is_empty() {
        return Err(Error::Validation("the dev split is empty".into()));
    }
    config.filter.validate()?;
    let tune_generator = config.task.tracks_qg() || config.adapt_both;
    let tune_retriever = config.task.tracks_ir() || config.adapt_both;

    let passage_text: HashMap<&str, &str> = bundle
        .target_passages
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    let bm25 = Bm25Retriever::over(&bundle.target_passages, config.bm25.clone());
    // Mined once, at the first iteration, keyed by the id of the record's natural side.
    let mut negatives: HashMap<String, Vec<String>> = HashMap::new();

    let mut history = AdaptationHistory::default();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut previous: Option<DevScores> = None;

    for t in 1..=config.max_iters {
        let started = Instant::now();
        let build = |task, generator: &dyn Generator, retriever: &mut dyn Retriever| {
            build_synthetic(
                config.mode,
                task,
                generator,
                retriever,
                &bundle.target_passages,
                &bundle.target_questions,
                &config.decode,
            )
        };
        let mut s_g = if tune_generator {
            build(Task::Qg, generator.as_ref(), retriever.as_mut())?
        } else {
            Vec::new()
        };
        let mut s_r = if tune_retriever {
            build(Task::Ir, generator.as_ref(), retriever.as_mut())?
        } else {
            Vec::new()
        };
        let outcome = apply_filter(
            &config.filter,
            &mut s_g,
            &mut s_r,
            generator.as_ref(),
            retriever.as_ref(),
        )?;
        for (set, report) in [
            (&s_g, &outcome.generator_set),
            (&s_r, &outcome.retriever_set),
        ] {
            if !set.is_empty() && report.n_kept == 0 {
                return Err(Error::Validation(format!(
                    "iteration {t}: the {:?} filter kept none of {} synthetic examples (threshold {})",
                    report.critic, report.n_in, report.threshold
                )));
            }
        }

        if tune_generator {
            let pairs: Vec<_> = s_g
                .iter()
                .filter(|e| e.kept)
                .map(|e| e.as_text_pair())
                .collect();
            generator.fine_tune(&pairs)?;
        }
        if tune_retriever {
            let mut examples = Vec::new();
            for e in s_r.iter().filter(|e| e.kept) {
                let natural_id = match config.mode {
                    Direction::SelfTraining => e.source_question_id.as_deref(),
                    Direction::Back => e.source_passage_id.as_deref(),
                };
                let gold_id = e.source_passage_id.as_deref().unwrap_or_default();
                let ids = match natural_id {
                    Some(id) if t == 1 => negatives
                        .entry(id.to_string())
                        .or_insert(
                            mine_negatives(id, &e.input_text, gold_id, &bm25, config.negatives_k)?
                                .negative_passage_ids,
                        )
                        .clone(),
                    Some(id) => negatives.get(id).cloned().unwrap_or_default(),
                    None => Vec::new(),
                };
                examples.push(RetrievalExample {
                    question: e.input_text.clone(),
                    positive: e.output_text.clone(),
                    negatives: ids
                        .iter()
                        .filter(|id| id.as_str() != gold_id)
                        .filter_map(|id| passage_text.get(id.as_str()).map(|t| t.to_string()))
                        .collect(),
                });
            }
            retriever.fine_tune(&examples)?;
        }

        let scores = evaluator.evaluate(
            t,
            config.task,
            generator.as_ref(),
            retriever.as_mut(),
            bundle,
        )?;
        let dev_metric = dev_value(config.task, &scores)?;
        log::info!(
            "iteration {t}: dev {dev_metric:.6}, |S_G| {} kept {}, |S_R| {} kept {}",
            s_g.len(),
            outcome.generator_set.n_kept,
            s_r.len(),
            outcome.retriever_set.n_kept
        );
        history.iterations.push(IterationRecord {
            t,
            dev_metric,
            dev_qg: scores.qg,
            dev_ir: scores.ir,
            sg_size: s_g.len(),
            sr_size: s_r.len(),
            kept_frac_g: outcome.generator_set.kept_fraction(),
            kept_frac_r: outcome.retriever_set.kept_fraction(),
            best: false,
            wall_time: started.elapsed().as_secs_f64(),
        });

        if best.as_ref().map_or(true, |(_, m, _)| dev_metric > *m) {
            let mut synthetic = s_g;
            synthetic.extend(s_r);
            best = Some((
                t,
                dev_metric,
                Checkpoint {
                    generator: generator.snapshot()?,
                    retriever: retriever.snapshot()?,
                    synthetic,
                    reports: vec![outcome.generator_set, outcome.retriever_set],
                },
            ));
        }

        let degraded = previous.is_some_and(|p| {
            let fell = |now: Option<f64>, before: Option<f64>| matches!((now, before), (Some(a), Some(b)) if a < b);
            (config.task.tracks_qg() && fell(scores.qg, p.qg)) || (config.task.tracks_ir() && fell(scores.ir, p.ir))
        });
        if degraded {
            log::info!("dev performance decreased at iteration {t}; stopping");
            break;
        }
        previous = Some(scores);
    }

    let (best_t, _, checkpoint) = best.expect("at least one iteration ran");
    history.iterations[best_t - 1].best = true;
    Ok(AdaptOutcome {
        generator: checkpoint.generator,
        retriever: checkpoint.retriever,
        history,
        best_synthetic: checkpoint.synthetic,
        filter_reports: checkpoint.reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AlignedPair, Passage, Question, Split};
    use crate::models::{Generated, Hit, TextPair};

    /// Counts fine-tuning rounds; the count shows up in the name.
    #[derive(Clone)]
    struct StubGen {
        name: String,
        rounds: usize,
    }

    impl Generator for StubGen {
        fn name(&self) -> &str {
            &self.name
        }
        fn train(&mut self, _: &[TextPair]) -> Result<()> {
            Ok(())
        }
        fn fine_tune(&mut self, _: &[TextPair]) -> Result<()> {
            self.rounds += 1;
            self.name = format!("gen@{}", self.rounds);
            Ok(())
        }
        fn generate(&self, passage: &str, _: &DecodeConfig) -> Result<Generated> {
            Ok(Generated {
                question: format!("what about {passage}"),
                loglik: -1.0,
            })
        }
        fn score(&self, _: &str, _: &str) -> Result<f64> {
            Ok(-1.0)
        }
        fn snapshot(&self) -> Result<Box<dyn Generator>> {
            Ok(Box::new(self.clone()))
        }
    }

    #[derive(Clone, Default)]
    struct StubRet {
        ids: Vec<String>,
    }

    impl Retriever for StubRet {
        fn name(&self) -> &str {
            "stub"
        }
        fn train(&mut self, _: &[RetrievalExample]) -> Result<()> {
            Ok(())
        }
        fn fine_tune(&mut self, _: &[RetrievalExample]) -> Result<()> {
            Ok(())
        }
        fn index(&mut self, passages: &[Passage]) -> Result<()> {
            self.ids = passages.iter().map(|p| p.id.clone()).collect();
            Ok(())
        }
        fn retrieve(&self, _: &str, k: usize) -> Result<Vec<Hit>> {
            Ok(self
                .ids
                .iter()
                .take(k)
                .map(|id| Hit {
                    passage_id: id.clone(),
                    similarity: 1.0,
                })
                .collect())
        }
        fn score(&self, _: &str, _: &str) -> Result<f64> {
            Ok(1.0)
        }
        fn snapshot(&self) -> Result<Box<dyn Retriever>> {
            Ok(Box::new(self.clone()))
        }
    }

    struct Rigged(Vec<f64>);

    impl DevEvaluator for Rigged {
        fn evaluate(
            &mut self,
            t: usize,
            _: TaskSelection,
            _: &dyn Generator,
            _: &mut dyn Retriever,
            _: &CorpusBundle,
        ) -> Result<DevScores> {
            Ok(DevScores {
                qg: Some(self.0[t - 1]),
                ir: None,
            })
        }
    }

    fn bundle() -> CorpusBundle {
        let p = Passage::new("p0", "gradient descent steps").unwrap();
        CorpusBundle {
            target_passages: vec![p.clone(), Passage::new("p1", "kernel methods").unwrap()],
            target_questions: vec![Question::new("q0", "what is a kernel").unwrap()],
            dev_pairs: vec![AlignedPair {
                question: Question::new("d0", "what is descent").unwrap(),
                passage: p.clone(),
                split: Split::TargetDev,
            }],
            candidate_passages: vec![p],
            ..CorpusBundle::default()
        }
    }

    fn run(sequence: Vec<f64>, max_iters: usize) -> Result<AdaptOutcome> {
        let mut cfg = AdaptConfig::new(Direction::Back, TaskSelection::Qg);
        cfg.max_iters = max_iters;
        adapt(
            &bundle(),
            Box::new(StubGen {
                name: "gen@0".into(),
                rounds: 0,
            }),
            Box::new(StubRet::default()),
            &cfg,
            &mut Rigged(sequence),
        )
    }

    #[test]
    fn stops_after_first_decrease_and_reverts() {
        let out = run(vec![10.0, 12.0, 11.0, 20.0], 10).unwrap();
        let h = &out.history;
        assert_eq!(h.iterations.len(), 3);
        assert_eq!(h.best().unwrap().t, 2);
        assert_eq!(h.iterations.iter().filter(|r| r.best).count(), 1);
        assert_eq!(h.net_gain(), Some(2.0));
        assert_eq!(out.generator.name(), "gen@2");
    }

    #[test]
    fn immediate_decrease_keeps_first_iteration() {
        let out = run(vec![10.0, 9.0], 5).unwrap();
        assert_eq!(out.history.best().unwrap().t, 1);
        assert_eq!(out.history.net_gain(), Some(0.0));
        assert_eq!(out.generator.name(), "gen@1");
    }

    #[test]
    fn single_iteration() {
        let out = run(vec![1.0], 1).unwrap();
        assert_eq!(out.history.iterations.len(), 1);
        assert_eq!(out.generator.name(), "gen@1");
        assert!(run(vec![], 0).is_err());
    }

    #[test]
    fn synthetic_sizes_cover_every_unlabeled_item() {
        let out = run(vec![1.0], 1).unwrap();
        let r = &out.history.iterations[0];
        assert_eq!(r.sg_size + r.sr_size, 3);
        assert!(out.best_synthetic.iter().all(|e| e.kept));
    }

    #[test]
    fn history_json_leaves_out_wall_time() {
        let out = run(vec![1.0], 1).unwrap();
        let json = serde_json::to_string(&out.history).unwrap();
        assert_eq!(
            json,
            r#"{"iterations":[{"t":1,"dev_metric":1.0,"dev_qg":1.0,"sg_size":1,"sr_size":2,"kept_frac_g":1.0,"kept_frac_r":1.0,"best":true}]}"#
        );
    }
}
