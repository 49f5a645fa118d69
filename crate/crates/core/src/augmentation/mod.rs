//! Synthetic (passage, question) data for self-training and back-training.
//!
//! | direction | task | input                         | output                         |
//! |-----------|------|-------------------------------|--------------------------------|
//! | self      | QG   | target passage `p_u`          | generated question `q̂`         |
//! | back      | QG   | retrieved passage `p̂`         | target question `q_u`          |
//! | self      | IR   | target question `q_u`         | retrieved passage `p̂`          |
//! | back      | IR   | generated question `q̂`        | target passage `p_u`           |
//!
//! Self-training keeps natural inputs and model-made outputs; back-training
//! keeps natural outputs and asks the dual model for the inputs.

mod adapt;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, Question};
use crate::error::{Error, Result};
use crate::models::{DecodeConfig, Generator, Retriever, TextPair};

pub use adapt::{
    adapt, AdaptConfig, AdaptOutcome, AdaptationHistory, DevEvaluator, DevScores, IterationRecord,
    MetricDevEvaluator, TaskSelection,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Qg,
    Ir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "self")]
    SelfTraining,
    #[serde(rename = "back")]
    Back,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::SelfTraining => "self",
            Direction::Back => "back",
        })
    }
}

/// One pseudo-labeled record. For QG the input is a passage and the output a
/// question; for IR the input is a question and the output a passage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub task: Task,
    pub direction: Direction,
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "output")]
    pub output_text: String,
    #[serde(rename = "src_passage_id")]
    pub source_passage_id: Option<String>,
    #[serde(rename = "src_question_id")]
    pub source_question_id: Option<String>,
    pub gen_loglik: Option<f64>,
    pub ret_sim: Option<f64>,
    pub kept: bool,
}

impl SyntheticExample {
    /// `(passage, question)` regardless of task orientation.
    pub fn passage_and_question(&self) -> (&str, &str) {
        match self.task {
            Task::Qg => (&self.input_text, &self.output_text),
            Task::Ir => (&self.output_text, &self.input_text),
        }
    }

    pub fn as_text_pair(&self) -> TextPair {
        let (passage, question) = self.passage_and_question();
        TextPair {
            passage: passage.to_string(),
            question: question.to_string(),
        }
    }
}

/// Builds one cell of the direction × task table. Output order follows the
/// order of the target items the cell iterates over. Items whose generation
/// or retrieval fails are skipped and logged.
pub fn build_synthetic(
    direction: Direction,
    task: Task,
    generator: &dyn Generator,
    retriever: &mut dyn Retriever,
    passages: &[Passage],
    questions: &[Question],
    decode: &DecodeConfig,
) -> Result<Vec<SyntheticExample>> {
    if passages.is_empty() {
        return Err(Error::InvalidArgument(
            "no unlabeled target passages".into(),
        ));
    }
    retriever.index(passages)?;
    let retriever: &dyn Retriever = retriever;
    let by_id: HashMap<&str, &Passage> = passages.iter().map(|p| (p.id.as_str(), p)).collect();

    let generated = matches!(
        (direction, task),
        (Direction::SelfTraining, Task::Qg) | (Direction::Back, Task::Ir)
    );

    let records: Vec<Option<SyntheticExample>> = if generated {
        passages
            .par_iter()
            .map(|p| {
                let g = match generator.generate(&p.text, decode) {
                    Ok(g) => g,
                    Err(e) => {
                        log::warn!("generation failed for passage {}: {e}", p.id);
                        return None;
                    }
                };
                let ret_sim = retriever.score(&g.question, &p.text).ok();
                let (input_text, output_text) = match task {
                    Task::Qg => (p.text.clone(), g.question),
                    Task::Ir => (g.question, p.text.clone()),
                };
                Some(SyntheticExample {
                    task,
                    direction,
                    input_text,
                    output_text,
                    source_passage_id: Some(p.id.clone()),
                    source_question_id: None,
                    gen_loglik: Some(g.loglik),
                    ret_sim,
                    kept: true,
                })
            })
            .collect()
    } else {
        if questions.is_empty() {
            return Err(Error::InvalidArgument(
                "no unlabeled target questions".into(),
            ));
        }
        questions
            .par_iter()
            .map(|q| {
                let hit = match retriever.retrieve(&q.text, 1) {
                    Ok(mut hits) if !hits.is_empty() => hits.swap_remove(0),
                    Ok(_) => return None,
                    Err(e) => {
                        log::warn!("retrieval failed for question {}: {e}", q.id);
                        return None;
                    }
                };
                let passage = by_id[hit.passage_id.as_str()];
                let gen_loglik = generator.score(&passage.text, &q.text).ok();
                let (input_text, output_text) = match task {
                    Task::Qg => (passage.text.clone(), q.text.clone()),
                    Task::Ir => (q.text.clone(), passage.text.clone()),
                };
                Some(SyntheticExample {
                    task,
                    direction,
                    input_text,
                    output_text,
                    source_passage_id: Some(passage.id.clone()),
                    source_question_id: Some(q.id.clone()),
                    gen_loglik,
                    ret_sim: Some(hit.similarity),
                    kept: true,
                })
            })
            .collect()
    };
    Ok(records.into_iter().flatten().collect())
}

/// Writes records as JSON Lines, filtered ones included with `kept: false`.
pub fn export_synthetic(examples: &[SyntheticExample], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn import_synthetic(path: &Path) -> Result<Vec<SyntheticExample>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                file: file.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Bm25Config, Bm25Retriever, NgramConfig, NgramCopyGenerator};

    fn passages(texts: &[&str]) -> Vec<Passage> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Passage::new(format!("p{i}"), *t).unwrap())
            .collect()
    }

    fn questions(texts: &[&str]) -> Vec<Question> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Question::new(format!("q{i}"), *t).unwrap())
            .collect()
    }

    fn generator() -> NgramCopyGenerator {
        let mut g = NgramCopyGenerator::new(NgramConfig::default()).unwrap();
        g.train(&[
            TextPair {
                passage: "overfitting happens".into(),
                question: "what is overfitting".into(),
            },
            TextPair {
                passage: "bias variance".into(),
                question: "what is bias".into(),
            },
        ])
        .unwrap();
        g
    }

    #[test]
    fn back_qg_output_is_the_target_question() {
        let g = generator();
        let mut r = Bm25Retriever::new(Bm25Config::default());
        let ps = passages(&["overfitting is memorizing noise", "trees split data"]);
        let qs = questions(&["what is overfitting"]);
        let out = build_synthetic(
            Direction::Back,
            Task::Qg,
            &g,
            &mut r,
            &ps,
            &qs,
            &DecodeConfig::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].output_text, "what is overfitting");
        assert_eq!(out[0].input_text, ps[0].text);
        assert!(out[0].gen_loglik.is_some() && out[0].ret_sim.is_some());
    }

    #[test]
    fn self_qg_inputs_are_target_passages() {
        let g = generator();
        let mut r = Bm25Retriever::new(Bm25Config::default());
        let ps = passages(&["overfitting a", "bias b", "variance c"]);
        let out = build_synthetic(
            Direction::SelfTraining,
            Task::Qg,
            &g,
            &mut r,
            &ps,
            &[],
            &DecodeConfig::default(),
        )
        .unwrap();
        let inputs: Vec<_> = out.iter().map(|e| e.input_text.as_str()).collect();
        assert_eq!(inputs, ["overfitting a", "bias b", "variance c"]);
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        export_synthetic(&[], &path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), 0);
        let recs = vec![SyntheticExample {
            task: Task::Ir,
            direction: Direction::Back,
            input_text: "q \"quoted\"".into(),
            output_text: "p".into(),
            source_passage_id: Some("p0".into()),
            source_question_id: None,
            gen_loglik: Some(-3.25),
            ret_sim: None,
            kept: false,
        }];
        export_synthetic(&recs, &path).unwrap();
        let line = fs::read_to_string(&path).unwrap();
        assert!(line.starts_with("{\"task\":\"ir\",\"direction\":\"back\",\"input\":"));
        assert_eq!(import_synthetic(&path).unwrap(), recs);
    }
}
