//! Corpus data model, JSON Lines ingestion, validation and seeded sampling.
//!
//! A [`CorpusBundle`] holds the labeled source pairs, the unaligned target
//! passages and questions, dev/test pairs and the candidate pool used for
//! retrieval evaluation. Bundles are immutable after [`load_corpus`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Lowercase, split on Unicode whitespace, strip leading/trailing ASCII
/// punctuation from each token and drop tokens that end up empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            raw.to_lowercase()
                .trim_matches(|c: char| c.is_ascii_punctuation())
                .to_string()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

macro_rules! text_record {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub struct $name {
            pub id: String,
            pub text: String,
            pub token_count: usize,
        }

        impl $name {
            /// Builds a record, rejecting empty ids and whitespace-only text.
            pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
                let id = id.into();
                let text = text.into();
                if id.is_empty() {
                    return Err(Error::Validation("empty id".into()));
                }
                if text.trim().is_empty() {
                    return Err(Error::Validation(format!("{id}: empty text")));
                }
                let token_count = tokenize(&text).len();
                Ok($name { id, text, token_count })
            }

            pub fn tokens(&self) -> Vec<String> {
                tokenize(&self.text)
            }
        }
    };
}

text_record!(
    /// A passage of text; one retrieval unit.
    Passage
);
text_record!(Question);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    SourceTrain,
    TargetDev,
    TargetTest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub question: Question,
    pub passage: Passage,
    pub split: Split,
}

impl AlignedPair {
    pub fn key(&self) -> (&str, &str) {
        (&self.question.id, &self.passage.id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub source_pairs: Vec<AlignedPair>,
    pub target_passages: Vec<Passage>,
    pub target_questions: Vec<Question>,
    pub dev_pairs: Vec<AlignedPair>,
    pub test_pairs: Vec<AlignedPair>,
    pub candidate_passages: Vec<Passage>,
}

/// Names the JSON Lines file behind each part of a bundle. Paths are relative
/// to the root directory handed to [`load_corpus`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub source_pairs: PathBuf,
    pub target_passages: PathBuf,
    pub target_questions: PathBuf,
    pub dev_pairs: PathBuf,
    pub test_pairs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_passages: Option<PathBuf>,
}

impl Manifest {
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::MalformedLine {
            file: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextLine {
    #[serde(default)]
    id: Option<String>,
    text: String,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    question: String,
    passage: String,
    #[serde(default)]
    question_id: Option<String>,
    #[serde(default)]
    passage_id: Option<String>,
}

/// Non-fatal findings from [`CorpusBundle::validate`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub source_pairs: usize,
    pub target_passages: usize,
    pub target_questions: usize,
    pub dev_pairs: usize,
    pub test_pairs: usize,
    pub candidate_passages: usize,
    /// Dev/test gold passages whose text also occurs in the unlabeled target passages.
    pub eval_passages_in_target_pool: usize,
    pub warnings: Vec<String>,
}

/// Reads every line of a JSON Lines file, skipping blank lines. Yields `(line_no, line)`.
fn read_lines(root: &Path, rel: &Path) -> Result<Vec<(usize, String)>> {
    let path = root.join(rel);
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse_line<T: serde::de::DeserializeOwned>(file: &str, line: usize, raw: &str) -> Result<T> {
    serde_json::from_str(raw).map_err(|e| Error::MalformedLine {
        file: file.to_string(),
        line,
        message: e.to_string(),
    })
}

fn file_label(rel: &Path) -> String {
    rel.to_string_lossy().replace('\\', "/")
}

fn load_text_file<T>(
    root: &Path,
    rel: &Path,
    build: impl Fn(String, String) -> Result<T>,
) -> Result<Vec<T>> {
    let label = file_label(rel);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, raw) in read_lines(root, rel)? {
        let rec: TextLine = parse_line(&label, line, &raw)?;
        if rec.text.trim().is_empty() {
            return Err(Error::EmptyText { file: label, line });
        }
        let id = match rec.id {
            Some(id) if !id.is_empty() => {
                if !seen.insert(id.clone()) {
                    return Err(Error::DuplicateId {
                        file: label,
                        line,
                        id,
                    });
                }
                id
            }
            _ => format!("{label}:{line}"),
        };
        out.push(build(id, rec.text)?);
    }
    Ok(out)
}

fn load_pairs_file(
    root: &Path,
    rel: &Path,
    split: Split,
    known_passages: Option<&HashMap<String, String>>,
) -> Result<Vec<AlignedPair>> {
    let label = file_label(rel);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, raw) in read_lines(root, rel)? {
        let rec: PairLine = parse_line(&label, line, &raw)?;
        if rec.question.trim().is_empty() || rec.passage.trim().is_empty() {
            return Err(Error::EmptyText { file: label, line });
        }
        let auto = format!("{label}:{line}");
        let question_id = rec
            .question_id
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| auto.clone());
        let passage_id = match rec.passage_id.filter(|s| !s.is_empty()) {
            Some(id) => id,
            // An explicit candidate pool lets id-less gold passages resolve by text.
            None => known_passages
                .and_then(|m| m.get(&rec.passage))
                .cloned()
                .unwrap_or(auto),
        };
        if !seen.insert((question_id.clone(), passage_id.clone())) {
            return Err(Error::DuplicateId {
                file: label,
                line,
                id: format!("({question_id}, {passage_id})"),
            });
        }
        out.push(AlignedPair {
            question: Question::new(question_id, rec.question)?,
            passage: Passage::new(passage_id, rec.passage)?,
            split,
        });
    }
    Ok(out)
}

/// Loads and validates a bundle. Ids missing from a line become `"<file>:<line>"`
/// where `<file>` is the path as written in the manifest.
pub fn load_corpus(root: &Path, manifest: &Manifest) -> Result<CorpusBundle> {
    let target_passages = load_text_file(root, &manifest.target_passages, Passage::new)?;
    let target_questions = load_text_file(root, &manifest.target_questions, Question::new)?;
    let explicit_candidates = match &manifest.candidate_passages {
        Some(rel) => Some(load_text_file(root, rel, Passage::new)?),
        None => None,
    };
    let by_text: Option<HashMap<String, String>> = explicit_candidates.as_ref().map(|c| {
        let mut m = HashMap::new();
        for p in c {
            m.entry(p.text.clone()).or_insert_with(|| p.id.clone());
        }
        m
    });

    let source_pairs = load_pairs_file(root, &manifest.source_pairs, Split::SourceTrain, None)?;
    let dev_pairs = load_pairs_file(
        root,
        &manifest.dev_pairs,
        Split::TargetDev,
        by_text.as_ref(),
    )?;
    let test_pairs = load_pairs_file(
        root,
        &manifest.test_pairs,
        Split::TargetTest,
        by_text.as_ref(),
    )?;

    let candidate_passages = match explicit_candidates {
        Some(c) => c,
        None => {
            let mut seen = HashSet::new();
            let mut pool = Vec::new();
            let gold = dev_pairs.iter().chain(&test_pairs).map(|p| &p.passage);
            for p in target_passages.iter().chain(gold) {
                if seen.insert(p.id.clone()) {
                    pool.push(p.clone());
                }
            }
            pool
        }
    };

    let bundle = CorpusBundle {
        source_pairs,
        target_passages,
        target_questions,
        dev_pairs,
        test_pairs,
        candidate_passages,
    };
    bundle.validate()?;
    Ok(bundle)
}

impl CorpusBundle {
    /// Checks the cross-part invariants. Hard violations are errors; overlaps the
    /// loader tolerates are returned as warnings.
    pub fn validate(&self) -> Result<ValidationReport> {
        unique_ids(
            self.target_passages.iter().map(|p| &p.id),
            "target_passages",
        )?;
        unique_ids(
            self.target_questions.iter().map(|q| &q.id),
            "target_questions",
        )?;
        unique_ids(
            self.candidate_passages.iter().map(|p| &p.id),
            "candidate_passages",
        )?;

        for (name, pairs) in [
            ("source_pairs", &self.source_pairs),
            ("dev_pairs", &self.dev_pairs),
            ("test_pairs", &self.test_pairs),
        ] {
            let mut keys = HashSet::new();
            for p in pairs.iter() {
                if !keys.insert(p.key()) {
                    return Err(Error::Validation(format!(
                        "{name}: duplicate pair ({}, {})",
                        p.question.id, p.passage.id
                    )));
                }
            }
        }

        let dev_keys: HashSet<_> = self.dev_pairs.iter().map(AlignedPair::key).collect();
        if let Some(p) = self.test_pairs.iter().find(|p| dev_keys.contains(&p.key())) {
            return Err(Error::Validation(format!(
                "pair ({}, {}) appears in both dev and test",
                p.question.id, p.passage.id
            )));
        }

        let pool: HashMap<&str, &str> = self
            .candidate_passages
            .iter()
            .map(|p| (p.id.as_str(), p.text.as_str()))
            .collect();
        for p in self.dev_pairs.iter().chain(&self.test_pairs) {
            match pool.get(p.passage.id.as_str()) {
                None => {
                    return Err(Error::Validation(format!(
                        "gold passage {:?} of question {:?} is missing from candidate_passages",
                        p.passage.id, p.question.id
                    )))
                }
                Some(text) if *text != p.passage.text => {
                    return Err(Error::Validation(format!(
                        "gold passage {:?} text differs from the candidate with the same id",
                        p.passage.id
                    )))
                }
                Some(_) => {}
            }
        }

        let target_texts: HashSet<&str> = self
            .target_passages
            .iter()
            .map(|p| p.text.as_str())
            .collect();
        let overlap = self
            .dev_pairs
            .iter()
            .chain(&self.test_pairs)
            .filter(|p| target_texts.contains(p.passage.text.as_str()))
            .count();
        let mut warnings = Vec::new();
        if overlap > 0 {
            warnings.push(format!(
                "{overlap} dev/test gold passages also occur in target_passages"
            ));
        }
        for (name, empty) in [
            ("source_pairs", self.source_pairs.is_empty()),
            ("target_passages", self.target_passages.is_empty()),
            ("target_questions", self.target_questions.is_empty()),
            ("dev_pairs", self.dev_pairs.is_empty()),
            ("test_pairs", self.test_pairs.is_empty()),
        ] {
            if empty {
                warnings.push(format!("{name} is empty"));
            }
        }

        Ok(ValidationReport {
            source_pairs: self.source_pairs.len(),
            target_passages: self.target_passages.len(),
            target_questions: self.target_questions.len(),
            dev_pairs: self.dev_pairs.len(),
            test_pairs: self.test_pairs.len(),
            candidate_passages: self.candidate_passages.len(),
            eval_passages_in_target_pool: overlap,
            warnings,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Writes the bundle as JSON Lines files with explicit ids plus a
    /// `manifest.json`, so that loading the directory reproduces the bundle.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            source_pairs: "source_pairs.jsonl".into(),
            target_passages: "target_passages.jsonl".into(),
            target_questions: "target_questions.jsonl".into(),
            dev_pairs: "dev_pairs.jsonl".into(),
            test_pairs: "test_pairs.jsonl".into(),
            candidate_passages: Some("candidate_passages.jsonl".into()),
        };
        let text_lines = |items: Vec<(&String, &String)>| -> Result<String> {
            let mut out = String::new();
            for (id, text) in items {
                out.push_str(&serde_json::to_string(
                    &serde_json::json!({"id": id, "text": text}),
                )?);
                out.push('\n');
            }
            Ok(out)
        };
        let pair_lines = |pairs: &[AlignedPair]| -> Result<String> {
            let mut out = String::new();
            for p in pairs {
                let line = PairLine {
                    question: p.question.text.clone(),
                    passage: p.passage.text.clone(),
                    question_id: Some(p.question.id.clone()),
                    passage_id: Some(p.passage.id.clone()),
                };
                out.push_str(&serde_json::to_string(&line)?);
                out.push('\n');
            }
            Ok(out)
        };
        let files = [
            (&manifest.source_pairs, pair_lines(&self.source_pairs)?),
            (
                &manifest.target_passages,
                text_lines(
                    self.target_passages
                        .iter()
                        .map(|p| (&p.id, &p.text))
                        .collect(),
                )?,
            ),
            (
                &manifest.target_questions,
                text_lines(
                    self.target_questions
                        .iter()
                        .map(|q| (&q.id, &q.text))
                        .collect(),
                )?,
            ),
            (&manifest.dev_pairs, pair_lines(&self.dev_pairs)?),
            (&manifest.test_pairs, pair_lines(&self.test_pairs)?),
            (
                manifest.candidate_passages.as_ref().unwrap(),
                text_lines(
                    self.candidate_passages
                        .iter()
                        .map(|p| (&p.id, &p.text))
                        .collect(),
                )?,
            ),
        ];
        for (rel, body) in files {
            let path = dir.join(rel);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes())
                .map_err(|e| Error::io(&path, e))?;
        }
        let mpath = dir.join("manifest.json");
        fs::write(&mpath, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&mpath, e))?;
        Ok(manifest)
    }

    /// Candidate pool keyed by passage id.
    pub fn passage_index(&self) -> BTreeMap<&str, &Passage> {
        self.candidate_passages
            .iter()
            .map(|p| (p.id.as_str(), p))
            .collect()
    }

    /// Unique passages of the source pairs, in first-seen order.
    pub fn source_passages(&self) -> Vec<Passage> {
        let mut seen = HashSet::new();
        self.source_pairs
            .iter()
            .filter(|p| seen.insert(p.passage.id.clone()))
            .map(|p| p.passage.clone())
            .collect()
    }
}

fn unique_ids<'a>(ids: impl Iterator<Item = &'a String>, part: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Validation(format!("{part}: duplicate id {id:?}")));
        }
    }
    Ok(())
}

/// Draws `n` items uniformly without replacement using a partial Fisher-Yates
/// shuffle over a [`SeededRng`] stream. The result depends only on `seed`.
pub fn sample<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    if n > items.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} items from {}",
            items.len()
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut idx: Vec<usize> = (0..items.len()).collect();
    for i in 0..n {
        let j = i + rng.below((items.len() - i) as u64) as usize;
        idx.swap(i, j);
    }
    Ok(idx[..n].iter().map(|&i| items[i].clone()).collect())
}
