//! Deterministic synthetic corpora for tests, benchmarks and demos.
//!
//! Content words are pseudo-words grouped into topic clusters. Each domain
//! has its own clusters and both draw on a common set of shared clusters.
//! Questions name the passage's key term, reuse a few of its words and
//! sometimes a cluster word the passage lacks. The domains also
//! differ in question style: source questions are mostly "what is" questions,
//! target questions lean on "how" and "why".

use serde::{Deserialize, Serialize};

use crate::corpus::{AlignedPair, CorpusBundle, Passage, Question, Split};
use crate::error::Result;
use crate::rng::{derive_seed, SeededRng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskCorpusConfig {
    pub seed: u64,
    pub source_pairs: usize,
    pub target_passages: usize,
    pub target_questions: usize,
    pub dev_pairs: usize,
    pub test_pairs: usize,
    pub clusters: usize,
    pub cluster_size: usize,
}

impl Default for DeskCorpusConfig {
    fn default() -> Self {
        DeskCorpusConfig {
            seed: 7,
            source_pairs: 2000,
            target_passages: 1000,
            target_questions: 1000,
            dev_pairs: 200,
            test_pairs: 200,
            clusters: 12,
            cluster_size: 6,
        }
    }
}

// Disjoint from the words of the question templates.
const FILLER: [&str; 14] = [
    "of", "a", "to", "with", "by", "on", "from", "that", "as", "it", "or", "at", "this", "an",
];

fn pseudo_word(rng: &mut SeededRng, onsets: &[&str], vowels: &[&str]) -> String {
    let syllables = 2 + rng.below(2);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                onsets[rng.below(onsets.len() as u64) as usize],
                vowels[rng.below(vowels.len() as u64) as usize]
            )
        })
        .collect()
}

fn clusters(
    rng: &mut SeededRng,
    cfg: &DeskCorpusConfig,
    onsets: &[&str],
    vowels: &[&str],
) -> Vec<Vec<String>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(cfg.clusters);
    for _ in 0..cfg.clusters {
        let mut cluster = Vec::with_capacity(cfg.cluster_size);
        while cluster.len() < cfg.cluster_size {
            let w = pseudo_word(rng, onsets, vowels);
            if seen.insert(w.clone()) {
                cluster.push(w);
            }
        }
        out.push(cluster);
    }
    out
}

fn pick<'a>(rng: &mut SeededRng, items: &'a [String]) -> &'a str {
    &items[rng.below(items.len() as u64) as usize]
}

struct Domain<'a> {
    own: Vec<Vec<String>>,
    shared: &'a [Vec<String>],
    /// Cumulative template weights: description, method, explanation, comparison, preference.
    style: [u64; 5],
    /// Number of trailing qualifiers, drawn uniformly from this list.
    qualifiers: &'static [usize],
}

impl Domain<'_> {
    /// A passage and a question about it. The key term comes from a cluster
    /// of the domain's own vocabulary; the rest of the passage mixes that
    /// cluster with one shared cluster and function words.
    fn document(&self, rng: &mut SeededRng) -> (String, String) {
        let cluster = &self.own[rng.below(self.own.len() as u64) as usize];
        let shared = &self.shared[rng.below(self.shared.len() as u64) as usize];
        let key = pick(rng, cluster).to_string();

        let len = 20 + rng.below(16) as usize;
        let mut passage = vec![key.clone()];
        let mut content = Vec::new();
        while passage.len() < len {
            let r = rng.below(10);
            let w = if r < 3 {
                FILLER[rng.below(FILLER.len() as u64) as usize].to_string()
            } else {
                let w = pick(rng, if r < 7 { cluster } else { shared }).to_string();
                content.push(w.clone());
                w
            };
            passage.push(w);
        }
        passage.push(key.clone());

        let from_passage = |rng: &mut SeededRng| {
            if rng.below(4) == 0 {
                pick(rng, cluster).to_string()
            } else {
                content[rng.below(content.len() as u64) as usize].clone()
            }
        };
        let w1 = from_passage(rng);
        let roll = rng.below(self.style[4]);
        let mut question = match self.style.iter().position(|s| roll < *s).unwrap() {
            0 => format!("what is {key} in {w1}"),
            1 => format!("how do you use {key} for {w1}"),
            2 => format!("why does {key} need {w1}"),
            3 => format!("what is the difference between {key} and {w1}"),
            _ => format!("is {key} better than {w1}"),
        };
        // Optional trailing qualifiers make question length vary.
        let extra = self.qualifiers[rng.below(self.qualifiers.len() as u64) as usize];
        for _ in 0..extra {
            let connective = ["in", "for", "and", "when", "under", "about"][rng.below(6) as usize];
            let w = from_passage(rng);
            question.push(' ');
            question.push_str(connective);
            question.push(' ');
            question.push_str(&w);
        }
        (passage.join(" "), question)
    }
}

/// Builds a bundle. Target passages, target questions, dev and test pairs come
/// from disjoint documents; the candidate pool is the target passages plus the
/// dev and test gold passages.
pub fn desk_corpus(cfg: &DeskCorpusConfig) -> Result<CorpusBundle> {
    let mut rng = SeededRng::new(derive_seed(cfg.seed, "desk-corpus"));
    let shared = clusters(
        &mut rng,
        cfg,
        &["f", "h", "w", "y", "ch", "th"],
        &["a", "e", "o"],
    );
    let source = Domain {
        own: clusters(
            &mut rng,
            cfg,
            &["b", "d", "g", "k", "p", "t", "br", "tr"],
            &["a", "o", "u"],
        ),
        shared: &shared,
        style: [60, 75, 85, 93, 100],
        qualifiers: &[0, 0, 1, 1, 1, 2, 2, 3],
    };
    let target = Domain {
        own: clusters(
            &mut rng,
            cfg,
            &["l", "m", "n", "r", "s", "v", "z", "sh"],
            &["e", "i", "ai"],
        ),
        shared: &shared,
        style: [25, 55, 80, 90, 100],
        qualifiers: &[0, 1, 2, 3, 4, 5],
    };

    let pair = |prefix: &str, i: usize, (p, q): (String, String), split| -> Result<AlignedPair> {
        Ok(AlignedPair {
            question: Question::new(format!("{prefix}-q{i}"), q)?,
            passage: Passage::new(format!("{prefix}-p{i}"), p)?,
            split,
        })
    };

    let mut bundle = CorpusBundle::default();
    for i in 0..cfg.source_pairs {
        bundle.source_pairs.push(pair(
            "src",
            i,
            source.document(&mut rng),
            Split::SourceTrain,
        )?);
    }
    for i in 0..cfg.target_passages {
        let (p, _) = target.document(&mut rng);
        bundle
            .target_passages
            .push(Passage::new(format!("tgt-p{i}"), p)?);
    }
    for i in 0..cfg.target_questions {
        let (_, q) = target.document(&mut rng);
        bundle
            .target_questions
            .push(Question::new(format!("tgt-q{i}"), q)?);
    }
    for i in 0..cfg.dev_pairs {
        bundle
            .dev_pairs
            .push(pair("dev", i, target.document(&mut rng), Split::TargetDev)?);
    }
    for i in 0..cfg.test_pairs {
        bundle.test_pairs.push(pair(
            "test",
            i,
            target.document(&mut rng),
            Split::TargetTest,
        )?);
    }
    bundle.candidate_passages = bundle.target_passages.clone();
    bundle.candidate_passages.extend(
        bundle
            .dev_pairs
            .iter()
            .chain(&bundle.test_pairs)
            .map(|p| p.passage.clone()),
    );
    Ok(bundle)
}
