//! Okapi BM25.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf(t,d)·(k1 + 1) / (tf(t,d) + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! Query tokens are summed with multiplicity. The `1 +` inside the logarithm
//! keeps idf positive, so a passage sharing no token with the query scores 0.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{checkpoint, rank_hits, Hit, RetrievalExample, Retriever};
use crate::corpus::{tokenize, Passage};
use crate::error::{Error, Result};

pub(crate) const MODEL_TAG: &str = "bm25";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Config {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Config {
    fn default() -> Self {
        Bm25Config { k1: 1.2, b: 0.75 }
    }
}

#[derive(Clone, Debug)]
struct Bm25Index {
    ids: Vec<String>,
    postings: HashMap<String, Vec<(usize, f64)>>,
    doc_len: Vec<f64>,
    avgdl: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Bm25Retriever {
    config: Bm25Config,
    index: Option<Bm25Index>,
}

impl Bm25Retriever {
    pub fn new(config: Bm25Config) -> Self {
        Bm25Retriever {
            config,
            index: None,
        }
    }

    /// Convenience constructor that indexes `passages` immediately.
    pub fn over(passages: &[Passage], config: Bm25Config) -> Self {
        let mut r = Bm25Retriever::new(config);
        r.build(passages);
        r
    }

    pub fn pool_size(&self) -> usize {
        self.index.as_ref().map_or(0, |i| i.ids.len())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, MODEL_TAG, &self.config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Bm25Retriever::new(checkpoint::load(path, MODEL_TAG)?))
    }

    fn build(&mut self, passages: &[Passage]) {
        let mut postings: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(passages.len());
        for (d, p) in passages.iter().enumerate() {
            let tokens = tokenize(&p.text);
            doc_len.push(tokens.len() as f64);
            let mut tf: HashMap<String, f64> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0.0) += 1.0;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((d, c));
            }
        }
        let total: f64 = doc_len.iter().sum();
        let avgdl = if total > 0.0 {
            total / doc_len.len() as f64
        } else {
            1.0
        };
        self.index = Some(Bm25Index {
            ids: passages.iter().map(|p| p.id.clone()).collect(),
            postings,
            doc_len,
            avgdl,
        });
    }

    fn idf(index: &Bm25Index, term: &str) -> f64 {
        let n = index.ids.len() as f64;
        let df = index.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: f64, dl: f64, avgdl: f64) -> f64 {
        let Bm25Config { k1, b } = self.config;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
    }

    fn index(&self) -> Result<&Bm25Index> {
        self.index.as_ref().ok_or(Error::IndexNotBuilt)
    }
}

impl Retriever for Bm25Retriever {
    fn name(&self) -> &str {
        "bm25"
    }

    /// BM25 has no trainable parameters.
    fn train(&mut self, _examples: &[RetrievalExample]) -> Result<()> {
        Ok(())
    }

    fn fine_tune(&mut self, _examples: &[RetrievalExample]) -> Result<()> {
        Ok(())
    }

    fn index(&mut self, passages: &[Passage]) -> Result<()> {
        self.build(passages);
        Ok(())
    }

    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<Hit>> {
        let index = self.index()?;
        let mut scores = vec![0.0; index.ids.len()];
        for term in tokenize(question) {
            let Some(list) = index.postings.get(&term) else {
                continue;
            };
            let idf = Self::idf(index, &term);
            for &(d, tf) in list {
                scores[d] += self.term_weight(idf, tf, index.doc_len[d], index.avgdl);
            }
        }
        let hits = index
            .ids
            .iter()
            .zip(scores)
            .map(|(id, similarity)| Hit {
                passage_id: id.clone(),
                similarity,
            })
            .collect();
        Ok(rank_hits(hits, k))
    }

    fn score(&self, question: &str, passage: &str) -> Result<f64> {
        let index = self.index()?;
        let doc = tokenize(passage);
        let dl = doc.len() as f64;
        let mut tf: HashMap<&str, f64> = HashMap::new();
        for t in &doc {
            *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
        }
        let mut total = 0.0;
        for term in tokenize(question) {
            if let Some(&c) = tf.get(term.as_str()) {
                total += self.term_weight(Self::idf(index, &term), c, dl, index.avgdl);
            }
        }
        Ok(total)
    }

    fn snapshot(&self) -> Result<Box<dyn Retriever>> {
        Ok(Box::new(self.clone()))
    }

    fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.save(path)
    }
}
