//! Generator and retriever contracts plus the native reference models.
//!
//! * [`NgramCopyGenerator`]: bigram language model over question tokens mixed
//!   with a copy distribution over the conditioning passage.
//! * [`Bm25Retriever`]: sparse lexical retriever.
//! * [`DualEncoder`]: bag-of-embeddings bi-encoder trained with a softmax
//!   contrastive loss over gold and negative passages.
//! * [`plugin`]: child-process models speaking newline-delimited JSON.

pub mod bm25;
pub mod checkpoint;
pub mod dual_encoder;
pub mod negatives;
pub mod ngram;
pub mod plugin;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::error::{Error, Result};

pub use bm25::{Bm25Config, Bm25Retriever};
pub use dual_encoder::{DualEncoder, DualEncoderConfig};
pub use negatives::{mine_negatives, NegativeSet};
pub use ngram::{NgramConfig, NgramCopyGenerator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub top_k: usize,
    pub max_length: usize,
    pub seed: u64,
    /// Forbid any n-gram of this order from occurring twice in one output; 0 disables.
    pub no_repeat_ngram: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            top_k: 50,
            max_length: 30,
            seed: 0,
            no_repeat_ngram: 2,
        }
    }
}

impl DecodeConfig {
    /// Whether appending `next` to `prefix` would repeat an n-gram of order
    /// `no_repeat_ngram` already present in `prefix`.
    pub fn repeats<S: AsRef<str>>(&self, prefix: &[S], next: &str) -> bool {
        let n = self.no_repeat_ngram;
        if n == 0 || prefix.len() < n - 1 {
            return false;
        }
        let tail = &prefix[prefix.len() + 1 - n..];
        prefix.windows(n).any(|w| {
            w[n - 1].as_ref() == next
                && w[..n - 1]
                    .iter()
                    .zip(tail)
                    .all(|(a, b)| a.as_ref() == b.as_ref())
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be at least 1".into()));
        }
        if self.max_length == 0 {
            return Err(Error::InvalidArgument(
                "max_length must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A generated question and its log-likelihood under the producing model.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub question: String,
    pub loglik: f64,
}

/// Training example for a question generator: condition on `passage`, emit `question`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub passage: String,
    pub question: String,
}

/// Training example for a retriever: a question, its gold passage and hard negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalExample {
    pub question: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub passage_id: String,
    pub similarity: f64,
}

/// Question generator θ_G.
///
/// `fine_tune` continues from the current parameters; only `train` resets them.
/// `generate` must be a pure function of model state, passage and decode seed.
pub trait Generator: Send + Sync {
    fn name(&self) -> &str;
    fn train(&mut self, pairs: &[TextPair]) -> Result<()>;
    fn fine_tune(&mut self, pairs: &[TextPair]) -> Result<()>;
    fn generate(&self, passage: &str, decode: &DecodeConfig) -> Result<Generated>;
    /// Conditional log-likelihood `log P(question | passage)`.
    fn score(&self, passage: &str, question: &str) -> Result<f64>;
    /// Independent copy of the current parameters, used for best-checkpoint restore.
    fn snapshot(&self) -> Result<Box<dyn Generator>>;
    /// Writes a checkpoint readable by [`load_generator`].
    fn save_checkpoint(&self, _path: &Path) -> Result<()> {
        Err(Error::Unsupported(format!(
            "{} has no checkpoint format",
            self.name()
        )))
    }
}

/// Passage retriever θ_R.
///
/// `retrieve` ranks by similarity descending with ties broken by ascending
/// passage id, and `score(q, p)` reproduces the similarity `retrieve` reports.
pub trait Retriever: Send + Sync {
    fn name(&self) -> &str;
    fn train(&mut self, examples: &[RetrievalExample]) -> Result<()>;
    fn fine_tune(&mut self, examples: &[RetrievalExample]) -> Result<()>;
    /// Replaces the searchable pool.
    fn index(&mut self, passages: &[Passage]) -> Result<()>;
    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<Hit>>;
    fn score(&self, question: &str, passage: &str) -> Result<f64>;
    fn snapshot(&self) -> Result<Box<dyn Retriever>>;
    /// Writes a checkpoint readable by [`load_retriever`].
    fn save_checkpoint(&self, _path: &Path) -> Result<()> {
        Err(Error::Unsupported(format!(
            "{} has no checkpoint format",
            self.name()
        )))
    }
}

/// Sorts hits by similarity descending, then passage id ascending, and keeps `k`.
pub fn rank_hits(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    for h in &mut hits {
        // -0.0 and 0.0 must tie.
        if h.similarity == 0.0 {
            h.similarity = 0.0;
        }
    }
    hits.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.passage_id.cmp(&b.passage_id))
    });
    hits.truncate(k);
    hits
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loads a native generator checkpoint.
pub fn load_generator(path: &Path) -> Result<Box<dyn Generator>> {
    let header = checkpoint::read_header(path)?;
    match header.model.as_str() {
        ngram::MODEL_TAG => Ok(Box::new(NgramCopyGenerator::load(path)?)),
        other => Err(Error::Checkpoint(format!(
            "{}: {other:?} is not a generator checkpoint",
            path.display()
        ))),
    }
}

/// Loads a native retriever checkpoint.
pub fn load_retriever(path: &Path) -> Result<Box<dyn Retriever>> {
    let header = checkpoint::read_header(path)?;
    match header.model.as_str() {
        bm25::MODEL_TAG => Ok(Box::new(Bm25Retriever::load(path)?)),
        dual_encoder::MODEL_TAG => Ok(Box::new(DualEncoder::load(path)?)),
        other => Err(Error::Checkpoint(format!(
            "{}: {other:?} is not a retriever checkpoint",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hit(id: &str, s: f64) -> Hit {
        Hit {
            passage_id: id.into(),
            similarity: s,
        }
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let ranked = rank_hits(
            vec![
                hit("c", 1.0),
                hit("b", 2.0),
                hit("a", 1.0),
                hit("d", -0.0),
                hit("0", 0.0),
            ],
            10,
        );
        let ids: Vec<_> = ranked.iter().map(|h| h.passage_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c", "0", "d"]);
    }

    #[test]
    fn repeat_blocking() {
        let cfg = DecodeConfig {
            no_repeat_ngram: 2,
            ..Default::default()
        };
        assert!(cfg.repeats(&["a", "b", "a"], "b"));
        assert!(!cfg.repeats(&["a", "b", "a"], "c"));
        assert!(!cfg.repeats(&["a"], "a"));
        let uni = DecodeConfig {
            no_repeat_ngram: 1,
            ..Default::default()
        };
        assert!(uni.repeats(&["a", "b"], "a"));
        let off = DecodeConfig {
            no_repeat_ngram: 0,
            ..Default::default()
        };
        assert!(!off.repeats(&["a", "a"], "a"));
    }

    #[test]
    fn decode_rejects_zero_top_k() {
        let cfg = DecodeConfig {
            top_k: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
