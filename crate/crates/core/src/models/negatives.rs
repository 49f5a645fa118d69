//! Hard-negative mining with BM25.
//!
//! Negatives are the top BM25 passages for a question after removing the gold
//! passage. The corpus carries no answer spans, so "does not contain the answer"
//! is approximated by "is not the gold passage".

use serde::{Deserialize, Serialize};

use super::{Bm25Retriever, Retriever};
use crate::error::Result;

pub const DEFAULT_NEGATIVES: usize = 7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSet {
    pub question_id: String,
    pub negative_passage_ids: Vec<String>,
}

/// Top-`k_neg` BM25 passages for `question` from `pool`, excluding `gold_passage_id`.
/// An empty or unbuilt pool yields an empty set.
pub fn mine_negatives(
    question_id: &str,
    question: &str,
    gold_passage_id: &str,
    pool: &Bm25Retriever,
    k_neg: usize,
) -> Result<NegativeSet> {
    let negative_passage_ids = if pool.pool_size() == 0 || k_neg == 0 {
        Vec::new()
    } else {
        pool.retrieve(question, k_neg + 1)?
            .into_iter()
            .map(|h| h.passage_id)
            .filter(|id| id != gold_passage_id)
            .take(k_neg)
            .collect()
    };
    Ok(NegativeSet {
        question_id: question_id.to_string(),
        negative_passage_ids,
    })
}
