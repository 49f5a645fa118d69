//! Generation and retrieval metrics and evaluation reports.
//!
//! BLEU is computed at corpus level. METEOR is the exact-match variant
//! (`meteor_lite`): no stemming or synonym matching.

mod metrics;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{tokenize, AlignedPair, CorpusBundle, Passage};
use crate::error::{Error, Result};
use crate::models::{DecodeConfig, Generator, Retriever};

pub use metrics::{bleu, bleu_with, meteor_alignment, meteor_lite, rouge_l, BleuSmoothing};

pub const REPORT_KS: [usize; 5] = [1, 10, 20, 40, 100];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Dev,
    Test,
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSplit::Dev => "dev",
            EvalSplit::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QgScores {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
}

/// Top-k accuracies keyed by k; serialized as `{"r@1": .., "r@10": ..}` in
/// ascending k.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IrScores(pub BTreeMap<usize, f64>);

impl IrScores {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.0.get(&k).copied()
    }
}

impl Serialize for IrScores {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(&format!("r@{k}"), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for IrScores {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = IrScores;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of \"r@k\" keys")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut a: A,
            ) -> std::result::Result<IrScores, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((key, value)) = a.next_entry::<String, f64>()? {
                    let k = key
                        .strip_prefix("r@")
                        .and_then(|k| k.parse().ok())
                        .ok_or_else(|| serde::de::Error::custom(format!("bad key {key:?}")))?;
                    out.insert(k, value);
                }
                Ok(IrScores(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub qg: QgScores,
    pub ir: IrScores,
    pub n_eval: usize,
    #[serde(rename = "pool")]
    pub candidate_pool_size: usize,
}

pub const CSV_HEADER: &str = "B1,B2,B3,B4,M,R,R@1,R@10,R@20,R@40,R@100";

impl EvalReport {
    /// One header line and one row, metrics scaled by 100.
    pub fn to_csv(&self) -> String {
        let q = &self.qg;
        let mut cells: Vec<String> = [q.b1, q.b2, q.b3, q.b4, q.meteor, q.rouge_l]
            .iter()
            .map(|v| format!("{:.2}", v * 100.0))
            .collect();
        for k in REPORT_KS {
            cells.push(
                self.ir
                    .at(k)
                    .map(|v| format!("{:.2}", v * 100.0))
                    .unwrap_or_default(),
            );
        }
        format!("{CSV_HEADER}\n{}\n", cells.join(","))
    }
}

/// Generation metrics of `hypotheses` against `references` (raw text).
pub fn qg_scores(hypotheses: &[String], references: &[String]) -> Result<QgScores> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(
            "hypothesis and reference counts differ".into(),
        ));
    }
    if hypotheses.is_empty() {
        return Ok(QgScores::default());
    }
    let hyp: Vec<Vec<String>> = hypotheses.iter().map(|h| tokenize(h)).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let n = hyp.len() as f64;
    let (rouge, meteor) = hyp
        .par_iter()
        .zip(refs.par_iter())
        .map(|(h, r)| (rouge_l(h, r), meteor_lite(h, r)))
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    Ok(QgScores {
        b1: bleu(&hyp, &refs, 1)?,
        b2: bleu(&hyp, &refs, 2)?,
        b3: bleu(&hyp, &refs, 3)?,
        b4: bleu(&hyp, &refs, 4)?,
        meteor: meteor / n,
        rouge_l: rouge / n,
    })
}

/// Generates one question per pair from its gold passage.
pub fn generate_for_pairs(
    generator: &dyn Generator,
    pairs: &[AlignedPair],
    decode: &DecodeConfig,
) -> Result<Vec<String>> {
    pairs
        .par_iter()
        .map(|p| {
            generator
                .generate(&p.passage.text, decode)
                .map(|g| g.question)
        })
        .collect()
}

/// Fraction of pairs whose gold passage ranks within the top k of `pool`,
/// for every k in `ks`. Indexes `pool` into the retriever.
pub fn topk_accuracy(
    retriever: &mut dyn Retriever,
    pairs: &[AlignedPair],
    pool: &[Passage],
    ks: &[usize],
) -> Result<IrScores> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("k values must be positive".into()));
    }
    let ids: HashSet<&str> = pool.iter().map(|p| p.id.as_str()).collect();
    if let Some(p) = pairs.iter().find(|p| !ids.contains(p.passage.id.as_str())) {
        return Err(Error::Validation(format!(
            "gold passage {} of question {} is not in the candidate pool",
            p.passage.id, p.question.id
        )));
    }
    retriever.index(pool)?;
    let retriever: &dyn Retriever = retriever;
    let depth = *ks.iter().max().expect("nonempty");
    let ranks: Vec<Option<usize>> = pairs
        .par_iter()
        .map(|p| {
            let hits = retriever.retrieve(&p.question.text, depth)?;
            Ok(hits
                .iter()
                .position(|h| h.passage_id == p.passage.id)
                .map(|r| r + 1))
        })
        .collect::<Result<_>>()?;
    let n = pairs.len().max(1) as f64;
    Ok(IrScores(
        ks.iter()
            .map(|&k| {
                (
                    k,
                    ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / n,
                )
            })
            .collect(),
    ))
}

pub fn evaluate(
    generator: &dyn Generator,
    retriever: &mut dyn Retriever,
    bundle: &CorpusBundle,
    split: EvalSplit,
    decode: &DecodeConfig,
) -> Result<EvalReport> {
    let pairs = match split {
        EvalSplit::Dev => &bundle.dev_pairs,
        EvalSplit::Test => &bundle.test_pairs,
    };
    if pairs.is_empty() {
        return Err(Error::Validation(format!("the {split} split is empty")));
    }
    let hyps = generate_for_pairs(generator, pairs, decode)?;
    let refs: Vec<String> = pairs.iter().map(|p| p.question.text.clone()).collect();
    Ok(EvalReport {
        qg: qg_scores(&hyps, &refs)?,
        ir: topk_accuracy(retriever, pairs, &bundle.candidate_passages, &REPORT_KS)?,
        n_eval: pairs.len(),
        candidate_pool_size: bundle.candidate_passages.len(),
    })
}
