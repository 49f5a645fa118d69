//! Bag-of-embeddings bi-encoder.
//!
//! `E(text) = Σ_t emb[t]` over the text's tokens, with one embedding table
//! shared by questions and passages, and `sim(q, p) = E(q)·E(p)`. Rows start
//! from a deterministic hash of the token, so an untrained encoder already
//! behaves like a random-projection lexical matcher.
//!
//! Per example the loss is `−log softmax(sim(q, p⁺))` over the gold passage,
//! its hard negatives and, optionally, the other gold passages of the
//! mini-batch. Training is plain mini-batch gradient descent on the mean loss.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{checkpoint, dot, rank_hits, Hit, RetrievalExample, Retriever};
use crate::corpus::{tokenize, Passage};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, fnv1a, SeededRng};

pub(crate) const MODEL_TAG: &str = "dual_encoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualEncoderConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Use the other gold passages of a mini-batch as extra negatives.
    pub in_batch_negatives: bool,
    pub seed: u64,
}

impl Default for DualEncoderConfig {
    fn default() -> Self {
        DualEncoderConfig {
            dim: 64,
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.01,
            in_batch_negatives: true,
            seed: 0,
        }
    }
}

/// Gradient of the objective with respect to each touched embedding row.
pub type Gradient = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Debug)]
struct EncodedPool {
    ids: Vec<String>,
    texts: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualEncoder {
    config: DualEncoderConfig,
    table: BTreeMap<String, Vec<f64>>,
    steps: u64,
    #[serde(skip)]
    pool: Option<EncodedPool>,
}

impl PartialEq for DualEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.table == other.table && self.steps == other.steps
    }
}

impl DualEncoder {
    pub fn new(config: DualEncoderConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::InvalidArgument(
                "encoder dimension must be positive".into(),
            ));
        }
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(DualEncoder {
            config,
            table: BTreeMap::new(),
            steps: 0,
            pool: None,
        })
    }

    pub fn config(&self) -> &DualEncoderConfig {
        &self.config
    }

    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, MODEL_TAG, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path, MODEL_TAG)
    }

    fn init_row(&self, token: &str) -> Vec<f64> {
        let mut rng = SeededRng::new(fnv1a(token.as_bytes()) ^ self.config.seed);
        let scale = 1.0 / (self.config.dim as f64).sqrt();
        (0..self.config.dim)
            .map(|_| (2.0 * rng.unit() - 1.0) * scale)
            .collect()
    }

    pub fn embedding(&self, token: &str) -> Cow<'_, [f64]> {
        match self.table.get(token) {
            Some(row) => Cow::Borrowed(row),
            None => Cow::Owned(self.init_row(token)),
        }
    }

    /// Mutable access to one embedding row, materializing its initial value.
    pub fn embedding_mut(&mut self, token: &str) -> &mut [f64] {
        if !self.table.contains_key(token) {
            let row = self.init_row(token);
            self.table.insert(token.to_string(), row);
        }
        self.table.get_mut(token).unwrap()
    }

    fn encode_tokens(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.config.dim];
        for t in tokens {
            for (a, b) in v.iter_mut().zip(self.embedding(t).iter()) {
                *a += b;
            }
        }
        v
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.encode_tokens(&tokenize(text))
    }

    /// Candidate passages for example `i` of `batch`: gold first, then hard
    /// negatives, then (optionally) the other gold passages of the batch.
    fn candidates<'a>(&self, batch: &'a [RetrievalExample], i: usize) -> Vec<&'a str> {
        let ex = &batch[i];
        let mut c: Vec<&str> = Vec::with_capacity(1 + ex.negatives.len() + batch.len());
        c.push(&ex.positive);
        c.extend(ex.negatives.iter().map(String::as_str));
        if self.config.in_batch_negatives {
            for (j, other) in batch.iter().enumerate() {
                if j != i && other.positive != ex.positive {
                    c.push(&other.positive);
                }
            }
        }
        c
    }

    fn example_loss(&self, batch: &[RetrievalExample], i: usize) -> f64 {
        let q = self.encode(&batch[i].question);
        let sims: Vec<f64> = self
            .candidates(batch, i)
            .iter()
            .map(|p| dot(&q, &self.encode(p)))
            .collect();
        log_sum_exp(&sims) - sims[0]
    }

    /// Mean loss over `batch`, treating it as a single mini-batch.
    pub fn objective(&self, batch: &[RetrievalExample]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        (0..batch.len())
            .map(|i| self.example_loss(batch, i))
            .sum::<f64>()
            / batch.len() as f64
    }

    /// Analytic gradient of [`objective`](Self::objective).
    ///
    /// With `π = softmax(s)` and `y` the gold indicator, `∂L/∂s_j = π_j − y_j`,
    /// `∂L/∂E(q) = Σ_j (π_j − y_j)·E(p_j)`, `∂L/∂E(p_j) = (π_j − y_j)·E(q)`, and
    /// each token row receives its occurrence count times the text gradient.
    pub fn gradient(&self, batch: &[RetrievalExample]) -> Gradient {
        self.loss_and_gradient(batch).1
    }

    fn loss_and_gradient(&self, batch: &[RetrievalExample]) -> (f64, Gradient) {
        let mut grad: Gradient = BTreeMap::new();
        let mut loss = 0.0;
        if batch.is_empty() {
            return (loss, grad);
        }
        let scale = 1.0 / batch.len() as f64;
        let dim = self.config.dim;
        for i in 0..batch.len() {
            let q_tokens = tokenize(&batch[i].question);
            let q = self.encode_tokens(&q_tokens);
            let cands: Vec<Vec<String>> = self
                .candidates(batch, i)
                .iter()
                .map(|p| tokenize(p))
                .collect();
            let p_vecs: Vec<Vec<f64>> = cands.iter().map(|t| self.encode_tokens(t)).collect();
            let sims: Vec<f64> = p_vecs.iter().map(|p| dot(&q, p)).collect();
            let lse = log_sum_exp(&sims);
            loss += (lse - sims[0]) * scale;
            let coeffs: Vec<f64> = sims
                .iter()
                .enumerate()
                .map(|(j, s)| ((s - lse).exp() - if j == 0 { 1.0 } else { 0.0 }) * scale)
                .collect();

            let mut d_q = vec![0.0; dim];
            for (c, p) in coeffs.iter().zip(&p_vecs) {
                for (a, b) in d_q.iter_mut().zip(p) {
                    *a += c * b;
                }
            }
            for t in &q_tokens {
                let row = grad.entry(t.clone()).or_insert_with(|| vec![0.0; dim]);
                for (a, b) in row.iter_mut().zip(&d_q) {
                    *a += b;
                }
            }
            for (c, tokens) in coeffs.iter().zip(&cands) {
                for t in tokens {
                    let row = grad.entry(t.clone()).or_insert_with(|| vec![0.0; dim]);
                    for (a, b) in row.iter_mut().zip(&q) {
                        *a += c * b;
                    }
                }
            }
        }
        (loss, grad)
    }

    fn apply(&mut self, grad: &Gradient) {
        let lr = self.config.learning_rate;
        for (token, g) in grad {
            let row = self.embedding_mut(token);
            for (w, d) in row.iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
    }

    /// Runs `epochs` passes of mini-batch descent. `on_step` receives the
    /// global step number and the mini-batch loss before the update.
    pub fn fit(
        &mut self,
        examples: &[RetrievalExample],
        epochs: usize,
        mut on_step: impl FnMut(u64, f64),
    ) -> Result<()> {
        if examples.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            let mut rng = SeededRng::new(derive_seed(
                self.config.seed,
                &format!("shuffle:{}", self.steps),
            ));
            for i in (1..order.len()).rev() {
                let j = rng.below(i as u64 + 1) as usize;
                order.swap(i, j);
            }
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<RetrievalExample> =
                    chunk.iter().map(|&i| examples[i].clone()).collect();
                let (loss, grad) = self.loss_and_gradient(&batch);
                self.apply(&grad);
                self.steps += 1;
                on_step(self.steps, loss);
            }
        }
        self.reencode_pool();
        Ok(())
    }

    fn reencode_pool(&mut self) {
        if let Some(pool) = self.pool.take() {
            let vectors = pool.texts.iter().map(|t| self.encode(t)).collect();
            self.pool = Some(EncodedPool { vectors, ..pool });
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Retriever for DualEncoder {
    fn name(&self) -> &str {
        "dual-encoder"
    }

    fn train(&mut self, examples: &[RetrievalExample]) -> Result<()> {
        if examples.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        self.table.clear();
        self.steps = 0;
        self.fit(examples, self.config.epochs, |_, _| {})
    }

    fn fine_tune(&mut self, examples: &[RetrievalExample]) -> Result<()> {
        self.fit(examples, self.config.epochs, |_, _| {})
    }

    fn index(&mut self, passages: &[Passage]) -> Result<()> {
        let vectors = passages.iter().map(|p| self.encode(&p.text)).collect();
        self.pool = Some(EncodedPool {
            ids: passages.iter().map(|p| p.id.clone()).collect(),
            texts: passages.iter().map(|p| p.text.clone()).collect(),
            vectors,
        });
        Ok(())
    }

    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<Hit>> {
        let pool = self.pool.as_ref().ok_or(Error::IndexNotBuilt)?;
        let q = self.encode(question);
        let hits = pool
            .ids
            .iter()
            .zip(&pool.vectors)
            .map(|(id, v)| Hit {
                passage_id: id.clone(),
                similarity: dot(&q, v),
            })
            .collect();
        Ok(rank_hits(hits, k))
    }

    fn score(&self, question: &str, passage: &str) -> Result<f64> {
        Ok(dot(&self.encode(question), &self.encode(passage)))
    }

    fn snapshot(&self) -> Result<Box<dyn Retriever>> {
        Ok(Box::new(self.clone()))
    }

    fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.save(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(q: &str, p: &str, negs: &[&str]) -> RetrievalExample {
        RetrievalExample {
            question: q.into(),
            positive: p.into(),
            negatives: negs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(DualEncoder::new(DualEncoderConfig {
            dim: 0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn self_similarity_is_squared_norm() {
        let enc = DualEncoder::new(DualEncoderConfig::default()).unwrap();
        let v = enc.encode("what is a kernel");
        let s = enc.score("what is a kernel", "what is a kernel").unwrap();
        assert!((s - dot(&v, &v)).abs() < 1e-12);
        assert!(s >= 0.0);
    }

    #[test]
    fn equal_similarities_give_ln_two() {
        // Question shares no token with either passage; zero encodings tie.
        let mut enc = DualEncoder::new(DualEncoderConfig {
            dim: 4,
            in_batch_negatives: false,
            ..Default::default()
        })
        .unwrap();
        for t in ["gold", "neg"] {
            enc.embedding_mut(t).copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        }
        let loss = enc.objective(&[ex("query", "gold", &["neg"])]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn index_refreshes_after_training() {
        let mut enc = DualEncoder::new(DualEncoderConfig {
            dim: 8,
            learning_rate: 0.5,
            epochs: 3,
            ..Default::default()
        })
        .unwrap();
        let pool = vec![
            Passage::new("a", "red apples").unwrap(),
            Passage::new("b", "blue sky").unwrap(),
        ];
        enc.index(&pool).unwrap();
        enc.train(&[ex("fruit", "red apples", &["blue sky"])])
            .unwrap();
        for q in ["fruit", "sky"] {
            for h in enc.retrieve(q, 2).unwrap() {
                let text = &pool.iter().find(|p| p.id == h.passage_id).unwrap().text;
                assert_eq!(h.similarity, enc.score(q, text).unwrap());
            }
        }
        assert_eq!(enc.retrieve("fruit", 1).unwrap()[0].passage_id, "a");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut enc = DualEncoder::new(DualEncoderConfig {
            dim: 4,
            ..Default::default()
        })
        .unwrap();
        enc.train(&[ex("q a", "p a", &["p b"])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ckpt");
        enc.save(&path).unwrap();
        let back = DualEncoder::load(&path).unwrap();
        assert_eq!(back, enc);
        assert_eq!(
            back.score("q a", "p a").unwrap(),
            enc.score("q a", "p a").unwrap()
        );
    }
}
