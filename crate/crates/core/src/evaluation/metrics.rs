use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuSmoothing {
    #[default]
    None,
    /// Add one to matches and totals for n ≥ 2.
    AddOne,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with uniform weights over orders 1..=`max_n`.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    bleu_with(hypotheses, references, max_n, BleuSmoothing::None)
}

pub fn bleu_with(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    max_n: usize,
    smoothing: BleuSmoothing,
) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument(
            "BLEU order must be at least 1".into(),
        ));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hypotheses.iter().zip(references) {
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            let ref_counts = ngram_counts(rf, n);
            for (gram, count) in ngram_counts(h, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = match smoothing {
            BleuSmoothing::AddOne if n >= 2 => (matches[n - 1] + 1, totals[n - 1] + 1),
            _ => (matches[n - 1], totals[n - 1]),
        };
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * (log_sum / max_n as f64).exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1 of one pair.
pub fn rouge_l(hypothesis: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(hypothesis, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hypothesis.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_BETA: f64 = 3.0;
const METEOR_GAMMA: f64 = 0.5;
/// Search nodes before the chunk minimization settles for the best alignment so far.
const ALIGNMENT_BUDGET: usize = 100_000;

struct ChunkSearch<'a> {
    hyp: &'a [String],
    positions: Vec<Vec<usize>>,
    used: Vec<bool>,
    /// Maximum achievable matches.
    target: usize,
    best: usize,
    nodes: usize,
}

impl ChunkSearch<'_> {
    fn run(&mut self, i: usize, matched: usize, chunks: usize, prev: Option<usize>) {
        self.nodes += 1;
        if chunks >= self.best || self.nodes > ALIGNMENT_BUDGET && self.best != usize::MAX {
            return;
        }
        let remaining = self.hyp.len() - i;
        if matched + remaining < self.target {
            return;
        }
        if matched == self.target {
            self.best = chunks;
            return;
        }
        // Continue the current chunk first; that order finds good alignments early.
        let mut options: Vec<usize> = self.positions[i]
            .iter()
            .copied()
            .filter(|j| !self.used[*j])
            .collect();
        if let Some(p) = prev {
            if let Some(k) = options.iter().position(|j| *j == p + 1) {
                options.swap(0, k);
            }
        }
        for j in options {
            self.used[j] = true;
            let extends = prev.is_some_and(|p| p + 1 == j);
            self.run(i + 1, matched + 1, chunks + usize::from(!extends), Some(j));
            self.used[j] = false;
        }
        self.run(i + 1, matched, chunks, None);
    }
}

/// Maximum number of exact unigram matches and the fewest chunks among
/// alignments achieving it.
pub fn meteor_alignment(hypothesis: &[String], reference: &[String]) -> (usize, usize) {
    let mut ref_pos: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, t) in reference.iter().enumerate() {
        ref_pos.entry(t).or_default().push(j);
    }
    let mut hyp_counts: HashMap<&str, usize> = HashMap::new();
    for t in hypothesis {
        *hyp_counts.entry(t).or_default() += 1;
    }
    let target: usize = hyp_counts
        .iter()
        .map(|(t, c)| (*c).min(ref_pos.get(t).map_or(0, Vec::len)))
        .sum();
    if target == 0 {
        return (0, 0);
    }
    let mut search = ChunkSearch {
        hyp: hypothesis,
        positions: hypothesis
            .iter()
            .map(|t| ref_pos.get(t.as_str()).cloned().unwrap_or_default())
            .collect(),
        used: vec![false; reference.len()],
        target,
        best: usize::MAX,
        nodes: 0,
    };
    search.run(0, 0, 0, None);
    (target, search.best)
}

/// Exact-match METEOR without stemming or synonyms.
pub fn meteor_lite(hypothesis: &[String], reference: &[String]) -> f64 {
    let (m, chunks) = meteor_alignment(hypothesis, reference);
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    let p = m / hypothesis.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bleu_hand_values() {
        let h = vec![toks("the cat sat")];
        let r = vec![toks("the cat sat down")];
        let expected = (1.0f64 - 4.0 / 3.0).exp();
        assert!((bleu(&h, &r, 1).unwrap() - expected).abs() < 1e-12);
        assert!((bleu(&h, &r, 2).unwrap() - expected).abs() < 1e-12);
        assert!((bleu(&h, &r, 1).unwrap() - 0.716531).abs() < 1e-6);
        assert_eq!(bleu(&h, &r, 4).unwrap(), 0.0);
        assert!(bleu_with(&h, &r, 4, BleuSmoothing::AddOne).unwrap() > 0.0);
        assert_eq!(bleu(&h, &h, 3).unwrap(), 1.0);
        assert_eq!(bleu(&h, &[toks("dog")], 1).unwrap(), 0.0);
        assert!(bleu(&h, &[], 1).is_err());
    }

    #[test]
    fn rouge_hand_values() {
        assert!(
            (rouge_l(&toks("the cat sat"), &toks("the cat sat down")) - 6.0 / 7.0).abs() < 1e-12
        );
        assert_eq!(rouge_l(&toks("a b"), &toks("a b")), 1.0);
        assert_eq!(rouge_l(&toks("a b"), &toks("c d")), 0.0);
        assert_eq!(rouge_l(&[], &[]), 0.0);
    }

    #[test]
    fn meteor_hand_values() {
        let s = toks("a b c");
        assert!((meteor_lite(&s, &s) - (1.0 - 1.0 / 54.0)).abs() < 1e-12);
        assert_eq!(meteor_lite(&s, &toks("x y")), 0.0);
        assert!(meteor_lite(&toks("c b a"), &s) < meteor_lite(&s, &s));
    }

    #[test]
    fn meteor_prefers_fewer_chunks_with_repeats() {
        // Greedy left-to-right matching of "a" would split into two chunks.
        assert_eq!(meteor_alignment(&toks("a b"), &toks("a x a b")), (2, 1));
    }
}
