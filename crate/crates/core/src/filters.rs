//! Consistency filtering of synthetic data.
//!
//! A critic scores every synthetic pair and the lowest-confidence ones are
//! dropped. The generator critic scores with `log P(q | p)`, the retriever
//! critic with the similarity `sim(q, p)`. Under self consistency each set is
//! judged by the model of its own task; under cross consistency by the dual model.
//!
//! By default the top `accept_fraction` of each set is kept by rank, which
//! puts the realized threshold at the lower quartile of the scores for the
//! default fraction of 0.75.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{summarize_scores, DistributionSummary};
use crate::augmentation::{SyntheticExample, Task};
use crate::error::{Error, Result};
use crate::models::{Generator, Retriever};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    #[default]
    None,
    SelfConsistency,
    CrossConsistency,
}

/// Score cut-offs per critic for absolute-threshold mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticThresholds {
    pub generator: f64,
    pub retriever: f64,
}

/// Operating points reported for BART/DPR-scale neural models (generator
/// log-likelihood, retriever dot product). Only meaningful for plugin models of
/// that family; the reference models score on different scales.
pub const NEURAL_SELF_CONSISTENCY: CriticThresholds = CriticThresholds {
    generator: -1.19,
    retriever: 78.24,
};
pub const NEURAL_CROSS_CONSISTENCY: CriticThresholds = CriticThresholds {
    generator: -5.95,
    retriever: 71.65,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub kind: FilterKind,
    pub accept_fraction: f64,
    /// When set, governs instead of `accept_fraction`: keep scores ≥ threshold.
    pub absolute_threshold: Option<CriticThresholds>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            kind: FilterKind::None,
            accept_fraction: 0.75,
            absolute_threshold: None,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.accept_fraction > 0.0 && self.accept_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "accept_fraction must lie in (0, 1], got {}",
                self.accept_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Critic {
    Generator,
    Retriever,
}

/// A model acting as critic.
#[derive(Clone, Copy)]
pub enum CriticModel<'a> {
    Generator(&'a dyn Generator),
    Retriever(&'a dyn Retriever),
}

impl CriticModel<'_> {
    pub fn kind(&self) -> Critic {
        match self {
            CriticModel::Generator(_) => Critic::Generator,
            CriticModel::Retriever(_) => Critic::Retriever,
        }
    }
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub critic: Critic,
    /// Realized threshold; `-inf` (JSON `null`) when nothing was filtered by score.
    #[serde(with = "neg_inf_as_null")]
    pub threshold: f64,
    pub n_in: usize,
    pub n_kept: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub q3: Option<f64>,
}

impl FilterReport {
    fn new(
        critic: Critic,
        threshold: f64,
        n_in: usize,
        n_kept: usize,
        summary: Option<DistributionSummary>,
    ) -> Self {
        FilterReport {
            critic,
            threshold,
            n_in,
            n_kept,
            mean: summary.as_ref().map(|s| s.mean),
            variance: summary.as_ref().map(|s| s.variance),
            q1: summary.as_ref().map(|s| s.q1),
            q2: summary.as_ref().map(|s| s.q2),
            q3: summary.as_ref().map(|s| s.q3),
        }
    }

    pub fn kept_fraction(&self) -> f64 {
        if self.n_in == 0 {
            0.0
        } else {
            self.n_kept as f64 / self.n_in as f64
        }
    }
}

/// Scores every example with `critic`, writing `gen_loglik` or `ret_sim`.
pub fn score_with_critic(critic: CriticModel<'_>, examples: &mut [SyntheticExample]) -> Result<()> {
    let scores: Vec<f64> = examples
        .par_iter()
        .map(|e| {
            let (passage, question) = e.passage_and_question();
            match critic {
                CriticModel::Generator(g) => g.score(passage, question),
                CriticModel::Retriever(r) => r.score(question, passage),
            }
        })
        .collect::<Result<_>>()?;
    for (e, s) in examples.iter_mut().zip(scores) {
        match critic {
            CriticModel::Generator(_) => e.gen_loglik = Some(s),
            CriticModel::Retriever(_) => e.ret_sim = Some(s),
        }
    }
    Ok(())
}

/// Outcome of rank-based selection.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub kept: Vec<bool>,
    pub threshold: f64,
}

impl Selection {
    pub fn n_kept(&self) -> usize {
        self.kept.iter().filter(|k| **k).count()
    }
}

/// Number of items kept for a fraction: `ceil(fraction · n)`, with products
/// within 1e-9 of an integer snapped to it so that e.g. `0.1 · 30` keeps 3.
pub fn keep_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let k = if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x.ceil()
    };
    (k as usize).clamp(usize::from(n > 0), n)
}

/// Keeps the `ceil(fraction · n)` highest scores; ties go to the lower index.
/// The threshold is the score of the last kept item.
pub fn select_by_fraction(scores: &[f64], fraction: f64) -> Result<Selection> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to select from".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "accept_fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let k = keep_count(fraction, scores.len());
    let mut kept = vec![false; scores.len()];
    for &i in &order[..k] {
        kept[i] = true;
    }
    Ok(Selection {
        kept,
        threshold: scores[order[k - 1]],
    })
}

fn governing_score(e: &SyntheticExample, critic: Critic) -> Option<f64> {
    match critic {
        Critic::Generator => e.gen_loglik,
        Critic::Retriever => e.ret_sim,
    }
}

fn filter_set(
    examples: &mut [SyntheticExample],
    critic: CriticModel<'_>,
    policy: &FilterPolicy,
) -> Result<FilterReport> {
    let kind = critic.kind();
    if examples.is_empty() {
        return Ok(FilterReport::new(kind, f64::NEG_INFINITY, 0, 0, None));
    }
    score_with_critic(critic, examples)?;
    let scores: Vec<f64> = examples
        .iter()
        .map(|e| governing_score(e, kind).expect("scored above"))
        .collect();
    let summary = summarize_scores(&scores).ok();
    let (kept, threshold) = match &policy.absolute_threshold {
        Some(t) => {
            let cut = match kind {
                Critic::Generator => t.generator,
                Critic::Retriever => t.retriever,
            };
            (scores.iter().map(|s| *s >= cut).collect::<Vec<_>>(), cut)
        }
        None => {
            let sel = select_by_fraction(&scores, policy.accept_fraction)?;
            (sel.kept, sel.threshold)
        }
    };
    for (e, k) in examples.iter_mut().zip(&kept) {
        e.kept = *k;
    }
    let n_kept = kept.iter().filter(|k| **k).count();
    Ok(FilterReport::new(
        kind,
        threshold,
        examples.len(),
        n_kept,
        summary,
    ))
}

/// Reports for the generator's and the retriever's synthetic sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub generator_set: FilterReport,
    pub retriever_set: FilterReport,
}

/// Sets `kept` on every record of `s_g` (QG data) and `s_r` (IR data).
pub fn apply_filter(
    policy: &FilterPolicy,
    s_g: &mut [SyntheticExample],
    s_r: &mut [SyntheticExample],
    generator: &dyn Generator,
    retriever: &dyn Retriever,
) -> Result<FilterOutcome> {
    policy.validate()?;
    debug_assert!(s_g.iter().all(|e| e.task == Task::Qg));
    debug_assert!(s_r.iter().all(|e| e.task == Task::Ir));
    let gen = CriticModel::Generator(generator);
    let ret = CriticModel::Retriever(retriever);
    let (critic_g, critic_r) = match policy.kind {
        FilterKind::None => {
            for e in s_g.iter_mut().chain(s_r.iter_mut()) {
                e.kept = true;
            }
            return Ok(FilterOutcome {
                generator_set: FilterReport::new(
                    Critic::Generator,
                    f64::NEG_INFINITY,
                    s_g.len(),
                    s_g.len(),
                    None,
                ),
                retriever_set: FilterReport::new(
                    Critic::Retriever,
                    f64::NEG_INFINITY,
                    s_r.len(),
                    s_r.len(),
                    None,
                ),
            });
        }
        FilterKind::SelfConsistency => (gen, ret),
        FilterKind::CrossConsistency => (ret, gen),
    };
    Ok(FilterOutcome {
        generator_set: filter_set(s_g, critic_g, policy)?,
        retriever_set: filter_set(s_r, critic_r, policy)?,
    })
}
