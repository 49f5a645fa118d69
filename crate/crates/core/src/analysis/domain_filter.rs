//! In-domain / out-of-domain question classifier: a logistic model over
//! pluggable sparse features, with a hashed bag of words as the reference
//! extractor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::rng::fnv1a;

pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 0.8;
pub const PR_GRID_STEP: f64 = 0.05;

/// `(feature index, value)` pairs with distinct indices.
pub type SparseVec = Vec<(usize, f64)>;

pub trait FeatureExtractor {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn features(&self, text: &str) -> SparseVec;
}

/// Token counts hashed into `dim` buckets, scaled to unit L2 norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedBow {
    pub dim: usize,
}

impl Default for HashedBow {
    fn default() -> Self {
        HashedBow { dim: 1 << 15 }
    }
}

impl FeatureExtractor for HashedBow {
    fn id(&self) -> String {
        format!("hashed_bow:{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, text: &str) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokenize(text) {
            *counts
                .entry((fnv1a(t.as_bytes()) % self.dim as u64) as usize)
                .or_default() += 1.0;
        }
        let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
        counts.into_iter().map(|(i, c)| (i, c / norm)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainLabel {
    InDomain,
    Ood,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainFilterConfig {
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub threshold: f64,
}

impl Default for DomainFilterConfig {
    fn default() -> Self {
        DomainFilterConfig {
            l2: 0.1,
            learning_rate: 1.0,
            iterations: 500,
            threshold: DEFAULT_ACCEPT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn probability(&self, x: &SparseVec) -> f64 {
        let z: f64 = self.bias + x.iter().map(|(i, v)| self.weights[*i] * v).sum::<f64>();
        sigmoid(z)
    }
}

/// Full-batch gradient descent from zero on
/// `(Σ log loss + l2/2 · ‖w‖²) / n`, i.e. the penalty weighs against the
/// summed loss as in the usual `C = 1/l2` parameterization. Deterministic: no
/// sampling is involved.
pub fn train_logistic(
    xs: &[SparseVec],
    ys: &[bool],
    dim: usize,
    cfg: &DomainFilterConfig,
) -> Result<LogisticModel> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(
            "features and labels differ in length".into(),
        ));
    }
    if !ys.iter().any(|y| *y) || ys.iter().all(|y| *y) {
        return Err(Error::InvalidArgument(
            "domain filter needs both in-domain and out-of-domain examples".into(),
        ));
    }
    if let Some((i, _)) = xs.iter().flatten().find(|(i, _)| *i >= dim) {
        return Err(Error::InvalidArgument(format!(
            "feature index {i} outside dimension {dim}"
        )));
    }
    let n = xs.len() as f64;
    let mut model = LogisticModel {
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    let mut grad = vec![0.0; dim];
    for _ in 0..cfg.iterations {
        grad.iter_mut()
            .zip(&model.weights)
            .for_each(|(g, w)| *g = cfg.l2 * w / n);
        let mut grad_b = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let r = (model.probability(x) - f64::from(u8::from(*y))) / n;
            grad_b += r;
            for (i, v) in x {
                grad[*i] += r * v;
            }
        }
        model
            .weights
            .iter_mut()
            .zip(&grad)
            .for_each(|(w, g)| *w -= cfg.learning_rate * g);
        model.bias -= cfg.learning_rate * grad_b;
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainFilterModel {
    pub extractor: HashedBow,
    pub classifier: LogisticModel,
    pub threshold: f64,
}

impl DomainFilterModel {
    pub fn in_domain_probability(&self, question: &str) -> f64 {
        self.classifier
            .probability(&self.extractor.features(question))
    }
}

pub fn train_domain_filter(
    labeled: &[(String, DomainLabel)],
    cfg: &DomainFilterConfig,
) -> Result<DomainFilterModel> {
    let extractor = HashedBow::default();
    let xs: Vec<SparseVec> = labeled.iter().map(|(q, _)| extractor.features(q)).collect();
    let ys: Vec<bool> = labeled
        .iter()
        .map(|(_, l)| *l == DomainLabel::InDomain)
        .collect();
    Ok(DomainFilterModel {
        extractor,
        classifier: train_logistic(&xs, &ys, extractor.dim(), cfg)?,
        threshold: cfg.threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall of `probability ≥ t` at `t = 0, 0.05, …, 1`.
/// Precision is 1 with no predicted positives; recall is 1 with no actual positives.
pub fn precision_recall_curve(probabilities: &[f64], labels: &[bool]) -> Vec<PrPoint> {
    let steps = (1.0 / PR_GRID_STEP).round() as usize;
    (0..=steps)
        .map(|i| {
            let t = i as f64 * PR_GRID_STEP;
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (p, y) in probabilities.iter().zip(labels) {
                match (*p >= t, *y) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            PrPoint {
                threshold: t,
                precision: if tp + fp == 0 {
                    1.0
                } else {
                    tp as f64 / (tp + fp) as f64
                },
                recall: if tp + fn_ == 0 {
                    1.0
                } else {
                    tp as f64 / (tp + fn_) as f64
                },
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainFilterResult {
    /// Indices into the input, in input order.
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub pr_curve: Option<Vec<PrPoint>>,
}

/// Accepts questions whose in-domain probability is at least `alpha`.
/// `labels` (true = in-domain) enables the precision–recall curve.
pub fn apply_domain_filter(
    model: &DomainFilterModel,
    questions: &[String],
    alpha: f64,
    labels: Option<&[bool]>,
) -> Result<DomainFilterResult> {
    if let Some(l) = labels {
        if l.len() != questions.len() {
            return Err(Error::InvalidArgument(
                "labels and questions differ in length".into(),
            ));
        }
    }
    let probabilities: Vec<f64> = questions
        .iter()
        .map(|q| model.in_domain_probability(q))
        .collect();
    let (accepted, rejected) = (0..questions.len()).partition(|i| probabilities[*i] >= alpha);
    let pr_curve = labels.map(|l| precision_recall_curve(&probabilities, l));
    Ok(DomainFilterResult {
        accepted,
        rejected,
        probabilities,
        pr_curve,
    })
}
