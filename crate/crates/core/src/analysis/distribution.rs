use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 20;

/// Below this many scores per side, [`compare_self_vs_back`] makes no claim.
pub const MIN_COMPARISON_SIZE: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Nearest-rank quantile of sorted data: the element at rank `ceil(p · n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let x = p * n as f64;
    let rank = if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x.ceil()
    } as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn summarize_scores(scores: &[f64]) -> Result<DistributionSummary> {
    summarize_with_bins(scores, DEFAULT_BINS)
}

/// Equal-width histogram between min and max; the top bin is closed. When all
/// scores coincide the histogram is a single degenerate bin.
pub fn summarize_with_bins(scores: &[f64], bins: usize) -> Result<DistributionSummary> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot summarize an empty score list".into(),
        ));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument(
            "histogram needs at least one bin".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let variance = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[n - 1]);

    let histogram = if min == max {
        vec![HistogramBin {
            low: min,
            high: max,
            count: n,
        }]
    } else {
        let width = (max - min) / bins as f64;
        let mut counts = vec![0usize; bins];
        for s in &sorted {
            let i = (((s - min) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                low: min + width * i as f64,
                high: if i + 1 == bins {
                    max
                } else {
                    min + width * (i + 1) as f64
                },
                count,
            })
            .collect()
    };

    Ok(DistributionSummary {
        n,
        mean,
        variance,
        min,
        max,
        q1: nearest_rank(&sorted, 0.25),
        q2: nearest_rank(&sorted, 0.5),
        q3: nearest_rank(&sorted, 0.75),
        histogram,
    })
}

/// Mean and variance orderings between a self-scored and a back-scored
/// distribution. The booleans are `None` when either side is too small.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    #[serde(rename = "self")]
    pub self_summary: DistributionSummary,
    #[serde(rename = "back")]
    pub back_summary: DistributionSummary,
    pub self_mean_higher: Option<bool>,
    pub self_variance_lower: Option<bool>,
    pub insufficient: bool,
}

pub fn compare_self_vs_back(self_scores: &[f64], back_scores: &[f64]) -> Result<OrderingReport> {
    let s = summarize_scores(self_scores)?;
    let b = summarize_scores(back_scores)?;
    let insufficient = s.n < MIN_COMPARISON_SIZE || b.n < MIN_COMPARISON_SIZE;
    let (mean_higher, var_lower) = if insufficient {
        (None, None)
    } else {
        (Some(s.mean > b.mean), Some(s.variance < b.variance))
    };
    Ok(OrderingReport {
        self_summary: s,
        back_summary: b,
        self_mean_higher: mean_higher,
        self_variance_lower: var_lower,
        insufficient,
    })
}
