//! Diagnostics over scores, questions and training runs.

mod distribution;
mod domain_filter;
mod taxonomy;
mod trajectory;

pub use distribution::{
    compare_self_vs_back, nearest_rank, summarize_scores, summarize_with_bins, DistributionSummary,
    HistogramBin, OrderingReport, DEFAULT_BINS, MIN_COMPARISON_SIZE,
};
pub use domain_filter::{
    apply_domain_filter, precision_recall_curve, train_domain_filter, train_logistic,
    DomainFilterConfig, DomainFilterModel, DomainFilterResult, DomainLabel, FeatureExtractor,
    HashedBow, LogisticModel, PrPoint, SparseVec, DEFAULT_ACCEPT_THRESHOLD, PR_GRID_STEP,
};
pub use taxonomy::{
    classify_question, taxonomy_confusion, ConfusionMatrix, TaxonomyClass, TaxonomyRules,
};
pub use trajectory::{generator_nll, perplexity, TrajectoryLog, TrajectoryPoint};
