//! Accuracy, support-weighted precision/recall/F1 and pairwise significance
//! tests between classifiers.

mod metrics;
mod significance;

pub use metrics::{evaluate, ClassMetrics, EvalReport};
pub use significance::{
    bowker, bowker_table, chi_square_sf, mcnemar, mcnemar_counts, significance_matrix, SignificanceMatrix, SignificanceResult,
    TestKind, SIGNIFICANCE_LEVEL,
};
