//! Per-group GAUC and NDCG, per-user aggregation, paired significance tests and
//! the two-distribution comparison.

mod dual;
mod metrics;
mod report;
mod significance;

pub use dual::{dual_distribution_eval, DualInputs, DualReport, D_NEW, D_SAME};
pub use metrics::{group_auc, group_ndcg, positive_rank};
pub use report::{
    evaluate, evaluate_scores, reports_tsv, score_groups, Comparison, EvaluationReport,
    ProvenanceMetrics, UserMetrics,
};
pub use significance::paired_test;
