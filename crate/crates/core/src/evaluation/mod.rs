//! Speaker scoring by soft voting, ROC metrics, stratified folds and the
//! cross-validation protocol.

mod cv;
mod folds;
mod metrics;
mod report;
mod scoring;

pub use cv::{
    aggregate_of, assemble_report, audit_protocol, run_cv, Aggregate, CvConfig, CvOutcome,
    FoldAudit, FoldResult, FoldScores, InitMode, RunReport, SeedMetrics, TrainingRecord, run_fold,
};
pub use folds::{make_folds, Fold, FoldPlan};
pub use metrics::{
    accuracy, mann_whitney_counts, mean_std, roc_auc, roc_points, soft_vote, trapezoid_auc,
    RocPoint, DECISION_THRESHOLD,
};
pub use report::{comparison_table, export_report, load_metrics, load_roc, MetricsFile, METRICS_SCHEMA};
pub use scoring::{
    fit_stats, kl_samples, model_view, pair_predictions, proposed_samples, resized_input,
    resized_inputs, score_speakers, segment_predictions, segment_samples, utterance_segments,
    SpeakerScore,
};
