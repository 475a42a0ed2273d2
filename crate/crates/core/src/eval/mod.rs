//! The experimental protocol: splits, grid search, metrics, analyses and reports.

pub mod analysis;
pub mod metrics;
pub mod protocol;
pub mod report;

pub use analysis::{certainty_ranking, mean_bow_report, nearest_patches_report, MeanBow, Neighbor, RankedPatch};
pub use metrics::{
    aggregate_scan, combine_folds, evaluate_patches, ConfusionMatrix, FoldEvaluation, MeanSpread, ScanPrediction,
};
pub use protocol::{
    check_disjoint, grid_search, inner_folds, inner_splits, load_manifest, split_by_preparation, write_manifest,
    ClassifierKind, FoldPlan, GridPoint, KernelKind, ManifestEntry, ModelParams, ParamGrid,
};
pub use report::{confusion_table, report_table, EvaluationReport, FoldReport, Level};
