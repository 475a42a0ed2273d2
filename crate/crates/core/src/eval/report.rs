//! Report tables in the per-species column layout and their JSON form.

use std::fmt::Write;

use serde::Serialize;

use super::metrics::{combine_folds, FoldEvaluation, MeanSpread};
use super::protocol::GridPoint;
use crate::labels::PatchLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Patch,
    Scan,
}

impl Level {
    /// Scan-level tables have no BG column.
    fn columns(self) -> usize {
        match self {
            Level::Patch => PatchLabel::COUNT,
            Level::Scan => PatchLabel::COUNT - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub test_preparation: u8,
    pub chosen: Option<GridPoint>,
    pub per_class: Vec<Option<f64>>,
    pub total: f64,
    /// Rows = truth, columns = prediction.
    pub confusion: Vec<Vec<u64>>,
    pub normalized: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore {
    pub label: String,
    pub accuracy: Option<MeanSpread>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub method: String,
    pub level: Level,
    pub per_class: Vec<ClassScore>,
    pub total: MeanSpread,
    pub folds: Vec<FoldReport>,
}

impl EvaluationReport {
    pub fn new(method: &str, level: Level, folds: &[(u8, Option<GridPoint>, FoldEvaluation)]) -> Self {
        let evals: Vec<FoldEvaluation> = folds.iter().map(|f| f.2.clone()).collect();
        let (per_class, total) = combine_folds(&evals);
        EvaluationReport {
            method: method.to_string(),
            level,
            per_class: per_class
                .into_iter()
                .enumerate()
                .take(level.columns())
                .map(|(i, accuracy)| ClassScore {
                    label: PatchLabel::from_index(i).unwrap().to_string(),
                    accuracy,
                })
                .collect(),
            total,
            folds: folds
                .iter()
                .map(|(prep, chosen, e)| FoldReport {
                    test_preparation: *prep,
                    chosen: *chosen,
                    per_class: e.per_class.clone(),
                    total: e.total,
                    confusion: e.confusion.counts.rows().into_iter().map(|r| r.to_vec()).collect(),
                    normalized: e
                        .confusion
                        .normalized()
                        .rows()
                        .into_iter()
                        .map(|r| r.to_vec())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports contain only finite numbers")
    }
}

/// Tab-separated table: one row per report, one column per class, then Total.
/// Classes without test samples print `-`.
pub fn report_table(reports: &[EvaluationReport]) -> String {
    let level = reports.first().map_or(Level::Patch, |r| r.level);
    let mut out = String::from("method");
    for i in 0..level.columns() {
        write!(out, "\t{}", PatchLabel::from_index(i).unwrap()).unwrap();
    }
    out.push_str("\tTotal\n");
    for r in reports {
        out.push_str(&r.method);
        for c in &r.per_class {
            match c.accuracy {
                Some(a) => write!(out, "\t{a}").unwrap(),
                None => out.push_str("\t-"),
            }
        }
        writeln!(out, "\t{}", r.total).unwrap();
    }
    out
}

/// Row-normalized confusion matrix as a tab-separated table.
pub fn confusion_table(fold: &FoldReport, level: Level) -> String {
    let n = level.columns();
    let mut out = String::from("truth\\predicted");
    for i in 0..PatchLabel::COUNT {
        write!(out, "\t{}", PatchLabel::from_index(i).unwrap()).unwrap();
    }
    out.push('\n');
    for (i, row) in fold.normalized.iter().enumerate().take(n) {
        out.push_str(&PatchLabel::from_index(i).unwrap().to_string());
        for v in row {
            write!(out, "\t{v:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}
