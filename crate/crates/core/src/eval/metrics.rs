//! Confusion matrices, accuracies and the scan vote.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::PatchLabel;

/// Counts with rows = truth and columns = prediction, over all patch labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[usize], truth: &[usize]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: predicted.len(),
                right: truth.len(),
            });
        }
        let n = PatchLabel::COUNT;
        let mut counts = Array2::zeros((n, n));
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= n || t >= n {
                return Err(Error::InvalidArgument(format!("label index {} out of range", p.max(t))));
            }
            counts[[t, p]] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    /// Row-normalized matrix; rows without samples stay zero.
    pub fn normalized(&self) -> Array2<f64> {
        let mut out = self.counts.mapv(|c| c as f64);
        for mut row in out.rows_mut() {
            let total: f64 = row.sum();
            if total > 0.0 {
                row.mapv_inplace(|v| v / total);
            }
        }
        out
    }

    /// Percentage of each class's samples predicted correctly; `None` for
    /// classes without samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.counts
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let total = row.sum();
                (total > 0).then(|| 100.0 * row[i] as f64 / total as f64)
            })
            .collect()
    }

    pub fn total_accuracy(&self) -> f64 {
        let total = self.counts.sum();
        if total == 0 {
            return 0.0;
        }
        100.0 * self.counts.diag().sum() as f64 / total as f64
    }
}

/// Mean over runs and half the range between the extremes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSpread {
    pub mean: f64,
    pub spread: f64,
}

impl MeanSpread {
    pub fn of(values: &[f64]) -> Option<MeanSpread> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(MeanSpread {
            mean,
            spread: (hi - lo) / 2.0,
        })
    }
}

impl std::fmt::Display for MeanSpread {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.spread)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldEvaluation {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<Option<f64>>,
    pub total: f64,
}

pub fn evaluate_patches(predicted: &[usize], truth: &[usize]) -> Result<FoldEvaluation> {
    let confusion = ConfusionMatrix::from_predictions(predicted, truth)?;
    Ok(FoldEvaluation {
        per_class: confusion.per_class_accuracy(),
        total: confusion.total_accuracy(),
        confusion,
    })
}

/// Per-class and total accuracy combined over outer folds. A class enters the
/// mean only for folds in which it has samples.
pub fn combine_folds(folds: &[FoldEvaluation]) -> (Vec<Option<MeanSpread>>, MeanSpread) {
    let per_class = (0..PatchLabel::COUNT)
        .map(|c| MeanSpread::of(&folds.iter().filter_map(|f| f.per_class[c]).collect::<Vec<_>>()))
        .collect();
    let totals: Vec<f64> = folds.iter().map(|f| f.total).collect();
    let total = MeanSpread::of(&totals).unwrap_or(MeanSpread { mean: 0.0, spread: 0.0 });
    (per_class, total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPrediction {
    pub scan_id: String,
    /// Vote count per patch label index, BG included.
    pub votes: Vec<usize>,
    /// Label index; BG only when every vote was BG.
    pub winner: usize,
}

/// Majority vote over the foreground patches of one scan.
///
/// `decisions` holds one row per patch and one column per entry of `classes`
/// (label indices). BG votes count only if nothing else was predicted. Ties go
/// to the larger summed decision value, then to the lower label index.
pub fn aggregate_scan(
    scan_id: &str,
    predicted: &[usize],
    decisions: ArrayView2<f64>,
    classes: &[usize],
) -> Result<ScanPrediction> {
    if predicted.is_empty() {
        return Err(Error::NoForegroundPatches);
    }
    if decisions.nrows() != predicted.len() || decisions.ncols() != classes.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: decisions.nrows(),
        });
    }
    let bg = PatchLabel::Background.index();
    let mut votes = vec![0usize; PatchLabel::COUNT];
    for &p in predicted {
        votes[p] += 1;
    }
    if votes.iter().enumerate().all(|(i, &v)| i == bg || v == 0) {
        return Ok(ScanPrediction {
            scan_id: scan_id.to_string(),
            votes,
            winner: bg,
        });
    }
    let summed = |label: usize| -> f64 {
        match classes.iter().position(|&c| c == label) {
            // summed in sorted order so the result does not depend on patch order
            Some(col) => {
                let mut v = decisions.column(col).to_vec();
                v.sort_by(f64::total_cmp);
                v.iter().sum()
            }
            None => f64::NEG_INFINITY,
        }
    };
    let mut winner: Option<usize> = None;
    for label in (0..PatchLabel::COUNT).filter(|&l| l != bg && votes[l] > 0) {
        winner = match winner {
            None => Some(label),
            Some(w) if votes[label] > votes[w] => Some(label),
            Some(w) if votes[label] == votes[w] && summed(label) > summed(w) => Some(label),
            keep => keep,
        };
    }
    Ok(ScanPrediction {
        scan_id: scan_id.to_string(),
        votes,
        winner: winner.expect("some species received a vote"),
    })
}
