//! Explanatory analyses: mean BoW per species, nearest patches per centroid
//! and certainty rankings.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::descriptors::DescriptorSet;
use crate::encode::{EncodedVector, Encoding};
use crate::error::{Error, Result};
use crate::vocab::{sq_dist, Codebook};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanBow {
    pub group: String,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Population variance per cluster.
    pub variance: Vec<f64>,
}

/// Mean and variance of the BoW histograms of each group, groups in key order.
pub fn mean_bow_report(encodings: &[(String, EncodedVector)]) -> Result<Vec<MeanBow>> {
    let Some(first) = encodings.first() else {
        return Ok(Vec::new());
    };
    let k = first.1.vocab_k;
    if encodings
        .iter()
        .any(|(_, e)| e.encoding != Encoding::Bow || e.vocab_k != k || e.values.len() != k)
    {
        return Err(Error::MixedEncodingKinds);
    }
    let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (g, e) in encodings {
        groups.entry(g).or_default().push(&e.values);
    }
    Ok(groups
        .into_iter()
        .map(|(group, rows)| {
            let n = rows.len() as f64;
            let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let variance = (0..k)
                .map(|j| rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
                .collect();
            MeanBow {
                group: group.to_string(),
                count: rows.len(),
                mean,
                variance,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub patch_id: String,
    pub distance: f64,
}

/// For every centroid, the `n` patches whose mean descriptor is closest,
/// ascending by distance and then by patch id.
pub fn nearest_patches_report(codebook: &Codebook, pool: &[DescriptorSet], n: usize) -> Result<Vec<Vec<Neighbor>>> {
    let means: Vec<Vec<f64>> = pool.iter().map(|s| s.mean_descriptor()).collect();
    if let Some(m) = means.iter().find(|m| m.len() != codebook.dim()) {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim(),
            found: m.len(),
        });
    }
    Ok(codebook
        .centroids
        .rows()
        .into_iter()
        .map(|c| {
            let c = c.to_vec();
            let mut all: Vec<Neighbor> = pool
                .iter()
                .zip(&means)
                .map(|(s, m)| Neighbor {
                    patch_id: s.patch_id.clone(),
                    distance: sq_dist(&c, m).sqrt(),
                })
                .collect();
            all.sort_by(|a, b| {
                a.distance
                    .total_cmp(&b.distance)
                    .then_with(|| a.patch_id.cmp(&b.patch_id))
            });
            all.truncate(n);
            all
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedPatch {
    pub patch_id: String,
    pub value: f64,
    pub predicted: usize,
}

/// Per class column, every patch ordered by descending decision value; equal
/// values keep input order.
pub fn certainty_ranking(
    patch_ids: &[String],
    decisions: ArrayView2<f64>,
    predicted: &[usize],
) -> Result<Vec<Vec<RankedPatch>>> {
    if decisions.nrows() != patch_ids.len() || predicted.len() != patch_ids.len() {
        return Err(Error::LengthMismatch {
            left: patch_ids.len(),
            right: decisions.nrows().min(predicted.len()),
        });
    }
    Ok(decisions
        .columns()
        .into_iter()
        .map(|col| {
            let mut ranked: Vec<RankedPatch> = patch_ids
                .iter()
                .zip(col.iter())
                .zip(predicted)
                .map(|((id, &value), &predicted)| RankedPatch {
                    patch_id: id.clone(),
                    value,
                    predicted,
                })
                .collect();
            ranked.sort_by(|a, b| b.value.total_cmp(&a.value));
            ranked
        })
        .collect())
}
