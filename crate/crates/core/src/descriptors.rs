//! Per-patch local descriptor sets.
//!
//! Descriptors come either from an external CNN feature extractor (exported
//! to a PVDF file, see [`crate::formats`]) or from [`toy_descriptor`], a cheap
//! deterministic stand-in based on local intensity and gradient statistics.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

/// An `N × D` matrix of local descriptors for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub data: Array2<f64>,
    pub patch_id: String,
    pub grid_shape: (usize, usize),
}

impl DescriptorSet {
    /// Validates shape and finiteness. The grid defaults to `√N × √N` when `N`
    /// is a perfect square, and `N × 1` otherwise.
    pub fn new(patch_id: impl Into<String>, data: Array2<f64>) -> Result<Self> {
        let n = data.nrows();
        let side = (n as f64).sqrt().round() as usize;
        let grid = if side * side == n { (side, side) } else { (n, 1) };
        Self::with_grid(patch_id, data, grid)
    }

    pub fn with_grid(patch_id: impl Into<String>, data: Array2<f64>, grid_shape: (usize, usize)) -> Result<Self> {
        let patch_id = patch_id.into();
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::Format(format!("descriptor set {patch_id:?} is {n}x{d}")));
        }
        if grid_shape.0 * grid_shape.1 != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: grid_shape.0 * grid_shape.1,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("descriptor set {patch_id:?}")));
        }
        Ok(DescriptorSet {
            data,
            patch_id,
            grid_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn mean_descriptor(&self) -> Vec<f64> {
        self.data
            .mean_axis(Axis(0))
            .expect("descriptor sets are never empty")
            .to_vec()
    }

    /// Scales every row to unit Euclidean norm (zero rows are left alone).
    pub fn l2_normalize_rows(&mut self) {
        for mut row in self.data.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
    }
}

/// Where descriptors come from. The dimension is fixed for a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DescriptorSource {
    FileIngest {
        path: PathBuf,
        dimension: usize,
    },
    ToyLocalStats {
        grid_rows: usize,
        grid_cols: usize,
        dimension: usize,
    },
}

impl Default for DescriptorSource {
    fn default() -> Self {
        DescriptorSource::ToyLocalStats {
            grid_rows: 13,
            grid_cols: 13,
            dimension: TOY_DEFAULT_DIM,
        }
    }
}

impl DescriptorSource {
    pub fn dimension(&self) -> usize {
        match self {
            DescriptorSource::FileIngest { dimension, .. } | DescriptorSource::ToyLocalStats { dimension, .. } => {
                *dimension
            }
        }
    }
}

pub const TOY_DEFAULT_DIM: usize = 16;

/// Reads every descriptor set stored in a PVDF file.
pub fn ingest_descriptor_file(path: &Path) -> Result<Vec<DescriptorSet>> {
    let bytes = std::fs::read(path)?;
    formats::decode_descriptor_sets(&bytes)
}

/// Like [`ingest_descriptor_file`], additionally enforcing the descriptor dimension.
pub fn ingest_with_dimension(path: &Path, dimension: usize) -> Result<Vec<DescriptorSet>> {
    let sets = ingest_descriptor_file(path)?;
    if let Some(set) = sets.first() {
        if set.dim() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                found: set.dim(),
            });
        }
    }
    Ok(sets)
}

pub fn write_descriptor_file(path: &Path, sets: &[DescriptorSet]) -> Result<()> {
    std::fs::write(path, formats::encode_descriptor_sets(sets)?)?;
    Ok(())
}

const TOY_BASE_STATS: usize = 16;
const ORIENTATION_BINS: usize = 8;

/// Local statistics over a `grid_rows × grid_cols` partition of the patch.
///
/// Each cell yields 16 base values: mean, standard deviation, min, max, mean
/// |∂x|, mean |∂y|, mean gradient magnitude, dark-pixel fraction (< 0.5) and an
/// 8-bin unsigned-orientation histogram of gradient magnitude. The base vector
/// is tiled or truncated to `dim`. Cells use `floor(i·H/rows)` boundaries so the
/// patch side need not be a multiple of the grid.
pub fn toy_descriptor(
    patch: ArrayView3<f32>,
    grid_rows: usize,
    grid_cols: usize,
    dim: usize,
    patch_id: impl Into<String>,
) -> Result<DescriptorSet> {
    let (h, w, c) = patch.dim();
    if grid_rows == 0 || grid_cols == 0 || dim == 0 || h < grid_rows || w < grid_cols {
        return Err(Error::InvalidArgument(format!(
            "cannot split a {h}x{w} patch into a {grid_rows}x{grid_cols} grid of {dim}-d descriptors"
        )));
    }
    let gray = Array2::from_shape_fn((h, w), |(y, x)| {
        (0..c).map(|ch| patch[[y, x, ch]] as f64).sum::<f64>() / c as f64
    });
    let at = |y: isize, x: isize| gray[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]];
    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w as isize {
            gx[[y as usize, x as usize]] = 0.5 * (at(y, x + 1) - at(y, x - 1));
            gy[[y as usize, x as usize]] = 0.5 * (at(y + 1, x) - at(y - 1, x));
        }
    }

    let n = grid_rows * grid_cols;
    let mut data = Array2::<f64>::zeros((n, dim));
    let mut base = [0f64; TOY_BASE_STATS];
    for gr in 0..grid_rows {
        let (y0, y1) = (gr * h / grid_rows, (gr + 1) * h / grid_rows);
        for gc in 0..grid_cols {
            let (x0, x1) = (gc * w / grid_cols, (gc + 1) * w / grid_cols);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            base.fill(0.0);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = gray[[y, x]];
                    base[0] += v;
                    base[1] += v * v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                    let (dx, dy) = (gx[[y, x]], gy[[y, x]]);
                    let mag = (dx * dx + dy * dy).sqrt();
                    base[4] += dx.abs();
                    base[5] += dy.abs();
                    base[6] += mag;
                    if v < 0.5 {
                        base[7] += 1.0;
                    }
                    if mag > 0.0 {
                        let theta = dy.atan2(dx).rem_euclid(std::f64::consts::PI);
                        let bin = ((theta / std::f64::consts::PI * ORIENTATION_BINS as f64) as usize)
                            .min(ORIENTATION_BINS - 1);
                        base[8 + bin] += mag;
                    }
                }
            }
            let mean = base[0] / count;
            base[0] = mean;
            base[1] = (base[1] / count - mean * mean).max(0.0).sqrt();
            base[2] = lo;
            base[3] = hi;
            for v in &mut base[4..] {
                *v /= count;
            }
            let mut row = data.row_mut(gr * grid_cols + gc);
            for (i, v) in row.iter_mut().enumerate() {
                *v = base[i % TOY_BASE_STATS];
            }
        }
    }
    DescriptorSet::with_grid(patch_id, data, (grid_rows, grid_cols))
}

/// Row-major concatenation, length `N · D`.
pub fn flatten_descriptors(set: &DescriptorSet) -> Vec<f64> {
    set.data.iter().copied().collect()
}
