//! Scan preprocessing: contrast stretching, bicubic downscaling, foreground
//! segmentation and FBP-gated patch grids.
//!
//! Images are stored channel-last (`height × width × channels`). Normalized
//! images use `f32` so that a full 3600×5760×3 scan stays a few hundred MB.

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma};
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Species;

/// One raw 16-bit microscopy scan with its ground truth.
#[derive(Debug, Clone)]
pub struct Scan {
    pub pixels: Array3<u16>,
    pub species: Species,
    pub preparation_id: u8,
    pub scan_id: String,
}

impl Scan {
    pub fn new(scan_id: impl Into<String>, pixels: Array3<u16>, species: Species, preparation_id: u8) -> Result<Self> {
        if !(1..=2).contains(&preparation_id) {
            return Err(Error::InvalidArgument(format!(
                "preparation id must be 1 or 2, got {preparation_id}"
            )));
        }
        Ok(Scan {
            pixels,
            species,
            preparation_id,
            scan_id: scan_id.into(),
        })
    }

    /// Reads a 16-bit (or 8-bit, widened) grayscale or RGB image file.
    pub fn load(path: &Path, scan_id: impl Into<String>, species: Species, preparation_id: u8) -> Result<Self> {
        let pixels = read_u16_image(path)?;
        Scan::new(scan_id, pixels, species, preparation_id)
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
}

pub fn read_u16_image(path: &Path) -> Result<Array3<u16>> {
    let img = image::open(path)?;
    let color = img.color();
    let has_color = color.has_color();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = if has_color {
        let buf = img.into_rgb16();
        Array3::from_shape_vec((h, w, 3), buf.into_raw())
    } else {
        let buf = img.into_luma16();
        Array3::from_shape_vec((h, w, 1), buf.into_raw())
    };
    pixels.map_err(|e| Error::Format(e.to_string()))
}

pub fn write_u16_image(path: &Path, pixels: &Array3<u16>) -> Result<()> {
    let (h, w, c) = pixels.dim();
    let raw: Vec<u16> = pixels.iter().copied().collect();
    let img = match c {
        1 => DynamicImage::ImageLuma16(
            image::ImageBuffer::from_raw(w as u32, h as u32, raw)
                .ok_or_else(|| Error::Format("bad image buffer".into()))?,
        ),
        3 => DynamicImage::ImageRgb16(
            image::ImageBuffer::from_raw(w as u32, h as u32, raw)
                .ok_or_else(|| Error::Format("bad image buffer".into()))?,
        ),
        _ => return Err(Error::InvalidArgument(format!("unsupported channel count {c}"))),
    };
    img.save(path)?;
    Ok(())
}

/// Contrast-stretched image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub pixels: Array3<f32>,
    /// Cumulative scale relative to the raw scan.
    pub scale_factor: f64,
}

impl NormalizedImage {
    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    /// Channel mean.
    pub fn grayscale(&self) -> Array2<f32> {
        let c = self.pixels.dim().2 as f32;
        self.pixels.sum_axis(Axis(2)).mapv(|v| v / c)
    }
}

/// Pixel-level segmentation, `true` = foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub bits: Array2<bool>,
}

impl ForegroundMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 8-bit export: 255 = foreground, 0 = background.
    pub fn to_image(&self) -> GrayImage {
        let (h, w) = self.bits.dim();
        GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([if self.bits[[y as usize, x as usize]] { 255 } else { 0 }])
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_image().save(path)?;
        Ok(())
    }
}

/// Foreground-to-background proportion `foreground:background`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FbpRatio {
    pub foreground: u32,
    pub background: u32,
}

impl FbpRatio {
    pub const fn new(foreground: u32, background: u32) -> Self {
        FbpRatio { foreground, background }
    }

    /// The ratio `r:1` as a foreground fraction `r / (r + 1)`.
    pub fn fraction(self) -> f64 {
        self.foreground as f64 / (self.foreground as f64 + self.background as f64)
    }

    /// `fg / area >= fraction`, evaluated exactly in integers.
    fn fraction_at_least(self, fg: u64, area: u64) -> bool {
        fg as u128 * (self.foreground as u128 + self.background as u128) >= self.foreground as u128 * area as u128
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSpec {
    pub patch_size: usize,
    pub stride: usize,
    /// Foreground patches need at least this proportion.
    pub fg_min_ratio: FbpRatio,
    /// Background patches need strictly less than this proportion.
    pub bg_max_ratio: FbpRatio,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            patch_size: 500,
            stride: 250,
            fg_min_ratio: FbpRatio::new(2, 1),
            bg_max_ratio: FbpRatio::new(1, 100),
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::InvalidArgument(format!(
                "need 0 < stride <= patch_size, got stride {} and patch size {}",
                self.stride, self.patch_size
            )));
        }
        for r in [self.fg_min_ratio, self.bg_max_ratio] {
            if r.foreground + r.background == 0 {
                return Err(Error::InvalidArgument("FBP ratio 0:0".into()));
            }
        }
        if self.fg_min_ratio.fraction() <= self.bg_max_ratio.fraction() {
            return Err(Error::InvalidArgument(
                "foreground FBP gate must exceed the background gate".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    Foreground,
    Background,
    Skipped,
}

impl Gate {
    pub fn as_str(self) -> &'static str {
        match self {
            Gate::Foreground => "fg",
            Gate::Background => "bg",
            Gate::Skipped => "skip",
        }
    }
}

impl std::str::FromStr for Gate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fg" => Ok(Gate::Foreground),
            "bg" => Ok(Gate::Background),
            "skip" => Ok(Gate::Skipped),
            _ => Err(Error::Format(format!("unknown gate {s:?}"))),
        }
    }
}

/// A patch position. `row`/`col` are the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchEntry {
    pub row: usize,
    pub col: usize,
    pub gate: Gate,
    pub foreground_pixels: usize,
}

impl PatchEntry {
    pub fn center(&self, patch_size: usize) -> (usize, usize) {
        (self.row + patch_size / 2, self.col + patch_size / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub entries: Vec<PatchEntry>,
}

impl PatchGrid {
    pub fn with_gate(&self, gate: Gate) -> impl Iterator<Item = &PatchEntry> {
        self.entries.iter().filter(move |e| e.gate == gate)
    }
}

/// Percentile of a sorted multiset with linear interpolation between order
/// statistics, computed from a 16-bit histogram.
fn histogram_percentile(hist: &[u64], total: u64, pct: f64) -> f64 {
    let pos = pct / 100.0 * (total - 1) as f64;
    let lower = pos.floor() as u64;
    let frac = pos - lower as f64;
    let a = kth_smallest(hist, lower);
    if frac == 0.0 || lower + 1 >= total {
        return a;
    }
    let b = kth_smallest(hist, lower + 1);
    a + (b - a) * frac
}

fn kth_smallest(hist: &[u64], k: u64) -> f64 {
    let mut seen = 0u64;
    for (value, &count) in hist.iter().enumerate() {
        seen += count;
        if seen > k {
            return value as f64;
        }
    }
    (hist.len() - 1) as f64
}

/// Low/high percentile intensities over all pixels and channels.
pub fn compute_intensity_limits(scan: &Scan, low_pct: f64, high_pct: f64) -> Result<(f64, f64)> {
    if !(0.0..=100.0).contains(&low_pct) || !(0.0..=100.0).contains(&high_pct) || low_pct >= high_pct {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= low < high <= 100, got ({low_pct}, {high_pct})"
        )));
    }
    if scan.pixels.is_empty() {
        return Err(Error::InvalidArgument("empty scan".into()));
    }
    let mut hist = vec![0u64; 65536];
    for &p in scan.pixels.iter() {
        hist[p as usize] += 1;
    }
    let total = scan.pixels.len() as u64;
    let lo = histogram_percentile(&hist, total, low_pct);
    let hi = histogram_percentile(&hist, total, high_pct);
    if lo == hi {
        return Err(Error::DegenerateImage(lo));
    }
    Ok((lo, hi))
}

pub fn stretch_contrast(scan: &Scan, lo: f64, hi: f64) -> Result<NormalizedImage> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("need lo < hi, got ({lo}, {hi})")));
    }
    let range = hi - lo;
    let pixels = scan.pixels.mapv(|p| ((p as f64 - lo) / range).clamp(0.0, 1.0) as f32);
    Ok(NormalizedImage {
        pixels,
        scale_factor: 1.0,
    })
}

fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four source taps and weights for every output coordinate, edge-replicated.
fn cubic_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for k in 0..4 {
                let offset = k as f64 - 1.0;
                let i = (base + offset).clamp(0.0, (in_len - 1) as f64);
                idx[k] = i as usize;
                w[k] = cubic_weight(t - offset);
            }
            (idx, w)
        })
        .collect()
}

/// Bicubic resampling to `round(dim · factor)`; output clamped to `[0, 1]`.
pub fn downscale(img: &NormalizedImage, factor: f64) -> Result<NormalizedImage> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::InvalidArgument(format!("scale factor {factor} not in (0, 1]")));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let (h, w, c) = img.pixels.dim();
    let oh = ((h as f64 * factor).round() as usize).max(1);
    let ow = ((w as f64 * factor).round() as usize).max(1);
    let col_taps = cubic_taps(w, ow);
    let row_taps = cubic_taps(h, oh);

    let mut horiz = Array3::<f32>::zeros((h, ow, c));
    for y in 0..h {
        for (x, (idx, wt)) in col_taps.iter().enumerate() {
            for ch in 0..c {
                let v: f64 = (0..4).map(|k| wt[k] * img.pixels[[y, idx[k], ch]] as f64).sum();
                horiz[[y, x, ch]] = v as f32;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((oh, ow, c));
    for (y, (idx, wt)) in row_taps.iter().enumerate() {
        for x in 0..ow {
            for ch in 0..c {
                let v: f64 = (0..4).map(|k| wt[k] * horiz[[idx[k], x, ch]] as f64).sum();
                out[[y, x, ch]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(NormalizedImage {
        pixels: out,
        scale_factor: img.scale_factor * factor,
    })
}

/// Separable Gaussian blur with edge replication. `sigma == 0` is the identity.
pub fn gaussian_blur(gray: ArrayView2<f32>, sigma: f64) -> Array2<f32> {
    if sigma <= 0.0 {
        return gray.to_owned();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (h, w) = gray.dim();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kw) in kernel.iter().enumerate() {
                acc += kw * gray[[y, clamp(x as isize + k as isize - radius, w)]] as f64;
            }
            tmp[[y, x]] = acc as f32;
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kw) in kernel.iter().enumerate() {
                acc += kw * tmp[[clamp(y as isize + k as isize - radius, h), x]] as f64;
            }
            out[[y, x]] = acc as f32;
        }
    }
    out
}

/// Foreground = blurred grayscale strictly below `threshold` (cells are darker
/// than the slide background).
pub fn segment_foreground(img: &NormalizedImage, blur_sigma: f64, threshold: f64) -> Result<ForegroundMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} not in (0, 1)")));
    }
    if !(blur_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("blur sigma {blur_sigma} is negative")));
    }
    let blurred = gaussian_blur(img.grayscale().view(), blur_sigma);
    Ok(ForegroundMask {
        bits: blurred.mapv(|v| (v as f64) < threshold),
    })
}

/// Top-left offsets along one axis: `floor((side - patch) / stride) + 1` of them.
pub fn grid_positions(side: usize, patch: usize, stride: usize) -> Vec<usize> {
    if side < patch || stride == 0 {
        return Vec::new();
    }
    (0..=(side - patch) / stride).map(|i| i * stride).collect()
}

pub fn extract_patch_grid(mask: &ForegroundMask, spec: &PatchSpec) -> Result<PatchGrid> {
    spec.validate()?;
    let (h, w) = mask.bits.dim();
    let rows = grid_positions(h, spec.patch_size, spec.stride);
    let cols = grid_positions(w, spec.patch_size, spec.stride);
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            patch_size: spec.patch_size,
        });
    }

    // summed-area table with a zero border
    let mut sat = Array2::<u64>::zeros((h + 1, w + 1));
    for y in 0..h {
        let mut run = 0u64;
        for x in 0..w {
            run += mask.bits[[y, x]] as u64;
            sat[[y + 1, x + 1]] = sat[[y, x + 1]] + run;
        }
    }
    let p = spec.patch_size;
    let area = (p * p) as u64;
    let mut entries = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let fg = sat[[r + p, c + p]] + sat[[r, c]] - sat[[r, c + p]] - sat[[r + p, c]];
            let gate = if spec.fg_min_ratio.fraction_at_least(fg, area) {
                Gate::Foreground
            } else if !spec.bg_max_ratio.fraction_at_least(fg, area) {
                Gate::Background
            } else {
                Gate::Skipped
            };
            entries.push(PatchEntry {
                row: r,
                col: c,
                gate,
                foreground_pixels: fg as usize,
            });
        }
    }
    Ok(PatchGrid { patch_size: p, entries })
}

pub fn crop(img: &NormalizedImage, row: usize, col: usize, size: usize) -> Array3<f32> {
    img.pixels.slice(s![row..row + size, col..col + size, ..]).to_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Augmentation {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    Mirror,
    Noise,
}

impl Augmentation {
    pub const ALL: [Augmentation; 6] = [
        Augmentation::Identity,
        Augmentation::Rot90,
        Augmentation::Rot180,
        Augmentation::Rot270,
        Augmentation::Mirror,
        Augmentation::Noise,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Augmentation::Identity => "id",
            Augmentation::Rot90 => "rot90",
            Augmentation::Rot180 => "rot180",
            Augmentation::Rot270 => "rot270",
            Augmentation::Mirror => "mirror",
            Augmentation::Noise => "noise",
        }
    }
}

pub const NOISE_AMPLITUDE: f32 = 0.02;

/// Counter-clockwise quarter turn of a square patch.
pub fn rot90(patch: ArrayView3<f32>) -> Array3<f32> {
    let (n, _, c) = patch.dim();
    Array3::from_shape_fn((n, n, c), |(i, j, ch)| patch[[j, n - 1 - i, ch]])
}

/// Left-right reflection.
pub fn mirror(patch: ArrayView3<f32>) -> Array3<f32> {
    let (h, w, c) = patch.dim();
    Array3::from_shape_fn((h, w, c), |(i, j, ch)| patch[[i, w - 1 - j, ch]])
}

pub fn add_noise(patch: ArrayView3<f32>, seed: u64) -> Array3<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = patch.to_owned();
    for v in out.iter_mut() {
        let n: f32 = rng.random_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
        *v = (*v + n).clamp(0.0, 1.0);
    }
    out
}

/// All six variants in [`Augmentation::ALL`] order.
pub fn augment_patch(patch: ArrayView3<f32>, seed: u64) -> Result<Vec<(Augmentation, Array3<f32>)>> {
    let (h, w, _) = patch.dim();
    if h != w {
        return Err(Error::InvalidArgument(format!(
            "augmentation needs a square patch, got {h}x{w}"
        )));
    }
    let r90 = rot90(patch);
    let r180 = rot90(r90.view());
    let r270 = rot90(r180.view());
    Ok(vec![
        (Augmentation::Identity, patch.to_owned()),
        (Augmentation::Rot90, r90),
        (Augmentation::Rot180, r180),
        (Augmentation::Rot270, r270),
        (Augmentation::Mirror, mirror(patch)),
        (Augmentation::Noise, add_noise(patch, seed)),
    ])
}
