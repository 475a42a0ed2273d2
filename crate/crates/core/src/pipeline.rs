//! End-to-end stages: scan preprocessing, descriptor computation, the outer
//! 2-fold protocol with inner grid search, and single-scan prediction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PreprocessConfig, RunConfig};
use crate::descriptors::{toy_descriptor, DescriptorSet, DescriptorSource};
use crate::encode::{Encoding, EncodingOptions, Vocabulary};
use crate::error::{Error, Result, ResultExt};
use crate::eval::{
    aggregate_scan, evaluate_patches, grid_search, inner_folds, inner_splits, split_by_preparation, ClassifierKind,
    EvaluationReport, FoldPlan, GridPoint, Level, ManifestEntry, ModelParams, ParamGrid, ScanPrediction,
};
use crate::imaging::{
    augment_patch, compute_intensity_limits, crop, downscale, extract_patch_grid, segment_foreground, stretch_contrast,
    ForegroundMask, Gate, NormalizedImage, PatchGrid, Scan,
};
use crate::labels::{PatchLabel, Species};
use crate::learn::{rf_train, svm_train, Classifier, RfConfig, Standardizer, SvmConfig, TrainedModel};
use crate::vocab::{gmm_fit, kmeans_fit, GmmParams, KMeansParams};

/// Separator between a patch id and an augmentation tag.
pub const AUGMENT_MARK: &str = "#aug-";

pub fn patch_id(scan_id: &str, row: usize, col: usize) -> String {
    format!("{scan_id}@{row},{col}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub scan_id: String,
    pub species: Species,
    pub preparation: u8,
    pub row: usize,
    pub col: usize,
    pub gate: Gate,
    pub foreground_pixels: usize,
}

impl PatchRecord {
    /// Foreground patches carry the scan's species, background patches BG.
    pub fn label(&self) -> Option<PatchLabel> {
        match self.gate {
            Gate::Foreground => Some(PatchLabel::Species(self.species)),
            Gate::Background => Some(PatchLabel::Background),
            Gate::Skipped => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreprocessedScan {
    pub image: NormalizedImage,
    pub mask: ForegroundMask,
    pub grid: PatchGrid,
}

pub fn preprocess_scan(scan: &Scan, cfg: &PreprocessConfig) -> Result<PreprocessedScan> {
    let (lo, hi) = compute_intensity_limits(scan, cfg.low_percentile, cfg.high_percentile)?;
    let image = downscale(&stretch_contrast(scan, lo, hi)?, cfg.scale)?;
    let mask = segment_foreground(&image, cfg.blur_sigma, cfg.threshold)?;
    let grid = extract_patch_grid(&mask, &cfg.patch)?;
    Ok(PreprocessedScan { image, mask, grid })
}

pub fn scan_records(entry: &ManifestEntry, grid: &PatchGrid) -> Vec<PatchRecord> {
    grid.entries
        .iter()
        .map(|e| PatchRecord {
            patch_id: patch_id(&entry.scan_id, e.row, e.col),
            scan_id: entry.scan_id.clone(),
            species: entry.species,
            preparation: entry.preparation_id,
            row: e.row,
            col: e.col,
            gate: e.gate,
            foreground_pixels: e.foreground_pixels,
        })
        .collect()
}

/// Local-statistics descriptors for every foreground and background patch,
/// optionally followed by augmented variants tagged with [`AUGMENT_MARK`].
pub fn compute_descriptors(
    pre: &PreprocessedScan,
    records: &[PatchRecord],
    source: &DescriptorSource,
    augment: bool,
    seed: u64,
) -> Result<Vec<DescriptorSet>> {
    let DescriptorSource::ToyLocalStats {
        grid_rows,
        grid_cols,
        dimension,
    } = *source
    else {
        return Err(Error::InvalidArgument(
            "descriptors can only be computed for the local-statistics source".into(),
        ));
    };
    let size = pre.grid.patch_size;
    let per_patch: Vec<Vec<DescriptorSet>> = records
        .par_iter()
        .filter(|r| r.gate != Gate::Skipped)
        .map(|r| {
            let patch = crop(&pre.image, r.row, r.col, size);
            let mut sets = vec![toy_descriptor(
                patch.view(),
                grid_rows,
                grid_cols,
                dimension,
                r.patch_id.clone(),
            )?];
            if augment {
                let patch_seed = seed ^ (r.row as u64).wrapping_mul(0x1000_0001) ^ r.col as u64;
                for (aug, variant) in augment_patch(patch.view(), patch_seed)?.into_iter().skip(1) {
                    let id = format!("{}{AUGMENT_MARK}{}", r.patch_id, aug.tag());
                    sets.push(toy_descriptor(variant.view(), grid_rows, grid_cols, dimension, id)?);
                }
            }
            Ok(sets)
        })
        .collect::<Result<_>>()?;
    Ok(per_patch.into_iter().flatten().collect())
}

/// Stable 64-bit hash of a scan id, used to derive per-scan seeds.
pub fn scan_seed(seed: u64, scan_id: &str) -> u64 {
    scan_id.bytes().fold(0xcbf2_9ce4_8422_2325u64 ^ seed, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

#[derive(Debug, Clone)]
pub struct ScanOutput {
    pub scan_id: String,
    pub mask: ForegroundMask,
    pub records: Vec<PatchRecord>,
    /// Present when descriptors are computed rather than ingested.
    pub descriptors: Option<Vec<DescriptorSet>>,
}

/// Preprocesses every scan of the manifest (in parallel, manifest order kept).
pub fn preprocess_corpus(manifest: &[ManifestEntry], cfg: &RunConfig) -> Result<Vec<ScanOutput>> {
    if manifest.is_empty() {
        return Err(Error::ManifestEmpty);
    }
    manifest
        .par_iter()
        .map(|entry| {
            let run = || {
                let scan = Scan::load(&entry.path, entry.scan_id.clone(), entry.species, entry.preparation_id)?;
                let pre = preprocess_scan(&scan, &cfg.preprocess)?;
                let records = scan_records(entry, &pre.grid);
                let descriptors = match cfg.descriptors.source {
                    DescriptorSource::ToyLocalStats { .. } => Some(compute_descriptors(
                        &pre,
                        &records,
                        &cfg.descriptors.source,
                        cfg.descriptors.augment,
                        scan_seed(cfg.seed, &entry.scan_id),
                    )?),
                    DescriptorSource::FileIngest { .. } => None,
                };
                Ok(ScanOutput {
                    scan_id: entry.scan_id.clone(),
                    mask: pre.mask,
                    records,
                    descriptors,
                })
            };
            run().context(|| format!("scan {}", entry.scan_id))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    patch_id: String,
    scan_id: String,
    species: String,
    preparation: u8,
    row: usize,
    col: usize,
    gate: String,
    foreground_pixels: usize,
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new().delimiter(b'\t').from_path(path)?)
}

pub fn write_patch_index(path: &Path, records: &[PatchRecord]) -> Result<()> {
    let mut w = tsv_writer(path)?;
    for r in records {
        w.serialize(IndexRow {
            patch_id: r.patch_id.clone(),
            scan_id: r.scan_id.clone(),
            species: r.species.code().to_string(),
            preparation: r.preparation,
            row: r.row,
            col: r.col,
            gate: r.gate.as_str().to_string(),
            foreground_pixels: r.foreground_pixels,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_patch_index(path: &Path) -> Result<Vec<PatchRecord>> {
    let mut reader = csv::ReaderBuilder::new().delimiter(b'\t').from_path(path)?;
    reader
        .deserialize()
        .map(|row| {
            let row: IndexRow = row?;
            Ok(PatchRecord {
                species: row.species.parse()?,
                gate: row.gate.parse()?,
                patch_id: row.patch_id,
                scan_id: row.scan_id,
                preparation: row.preparation,
                row: row.row,
                col: row.col,
                foreground_pixels: row.foreground_pixels,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DatasetPatch {
    pub record: PatchRecord,
    pub label: PatchLabel,
    pub descriptors: DescriptorSet,
    pub augmented: bool,
}

/// Labelled patches with their descriptors; only used patches (fg and bg).
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub patches: Vec<DatasetPatch>,
}

impl Dataset {
    /// Joins the patch index with descriptor sets by patch id. Every
    /// foreground and background patch needs descriptors.
    pub fn assemble(records: &[PatchRecord], sets: Vec<DescriptorSet>) -> Result<Self> {
        let mut by_id: HashMap<&str, &PatchRecord> = HashMap::new();
        for r in records.iter().filter(|r| r.gate != Gate::Skipped) {
            by_id.insert(&r.patch_id, r);
        }
        let mut base: BTreeMap<String, DescriptorSet> = BTreeMap::new();
        let mut augmented: BTreeMap<String, Vec<DescriptorSet>> = BTreeMap::new();
        for s in sets {
            match s.patch_id.split_once(AUGMENT_MARK) {
                Some((id, _)) => augmented.entry(id.to_string()).or_default().push(s),
                None => {
                    base.insert(s.patch_id.clone(), s);
                }
            }
        }
        let missing: Vec<String> = records
            .iter()
            .filter(|r| r.gate != Gate::Skipped && !base.contains_key(&r.patch_id))
            .map(|r| r.patch_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingDescriptors(missing));
        }
        let mut patches = Vec::new();
        for r in records {
            let Some(label) = r.label() else { continue };
            patches.push(DatasetPatch {
                record: r.clone(),
                label,
                descriptors: base.remove(&r.patch_id).unwrap(),
                augmented: false,
            });
            for s in augmented.remove(&r.patch_id).unwrap_or_default() {
                patches.push(DatasetPatch {
                    record: r.clone(),
                    label,
                    descriptors: s,
                    augmented: true,
                });
            }
        }
        let dims: BTreeSet<usize> = patches.iter().map(|p| p.descriptors.dim()).collect();
        if dims.len() > 1 {
            let mut it = dims.into_iter();
            return Err(Error::DimensionMismatch {
                expected: it.next().unwrap(),
                found: it.next().unwrap(),
            });
        }
        Ok(Dataset { patches })
    }

    /// Rows of patches from one preparation. Augmented variants only if asked.
    pub fn preparation_rows(&self, preparation: u8, with_augmented: bool) -> Vec<usize> {
        self.patches
            .iter()
            .enumerate()
            .filter(|(_, p)| p.record.preparation == preparation && (with_augmented || !p.augmented))
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows of patches from the given scans. Augmented variants only if asked.
    fn rows(&self, scans: &BTreeSet<&str>, with_augmented: bool) -> Vec<usize> {
        self.patches
            .iter()
            .enumerate()
            .filter(|(_, p)| scans.contains(p.record.scan_id.as_str()) && (with_augmented || !p.augmented))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Everything the protocol needs besides data, resolved from a run config.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSettings {
    pub encoding: Encoding,
    pub options: EncodingOptions,
    pub classifier: ClassifierKind,
    pub grid: ParamGrid,
    pub inner_folds: usize,
    pub seed: u64,
    pub vocab_sample: usize,
    pub vocab_max_iter: usize,
    pub vocab_tol: f64,
    pub standardize: bool,
    pub svm_tol: f64,
    pub svm_max_passes: usize,
    pub rf: RfConfig,
}

impl ProtocolSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        ProtocolSettings {
            encoding: cfg.encoding.kind,
            options: cfg.encoding.options(),
            classifier: cfg.classifier.kind,
            grid: cfg.grid.clone(),
            inner_folds: cfg.classifier.inner_folds,
            seed: cfg.seed,
            vocab_sample: cfg.encoding.vocab_sample,
            vocab_max_iter: cfg.encoding.max_iter,
            vocab_tol: cfg.encoding.tol,
            standardize: cfg.classifier.standardize,
            svm_tol: cfg.classifier.svm_tol,
            svm_max_passes: cfg.classifier.svm_max_passes,
            rf: cfg.classifier.rf(cfg.seed),
        }
    }

    pub fn method_name(&self) -> String {
        format!("{} {}", self.encoding.as_str().to_uppercase(), self.classifier.as_str())
    }
}

/// Fits a codebook or GMM on a seeded sample of the descriptors of `rows`.
pub fn fit_vocabulary(
    data: &Dataset,
    rows: &[usize],
    encoding: Encoding,
    k: usize,
    settings: &ProtocolSettings,
    seed: u64,
) -> Result<Vocabulary> {
    let counts: Vec<usize> = rows.iter().map(|&r| data.patches[r].descriptors.len()).collect();
    let total: usize = counts.iter().sum();
    let Some(&first) = rows.first() else {
        return Err(Error::TooFewPoints { points: 0, clusters: k });
    };
    let dim = data.patches[first].descriptors.dim();
    let mut picks: Vec<usize> = if total > settings.vocab_sample {
        index::sample(&mut ChaCha8Rng::seed_from_u64(seed), total, settings.vocab_sample).into_vec()
    } else {
        (0..total).collect()
    };
    picks.sort_unstable();
    let mut points = Array2::<f64>::zeros((picks.len(), dim));
    let (mut patch, mut offset) = (0, 0);
    for (out, &g) in picks.iter().enumerate() {
        while g >= offset + counts[patch] {
            offset += counts[patch];
            patch += 1;
        }
        points
            .row_mut(out)
            .assign(&data.patches[rows[patch]].descriptors.data.row(g - offset));
    }
    Ok(match encoding {
        Encoding::Bow => {
            let params = KMeansParams {
                max_iter: settings.vocab_max_iter,
                tol: settings.vocab_tol,
                ..KMeansParams::new(k, seed)
            };
            Vocabulary::Codebook(kmeans_fit(points.view(), &params)?)
        }
        Encoding::Fv => {
            let params = GmmParams {
                max_iter: settings.vocab_max_iter,
                tol: settings.vocab_tol,
                ..GmmParams::new(k, seed)
            };
            Vocabulary::Gmm(gmm_fit(points.view(), &params)?)
        }
    })
}

/// Encodes every patch of the dataset (in parallel, order preserved).
pub fn encode_all(data: &Dataset, vocab: &Vocabulary, options: &EncodingOptions) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = data
        .patches
        .par_iter()
        .map(|p| {
            vocab
                .encode(&p.descriptors, options)
                .map(|e| e.values)
                .context(|| format!("encoding patch {}", p.record.patch_id))
        })
        .collect::<Result<_>>()?;
    let len = rows.first().map_or(0, Vec::len);
    Ok(Array2::from_shape_vec((rows.len(), len), rows.concat()).expect("equal encoding lengths"))
}

pub fn fit_model(
    x: ndarray::ArrayView2<f64>,
    y: &[usize],
    params: &ModelParams,
    settings: &ProtocolSettings,
) -> Result<TrainedModel> {
    match *params {
        ModelParams::Svm { kernel, c } => {
            let scaler = if settings.standardize {
                Some(Standardizer::fit(x)?)
            } else {
                None
            };
            let features = match &scaler {
                Some(s) => s.transform(x)?,
                None => x.to_owned(),
            };
            let cfg = SvmConfig {
                kernel,
                c,
                tol: settings.svm_tol,
                max_passes: settings.svm_max_passes,
                seed: settings.seed,
            };
            Ok(TrainedModel {
                scaler,
                classifier: Classifier::Svm(svm_train(features.view(), y, &cfg)?),
            })
        }
        ModelParams::Rf => Ok(TrainedModel {
            scaler: None,
            classifier: Classifier::Rf(rf_train(x, y, &settings.rf)?),
        }),
    }
}

fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    correct as f64 / truth.len().max(1) as f64
}

/// One outer run: train on `train_preparation`, test on the other one.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub train_preparation: u8,
    pub test_preparation: u8,
    pub chosen: GridPoint,
    pub grid_scores: Vec<(GridPoint, f64)>,
    pub vocabulary: Vocabulary,
    pub model: TrainedModel,
    /// Dataset rows of the (non-augmented) test patches.
    pub test_rows: Vec<usize>,
    pub predicted: Vec<usize>,
    /// One column per entry of `model.classifier.classes()`.
    pub decisions: Array2<f64>,
    pub scans: Vec<ScanPrediction>,
    /// Test scans without foreground patches; left out of the scan-level report.
    pub unscored: Vec<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub patch_report: EvaluationReport,
    pub scan_report: EvaluationReport,
}

/// Vocabulary seed for an outer fold and vocabulary size.
pub fn vocab_seed(seed: u64, train_preparation: u8, k: usize) -> u64 {
    seed.wrapping_add(1_000_003 * train_preparation as u64)
        .wrapping_add(k as u64)
}

fn run_fold(
    manifest: &[ManifestEntry],
    plan: &FoldPlan,
    data: &Dataset,
    settings: &ProtocolSettings,
    train_preparation: u8,
) -> Result<FoldOutcome> {
    let start = Instant::now();
    let test_preparation = 3 - train_preparation;
    let train_scans: BTreeSet<&str> = plan.fold(train_preparation).iter().map(String::as_str).collect();
    let test_scans: BTreeSet<&str> = plan.fold(test_preparation).iter().map(String::as_str).collect();
    let train_rows = data.rows(&train_scans, true);
    let test_rows = data.rows(&test_scans, false);
    let labels: Vec<usize> = data.patches.iter().map(|p| p.label.index()).collect();

    // vocabulary and encodings per candidate k, trained on this fold only
    let ks = settings.grid.k_values(settings.encoding);
    let encoded: Vec<(usize, Vocabulary, Array2<f64>)> = ks
        .iter()
        .map(|&k| {
            let vocab = fit_vocabulary(
                data,
                &train_rows,
                settings.encoding,
                k,
                settings,
                vocab_seed(settings.seed, train_preparation, k),
            )?;
            let x = encode_all(data, &vocab, &settings.options)?;
            Ok((k, vocab, x))
        })
        .collect::<Result<_>>()?;
    let features = |k: usize| &encoded.iter().find(|e| e.0 == k).expect("k from grid").2;

    // inner folds over training scans
    let species: HashMap<&str, Species> = manifest.iter().map(|e| (e.scan_id.as_str(), e.species)).collect();
    let scan_species: Vec<(String, Species)> = train_scans.iter().map(|s| (s.to_string(), species[s])).collect();
    let splits = inner_splits(&inner_folds(&scan_species, settings.inner_folds, settings.seed)?)?;
    let split_rows: Vec<(Vec<usize>, Vec<usize>)> = splits
        .iter()
        .map(|(tr, va)| {
            crate::eval::check_disjoint(tr, plan.fold(test_preparation))?;
            let tr: BTreeSet<&str> = tr.iter().map(String::as_str).collect();
            let va: BTreeSet<&str> = va.iter().map(String::as_str).collect();
            Ok((data.rows(&tr, true), data.rows(&va, false)))
        })
        .collect::<Result<_>>()?;

    let points = settings.grid.points(settings.encoding, settings.classifier);
    let (best, scores) = grid_search(&points, |point| {
        let x = features(point.k);
        let mut total = 0.0;
        for (tr, va) in &split_rows {
            let xt = x.select(Axis(0), tr);
            let yt: Vec<usize> = tr.iter().map(|&r| labels[r]).collect();
            let model = fit_model(xt.view(), &yt, &point.model, settings)?;
            let xv = x.select(Axis(0), va);
            let yv: Vec<usize> = va.iter().map(|&r| labels[r]).collect();
            total += accuracy(&model.predict(xv.view())?, &yv);
        }
        Ok(total / split_rows.len() as f64)
    })?;
    let chosen = points[best];

    let x = features(chosen.k);
    let xt = x.select(Axis(0), &train_rows);
    let yt: Vec<usize> = train_rows.iter().map(|&r| labels[r]).collect();
    let model = fit_model(xt.view(), &yt, &chosen.model, settings)?;
    let xs = x.select(Axis(0), &test_rows);
    let decisions = model.decision_values(xs.view())?;
    let predicted = model.predict(xs.view())?;

    let classes = model.classifier.classes().to_vec();
    let mut by_scan: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, &r) in test_rows.iter().enumerate() {
        if data.patches[r].record.gate == Gate::Foreground {
            by_scan
                .entry(data.patches[r].record.scan_id.as_str())
                .or_default()
                .push(i);
        }
    }
    let mut scans = Vec::new();
    let mut unscored = Vec::new();
    for scan in &test_scans {
        let Some(idx) = by_scan.get(scan).cloned() else {
            unscored.push(scan.to_string());
            continue;
        };
        let p: Vec<usize> = idx.iter().map(|&i| predicted[i]).collect();
        let d = decisions.select(Axis(0), &idx);
        scans.push(aggregate_scan(scan, &p, d.view(), &classes).context(|| format!("scan {scan}"))?);
    }

    let vocabulary = encoded.into_iter().find(|e| e.0 == chosen.k).unwrap().1;
    Ok(FoldOutcome {
        train_preparation,
        test_preparation,
        chosen,
        grid_scores: points.into_iter().zip(scores).collect(),
        vocabulary,
        model,
        test_rows,
        unscored,
        predicted,
        decisions,
        scans,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// The preparation-wise 2-fold protocol with inner grid search.
pub fn run_protocol(manifest: &[ManifestEntry], data: &Dataset, settings: &ProtocolSettings) -> Result<ProtocolResult> {
    let plan = split_by_preparation(manifest)?;
    let folds: Vec<FoldOutcome> = [1u8, 2]
        .par_iter()
        .map(|&p| {
            run_fold(manifest, &plan, data, settings, p).context(|| format!("outer fold trained on preparation {p}"))
        })
        .collect::<Result<_>>()?;

    let species: HashMap<&str, Species> = manifest.iter().map(|e| (e.scan_id.as_str(), e.species)).collect();
    let mut patch_folds = Vec::new();
    let mut scan_folds = Vec::new();
    for f in &folds {
        let truth: Vec<usize> = f.test_rows.iter().map(|&r| data.patches[r].label.index()).collect();
        patch_folds.push((
            f.test_preparation,
            Some(f.chosen),
            evaluate_patches(&f.predicted, &truth)?,
        ));
        let scan_truth: Vec<usize> = f.scans.iter().map(|s| species[s.scan_id.as_str()].index()).collect();
        let scan_pred: Vec<usize> = f.scans.iter().map(|s| s.winner).collect();
        scan_folds.push((
            f.test_preparation,
            Some(f.chosen),
            evaluate_patches(&scan_pred, &scan_truth)?,
        ));
    }
    let method = settings.method_name();
    Ok(ProtocolResult {
        patch_report: EvaluationReport::new(&method, Level::Patch, &patch_folds),
        scan_report: EvaluationReport::new(&method, Level::Scan, &scan_folds),
        plan,
        folds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PatchVerdict {
    pub patch_id: String,
    pub predicted: String,
    /// Decision value per class, in `classes` order.
    pub decisions: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanVerdict {
    pub scan_id: String,
    pub winner: String,
    pub votes: BTreeMap<String, usize>,
    pub classes: Vec<String>,
    pub patches: Vec<PatchVerdict>,
}

/// Classifies the foreground patches of one scan and aggregates their votes.
pub fn predict_scan(
    scan_id: &str,
    foreground: &[DescriptorSet],
    vocab: &Vocabulary,
    options: &EncodingOptions,
    model: &TrainedModel,
) -> Result<ScanVerdict> {
    if foreground.is_empty() {
        return Err(Error::NoForegroundPatches);
    }
    let rows: Vec<Vec<f64>> = foreground
        .iter()
        .map(|s| vocab.encode(s, options).map(|e| e.values))
        .collect::<Result<_>>()?;
    let x = Array2::from_shape_vec((rows.len(), rows[0].len()), rows.concat()).expect("equal encoding lengths");
    let decisions = model.decision_values(x.view())?;
    let predicted = model.predict(x.view())?;
    let classes = model.classifier.classes().to_vec();
    let vote = aggregate_scan(scan_id, &predicted, decisions.view(), &classes)?;
    let name = |i: usize| PatchLabel::from_index(i).map_or_else(|| i.to_string(), |l| l.to_string());
    Ok(ScanVerdict {
        scan_id: scan_id.to_string(),
        winner: name(vote.winner),
        votes: vote
            .votes
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(i, &v)| (name(i), v))
            .collect(),
        classes: classes.iter().map(|&c| name(c)).collect(),
        patches: foreground
            .iter()
            .zip(&predicted)
            .zip(decisions.rows())
            .map(|((s, &p), d)| PatchVerdict {
                patch_id: s.patch_id.clone(),
                predicted: name(p),
                decisions: d.to_vec(),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::KernelKind;
    use ndarray::Array2;
    use rand::Rng;

    fn record(scan: &str, species: Species, prep: u8, i: usize, gate: Gate) -> PatchRecord {
        PatchRecord {
            patch_id: patch_id(scan, i, 0),
            scan_id: scan.into(),
            species,
            preparation: prep,
            row: i,
            col: 0,
            gate,
            foreground_pixels: 0,
        }
    }

    #[test]
    fn assemble_reports_missing_descriptors() {
        let recs = vec![
            record("s", Species::CA, 1, 0, Gate::Foreground),
            record("s", Species::CA, 1, 1, Gate::Skipped),
            record("s", Species::CA, 1, 2, Gate::Background),
        ];
        let set = |id: &str| DescriptorSet::new(id, Array2::ones((4, 2))).unwrap();
        match Dataset::assemble(&recs, vec![set(&recs[0].patch_id)]) {
            Err(Error::MissingDescriptors(ids)) => assert_eq!(ids, vec![recs[2].patch_id.clone()]),
            other => panic!("{other:?}"),
        }
        let aug = format!("{}{AUGMENT_MARK}rot90", recs[0].patch_id);
        let d = Dataset::assemble(&recs, vec![set(&recs[2].patch_id), set(&aug), set(&recs[0].patch_id)]).unwrap();
        assert_eq!(d.patches.len(), 3);
        assert!(d.patches[1].augmented);
        assert_eq!(d.patches[2].label, PatchLabel::Background);
    }

    #[test]
    fn patch_index_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.tsv");
        let recs = vec![
            record("a", Species::MF, 2, 3, Gate::Skipped),
            record("b", Species::SB, 1, 0, Gate::Background),
        ];
        write_patch_index(&path, &recs).unwrap();
        assert_eq!(read_patch_index(&path).unwrap(), recs);
    }

    /// Ten descriptor modes in five tight pairs; CA owns one mode of every
    /// pair and CG the other, so five clusters mix the species and ten do not.
    fn paired_modes() -> (Vec<ManifestEntry>, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut manifest = Vec::new();
        let mut patches = Vec::new();
        for (si, species) in [Species::CA, Species::CG].into_iter().enumerate() {
            for prep in 1..=2u8 {
                for s in 0..5 {
                    let scan = format!("{species}{prep}{s}");
                    manifest.push(ManifestEntry {
                        scan_id: scan.clone(),
                        path: scan.clone().into(),
                        species,
                        preparation_id: prep,
                    });
                    for i in 0..4 {
                        let r = record(&scan, species, prep, i, Gate::Foreground);
                        let mut values = Vec::with_capacity(40);
                        for _ in 0..20 {
                            let pair = rng.random_range(0..5) as f64;
                            let x = pair * 100.0 + si as f64 + rng.random_range(-0.05..0.05);
                            values.extend([x, 0.5 * x + rng.random_range(-0.05..0.05)]);
                        }
                        let data = Array2::from_shape_vec((20, 2), values).unwrap();
                        patches.push(DatasetPatch {
                            descriptors: DescriptorSet::new(r.patch_id.clone(), data).unwrap(),
                            label: PatchLabel::Species(species),
                            record: r,
                            augmented: false,
                        });
                    }
                }
            }
        }
        (manifest, Dataset { patches })
    }

    fn bow_settings(bow_k: Vec<usize>) -> ProtocolSettings {
        let mut s = ProtocolSettings::from_config(&RunConfig {
            grid: ParamGrid {
                bow_k,
                kernels: vec![KernelKind::Linear],
                c: vec![1.0],
                ..ParamGrid::default()
            },
            ..RunConfig::default()
        });
        s.encoding = Encoding::Bow;
        s
    }

    #[test]
    fn protocol_on_separable_modes() {
        let (manifest, data) = paired_modes();
        let s = bow_settings(vec![10]);
        let result = run_protocol(&manifest, &data, &s).unwrap();
        assert_eq!(result.patch_report.total.mean, 100.0);
        assert_eq!(result.scan_report.total.mean, 100.0);
        assert_eq!(result.folds[0].chosen.to_string(), "k=10 linear C=1");
        assert_eq!(result.patch_report.method, "BOW SVM");
        let again = run_protocol(&manifest, &data, &s).unwrap();
        assert_eq!(again.patch_report.to_json(), result.patch_report.to_json());
    }

    #[test]
    fn grid_search_prefers_the_separating_vocabulary() {
        let (manifest, data) = paired_modes();
        let result = run_protocol(&manifest, &data, &bow_settings(vec![5, 10])).unwrap();
        for f in &result.folds {
            assert_eq!(f.chosen.k, 10);
            assert!(f.grid_scores[0].1 < 0.8, "k=5 scored {}", f.grid_scores[0].1);
            assert_eq!(f.grid_scores[1].1, 1.0);
        }
    }

    #[test]
    fn predict_scan_votes() {
        let (manifest, data) = paired_modes();
        let s = bow_settings(vec![10]);
        let result = run_protocol(&manifest, &data, &s).unwrap();
        let fold = &result.folds[0];
        let sets: Vec<DescriptorSet> = data.patches[..4].iter().map(|p| p.descriptors.clone()).collect();
        let v = predict_scan("x", &sets, &fold.vocabulary, &s.options, &fold.model).unwrap();
        assert_eq!(v.winner, "CA");
        assert_eq!(v.votes["CA"], 4);
        assert!(matches!(
            predict_scan("x", &[], &fold.vocabulary, &s.options, &fold.model),
            Err(Error::NoForegroundPatches)
        ));
    }
}
