//! Manifests, outer/inner splits and the hyperparameter grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::Encoding;
use crate::error::{Error, Result};
use crate::labels::Species;
use crate::learn::Kernel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scan_id: String,
    pub path: PathBuf,
    pub species: Species,
    pub preparation_id: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    scan_id: String,
    path: String,
    species: String,
    preparation_id: u8,
}

/// Reads a `scan_id,path,species,preparation_id` CSV. Relative paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::Reader::from_path(path)?;
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.deserialize() {
        let row: ManifestRow = row?;
        if !seen.insert(row.scan_id.clone()) {
            return Err(Error::InvalidArgument(format!("duplicate scan id {:?}", row.scan_id)));
        }
        if !(1..=2).contains(&row.preparation_id) {
            return Err(Error::InvalidArgument(format!(
                "scan {}: preparation id must be 1 or 2, got {}",
                row.scan_id, row.preparation_id
            )));
        }
        entries.push(ManifestEntry {
            path: base.join(&row.path),
            species: row.species.parse()?,
            scan_id: row.scan_id,
            preparation_id: row.preparation_id,
        });
    }
    if entries.is_empty() {
        return Err(Error::ManifestEmpty);
    }
    Ok(entries)
}

/// Writes a manifest; paths are stored as given.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in entries {
        w.serialize(ManifestRow {
            scan_id: e.scan_id.clone(),
            path: e.path.to_string_lossy().into_owned(),
            species: e.species.code().to_string(),
            preparation_id: e.preparation_id,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Scan ids per preparation, each list sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub fold_1: Vec<String>,
    pub fold_2: Vec<String>,
}

impl FoldPlan {
    /// Scans of preparation `prep` (1 or 2).
    pub fn fold(&self, prep: u8) -> &[String] {
        if prep == 1 {
            &self.fold_1
        } else {
            &self.fold_2
        }
    }
}

/// Partitions scans by preparation. Every species present in the manifest
/// must appear in both preparations.
pub fn split_by_preparation(manifest: &[ManifestEntry]) -> Result<FoldPlan> {
    if manifest.is_empty() {
        return Err(Error::ManifestEmpty);
    }
    let mut present: BTreeMap<Species, [bool; 2]> = BTreeMap::new();
    let mut plan = FoldPlan {
        fold_1: Vec::new(),
        fold_2: Vec::new(),
    };
    for e in manifest {
        match e.preparation_id {
            1 => plan.fold_1.push(e.scan_id.clone()),
            2 => plan.fold_2.push(e.scan_id.clone()),
            p => {
                return Err(Error::InvalidArgument(format!(
                    "scan {}: preparation id must be 1 or 2, got {p}",
                    e.scan_id
                )))
            }
        }
        present.entry(e.species).or_default()[e.preparation_id as usize - 1] = true;
    }
    for (species, preps) in present {
        for (i, ok) in preps.iter().enumerate() {
            if !ok {
                return Err(Error::MissingSpecies {
                    species: species.code().to_string(),
                    preparation: i as u8 + 1,
                });
            }
        }
    }
    plan.fold_1.sort();
    plan.fold_2.sort();
    check_disjoint(&plan.fold_1, &plan.fold_2)?;
    Ok(plan)
}

/// Fails with `SplitLeak` when a scan id is on both sides of a split.
pub fn check_disjoint(train: &[String], test: &[String]) -> Result<()> {
    let train: BTreeSet<&String> = train.iter().collect();
    match test.iter().find(|id| train.contains(id)) {
        Some(id) => Err(Error::SplitLeak(id.clone())),
        None => Ok(()),
    }
}

/// Assigns scans to `n_folds` validation folds, stratified by species: the
/// scans of each species are sorted, shuffled with `seed`, then dealt round
/// robin.
pub fn inner_folds(scans: &[(String, Species)], n_folds: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 inner folds, got {n_folds}"
        )));
    }
    let mut by_species: BTreeMap<Species, Vec<String>> = BTreeMap::new();
    for (id, species) in scans {
        by_species.entry(*species).or_default().push(id.clone());
    }
    let mut folds = vec![Vec::new(); n_folds];
    let mut next = 0;
    for (species, mut ids) in by_species {
        if ids.len() < n_folds {
            return Err(Error::TooFewScans {
                species: species.code().to_string(),
                scans: ids.len(),
                folds: n_folds,
            });
        }
        ids.sort();
        ids.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (species.index() as u64).wrapping_mul(0x9e37_79b9));
        ids.shuffle(&mut rng);
        for id in ids {
            folds[next % n_folds].push(id);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

/// `(train, validation)` scan ids for every inner fold, each checked for leaks.
pub fn inner_splits(folds: &[Vec<String>]) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let mut splits = Vec::with_capacity(folds.len());
    for (i, val) in folds.iter().enumerate() {
        let mut train: Vec<String> = folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        train.sort();
        check_disjoint(&train, val)?;
        splits.push((train, val.clone()));
    }
    Ok(splits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Svm,
    Rf,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Svm => "SVM",
            ClassifierKind::Rf => "RF",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamGrid {
    pub bow_k: Vec<usize>,
    pub fv_k: Vec<usize>,
    pub kernels: Vec<KernelKind>,
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid {
            bow_k: vec![5, 10, 20, 50, 100, 200, 500],
            fv_k: vec![5, 10, 20, 50],
            kernels: vec![KernelKind::Linear, KernelKind::Rbf],
            c: vec![1.0, 10.0, 100.0, 1000.0],
            gamma: vec![0.001, 0.0001],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "classifier", rename_all = "lowercase")]
pub enum ModelParams {
    Svm { kernel: Kernel, c: f64 },
    Rf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: usize,
    pub model: ModelParams,
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={}", self.k)?;
        match self.model {
            ModelParams::Svm {
                kernel: Kernel::Linear,
                c,
            } => write!(f, " linear C={c}"),
            ModelParams::Svm {
                kernel: Kernel::Rbf { gamma },
                c,
            } => write!(f, " rbf C={c} gamma={gamma}"),
            ModelParams::Rf => write!(f, " rf"),
        }
    }
}

fn sorted_unique<T: Copy + PartialOrd>(v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("grid values are comparable"));
    v.dedup_by(|a, b| a == b);
    v
}

impl ParamGrid {
    pub fn k_values(&self, encoding: Encoding) -> Vec<usize> {
        sorted_unique(match encoding {
            Encoding::Bow => &self.bow_k,
            Encoding::Fv => &self.fv_k,
        })
    }

    /// Points in search order: k, then kernel (linear first), then C, then
    /// gamma, each ascending. Random forests only vary k.
    pub fn points(&self, encoding: Encoding, classifier: ClassifierKind) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for k in self.k_values(encoding) {
            if classifier == ClassifierKind::Rf {
                out.push(GridPoint {
                    k,
                    model: ModelParams::Rf,
                });
                continue;
            }
            for kernel in sorted_unique(&self.kernels) {
                for c in sorted_unique(&self.c) {
                    match kernel {
                        KernelKind::Linear => out.push(GridPoint {
                            k,
                            model: ModelParams::Svm {
                                kernel: Kernel::Linear,
                                c,
                            },
                        }),
                        KernelKind::Rbf => {
                            for gamma in sorted_unique(&self.gamma) {
                                out.push(GridPoint {
                                    k,
                                    model: ModelParams::Svm {
                                        kernel: Kernel::Rbf { gamma },
                                        c,
                                    },
                                })
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Scores every point (in parallel) and returns the index of the best one
/// together with all scores. Ties keep the earliest point.
pub fn grid_search<F>(points: &[GridPoint], score: F) -> Result<(usize, Vec<f64>)>
where
    F: Fn(&GridPoint) -> Result<f64> + Sync,
{
    if points.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let scores = points.par_iter().map(&score).collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, species: Species, prep: u8) -> ManifestEntry {
        ManifestEntry {
            scan_id: id.into(),
            path: PathBuf::from(format!("{id}.tif")),
            species,
            preparation_id: prep,
        }
    }

    fn full_manifest() -> Vec<ManifestEntry> {
        let mut m = Vec::new();
        for s in Species::ALL {
            for prep in 1..=2u8 {
                for i in 0..10 {
                    m.push(entry(&format!("{s}-{prep}-{i}"), s, prep));
                }
            }
        }
        m
    }

    #[test]
    fn full_collection_splits_ninety_ninety() {
        let plan = split_by_preparation(&full_manifest()).unwrap();
        assert_eq!((plan.fold_1.len(), plan.fold_2.len()), (90, 90));
    }

    #[test]
    fn missing_preparation_is_reported() {
        let m: Vec<_> = full_manifest()
            .into_iter()
            .filter(|e| !(e.species == Species::CN && e.preparation_id == 2))
            .collect();
        assert!(matches!(
            split_by_preparation(&m),
            Err(Error::MissingSpecies { species, preparation: 2 }) if species == "CN"
        ));
        assert!(matches!(split_by_preparation(&[]), Err(Error::ManifestEmpty)));
    }

    #[test]
    fn split_ignores_manifest_order() {
        let m = full_manifest();
        let mut shuffled = m.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(
            split_by_preparation(&m).unwrap(),
            split_by_preparation(&shuffled).unwrap()
        );
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = vec![entry("a", Species::CA, 1), entry("b", Species::SC, 2)];
        write_manifest(&path, &m).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back[1].species, Species::SC);
        assert_eq!(back[0].path, dir.path().join("a.tif"));
        std::fs::write(&path, "scan_id,path,species,preparation_id\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::ManifestEmpty)));
        std::fs::write(&path, "scan_id,path,species,preparation_id\na,x,CA,3\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn default_grid_has_reference_sets() {
        let g = ParamGrid::default();
        assert_eq!(g.bow_k, vec![5, 10, 20, 50, 100, 200, 500]);
        assert_eq!(g.fv_k, vec![5, 10, 20, 50]);
        assert_eq!(g.c, vec![1.0, 10.0, 100.0, 1000.0]);
        assert_eq!(g.gamma, vec![0.001, 0.0001]);
        // 4 linear + 8 rbf per k
        assert_eq!(g.points(Encoding::Fv, ClassifierKind::Svm).len(), 4 * 12);
        assert_eq!(g.points(Encoding::Bow, ClassifierKind::Rf).len(), 7);
    }

    #[test]
    fn grid_order_and_ties() {
        let g = ParamGrid {
            bow_k: vec![10, 5],
            fv_k: vec![],
            kernels: vec![KernelKind::Rbf, KernelKind::Linear],
            c: vec![10.0, 1.0],
            gamma: vec![0.001, 0.0001],
        };
        let pts = g.points(Encoding::Bow, ClassifierKind::Svm);
        let names: Vec<String> = pts.iter().take(6).map(|p| p.to_string()).collect();
        assert_eq!(
            names,
            [
                "k=5 linear C=1",
                "k=5 linear C=10",
                "k=5 rbf C=1 gamma=0.0001",
                "k=5 rbf C=1 gamma=0.001",
                "k=5 rbf C=10 gamma=0.0001",
                "k=5 rbf C=10 gamma=0.001"
            ]
        );
        let (best, _) = grid_search(&pts, |_| Ok(0.5)).unwrap();
        assert_eq!(best, 0);
        let (best, _) = grid_search(&pts[3..4], |_| Ok(0.0)).unwrap();
        assert_eq!(best, 0);
        assert!(matches!(grid_search(&[], |_| Ok(1.0)), Err(Error::EmptyGrid)));
        let (best, _) = grid_search(&pts, |p| Ok(if p.k == 10 { 0.9 } else { 0.2 })).unwrap();
        assert_eq!(pts[best].to_string(), "k=10 linear C=1");
    }

    #[test]
    fn inner_folds_need_enough_scans() {
        let scans: Vec<(String, Species)> = (0..4).map(|i| (format!("s{i}"), Species::CA)).collect();
        assert!(matches!(
            inner_folds(&scans, 5, 0),
            Err(Error::TooFewScans { scans: 4, folds: 5, .. })
        ));
    }

    #[test]
    fn leak_is_detected() {
        let a = vec!["x".to_string(), "y".to_string()];
        let b = vec!["y".to_string()];
        assert!(matches!(check_disjoint(&a, &b), Err(Error::SplitLeak(id)) if id == "y"));
    }

    proptest! {
        #[test]
        fn no_scan_crosses_any_split(
            counts in prop::collection::vec((5usize..12, 0usize..4), 1..9),
            seed in any::<u64>(),
        ) {
            let mut manifest = Vec::new();
            for (si, &(n, extra)) in counts.iter().enumerate() {
                let s = Species::from_index(si).unwrap();
                for prep in 1..=2u8 {
                    for i in 0..n + if prep == 1 { extra } else { 0 } {
                        manifest.push(entry(&format!("{s}/{prep}/{i}"), s, prep));
                    }
                }
            }
            manifest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let plan = split_by_preparation(&manifest).unwrap();
            prop_assert!(check_disjoint(&plan.fold_1, &plan.fold_2).is_ok());
            prop_assert_eq!(plan.fold_1.len() + plan.fold_2.len(), manifest.len());
            for prep in 1..=2u8 {
                let species: BTreeMap<&String, Species> = manifest.iter().map(|e| (&e.scan_id, e.species)).collect();
                let scans: Vec<(String, Species)> = plan.fold(prep).iter().map(|id| (id.clone(), species[id])).collect();
                let folds = inner_folds(&scans, 5, seed).unwrap();
                let all: BTreeSet<&String> = folds.iter().flatten().collect();
                prop_assert_eq!(all.len(), scans.len());
                for (train, val) in inner_splits(&folds).unwrap() {
                    prop_assert!(check_disjoint(&train, &val).is_ok());
                    prop_assert!(check_disjoint(&train, plan.fold(3 - prep)).is_ok());
                    prop_assert_eq!(train.len() + val.len(), scans.len());
                }
            }
        }
    }
}
