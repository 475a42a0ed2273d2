//! The run configuration shared by every CLI command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorSource;
use crate::encode::{Encoding, EncodingOptions};
use crate::error::{Error, Result};
use crate::eval::{ClassifierKind, ParamGrid};
use crate::imaging::PatchSpec;
use crate::learn::{MaxFeatures, RfConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub preprocess: PreprocessConfig,
    pub descriptors: DescriptorConfig,
    pub encoding: EncodingConfig,
    pub classifier: ClassifierConfig,
    pub grid: ParamGrid,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::from("manifest.csv"),
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: 0,
            preprocess: PreprocessConfig::default(),
            descriptors: DescriptorConfig::default(),
            encoding: EncodingConfig::default(),
            classifier: ClassifierConfig::default(),
            grid: ParamGrid::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub low_percentile: f64,
    pub high_percentile: f64,
    pub blur_sigma: f64,
    pub threshold: f64,
    pub scale: f64,
    pub patch: PatchSpec,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            low_percentile: 1.0,
            high_percentile: 99.0,
            blur_sigma: 5.0,
            threshold: 0.5,
            scale: 0.5,
            patch: PatchSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    pub source: DescriptorSource,
    /// Rotations, mirror and noise on training patches (computed descriptors only).
    pub augment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub kind: Encoding,
    /// Vocabulary size used by the `encode` command.
    pub k: usize,
    pub power_norm: bool,
    pub l2_norm: bool,
    pub bow_raw_counts: bool,
    /// Descriptors sampled for vocabulary training.
    pub vocab_sample: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            kind: Encoding::Fv,
            k: 10,
            power_norm: true,
            l2_norm: true,
            bow_raw_counts: false,
            vocab_sample: 100_000,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

impl EncodingConfig {
    pub fn options(&self) -> EncodingOptions {
        EncodingOptions {
            power_norm: self.power_norm,
            l2_norm: self.l2_norm,
            bow_raw_counts: self.bow_raw_counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub standardize: bool,
    pub inner_folds: usize,
    pub svm_tol: f64,
    pub svm_max_passes: usize,
    pub rf_trees: usize,
    /// 0 grows trees until their leaves are pure.
    pub rf_max_depth: usize,
    pub rf_max_features: MaxFeatures,
    pub rf_min_samples_split: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::Svm,
            standardize: true,
            inner_folds: 5,
            svm_tol: 1e-3,
            svm_max_passes: 1000,
            rf_trees: 100,
            rf_max_depth: 0,
            rf_max_features: MaxFeatures::Sqrt,
            rf_min_samples_split: 2,
        }
    }
}

impl ClassifierConfig {
    pub fn rf(&self, seed: u64) -> RfConfig {
        RfConfig {
            n_trees: self.rf_trees,
            max_depth: (self.rf_max_depth > 0).then_some(self.rf_max_depth),
            max_features: self.rf_max_features,
            min_samples_split: self.rf_min_samples_split,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Codebook size for the cluster analyses.
    pub bow_k: usize,
    /// Nearest patches listed per centroid.
    pub nearest: usize,
    /// Patches listed at each end of a certainty ranking.
    pub certainty_top: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            bow_k: 10,
            nearest: 10,
            certainty_top: 10,
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::Config(msg)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.preprocess;
        p.patch.validate().map_err(|e| invalid(e.to_string()))?;
        if !(0.0..100.0).contains(&p.low_percentile)
            || !(p.low_percentile < p.high_percentile && p.high_percentile <= 100.0)
        {
            return Err(invalid(format!(
                "percentiles must satisfy 0 <= low < high <= 100, got {} and {}",
                p.low_percentile, p.high_percentile
            )));
        }
        if !(p.scale > 0.0 && p.scale <= 1.0) {
            return Err(invalid(format!("scale must be in (0, 1], got {}", p.scale)));
        }
        if !(p.threshold > 0.0 && p.threshold < 1.0) || !(p.blur_sigma >= 0.0) {
            return Err(invalid(
                "threshold must be in (0, 1) and blur sigma non-negative".into(),
            ));
        }
        if self.descriptors.source.dimension() == 0 {
            return Err(invalid("descriptor dimension must be positive".into()));
        }
        let e = &self.encoding;
        if e.k == 0 || e.vocab_sample == 0 || e.max_iter == 0 {
            return Err(invalid("encoding k, vocab_sample and max_iter must be positive".into()));
        }
        let g = &self.grid;
        if g.bow_k.contains(&0) || g.fv_k.contains(&0) {
            return Err(invalid("grid k values must be positive".into()));
        }
        if g.c.iter().chain(&g.gamma).any(|v| !(*v > 0.0)) {
            return Err(invalid("grid C and gamma values must be positive".into()));
        }
        let c = &self.classifier;
        if c.inner_folds < 2 || c.rf_trees == 0 || !(c.svm_tol > 0.0) || c.svm_max_passes == 0 {
            return Err(invalid(
                "need inner_folds >= 2, rf_trees >= 1, svm_tol > 0 and svm_max_passes >= 1".into(),
            ));
        }
        if self.report.bow_k == 0 {
            return Err(invalid("report bow_k must be positive".into()));
        }
        Ok(())
    }
}
