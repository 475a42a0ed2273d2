//! Python bindings: vocabularies, encoders, classifiers and the command stages.
//!
//! Matrices cross the boundary as lists of rows; numpy arrays are accepted too.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use deepbow::cli;
use deepbow::config::RunConfig;
use deepbow::descriptors::DescriptorSet;
use deepbow::encode;
use deepbow::learn::{
    rf_train, svm_train, Classifier as CoreClassifier, Kernel, RfConfig, Standardizer, SvmConfig, TrainedModel,
};
use deepbow::synth::{write_corpus, SynthSpec};
use deepbow::vocab::{self, GmmModel, GmmParams, KMeansParams};
use deepbow::Species;

create_exception!(deepbow_py, DeepBowError, PyException);

fn err(e: deepbow::Error) -> PyErr {
    DeepBowError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(DeepBowError::new_err("rows have different lengths"));
    }
    Ok(Array2::from_shape_vec((n, d), rows.concat()).expect("checked shape"))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn load_config(path: Option<PathBuf>, output_dir: Option<PathBuf>) -> PyResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(&p).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(o) = output_dir {
        cfg.output_dir = o;
    }
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// k-Means codebook.
#[pyclass(module = "deepbow_py", frozen)]
pub struct Codebook {
    inner: vocab::Codebook,
}

#[pymethods]
impl Codebook {
    #[getter]
    fn centroids(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.centroids)
    }

    #[getter]
    fn inertia(&self) -> f64 {
        self.inner.inertia
    }

    #[getter]
    fn inertia_trace(&self) -> Vec<f64> {
        self.inner.inertia_trace.clone()
    }

    fn assign(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        vocab::kmeans_assign(matrix(points)?.view(), &self.inner).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        vocab::Codebook::from_bytes(data)
            .map(|inner| Codebook { inner })
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Codebook(k={}, dim={})", self.inner.k(), self.inner.dim())
    }
}

/// Diagonal Gaussian mixture.
#[pyclass(module = "deepbow_py", frozen)]
pub struct Gmm {
    inner: GmmModel,
}

#[pymethods]
impl Gmm {
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.means)
    }

    #[getter]
    fn variances(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.variances)
    }

    #[getter]
    fn log_likelihood_trace(&self) -> Vec<f64> {
        self.inner.log_likelihood_trace.clone()
    }

    fn posteriors(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        vocab::gmm_posteriors(matrix(points)?.view(), &self.inner)
            .map(|p| rows(&p))
            .map_err(err)
    }

    fn mean_log_likelihood(&self, points: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner.mean_log_likelihood(matrix(points)?.view()).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        GmmModel::from_bytes(data).map(|inner| Gmm { inner }).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Gmm(k={}, dim={})", self.inner.k(), self.inner.dim())
    }
}

/// Trained SVM or Random Forest, optionally with a feature standardizer.
#[pyclass(module = "deepbow_py", frozen)]
pub struct Classifier {
    inner: TrainedModel,
}

#[pymethods]
impl Classifier {
    #[getter]
    fn classes(&self) -> Vec<usize> {
        self.inner.classifier.classes().to_vec()
    }

    fn decision_values(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .decision_values(matrix(x)?.view())
            .map(|d| rows(&d))
            .map_err(err)
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        self.inner.predict(matrix(x)?.view()).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        TrainedModel::from_bytes(data)
            .map(|inner| Classifier { inner })
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Classifier({})", self.inner.classifier.summary())
    }
}

#[pyfunction]
#[pyo3(signature = (points, k, seed=0, max_iter=100, tol=1e-6))]
fn kmeans_fit(
    py: Python<'_>,
    points: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> PyResult<Codebook> {
    let x = matrix(points)?;
    let params = KMeansParams {
        max_iter,
        tol,
        ..KMeansParams::new(k, seed)
    };
    py.detach(|| vocab::kmeans_fit(x.view(), &params))
        .map(|inner| Codebook { inner })
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (points, k, seed=0, max_iter=100, tol=1e-6))]
fn gmm_fit(py: Python<'_>, points: Vec<Vec<f64>>, k: usize, seed: u64, max_iter: usize, tol: f64) -> PyResult<Gmm> {
    let x = matrix(points)?;
    let params = GmmParams {
        max_iter,
        tol,
        ..GmmParams::new(k, seed)
    };
    py.detach(|| vocab::gmm_fit(x.view(), &params))
        .map(|inner| Gmm { inner })
        .map_err(err)
}

/// Histogram of nearest centroids, L1-normalized unless `raw_counts`.
#[pyfunction]
#[pyo3(signature = (descriptors, codebook, raw_counts=false))]
fn encode_bow(descriptors: Vec<Vec<f64>>, codebook: &Codebook, raw_counts: bool) -> PyResult<Vec<f64>> {
    let set = DescriptorSet::new("py", matrix(descriptors)?).map_err(err)?;
    encode::encode_bow(&set, &codebook.inner, raw_counts)
        .map(|e| e.values)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (descriptors, gmm, power_norm=true, l2_norm=true))]
fn encode_fv(descriptors: Vec<Vec<f64>>, gmm: &Gmm, power_norm: bool, l2_norm: bool) -> PyResult<Vec<f64>> {
    let set = DescriptorSet::new("py", matrix(descriptors)?).map_err(err)?;
    encode::encode_fv(&set, &gmm.inner, power_norm, l2_norm)
        .map(|e| e.values)
        .map_err(err)
}

/// One-vs-rest SVM; `kernel` is "linear" or "rbf".
#[pyfunction]
#[pyo3(signature = (x, y, kernel="linear", c=1.0, gamma=0.001, standardize=true, tol=1e-3))]
#[allow(clippy::too_many_arguments)]
fn train_svm(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
    kernel: &str,
    c: f64,
    gamma: f64,
    standardize: bool,
    tol: f64,
) -> PyResult<Classifier> {
    let kernel = match kernel {
        "linear" => Kernel::Linear,
        "rbf" => Kernel::Rbf { gamma },
        other => return Err(DeepBowError::new_err(format!("unknown kernel {other:?}"))),
    };
    let x = matrix(x)?;
    let cfg = SvmConfig {
        kernel,
        c,
        tol,
        ..SvmConfig::default()
    };
    py.detach(|| {
        let scaler = if standardize {
            Some(Standardizer::fit(x.view())?)
        } else {
            None
        };
        let features = match &scaler {
            Some(s) => s.transform(x.view())?,
            None => x.clone(),
        };
        let model = svm_train(features.view(), &y, &cfg)?;
        Ok(TrainedModel {
            scaler,
            classifier: CoreClassifier::Svm(model),
        })
    })
    .map(|inner| Classifier { inner })
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, y, n_trees=100, max_depth=None, seed=0))]
fn train_rf(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
    n_trees: usize,
    max_depth: Option<usize>,
    seed: u64,
) -> PyResult<Classifier> {
    let x = matrix(x)?;
    let cfg = RfConfig {
        n_trees,
        max_depth,
        seed,
        ..RfConfig::default()
    };
    py.detach(|| rf_train(x.view(), &y, &cfg))
        .map(|m| Classifier {
            inner: TrainedModel {
                scaler: None,
                classifier: CoreClassifier::Rf(m),
            },
        })
        .map_err(err)
}

/// Writes a synthetic scan corpus; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, species=None, scans_per_preparation=10, size=512, seed=0))]
fn synth_corpus(
    py: Python<'_>,
    out: PathBuf,
    species: Option<Vec<String>>,
    scans_per_preparation: usize,
    size: usize,
    seed: u64,
) -> PyResult<PathBuf> {
    let mut spec = SynthSpec {
        scans_per_preparation,
        height: size,
        width: size,
        seed,
        ..SynthSpec::default()
    };
    if let Some(codes) = species {
        spec.species = codes
            .iter()
            .map(|c| c.parse::<Species>())
            .collect::<Result<_, _>>()
            .map_err(err)?;
    }
    py.detach(|| write_corpus(&out, &spec)).map_err(err)?;
    Ok(out.join("manifest.csv"))
}

#[pyfunction]
#[pyo3(signature = (config=None, output_dir=None))]
fn preprocess(py: Python<'_>, config: Option<PathBuf>, output_dir: Option<PathBuf>) -> PyResult<()> {
    let cfg = load_config(config, output_dir)?;
    py.detach(|| cli::cmd_preprocess(&cfg)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (config=None, output_dir=None, reuse=false))]
fn encode_corpus(py: Python<'_>, config: Option<PathBuf>, output_dir: Option<PathBuf>, reuse: bool) -> PyResult<()> {
    let cfg = load_config(config, output_dir)?;
    py.detach(|| cli::cmd_encode(&cfg, reuse)).map_err(err)
}

/// Runs the 2-fold protocol; returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (config=None, output_dir=None))]
fn evaluate(py: Python<'_>, config: Option<PathBuf>, output_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = load_config(config, output_dir)?;
    py.detach(|| cli::cmd_evaluate(&cfg)).map_err(err)?;
    std::fs::read_to_string(cfg.output_dir.join("report.json")).map_err(|e| err(e.into()))
}

/// Classifies one scan with a trained fold; returns the verdict as JSON text.
#[pyfunction]
#[pyo3(signature = (scan, config=None, output_dir=None, fold=1))]
fn predict(
    py: Python<'_>,
    scan: PathBuf,
    config: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    fold: u8,
) -> PyResult<String> {
    let cfg = load_config(config, output_dir)?;
    py.detach(|| cli::cmd_predict(&cfg, &scan, None, fold, None))
        .map_err(err)
}

#[pymodule]
fn deepbow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DeepBowError", m.py().get_type::<DeepBowError>())?;
    m.add_class::<Codebook>()?;
    m.add_class::<Gmm>()?;
    m.add_class::<Classifier>()?;
    m.add_function(wrap_pyfunction!(kmeans_fit, m)?)?;
    m.add_function(wrap_pyfunction!(gmm_fit, m)?)?;
    m.add_function(wrap_pyfunction!(encode_bow, m)?)?;
    m.add_function(wrap_pyfunction!(encode_fv, m)?)?;
    m.add_function(wrap_pyfunction!(train_svm, m)?)?;
    m.add_function(wrap_pyfunction!(train_rf, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(encode_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    Ok(())
}
