//! Final-stage classifiers: one-vs-rest SVM and random forest.

pub mod forest;
pub mod scale;
pub mod svm;

use ndarray::{Array2, ArrayView2};

pub use forest::{rf_train, MaxFeatures, RfConfig, RfModel};
pub use scale::Standardizer;
pub use svm::{svm_train, Kernel, SvmConfig, SvmModel};

use crate::error::{Error, Result};
use crate::formats::{BinReader, BinWriter, MODEL_MAGIC};
use crate::vocab::expect_kind;

const KIND_CLASSIFIER: u8 = 6;

/// Column of the row maximum; ties go to the lowest column.
pub fn argmax_rows(values: &Array2<f64>) -> Vec<usize> {
    values
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Svm(SvmModel),
    Rf(RfModel),
}

impl Classifier {
    pub fn classes(&self) -> &[usize] {
        match self {
            Classifier::Svm(m) => &m.classes,
            Classifier::Rf(m) => &m.classes,
        }
    }

    /// SVM: raw per-class decision values. RF: per-class fraction of tree votes.
    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Classifier::Svm(m) => m.decision_values(x),
            Classifier::Rf(m) => m.decision_values(x),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        match self {
            Classifier::Svm(m) => m.predict(x),
            Classifier::Rf(m) => m.predict(x),
        }
    }

    pub fn summary(&self) -> String {
        match self {
            Classifier::Svm(m) => {
                let mut s = format!(
                    "svm\nkernel\t{:?}\nC\t{}\nclass\tsupport_vectors\n",
                    m.config.kernel, m.config.c
                );
                for (c, n) in m.classes.iter().zip(m.support_vector_counts()) {
                    s.push_str(&format!("{c}\t{n}\n"));
                }
                s
            }
            Classifier::Rf(m) => format!(
                "random_forest\ntrees\t{}\nclasses\t{}\n",
                m.trees.len(),
                m.classes.len()
            ),
        }
    }
}

/// Standardization followed by a classifier, as trained on one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub scaler: Option<Standardizer>,
    pub classifier: Classifier,
}

impl TrainedModel {
    fn features(&self, x: ArrayView2<f64>) -> Result<std::borrow::Cow<'_, Array2<f64>>> {
        Ok(match &self.scaler {
            Some(s) => std::borrow::Cow::Owned(s.transform(x)?),
            None => std::borrow::Cow::Owned(x.to_owned()),
        })
    }

    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let f = self.features(x)?;
        self.classifier.decision_values(f.view())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let f = self.features(x)?;
        self.classifier.predict(f.view())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::with_magic(MODEL_MAGIC);
        w.u8(KIND_CLASSIFIER);
        match &self.scaler {
            Some(s) => {
                w.u8(1);
                s.write(&mut w);
            }
            None => w.u8(0),
        }
        match &self.classifier {
            Classifier::Svm(m) => {
                w.u8(0);
                m.write(&mut w);
            }
            Classifier::Rf(m) => {
                w.u8(1);
                m.write(&mut w);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        expect_kind(&mut r, KIND_CLASSIFIER)?;
        let scaler = match r.u8("scaler flag")? {
            0 => None,
            1 => Some(Standardizer::read(&mut r)?),
            t => return Err(Error::Format(format!("bad scaler flag {t}"))),
        };
        let classifier = match r.u8("classifier tag")? {
            0 => Classifier::Svm(SvmModel::read(&mut r)?),
            1 => Classifier::Rf(RfModel::read(&mut r)?),
            t => return Err(Error::Format(format!("unknown classifier tag {t}"))),
        };
        r.finish()?;
        Ok(TrainedModel { scaler, classifier })
    }
}
