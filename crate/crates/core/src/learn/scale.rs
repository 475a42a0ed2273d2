use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::formats::{BinReader, BinWriter, MODEL_MAGIC};
use crate::vocab::expect_kind;

pub(crate) const KIND_SCALER: u8 = 5;

/// Per-dimension zero-mean / unit-variance transform fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    /// Population standard deviation; constant columns use 1.
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("cannot standardize zero rows".into()));
        }
        let mean = x.mean_axis(Axis(0)).unwrap();
        let scale = x.var_axis(Axis(0), 0.0).mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Ok(Standardizer { mean, scale })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: x.ncols(),
            });
        }
        Ok((&x - &self.mean) / &self.scale)
    }

    pub(crate) fn write(&self, w: &mut BinWriter) {
        w.u32(self.mean.len() as u32);
        w.f64s(self.mean.as_slice().unwrap());
        w.f64s(self.scale.as_slice().unwrap());
    }

    pub(crate) fn read(r: &mut BinReader<'_>) -> Result<Self> {
        let d = r.u32("dimension")? as usize;
        let mean = Array1::from(r.f64s(d, "means")?);
        let scale = Array1::from(r.f64s(d, "scales")?);
        Ok(Standardizer { mean, scale })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::with_magic(MODEL_MAGIC);
        w.u8(KIND_SCALER);
        self.write(&mut w);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        expect_kind(&mut r, KIND_SCALER)?;
        let s = Self::read(&mut r)?;
        r.finish()?;
        Ok(s)
    }
}
