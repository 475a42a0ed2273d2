//! Little-endian binary formats.
//!
//! PVDF (descriptor sets):
//!
//! ```text
//! "PVDF" | version u32 = 1 | D u32 | patch count u32
//! per patch: id length u16 | UTF-8 id | N u32 | N·D f32, row-major
//! ```
//!
//! PVEF (encoded datasets) follows the same layout rules with an encoding
//! header; PVMD wraps serialized models. Models store `f64` so that a saved
//! model predicts exactly like the in-memory one.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::descriptors::DescriptorSet;
use crate::encode::{EncodedVector, Encoding, EncodingOptions};
use crate::error::{Error, Result};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"PVDF";
pub const ENCODED_MAGIC: &[u8; 4] = b"PVEF";
pub const MODEL_MAGIC: &[u8; 4] = b"PVMD";
pub const FORMAT_VERSION: u32 = 1;

fn truncated(what: &str) -> Error {
    Error::Format(format!("truncated file while reading {what}"))
}

/// Cursor over a byte slice that reports truncation as [`Error::Format`].
pub struct BinReader<'a> {
    buf: &'a [u8],
}

impl<'a> BinReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        BinReader { buf }
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        if self.buf.is_empty() {
            return Err(Error::Format("empty file".into()));
        }
        let mut m = [0u8; 4];
        std::io::Read::read_exact(&mut self.buf, &mut m).map_err(|_| truncated("magic"))?;
        if &m != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expected)
            )));
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        self.buf.read_u8().map_err(|_| truncated(what))
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        self.buf.read_u16::<LittleEndian>().map_err(|_| truncated(what))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        self.buf.read_u32::<LittleEndian>().map_err(|_| truncated(what))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        self.buf.read_u64::<LittleEndian>().map_err(|_| truncated(what))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        if self.buf.len() < n * 4 {
            return Err(truncated(what));
        }
        let mut out = vec![0f32; n];
        self.buf
            .read_f32_into::<LittleEndian>(&mut out)
            .map_err(|_| truncated(what))?;
        Ok(out)
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        self.buf.read_f64::<LittleEndian>().map_err(|_| truncated(what))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        if self.buf.len() < n * 8 {
            return Err(truncated(what));
        }
        let mut out = vec![0f64; n];
        self.buf
            .read_f64_into::<LittleEndian>(&mut out)
            .map_err(|_| truncated(what))?;
        Ok(out)
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        if self.buf.len() < len {
            return Err(truncated(what));
        }
        let (head, tail) = self.buf.split_at(len);
        self.buf = tail;
        String::from_utf8(head.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    pub fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

#[derive(Default)]
pub struct BinWriter {
    pub buf: Vec<u8>,
}

impl BinWriter {
    pub fn with_magic(magic: &[u8; 4]) -> Self {
        let mut w = BinWriter::default();
        w.buf.extend_from_slice(magic);
        w.u32(FORMAT_VERSION);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.write_u16::<LittleEndian>(v).unwrap();
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).unwrap();
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).unwrap();
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.write_f32::<LittleEndian>(v).unwrap();
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).unwrap();
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }

    pub fn string(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("id too long: {} bytes", s.len())))?;
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

pub fn encode_descriptor_sets(sets: &[DescriptorSet]) -> Result<Vec<u8>> {
    let dim = sets.first().map_or(0, |s| s.dim());
    let mut w = BinWriter::with_magic(DESCRIPTOR_MAGIC);
    w.u32(u32_len(dim, "dimension")?);
    w.u32(u32_len(sets.len(), "patch count")?);
    for set in sets {
        if set.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: set.dim(),
            });
        }
        w.string(&set.patch_id)?;
        w.u32(u32_len(set.len(), "descriptor count")?);
        for &v in set.data.iter() {
            w.f32(v as f32);
        }
    }
    Ok(w.buf)
}

pub fn decode_descriptor_sets(bytes: &[u8]) -> Result<Vec<DescriptorSet>> {
    let mut r = BinReader::new(bytes);
    r.magic(DESCRIPTOR_MAGIC)?;
    let dim = r.u32("dimension")? as usize;
    let count = r.u32("patch count")? as usize;
    if dim == 0 && count > 0 {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    let mut sets = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id = r.string("patch id")?;
        let n = r.u32("descriptor count")? as usize;
        let values = r.f32s(n * dim, "descriptor values")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("descriptor set {id:?}")));
        }
        let data = Array2::from_shape_vec((n, dim), values.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Format(e.to_string()))?;
        sets.push(DescriptorSet::new(id, data)?);
    }
    r.finish()?;
    Ok(sets)
}

/// Header shared by every row of an encoded dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodedHeader {
    pub encoding: Encoding,
    pub vocab_k: usize,
    pub descriptor_dim: usize,
    pub options: EncodingOptions,
}

pub fn encode_encoded_dataset(header: &EncodedHeader, rows: &[(String, EncodedVector)]) -> Result<Vec<u8>> {
    let len = header.encoding.output_len(header.vocab_k, header.descriptor_dim);
    let mut w = BinWriter::with_magic(ENCODED_MAGIC);
    w.u8(match header.encoding {
        Encoding::Bow => 0,
        Encoding::Fv => 1,
    });
    w.u32(u32_len(header.vocab_k, "k")?);
    w.u32(u32_len(header.descriptor_dim, "dimension")?);
    w.u8(header.options.flags());
    w.u32(u32_len(len, "vector length")?);
    w.u32(u32_len(rows.len(), "row count")?);
    for (id, v) in rows {
        if v.values.len() != len || v.encoding != header.encoding {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: v.values.len(),
            });
        }
        w.string(id)?;
        for &x in &v.values {
            w.f32(x as f32);
        }
    }
    Ok(w.buf)
}

pub fn decode_encoded_dataset(bytes: &[u8]) -> Result<(EncodedHeader, Vec<(String, EncodedVector)>)> {
    let mut r = BinReader::new(bytes);
    r.magic(ENCODED_MAGIC)?;
    let encoding = match r.u8("encoding")? {
        0 => Encoding::Bow,
        1 => Encoding::Fv,
        other => return Err(Error::Format(format!("unknown encoding tag {other}"))),
    };
    let vocab_k = r.u32("k")? as usize;
    let descriptor_dim = r.u32("dimension")? as usize;
    let options = EncodingOptions::from_flags(r.u8("flags")?);
    let len = r.u32("vector length")? as usize;
    if len != encoding.output_len(vocab_k, descriptor_dim) {
        return Err(Error::DimensionMismatch {
            expected: encoding.output_len(vocab_k, descriptor_dim),
            found: len,
        });
    }
    let count = r.u32("row count")? as usize;
    let mut rows = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id = r.string("row id")?;
        let values: Vec<f64> = r.f32s(len, "row values")?.into_iter().map(f64::from).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("encoded row {id:?}")));
        }
        rows.push((
            id,
            EncodedVector {
                values,
                encoding,
                vocab_k,
                descriptor_dim,
            },
        ));
    }
    r.finish()?;
    Ok((
        EncodedHeader {
            encoding,
            vocab_k,
            descriptor_dim,
            options,
        },
        rows,
    ))
}
