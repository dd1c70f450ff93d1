//! Flat binary tensor container used for all tensor I/O.
//!
//! Layout, everything little-endian:
//!
//! ```text
//! magic   4 bytes  "FMTN"
//! version u32      currently 1
//! dtype   u8       0 = u8, 1 = f32, 2 = f64
//! ndim    u32
//! dims    ndim x u64
//! payload row-major element data
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"FMTN";
pub const VERSION: u32 = 1;

/// Refuse to allocate tensors past this element count when reading.
const MAX_ELEMS: u64 = 1 << 33;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    U8,
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::U8),
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes, not a tensor file")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("dims {dims:?} imply {expected} elements but payload has {actual}")]
    LengthMismatch {
        dims: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor of {0} elements exceeds the reader limit")]
    TooLarge(u64),
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().product();
        let actual = match &data {
            TensorData::U8(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        };
        if expected != actual {
            return Err(TensorError::LengthMismatch {
                dims,
                expected,
                actual,
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn dtype(&self) -> DType {
        match &self.data {
            TensorData::U8(_) => DType::U8,
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Widens the payload to f64. Exact for every stored dtype.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    /// Packs f64 values into the requested dtype, rounding through f32 when
    /// asked for it.
    pub fn from_f64(dims: Vec<usize>, values: &[f64], dtype: DType) -> Result<Self, TensorError> {
        let data = match dtype {
            DType::U8 => TensorData::U8(values.iter().map(|&x| x as u8).collect()),
            DType::F32 => TensorData::F32(values.iter().map(|&x| x as f32).collect()),
            DType::F64 => TensorData::F64(values.to_vec()),
        };
        Tensor::new(dims, data)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), TensorError> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.dtype().code()])?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match &self.data {
            TensorData::U8(v) => w.write_all(v)?,
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, TensorError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(TensorError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(TensorError::UnsupportedVersion(version));
        }
        let mut code = [0u8; 1];
        r.read_exact(&mut code)?;
        let dtype = DType::from_code(code[0]).ok_or(TensorError::UnknownDtype(code[0]))?;
        let ndim = read_u32(r)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut total: u64 = 1;
        for _ in 0..ndim {
            let d = read_u64(r)?;
            total = total.saturating_mul(d.max(1)).min(u64::MAX);
            dims.push(d as usize);
        }
        let count: u64 = dims.iter().map(|&d| d as u64).product();
        if total > MAX_ELEMS || count > MAX_ELEMS {
            return Err(TensorError::TooLarge(count));
        }
        let count = count as usize;
        let data = match dtype {
            DType::U8 => {
                let mut v = vec![0u8; count];
                r.read_exact(&mut v)?;
                TensorData::U8(v)
            }
            DType::F32 => {
                let mut raw = vec![0u8; count * 4];
                r.read_exact(&mut raw)?;
                TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            DType::F64 => {
                let mut raw = vec![0u8; count * 8];
                r.read_exact(&mut raw)?;
                TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| {
                            f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                        })
                        .collect(),
                )
            }
        };
        Tensor::new(dims, data)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), TensorError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, TensorError> {
        let mut r = BufReader::new(File::open(path)?);
        Tensor::read_from(&mut r)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, TensorError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(t: &Tensor) -> Tensor {
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        Tensor::read_from(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn f64_roundtrip_bit_exact() {
        let t = Tensor::new(
            vec![2, 3],
            TensorData::F64(vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300, -0.0, 3.25]),
        )
        .unwrap();
        let back = roundtrip(&t);
        assert_eq!(back.dims, t.dims);
        if let (TensorData::F64(a), TensorData::F64(b)) = (&t.data, &back.data) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        } else {
            panic!("dtype changed");
        }
    }

    #[test]
    fn f32_and_u8_roundtrip() {
        let t = Tensor::new(vec![4], TensorData::F32(vec![1.5, -0.25, 0.0, 7.0])).unwrap();
        assert_eq!(roundtrip(&t), t);
        let m = Tensor::new(vec![2, 2], TensorData::U8(vec![0, 1, 1, 0])).unwrap();
        assert_eq!(roundtrip(&m), m);
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let mut buf = Vec::new();
        Tensor::new(vec![1], TensorData::U8(vec![1]))
            .unwrap()
            .write_to(&mut buf)
            .unwrap();
        buf[0] = b'X';
        assert!(matches!(
            Tensor::read_from(&mut buf.as_slice()),
            Err(TensorError::BadMagic)
        ));
        buf[0] = b'F';
        buf[8] = 9;
        assert!(matches!(
            Tensor::read_from(&mut buf.as_slice()),
            Err(TensorError::UnknownDtype(9))
        ));
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(matches!(
            Tensor::new(vec![3], TensorData::F32(vec![0.0; 2])),
            Err(TensorError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn scalar_and_empty_dims() {
        let t = Tensor::new(vec![], TensorData::F64(vec![4.0])).unwrap();
        assert_eq!(roundtrip(&t), t);
        let z = Tensor::new(vec![0, 5], TensorData::F32(vec![])).unwrap();
        assert_eq!(roundtrip(&z), z);
    }
}
