use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::write_atomic;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"LUDA1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U32 = 2,
}

impl DType {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U32),
            t => Err(Error::CorruptFile(format!("unknown dtype tag {t}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U32(_) => DType::U32,
        }
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} hold {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> Self {
        Self {
            dims: a.shape().to_vec(),
            data: TensorData::F64(a.iter().copied().collect()),
        }
    }

    pub fn from_u32<D: ndarray::Dimension>(a: &ndarray::Array<u32, D>) -> Self {
        Self {
            dims: a.shape().to_vec(),
            data: TensorData::U32(a.iter().copied().collect()),
        }
    }

    /// Float payloads widened to f64.
    pub fn to_f64(&self) -> Result<ArrayD<f64>> {
        let v = match &self.data {
            TensorData::F64(v) => v.clone(),
            TensorData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            TensorData::U32(_) => {
                return Err(Error::CorruptFile("expected a floating-point tensor".into()))
            }
        };
        ArrayD::from_shape_vec(IxDyn(&self.dims), v).map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    pub fn to_u32(&self) -> Result<ArrayD<u32>> {
        match &self.data {
            TensorData::U32(v) => ArrayD::from_shape_vec(IxDyn(&self.dims), v.clone())
                .map_err(|e| Error::ShapeMismatch(e.to_string())),
            _ => Err(Error::CorruptFile("expected a u32 tensor".into())),
        }
    }

    pub fn header_len(&self) -> usize {
        MAGIC.len() + 4 + 4 * self.dims.len() + 1
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len() + self.data.len() * self.data.dtype().width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.push(self.data.dtype() as u8);
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::CorruptFile("bad magic".into()));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let dtype = DType::from_tag(r.take(1)?[0])?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| Error::CorruptFile("dims overflow".into()))?;
        let payload = r.rest();
        if payload.len() != n * dtype.width() {
            return Err(Error::CorruptFile(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                n * dtype.width()
            )));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::F64 => TensorData::F64(
                payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::U32 => TensorData::U32(
                payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
        };
        Ok(Self { dims, data })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptFile("truncated header".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

pub fn export_tensor(tensor: &Tensor, path: &Path) -> Result<()> {
    write_atomic(path, &tensor.to_bytes())
}

pub fn import_tensor(path: &Path) -> Result<Tensor> {
    Tensor::from_bytes(&std::fs::read(path)?)
}
