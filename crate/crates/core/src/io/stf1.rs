//! STF1 tensor container.
//!
//! Layout: bytes 0-3 magic `STF1`; byte 4 dtype code (0 = f32, 1 = f64,
//! 2 = u8); byte 5 ndim; then ndim little-endian u32 extents; then the raw
//! row-major little-endian payload. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, Dtype, Element, Tensor};

const MAGIC: &[u8; 4] = b"STF1";

/// A decoded STF1 payload of any supported dtype.
#[derive(Clone, Debug)]
pub enum Stf1Array {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8 { dims: Vec<usize>, data: Vec<u8> },
}

impl Stf1Array {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            Stf1Array::F32(t) => t.dims().to_vec(),
            Stf1Array::F64(t) => t.dims().to_vec(),
            Stf1Array::U8 { dims, .. } => dims.clone(),
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Stf1Array::F32(_) => Dtype::F32,
            Stf1Array::F64(_) => Dtype::F64,
            Stf1Array::U8 { .. } => Dtype::U8,
        }
    }

    /// Convert to the requested element type (u8 payloads become 0/1/...
    /// values; float payloads are cast).
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        match self {
            Stf1Array::F32(t) => t.cast(),
            Stf1Array::F64(t) => t.cast(),
            Stf1Array::U8 { dims, data } => {
                Tensor::from_vec(dims, data.iter().map(|&v| T::from_f64(v as f64)).collect())
                    .expect("u8 payload length matches dims")
            }
        }
    }
}

fn encode_header(dtype: Dtype, dims: &[usize]) -> Result<Vec<u8>> {
    if dims.len() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} exceeds container limit", dims.len())));
    }
    for &d in dims {
        if d > u32::MAX as usize {
            return Err(Error::Format(format!("extent {d} exceeds u32 range")));
        }
    }
    let mut out = Vec::with_capacity(6 + 4 * dims.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    Ok(out)
}

/// Serialize a float tensor.
pub fn encode_tensor<T: Element>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let mut out = encode_header(T::DTYPE, t.dims())?;
    out.reserve(t.len() * T::DTYPE.size_bytes());
    for &v in t.as_slice() {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// Serialize a u8 array (used for binary mask cubes).
pub fn encode_bytes(dims: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    if numel(dims) != data.len() {
        return Err(Error::Format(format!("dims {dims:?} imply {} bytes, got {}", numel(dims), data.len())));
    }
    let mut out = encode_header(Dtype::U8, dims)?;
    out.extend_from_slice(data);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Stf1Array> {
    if bytes.len() < 6 || &bytes[0..4] != MAGIC {
        return Err(Error::Format("not an STF1 container".to_string()));
    }
    let dtype = Dtype::from_code(bytes[4])?;
    let ndim = bytes[5] as usize;
    let header_len = 6 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::Format("truncated STF1 header".to_string()));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 6 + 4 * i;
        dims.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let count = numel(&dims);
    let payload = &bytes[header_len..];
    if payload.len() != count * dtype.size_bytes() {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {} for dims {dims:?}",
            payload.len(),
            count * dtype.size_bytes()
        )));
    }
    Ok(match dtype {
        Dtype::F32 => {
            let data: Vec<f32> = payload.chunks_exact(4).map(f32::read_le).collect();
            Stf1Array::F32(Tensor::from_vec(&dims, data)?)
        }
        Dtype::F64 => {
            let data: Vec<f64> = payload.chunks_exact(8).map(f64::read_le).collect();
            Stf1Array::F64(Tensor::from_vec(&dims, data)?)
        }
        Dtype::U8 => Stf1Array::U8 { dims, data: payload.to_vec() },
    })
}

pub fn write_stf1_tensor<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn write_stf1_bytes(path: &Path, dims: &[usize], data: &[u8]) -> Result<()> {
    fs::write(path, encode_bytes(dims, data)?)?;
    Ok(())
}

pub fn read_stf1(path: &Path) -> Result<Stf1Array> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

/// Read and convert to `T` in one step.
pub fn read_stf1_tensor<T: Element>(path: &Path) -> Result<Tensor<T>> {
    Ok(read_stf1(path)?.to_tensor())
}
