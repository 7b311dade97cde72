//! Checkpoint container: a versioned header, a JSON manifest mapping
//! parameter names to dims/dtype/offset, then concatenated STF1 payloads.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::stf1;
use crate::model::{allocate_zeros, ModelConfig, ModelParams};
use crate::tensor::{Element, Tensor};

const MAGIC: &[u8; 4] = b"STFC";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dims: Vec<usize>,
    dtype: String,
    /// Byte offset of the parameter's STF1 blob within the payload section.
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    entries: Vec<ManifestEntry>,
}

fn dtype_name<T: Element>() -> &'static str {
    match T::DTYPE {
        crate::tensor::Dtype::F32 => "f32",
        crate::tensor::Dtype::F64 => "f64",
        crate::tensor::Dtype::U8 => "u8",
    }
}

pub fn save_checkpoint<T: Element>(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams<Tensor<T>>,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut failure: Option<Error> = None;
    params.for_each(&mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        match stf1::encode_tensor(tensor) {
            Ok(blob) => {
                entries.push(ManifestEntry {
                    name,
                    dims: tensor.dims().to_vec(),
                    dtype: dtype_name::<T>().to_string(),
                    offset: payload.len() as u64,
                    len: blob.len() as u64,
                });
                payload.extend_from_slice(&blob);
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let manifest = serde_json::to_vec(&Manifest { version: VERSION, config: config.clone(), entries })?;

    let mut out = Vec::with_capacity(16 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

/// Load a checkpoint, converting the payload to `T` if the stored dtype
/// differs.
pub fn load_checkpoint<T: Element>(path: &Path) -> Result<(ModelConfig, ModelParams<Tensor<T>>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::Format("not a checkpoint file".to_string()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + manifest_len {
        return Err(Error::Format("truncated checkpoint manifest".to_string()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])?;
    let payload = &bytes[16 + manifest_len..];

    let mut tensors: HashMap<String, Tensor<T>> = HashMap::new();
    for entry in &manifest.entries {
        let (start, end) = (entry.offset as usize, (entry.offset + entry.len) as usize);
        if end > payload.len() || start > end {
            return Err(Error::Format(format!("parameter {} extends past payload", entry.name)));
        }
        let arr = stf1::decode(&payload[start..end])?;
        if arr.dims() != entry.dims {
            return Err(Error::Format(format!(
                "parameter {}: manifest dims {:?} but payload has {:?}",
                entry.name,
                entry.dims,
                arr.dims()
            )));
        }
        tensors.insert(entry.name.clone(), arr.to_tensor());
    }

    let mut params = allocate_zeros::<T>(&manifest.config)?;
    crate::model::params::fill_from_entries(&mut params, tensors)?;
    Ok((manifest.config, params))
}
