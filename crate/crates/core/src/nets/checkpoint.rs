//! Single-file checkpoints: a safetensors archive whose header metadata
//! carries the JSON description of the architecture under the key
//! [`HEADER_KEY`].

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use sha2::{Digest, Sha256};

use super::NamedVar;
use crate::error::{Error, Result};

pub const HEADER_KEY: &str = "cbns";

/// Serialises `params` with a JSON `header` into archive bytes.
pub fn to_bytes(header: &str, params: &[NamedVar]) -> Result<Vec<u8>> {
    let tensors: Vec<(String, Tensor)> = params
        .iter()
        .map(|(name, var)| (name.clone(), var.as_tensor().clone()))
        .collect();
    let meta = HashMap::from([(HEADER_KEY.to_string(), header.to_string())]);
    safetensors::serialize(tensors, Some(meta))
        .map_err(|e| Error::invalid(format!("checkpoint serialisation failed: {e}")))
}

/// Writes the archive atomically (temp file, then rename).
pub fn save(path: &Path, header: &str, params: &[NamedVar]) -> Result<()> {
    let bytes = to_bytes(header, params)?;
    crate::write_atomic(path, &bytes)
}

/// Reads the header and all named arrays.
pub fn load(path: &Path) -> Result<(String, HashMap<String, Tensor>)> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::integrity(path, msg),
        other => other,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<(String, HashMap<String, Tensor>)> {
    let (_, meta) = safetensors::SafeTensors::read_metadata(bytes)
        .map_err(|e| Error::invalid(format!("not a checkpoint archive: {e}")))?;
    let header = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(HEADER_KEY))
        .cloned()
        .ok_or_else(|| Error::invalid("checkpoint header missing"))?;
    let tensors = candle_core::safetensors::load_buffer(bytes, &Device::Cpu)
        .map_err(|e| Error::invalid(format!("corrupt checkpoint arrays: {e}")))?;
    Ok((header, tensors))
}

/// Copies loaded arrays into `params`, requiring every name and shape to
/// match.
pub fn assign(params: &[NamedVar], tensors: &HashMap<String, Tensor>) -> Result<()> {
    for (name, var) in params {
        let t = tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter {name}")))?;
        if t.dims() != var.dims() {
            return Err(Error::invalid(format!(
                "parameter {name}: checkpoint shape {:?} != model shape {:?}",
                t.dims(),
                var.dims()
            )));
        }
        var.set(&t.to_dtype(var.dtype())?)?;
    }
    Ok(())
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex_digest(&Sha256::digest(&bytes)))
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
