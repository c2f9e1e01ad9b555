//! Binary checkpoint container for network weights.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   "MFNN" magic
//! offset 4   u16 version (currently 1)
//! offset 6   u16 digest length in bytes (64)
//! offset 8   architecture digest, lowercase hex ASCII
//! then, per layer in order: u64 weight count, weights as f32,
//!                           u64 bias count, biases as f32
//! ```
//!
//! Weights are stored as f32 (load widens back to f64). The digest is the
//! SHA-256 of the architecture description, so a checkpoint can only be
//! loaded into the exact shape it was saved from.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ArchSpec, LayerTensors, NetworkParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MFNN";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let digest = params.arch.digest();
    let write = |out: &mut std::io::BufWriter<std::fs::File>, bytes: &[u8]| {
        out.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    write(&mut out, &CHECKPOINT_MAGIC)?;
    write(&mut out, &CHECKPOINT_VERSION.to_le_bytes())?;
    write(&mut out, &(digest.len() as u16).to_le_bytes())?;
    write(&mut out, digest.as_bytes())?;
    for lt in &params.layers {
        for tensor in [&lt.w, &lt.b] {
            write(&mut out, &(tensor.len() as u64).to_le_bytes())?;
            for &v in tensor.iter() {
                write(&mut out, &(v as f32).to_le_bytes())?;
            }
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, arch: ArchSpec) -> Result<NetworkParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, arch)
}

pub fn parse_checkpoint(bytes: &[u8], arch: ArchSpec) -> Result<NetworkParams> {
    arch.validate()?;
    let fail = |offset: usize, reason: &str| Error::Format {
        offset: offset as u64,
        reason: reason.to_string(),
    };
    if bytes.len() < 8 {
        return Err(fail(bytes.len(), "truncated checkpoint header"));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail(0, "bad magic, expected \"MFNN\""));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(fail(4, &format!("unsupported version {version}")));
    }
    let digest_len = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if bytes.len() < 8 + digest_len {
        return Err(fail(bytes.len(), "truncated architecture digest"));
    }
    let stored = std::str::from_utf8(&bytes[8..8 + digest_len])
        .map_err(|_| fail(8, "digest is not ASCII hex"))?;
    let expected = arch.digest();
    if stored != expected {
        return Err(Error::Param(format!(
            "checkpoint was saved from a different architecture \
             (stored digest {stored}, expected {expected})"
        )));
    }

    let mut pos = 8 + digest_len;
    let mut layers = Vec::with_capacity(arch.layers.len());
    for (l, (w_len, b_len)) in arch.param_shapes().into_iter().enumerate() {
        let mut tensors = [Vec::new(), Vec::new()];
        for (t, expect) in [w_len, b_len].into_iter().enumerate() {
            if bytes.len() < pos + 8 {
                return Err(fail(bytes.len(), "truncated tensor header"));
            }
            let count = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes"));
            if count as usize != expect {
                return Err(fail(
                    pos,
                    &format!("layer {l} tensor has {count} values, architecture needs {expect}"),
                ));
            }
            pos += 8;
            let nbytes = expect * 4;
            if bytes.len() < pos + nbytes {
                return Err(fail(bytes.len(), "truncated tensor data"));
            }
            tensors[t] = bytes[pos..pos + nbytes]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            pos += nbytes;
        }
        let [w, b] = tensors;
        layers.push(LayerTensors { w, b });
    }
    if pos != bytes.len() {
        return Err(fail(pos, "trailing bytes after final tensor"));
    }
    Ok(NetworkParams { arch, layers })
}
