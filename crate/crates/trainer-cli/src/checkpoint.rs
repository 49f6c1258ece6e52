//! The `FM3D` checkpoint container.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic "FM3D" | version u32 | dtype u8 (32|64) | grad_mode u8 (0 sum, 1 avg)
//! | parametrization u8 (0 fm, 1 baseline) | epochs_done u32 | seed u64
//! | desc_len u32 | canonical net description (UTF-8)
//! | n_tensors u32
//! | per tensor: name_len u16 | name | role u8 (0 param, 1 velocity)
//! |             ndims u8 | dims u32 x ndims | values (dtype/8 bytes each)
//! ```
//!
//! The embedded description plus the header is everything needed to rebuild
//! the model; loading into an explicitly supplied architecture validates
//! every tensor's dims by name. Values round-trip bitwise: a reloaded model
//! continues training exactly where the saved one stopped.

use std::path::{Path, PathBuf};

use fm_core::{GradMode, Scalar};
use nn_engine::Network;
use thiserror::Error;

use crate::config::Parametrization;

pub const MAGIC: [u8; 4] = *b"FM3D";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic {found:?} (expected \"FM3D\")")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("checkpoint truncated while reading {what}")]
    TruncatedFile { what: &'static str },
    #[error("corrupt checkpoint: {what}")]
    Corrupt { what: String },
    #[error("tensor dims for `{name}` do not match the model (checkpoint {found:?}, model {expected:?})")]
    DimMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint stores {found}-bit values but the run uses {expected}-bit precision")]
    DtypeMismatch { found: u8, expected: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Param,
    Velocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub dims: Vec<usize>,
    /// Values widened to f64; exact for both supported dtypes.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dtype_bits: u8,
    pub grad_mode: GradMode,
    pub parametrization: Parametrization,
    pub epochs_done: u32,
    pub seed: u64,
    pub net_text: String,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str, role: TensorRole) -> Option<&TensorEntry> {
        self.tensors
            .iter()
            .find(|t| t.role == role && t.name == name)
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(ck.dtype_bits);
    out.push(match ck.grad_mode {
        GradMode::Sum => 0,
        GradMode::Average => 1,
    });
    out.push(match ck.parametrization {
        Parametrization::FilterMap => 0,
        Parametrization::Baseline => 1,
    });
    out.extend_from_slice(&ck.epochs_done.to_le_bytes());
    out.extend_from_slice(&ck.seed.to_le_bytes());
    let desc = ck.net_text.as_bytes();
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc);
    out.extend_from_slice(&(ck.tensors.len() as u32).to_le_bytes());
    for tensor in &ck.tensors {
        let name = tensor.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(match tensor.role {
            TensorRole::Param => 0,
            TensorRole::Velocity => 1,
        });
        out.push(tensor.dims.len() as u8);
        for &d in &tensor.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match ck.dtype_bits {
            32 => {
                for &v in &tensor.values {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            _ => {
                for &v in &tensor.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::TruncatedFile { what });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic.try_into().unwrap(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let dtype_bits = r.u8("dtype")?;
    if dtype_bits != 32 && dtype_bits != 64 {
        return Err(CheckpointError::Corrupt {
            what: format!("dtype byte {dtype_bits}"),
        });
    }
    let grad_mode = match r.u8("grad mode")? {
        0 => GradMode::Sum,
        1 => GradMode::Average,
        other => {
            return Err(CheckpointError::Corrupt {
                what: format!("grad mode byte {other}"),
            })
        }
    };
    let parametrization = match r.u8("parametrization")? {
        0 => Parametrization::FilterMap,
        1 => Parametrization::Baseline,
        other => {
            return Err(CheckpointError::Corrupt {
                what: format!("parametrization byte {other}"),
            })
        }
    };
    let epochs_done = r.u32("epoch counter")?;
    let seed = r.u64("seed")?;
    let desc_len = r.u32("description length")? as usize;
    let net_text = String::from_utf8(r.take(desc_len, "description")?.to_vec()).map_err(|_| {
        CheckpointError::Corrupt {
            what: "description is not UTF-8".into(),
        }
    })?;
    let n_tensors = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = r.u16("tensor name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec()).map_err(|_| {
            CheckpointError::Corrupt {
                what: "tensor name is not UTF-8".into(),
            }
        })?;
        let role = match r.u8("tensor role")? {
            0 => TensorRole::Param,
            1 => TensorRole::Velocity,
            other => {
                return Err(CheckpointError::Corrupt {
                    what: format!("tensor role byte {other}"),
                })
            }
        };
        let ndims = r.u8("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u32("tensor dims")? as usize);
        }
        let len: usize = dims.iter().product();
        let values = match dtype_bits {
            32 => r
                .take(len * 4, "tensor values")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            _ => r
                .take(len * 8, "tensor values")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        tensors.push(TensorEntry {
            name,
            role,
            dims,
            values,
        });
    }
    Ok(Checkpoint {
        dtype_bits,
        grad_mode,
        parametrization,
        epochs_done,
        seed,
        net_text,
        tensors,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(ck)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Captures the model parameters and optimizer velocities.
pub fn snapshot<S: Scalar>(
    net: &Network<S>,
    velocities: &[Vec<S>],
    grad_mode: GradMode,
    parametrization: Parametrization,
    epochs_done: u32,
    seed: u64,
    net_text: String,
) -> Checkpoint {
    let infos = net.param_infos();
    let mut tensors = Vec::with_capacity(infos.len() * 2);
    for (i, info) in infos.iter().enumerate() {
        tensors.push(TensorEntry {
            name: info.name.clone(),
            role: TensorRole::Param,
            dims: info.dims.clone(),
            values: net.param(i).iter().map(|v| v.to_f64()).collect(),
        });
    }
    for (i, info) in infos.iter().enumerate() {
        tensors.push(TensorEntry {
            name: info.name.clone(),
            role: TensorRole::Velocity,
            dims: info.dims.clone(),
            values: velocities[i].iter().map(|v| v.to_f64()).collect(),
        });
    }
    Checkpoint {
        dtype_bits: S::BITS as u8,
        grad_mode,
        parametrization,
        epochs_done,
        seed,
        net_text,
        tensors,
    }
}

/// Writes checkpoint tensors into an existing model (and velocity buffers),
/// validating dtype and per-tensor dims by name.
pub fn restore<S: Scalar>(
    net: &mut Network<S>,
    velocities: &mut [Vec<S>],
    ck: &Checkpoint,
) -> Result<(), CheckpointError> {
    if ck.dtype_bits != S::BITS as u8 {
        return Err(CheckpointError::DtypeMismatch {
            found: ck.dtype_bits,
            expected: S::BITS as u8,
        });
    }
    let infos = net.param_infos();
    debug_assert_eq!(velocities.len(), infos.len());
    for (i, info) in infos.iter().enumerate() {
        let entry = ck.tensor(&info.name, TensorRole::Param).ok_or_else(|| {
            CheckpointError::DimMismatch {
                name: info.name.clone(),
                found: vec![],
                expected: info.dims.clone(),
            }
        })?;
        if entry.dims != info.dims {
            return Err(CheckpointError::DimMismatch {
                name: info.name.clone(),
                found: entry.dims.clone(),
                expected: info.dims.clone(),
            });
        }
        for (p, &v) in net.param_mut(i).iter_mut().zip(&entry.values) {
            *p = S::from_f64(v);
        }
        if let Some(vel) = ck.tensor(&info.name, TensorRole::Velocity) {
            if vel.dims != info.dims {
                return Err(CheckpointError::DimMismatch {
                    name: info.name.clone(),
                    found: vel.dims.clone(),
                    expected: info.dims.clone(),
                });
            }
            for (p, &v) in velocities[i].iter_mut().zip(&vel.values) {
                *p = S::from_f64(v);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            dtype_bits: 64,
            grad_mode: GradMode::Average,
            parametrization: Parametrization::FilterMap,
            epochs_done: 3,
            seed: 99,
            net_text: "[input]\nchannels = 1\nheight = 4\nwidth = 4\n".into(),
            tensors: vec![TensorEntry {
                name: "c1.map".into(),
                role: TensorRole::Param,
                dims: vec![2, 3],
                values: vec![0.25, -1.5, 3.0, 0.0, 1.0 / 3.0, f64::MIN_POSITIVE],
            }],
        }
    }

    #[test]
    fn encode_decode_roundtrip_is_exact() {
        let ck = sample();
        let decoded = decode(&encode(&ck)).unwrap();
        assert_eq!(ck, decoded);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::BadMagic { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::VersionMismatch { found: 9 })
        ));
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode(&sample());
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(
                decode(&bytes[..cut]),
                Err(CheckpointError::TruncatedFile { .. })
            ));
        }
    }

    #[test]
    fn f32_payloads_roundtrip_exactly() {
        let mut ck = sample();
        ck.dtype_bits = 32;
        ck.tensors[0].values = vec![0.5, -0.25, (1.0f32 / 3.0f32) as f64, 100.0, 0.0, -0.0];
        let decoded = decode(&encode(&ck)).unwrap();
        assert_eq!(decoded.tensors[0].values, ck.tensors[0].values);
    }
}
