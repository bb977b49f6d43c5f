//! Versioned binary checkpoint: named parameter payloads with the run
//! configuration embedded as text and a SHA-256 trailer guarding the whole
//! file.

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Dtype;
use crate::tensor::Parameter;
use crate::Scalar;

const MAGIC: &[u8; 4] = b"TVCK";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("checkpoint holds {got:?} values but {expected:?} was requested")]
    WrongDtype { expected: Dtype, got: Dtype },
    #[error("checkpoint digest does not match its contents")]
    DigestMismatch,
    #[error("checkpoint is truncated or malformed at byte {0}")]
    Corrupt(usize),
    #[error("parameter `{0}` is missing from the checkpoint")]
    MissingParam(String),
    #[error("parameter `{name}`: checkpoint shape {stored:?} does not match model shape {model:?}")]
    ShapeMismatch {
        name: String,
        stored: Vec<usize>,
        model: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub config_text: String,
    pub entries: Vec<(String, Vec<usize>, Vec<T>)>,
}

pub fn encode_checkpoint<T: Scalar>(params: &[Parameter<T>], config_text: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.tag());
    out.push(0);
    let config = config_text.as_bytes();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.tensor.shape().to_vec();
        out.push(shape.len() as u8);
        for d in &shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        let values = p.tensor.to_vec();
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    params: &[Parameter<T>],
    config_text: &str,
) -> Result<(), CheckpointError> {
    Ok(std::fs::write(path, encode_checkpoint(params, config_text))?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, CheckpointError> {
    if bytes.len() < 44 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body_len = bytes.len() - 32;
    let digest = Sha256::digest(&bytes[..body_len]);
    if digest[..] != bytes[body_len..] {
        return Err(CheckpointError::DigestMismatch);
    }
    let mut c = Cursor {
        bytes: &bytes[..body_len],
        pos: 4,
    };
    let version = c.u16()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let tag = c.take(1)?[0];
    let got = Dtype::from_tag(tag).ok_or(CheckpointError::Corrupt(c.pos))?;
    if got != T::DTYPE {
        return Err(CheckpointError::WrongDtype {
            expected: T::DTYPE,
            got,
        });
    }
    c.take(1)?;
    let config_len = c.u32()? as usize;
    let config_text = String::from_utf8(c.take(config_len)?.to_vec())
        .map_err(|_| CheckpointError::Corrupt(c.pos))?;
    let n_params = c.u32()? as usize;
    let mut entries = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt(c.pos))?;
        let rank = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let count = c.u64()? as usize;
        if count != shape.iter().product::<usize>() {
            return Err(CheckpointError::Corrupt(c.pos));
        }
        let width = T::DTYPE.byte_width();
        let raw = c.take(count * width)?;
        let values = raw.chunks_exact(width).map(T::read_le).collect();
        entries.push((name, shape, values));
    }
    if c.pos != body_len {
        return Err(CheckpointError::Corrupt(c.pos));
    }
    Ok(Checkpoint {
        config_text,
        entries,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}

impl<T: Scalar> Checkpoint<T> {
    /// Copy stored values into matching parameters; every model parameter
    /// must be present with an identical shape.
    pub fn apply(&self, params: &[Parameter<T>]) -> Result<(), CheckpointError> {
        for p in params {
            let entry = self
                .entries
                .iter()
                .find(|(name, _, _)| *name == p.name)
                .ok_or_else(|| CheckpointError::MissingParam(p.name.clone()))?;
            if entry.1 != p.tensor.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: p.name.clone(),
                    stored: entry.1.clone(),
                    model: p.tensor.shape().to_vec(),
                });
            }
            p.tensor.set_values(&entry.2);
        }
        Ok(())
    }
}

/// SHA-256 of the whole file, for determinism comparisons.
pub fn file_digest(path: &Path) -> Result<[u8; 32], CheckpointError> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn params() -> Vec<Parameter<f64>> {
        vec![
            Parameter::new("a.weight", Tensor::parameter(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.25, -6.5])),
            Parameter::new("a.bias", Tensor::parameter(vec![2], vec![0.5, -0.5])),
        ]
    }

    #[test]
    fn round_trips_values_config_and_names() {
        let p = params();
        let bytes = encode_checkpoint(&p, "seed=7\nk=5\n");
        let ck: Checkpoint<f64> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.config_text, "seed=7\nk=5\n");
        assert_eq!(ck.entries.len(), 2);
        assert_eq!(ck.entries[0].0, "a.weight");
        assert_eq!(ck.entries[0].1, vec![2, 3]);

        let fresh = params();
        fresh[0].tensor.set_values(&[0.0; 6]);
        fresh[1].tensor.set_values(&[0.0; 2]);
        ck.apply(&fresh).unwrap();
        assert_eq!(fresh[0].tensor.to_vec(), p[0].tensor.to_vec());
        assert_eq!(fresh[1].tensor.to_vec(), p[1].tensor.to_vec());
    }

    #[test]
    fn flipping_any_byte_breaks_the_digest() {
        let bytes = encode_checkpoint(&params(), "x=1");
        for at in [5usize, 20, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[at] ^= 0x40;
            let err = decode_checkpoint::<f64>(&bad).unwrap_err();
            assert!(
                matches!(
                    err,
                    CheckpointError::DigestMismatch | CheckpointError::BadMagic
                ),
                "byte {at}: {err}"
            );
        }
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let bytes = encode_checkpoint(&params(), "");
        let err = decode_checkpoint::<f32>(&bytes).unwrap_err();
        assert!(matches!(err, CheckpointError::WrongDtype { .. }), "{err}");
    }

    #[test]
    fn missing_and_misshapen_params_are_reported() {
        let bytes = encode_checkpoint(&params(), "");
        let ck: Checkpoint<f64> = decode_checkpoint(&bytes).unwrap();

        let extra = vec![Parameter::new(
            "b.weight",
            Tensor::parameter(vec![1], vec![0.0]),
        )];
        assert!(matches!(
            ck.apply(&extra).unwrap_err(),
            CheckpointError::MissingParam(_)
        ));

        let misshapen = vec![Parameter::new(
            "a.bias",
            Tensor::parameter(vec![3], vec![0.0; 3]),
        )];
        assert!(matches!(
            ck.apply(&misshapen).unwrap_err(),
            CheckpointError::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn encoding_is_deterministic() {
        let a = encode_checkpoint(&params(), "cfg");
        let b = encode_checkpoint(&params(), "cfg");
        assert_eq!(a, b);
    }
}
