//! Binary checkpoint files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "HGTL"  u32 version
//! repeated: u32 name_len, name bytes, u32 rank, rank × u64 dims, row-major f64 values
//! u32 CRC-32 of every byte before it
//! ```
//!
//! Besides the model tensors, a checkpoint carries `meta.variant` (the
//! ablation codes) and `meta.users` (a CRC-32 of the ordered user ids) so a
//! mismatched dataset is caught at load time.

use std::fs;
use std::path::Path;

use crate::error::CheckpointError;
use crate::model::{Ablation, VariantId};
use crate::params::ModelParams;
use crate::tensor::Mat;

pub const MAGIC: &[u8; 4] = b"HGTL";
pub const FORMAT_VERSION: u32 = 1;

const META_VARIANT: &str = "meta.variant";
const META_USERS: &str = "meta.users";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub variant: Ablation,
    /// CRC-32 of the user ids joined by newlines, in label order.
    pub user_digest: u32,
}

/// Digest stored in [`Checkpoint::user_digest`].
pub fn user_digest<S: AsRef<str>>(users: &[S]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for u in users {
        h.update(u.as_ref().as_bytes());
        h.update(b"\n");
    }
    h.finalize()
}

fn push_tensor(out: &mut Vec<u8>, name: &str, m: &Mat) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for (name, m) in self.params.named() {
            push_tensor(&mut out, &name, m);
        }
        let codes: Vec<f64> = self
            .variant
            .ids()
            .iter()
            .map(|v| f64::from(v.code()))
            .collect();
        push_tensor(
            &mut out,
            META_VARIANT,
            &Mat::from_vec(1, codes.len(), codes),
        );
        push_tensor(
            &mut out,
            META_USERS,
            &Mat::from_vec(1, 1, vec![f64::from(self.user_digest)]),
        );
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut tensors = Vec::new();
        while r.pos < body.len() {
            tensors.push(r.tensor()?);
        }
        let mut take = |name: &str| {
            tensors
                .iter()
                .position(|(n, _)| n == name)
                .map(|i| tensors.remove(i).1)
                .ok_or_else(|| CheckpointError::Malformed(format!("missing {name}")))
        };
        let variant_codes = take(META_VARIANT)?;
        let users = take(META_USERS)?;
        let ids = variant_codes
            .data()
            .iter()
            .map(|&c| {
                VariantId::from_code(c as u8)
                    .filter(|_| c.fract() == 0.0 && (0.0..=255.0).contains(&c))
                    .ok_or_else(|| CheckpointError::Malformed(format!("bad variant code {c}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let variant = Ablation::new(&ids).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let user_digest = users.data().first().copied().unwrap_or(-1.0);
        if user_digest.fract() != 0.0 || !(0.0..=f64::from(u32::MAX)).contains(&user_digest) {
            return Err(CheckpointError::Malformed("bad user digest".into()));
        }
        let params = ModelParams::from_named(tensors).map_err(CheckpointError::Malformed)?;
        Ok(Self {
            params,
            variant,
            user_digest: user_digest as u32,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn tensor(&mut self) -> Result<(String, Mat), CheckpointError> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()?;
        let dims = (0..rank)
            .map(|_| self.u64())
            .collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n as usize),
            [r, c] => (*r as usize, *c as usize),
            _ => {
                return Err(CheckpointError::Malformed(format!(
                    "{name}: unsupported rank {rank}"
                )))
            }
        };
        let count = rows.checked_mul(cols).ok_or(CheckpointError::Truncated)?;
        let raw = self.take(count.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Mat::from_vec(rows, cols, data)))
    }
}
