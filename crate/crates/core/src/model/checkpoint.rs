//! Binary checkpoint container.
//!
//! Layout, all integers `u64` and all reals `f64`, little-endian:
//!
//! ```text
//! magic        8 bytes   "DGNCKPT1"
//! payload_len  u64
//! payload:
//!   arch       n, d, f, dk, h, k
//!   schema     count, then (byte length, UTF-8 bytes) per component
//!   tensors    embed, factors, w_q, w_k, w_v, w1, b1, w2, b2,
//!              bn_gamma, bn_beta, bn_running_mean, bn_running_var
//!              (row-major, sizes implied by arch)
//!   bn         momentum, epsilon
//!   stats      mean[n], std[n]
//!   band       low, high
//!   center     fc[k]
//!   split      seed, train_fraction, min_sum, max_sum
//! checksum     SHA-256 of everything before it (32 bytes)
//! ```

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ArchConfig, ModelParams, ParamId};
use crate::data::{ComponentSchema, NormalizationStats, TgBand};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::numeric::{BatchNormState, Matrix};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DGNCKPT1";
const CHECKSUM_LEN: usize = 32;

/// How the training partition was produced, so evaluation can rebuild it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitInfo {
    pub seed: u64,
    pub train_fraction: f64,
    pub min_sum: f64,
    pub max_sum: f64,
}

/// Everything needed to score new compositions without the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub schema: ComponentSchema,
    pub params: ModelParams,
    pub stats: NormalizationStats,
    pub band: TgBand,
    /// Mean training-target feature.
    pub center: Vec<f64>,
    pub split: SplitInfo,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.params.validate(&self.arch)?;
        let n = self.arch.n;
        if self.schema.n() != n || self.stats.mean.len() != n || self.stats.std.len() != n {
            return Err(Error::shape("Checkpoint", format!("{n} components"), self.schema.n()));
        }
        if self.center.len() != self.arch.k {
            return Err(Error::shape("Checkpoint center", self.arch.k, self.center.len()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut payload = Vec::new();
        let a = &self.arch;
        for v in [a.n, a.d, a.f, a.dk, a.h, a.k] {
            put_u64(&mut payload, v as u64);
        }
        put_u64(&mut payload, self.schema.n() as u64);
        for name in self.schema.names() {
            put_u64(&mut payload, name.len() as u64);
            payload.extend_from_slice(name.as_bytes());
        }
        for id in ParamId::ALL {
            put_f64s(&mut payload, self.params.tensor(id));
        }
        put_f64s(&mut payload, &self.params.bn.running_mean);
        put_f64s(&mut payload, &self.params.bn.running_var);
        put_f64s(&mut payload, &[self.params.bn.momentum, self.params.bn.epsilon]);
        put_f64s(&mut payload, &self.stats.mean);
        put_f64s(&mut payload, &self.stats.std);
        put_f64s(&mut payload, &[self.band.low(), self.band.high()]);
        put_f64s(&mut payload, &self.center);
        put_u64(&mut payload, self.split.seed);
        put_f64s(
            &mut payload,
            &[self.split.train_fraction, self.split.min_sum, self.split.max_sum],
        );

        let mut out = Vec::with_capacity(payload.len() + 48);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u64(&mut out, payload.len() as u64);
        out.extend_from_slice(&payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() {
            return Err(Error::CheckpointCorrupt("file shorter than the header".into()));
        }
        let magic = &bytes[..8];
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointVersion {
                expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        if bytes.len() < 16 {
            return Err(Error::CheckpointCorrupt("truncated header".into()));
        }
        let payload_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let expected = 16u64
            .checked_add(payload_len)
            .and_then(|v| v.checked_add(CHECKSUM_LEN as u64));
        if expected != Some(bytes.len() as u64) {
            return Err(Error::CheckpointCorrupt(format!(
                "expected {} bytes, file has {}",
                expected.map_or_else(|| "an impossible number of".to_string(), |v| v.to_string()),
                bytes.len()
            )));
        }
        let body_end = bytes.len() - CHECKSUM_LEN;
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            return Err(Error::CheckpointChecksum);
        }

        let mut r = Reader {
            buf: &bytes[16..body_end],
            pos: 0,
        };
        let dims: Vec<usize> = (0..6).map(|_| r.usize()).collect::<Result<_>>()?;
        let arch = ArchConfig {
            n: dims[0],
            d: dims[1],
            f: dims[2],
            dk: dims[3],
            h: dims[4],
            k: dims[5],
        };
        arch.validate()
            .map_err(|e| Error::CheckpointCorrupt(format!("bad architecture: {e}")))?;
        let count = r.usize()?;
        if count != arch.n {
            return Err(Error::CheckpointCorrupt("schema size disagrees with architecture".into()));
        }
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.usize()?;
            let raw = r.take(len)?;
            names.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| Error::CheckpointCorrupt("component name is not UTF-8".into()))?,
            );
        }
        let schema = ComponentSchema::new(names)
            .map_err(|e| Error::CheckpointCorrupt(format!("bad schema: {e}")))?;

        let embed = r.matrix(arch.n, arch.d)?;
        let factors = r.matrix(arch.n, arch.f)?;
        let wq = r.matrix(arch.d, arch.dk)?;
        let wk = r.matrix(arch.d, arch.dk)?;
        let wv = r.matrix(arch.d, arch.dk)?;
        let w1 = r.matrix(arch.flat_len(), arch.h)?;
        let b1 = r.f64s(arch.h)?;
        let w2 = r.matrix(arch.h, arch.k)?;
        let b2 = r.f64s(arch.k)?;
        let gamma = r.f64s(arch.h)?;
        let beta = r.f64s(arch.h)?;
        let running_mean = r.f64s(arch.h)?;
        let running_var = r.f64s(arch.h)?;
        let bn_scalars = r.f64s(2)?;
        let params = ModelParams {
            embed,
            factors,
            wq,
            wk,
            wv,
            w1,
            b1,
            w2,
            b2,
            bn: BatchNormState {
                gamma,
                beta,
                running_mean,
                running_var,
                momentum: bn_scalars[0],
                epsilon: bn_scalars[1],
            },
        };
        let stats = NormalizationStats {
            mean: r.f64s(arch.n)?,
            std: r.f64s(arch.n)?,
        };
        let band_raw = r.f64s(2)?;
        let band = TgBand::new(band_raw[0], band_raw[1])
            .map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
        let center = r.f64s(arch.k)?;
        let seed = r.u64()?;
        let split_raw = r.f64s(3)?;
        if r.pos != r.buf.len() {
            return Err(Error::CheckpointCorrupt("trailing bytes in payload".into()));
        }
        let ckpt = Checkpoint {
            arch,
            schema,
            params,
            stats,
            band,
            center,
            split: SplitInfo {
                seed,
                train_fraction: split_raw[0],
                min_sum: split_raw[1],
                max_sum: split_raw[2],
            },
        };
        ckpt.validate()
            .map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
        Ok(ckpt)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CheckpointCorrupt("payload ends early".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let data = self.f64s(rows * cols)?;
        Matrix::new(rows, cols, data).map_err(|e| Error::CheckpointCorrupt(e.to_string()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CheckpointCorrupt("size overflows usize".into()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| {
            Error::CheckpointCorrupt("tensor size overflow".into())
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    write_atomic(path, |w: &mut dyn Write| w.write_all(&bytes).map_err(|e| Error::io(path, e)))
}

/// Loads a checkpoint; either the whole model comes back or an error does.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
