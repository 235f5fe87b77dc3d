//! Training checkpoints: a parameter block followed by optimizer and
//! reward-kernel state.
//!
//! ```text
//! <parameter block>
//! "RDCK" u32 version  u8 stage  u8 ω-learnable  2×u8 pad
//! u64 episodes_done  9×f64 ω
//! u64 step  u64 len  len×f64 m  len×f64 v        (network Adam)
//! u64 step  9×f64 m  9×f64 v                     (ω Adam)
//! u64 FNV-1a of everything from "RDCK" on
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::io::{decode, encode, fnv1a};
use crate::net::NetworkParams;
use crate::train::adam::OptimizerState;
use crate::train::returns::RewardConvKernel;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub stage: u8,
    pub episodes_done: u64,
    pub omega: RewardConvKernel,
    pub opt: OptimizerState,
    pub omega_opt: OptimizerState,
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Params(format!(
                "checkpoint truncated while reading {what}"
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Params(format!("{what} length overflow")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = encode(&self.params);
        let start = buf.len();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&[self.stage, self.omega.learnable as u8, 0, 0]);
        buf.extend_from_slice(&self.episodes_done.to_le_bytes());
        put_f64s(&mut buf, &self.omega.weights);
        buf.extend_from_slice(&self.opt.step.to_le_bytes());
        buf.extend_from_slice(&(self.opt.m.len() as u64).to_le_bytes());
        put_f64s(&mut buf, &self.opt.m);
        put_f64s(&mut buf, &self.opt.v);
        buf.extend_from_slice(&self.omega_opt.step.to_le_bytes());
        put_f64s(&mut buf, &self.omega_opt.m);
        put_f64s(&mut buf, &self.omega_opt.v);
        let sum = fnv1a(&buf[start..]);
        buf.extend_from_slice(&sum.to_le_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (params, used) = decode(bytes)?;
        let mut r = Reader {
            buf: bytes,
            pos: used,
        };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Params(
                "not a training checkpoint (no optimizer state)".into(),
            ));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Params(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let flags = r.take(4, "stage")?;
        let (stage, learnable) = (flags[0], flags[1] != 0);
        if !(1..=2).contains(&stage) {
            return Err(Error::Params(format!("invalid stage {stage}")));
        }
        let episodes_done = r.u64("episode count")?;
        let w = r.f64s(9, "reward kernel")?;
        let omega = RewardConvKernel::new(w.try_into().unwrap(), learnable)?;

        let mut opt = OptimizerState::new(params.len());
        opt.step = r.u64("optimizer step")?;
        let len = r.u64("optimizer length")? as usize;
        if len != params.len() {
            return Err(Error::Params(format!(
                "optimizer state has {len} entries for {} parameters",
                params.len()
            )));
        }
        opt.m = r.f64s(len, "first moments")?;
        opt.v = r.f64s(len, "second moments")?;

        let mut omega_opt = OptimizerState::new(9);
        omega_opt.step = r.u64("kernel optimizer step")?;
        omega_opt.m = r.f64s(9, "kernel first moments")?;
        omega_opt.v = r.f64s(9, "kernel second moments")?;

        let end = r.pos;
        let stored = r.u64("checksum")?;
        if stored != fnv1a(&bytes[used..end]) {
            return Err(Error::Params(
                "checkpoint checksum mismatch, file is corrupt".into(),
            ));
        }
        if r.pos != bytes.len() {
            return Err(Error::Params(format!(
                "{} unexpected trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            params,
            stage,
            episodes_done,
            omega,
            opt,
            omega_opt,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{load_params, NetConfig};

    fn sample() -> Checkpoint {
        let params = NetworkParams::init(NetConfig {
            trunk_layers: 2,
            trunk_channels: 2,
            shared_trunk: true,
            init_seed: 3,
        })
        .unwrap();
        let mut opt = OptimizerState::new(params.len());
        opt.step = 7;
        opt.m
            .iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m = i as f64 * 0.5);
        opt.v
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64 * 0.25);
        let mut w = [0.0; 9];
        w[4] = 0.8;
        w[1] = 0.2;
        Checkpoint {
            params,
            stage: 2,
            episodes_done: 123,
            omega: RewardConvKernel::new(w, true).unwrap(),
            opt,
            omega_opt: OptimizerState::new(9),
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn params_loader_accepts_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(load_params(&path).unwrap(), c.params);
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn corruption_is_detected() {
        let c = sample();
        let mut bytes = c.encode();
        let n = bytes.len();
        bytes[n - 20] ^= 1;
        assert!(Checkpoint::decode(&bytes).is_err());
        let bytes = c.encode();
        assert!(Checkpoint::decode(&bytes[..n - 3]).is_err());
        // a bare parameter file is not a checkpoint
        assert!(Checkpoint::decode(&encode(&c.params)).is_err());
    }
}
