//! Parameter file format (all integers little-endian):
//!
//! ```text
//! magic "RDNP" | version u32 | trunk_layers u32 | trunk_channels u32
//! | shared_trunk u8 | 3 zero bytes | init_seed u64 | count u64
//! | count × f64 | FNV-1a-64 checksum of everything before it
//! ```
//!
//! Training checkpoints append an optimizer section after this block; the
//! loader accepts such trailing data only when it starts with the checkpoint
//! magic.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{NetConfig, NetworkParams};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"RDNP";
pub const PARAMS_VERSION: u32 = 1;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn write_params(p: &NetworkParams, mut w: impl Write) -> Result<()> {
    w.write_all(&encode(p))?;
    Ok(())
}

pub(crate) fn encode(p: &NetworkParams) -> Vec<u8> {
    let cfg = p.config();
    let mut buf = Vec::with_capacity(40 + 8 * p.len());
    buf.extend_from_slice(PARAMS_MAGIC);
    buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cfg.trunk_layers as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.trunk_channels as u32).to_le_bytes());
    buf.extend_from_slice(&[cfg.shared_trunk as u8, 0, 0, 0]);
    buf.extend_from_slice(&cfg.init_seed.to_le_bytes());
    buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for v in p.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let sum = fnv1a(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Params(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes one parameter block from the front of `bytes`; returns it and the
/// number of bytes consumed.
pub(crate) fn decode(bytes: &[u8]) -> Result<(NetworkParams, usize)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != PARAMS_MAGIC {
        return Err(Error::Params("bad magic, not a parameter file".into()));
    }
    let version = c.u32("version")?;
    if version != PARAMS_VERSION {
        return Err(Error::Params(format!(
            "unsupported version {version}, expected {PARAMS_VERSION}"
        )));
    }
    let trunk_layers = c.u32("trunk_layers")? as usize;
    let trunk_channels = c.u32("trunk_channels")? as usize;
    let flags = c.take(4, "shared_trunk")?;
    let init_seed = c.u64("init_seed")?;
    let count = c.u64("parameter count")? as usize;
    let config = NetConfig {
        trunk_layers,
        trunk_channels,
        shared_trunk: flags[0] != 0,
        init_seed,
    };
    let raw = c.take(
        count
            .checked_mul(8)
            .ok_or_else(|| Error::Params("parameter count overflow".into()))?,
        "parameters",
    )?;
    let end = c.pos;
    let stored = c.u64("checksum")?;
    if stored != fnv1a(&bytes[..end]) {
        return Err(Error::Params("checksum mismatch, file is corrupt".into()));
    }
    let values = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((NetworkParams::from_values(config, values)?, c.pos))
}

pub fn read_params(mut r: impl Read) -> Result<NetworkParams> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let (p, used) = decode(&buf)?;
    if used != buf.len() {
        return Err(Error::Params(format!(
            "{} unexpected trailing bytes",
            buf.len() - used
        )));
    }
    Ok(p)
}

pub fn save_params(p: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(p)).map_err(|e| Error::io(path, e))
}

/// Loads a parameter file or the parameter block of a training checkpoint.
pub fn load_params(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (p, used) = decode(&bytes)?;
    let rest = &bytes[used..];
    if !rest.is_empty() && !rest.starts_with(crate::train::CHECKPOINT_MAGIC) {
        return Err(Error::Params(format!(
            "{} unexpected trailing bytes",
            rest.len()
        )));
    }
    Ok(p)
}

/// Like [`load_params`], but fails with the names of all fields whose stored
/// value differs from `expected`.
pub fn load_params_expecting(
    path: impl AsRef<Path>,
    expected: &NetConfig,
) -> Result<NetworkParams> {
    let p = load_params(path)?;
    let diff = p.config().mismatches(expected);
    if !diff.is_empty() {
        return Err(Error::Params(format!(
            "configuration mismatch in fields: {}",
            diff.join(", ")
        )));
    }
    Ok(p)
}
