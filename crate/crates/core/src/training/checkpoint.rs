//! Checkpoint files.
//!
//! ```text
//! "DRCK" | version u8 | config_len u32 | config text (key=value lines)
//! n_encoders u32 | n_decoders u32 | param sets...
//! param set: arch_hash u64 | n_tensors u32 | tensors...
//! tensor:    name_len u32 | name | rank u8 | dims u32... | values f32...
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::config::{Regime, TrainConfig};
use super::train::TrainedSystem;
use crate::autodiff::Tensor;
use crate::codec::{DecoderParams, EncoderParams, ParamSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DRCK";
pub const CHECKPOINT_VERSION: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn write_set(out: &mut Vec<u8>, p: &ParamSet) {
    out.extend_from_slice(&p.arch_hash.to_le_bytes());
    put_u32(out, p.tensors.len());
    for (name, t) in &p.tensors {
        put_u32(out, name.len());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            put_u32(out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn to_bytes(system: &TrainedSystem) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    let text = system.config.to_text();
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, system.encoders.len());
    put_u32(&mut out, system.decoders.len());
    for e in &system.encoders {
        write_set(&mut out, &e.0);
    }
    for d in &system.decoders {
        write_set(&mut out, &d.0);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated while reading {what} at byte {} ({} bytes total)",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn set(&mut self) -> Result<ParamSet> {
        let arch_hash = self.u64("architecture hash")?;
        let n = self.u32("tensor count")?;
        let mut tensors = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let len = self.u32("tensor name length")?;
            let name = std::str::from_utf8(self.take(len, "tensor name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = self.u8("tensor rank")? as usize;
            let dims = (0..rank)
                .map(|_| self.u32("tensor dims"))
                .collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| {
                    Error::Format(format!("tensor {name:?} has an absurd shape {dims:?}"))
                })?;
            let bytes = self.take(count.saturating_mul(4), "tensor values")?;
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(dims, values)
                .map_err(|e| Error::Format(format!("tensor {name:?}: {e}")))?;
            tensors.push((name, t));
        }
        Ok(ParamSet { arch_hash, tensors })
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<TrainedSystem> {
    if buf.len() < 4 || &buf[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(
            "not a checkpoint file (magic bytes are not DRCK)".into(),
        ));
    }
    let mut r = Reader { buf, pos: 4 };
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = r.u32("config length")?;
    let text = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
    let config = TrainConfig::from_text(text)?;
    let (ne, nd) = (r.u32("encoder count")?, r.u32("decoder count")?);
    let encoders = (0..ne)
        .map(|_| r.set().map(EncoderParams))
        .collect::<Result<Vec<_>>>()?;
    let decoders = (0..nd)
        .map(|_| r.set().map(DecoderParams))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} unexpected bytes after the last tensor",
            buf.len() - r.pos
        )));
    }
    let system = TrainedSystem {
        config,
        encoders,
        decoders,
        history: Vec::new(),
    };
    system.validate()?;
    Ok(system)
}

pub fn save(system: &TrainedSystem, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(system)).map_err(|e| Error::io(path, e))
}

pub fn restore(path: &Path) -> Result<TrainedSystem> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

/// [`restore`], refusing checkpoints of any other regime.
pub fn restore_as(path: &Path, regime: Regime) -> Result<TrainedSystem> {
    let s = restore(path)?;
    if s.regime() != regime {
        return Err(Error::ModelMismatch(format!(
            "{} holds a {} system, not {regime}",
            path.display(),
            s.regime()
        )));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ArchConfig;
    use crate::training::init_system;

    fn system(regime: Regime) -> TrainedSystem {
        init_system(&TrainConfig {
            regime,
            m: 2,
            arch: ArchConfig {
                encoder_conv: 4,
                encoder_lstm: [4, 4],
                decoder_conv: 4,
                decoder_lstm: [4, 4, 4],
                iterations: 2,
                ..ArchConfig::default()
            },
            ..TrainConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        for regime in Regime::ALL {
            let s = system(regime);
            let back = from_bytes(&to_bytes(&s)).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn file_round_trip_and_regime_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("joint.ckpt");
        save(&system(Regime::Joint), &path).unwrap();
        assert!(restore_as(&path, Regime::Joint).is_ok());
        let err = restore_as(&path, Regime::Distributed).unwrap_err();
        assert!(matches!(err, Error::ModelMismatch(_)), "{err}");
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = to_bytes(&system(Regime::Separate));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        for cut in [3, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(from_bytes(&long).is_err());
        let mut ver = bytes;
        ver[4] = 99;
        assert!(from_bytes(&ver)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }
}
