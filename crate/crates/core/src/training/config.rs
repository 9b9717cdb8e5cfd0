use std::fmt;
use std::str::FromStr;

use crate::codec::ArchConfig;
use crate::error::{Error, Result};

/// How encoders and decoders are shared across data sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    /// One encoder and one decoder trained on the pooled sources.
    Joint,
    /// One encoder per source, one decoder shared by all of them.
    Distributed,
    /// One independent encoder/decoder pair per source.
    Separate,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Joint, Regime::Distributed, Regime::Separate];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Joint => "joint",
            Regime::Distributed => "distributed",
            Regime::Separate => "separate",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "joint" => Ok(Regime::Joint),
            "distributed" => Ok(Regime::Distributed),
            "separate" => Ok(Regime::Separate),
            other => Err(Error::InvalidArgument(format!(
                "unknown regime {other:?} (expected joint, distributed or separate)"
            ))),
        }
    }
}

/// Per-iteration distortion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    L1,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::L1 => "l1",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "l1" | "mae" => Ok(LossKind::L1),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss {other:?} (expected mse or l1)"
            ))),
        }
    }
}

/// Everything that determines a training run. `arch.iterations` is `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Number of data sources.
    pub m: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Keep at most this many training images per source (0 keeps all).
    pub limit: usize,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Distributed,
            m: 4,
            batch_size: 100,
            epochs: 200,
            base_lr: 0.001,
            decay_factor: 0.5,
            decay_every: 50,
            seed: 0,
            loss_kind: LossKind::Mse,
            limit: 0,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn iterations(&self) -> usize {
        self.arch.iterations
    }

    /// Encoder count for this regime (`1` for joint).
    pub fn num_encoders(&self) -> usize {
        match self.regime {
            Regime::Joint => 1,
            _ => self.m,
        }
    }

    pub fn num_decoders(&self) -> usize {
        match self.regime {
            Regime::Separate => self.m,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 {
            return bad("batch_size, epochs and decay_every must be positive".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0) {
            return bad(format!(
                "decay_factor must be positive, got {}",
                self.decay_factor
            ));
        }
        Ok(())
    }

    /// Flat `key=value` lines, training keys first, then architecture keys.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("regime".into(), self.regime.to_string()),
            ("m".into(), self.m.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("base_lr".into(), self.base_lr.to_string()),
            ("decay_factor".into(), self.decay_factor.to_string()),
            ("decay_every".into(), self.decay_every.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("loss_kind".into(), self.loss_kind.as_str().into()),
            ("limit".into(), self.limit.to_string()),
        ];
        kv.extend(self.arch.to_kv());
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "regime" => self.regime = value.parse()?,
            "m" => self.m = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "decay_factor" => self.decay_factor = parse(key, value)?,
            "decay_every" => self.decay_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "loss_kind" => self.loss_kind = value.parse()?,
            "limit" => self.limit = parse(key, value)?,
            _ => {
                if !self.arch.set(key, value)? {
                    return Err(Error::InvalidArgument(format!(
                        "unknown config key {key:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "config line {}: expected key=value, got {line:?}",
                    no + 1
                ))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }
}

/// Learning rate for a 0-based epoch: `base_lr * decay_factor^(epoch / decay_every)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.base_lr
        * config
            .decay_factor
            .powi((epoch / config.decay_every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 100);
        assert_eq!(c.epochs, 200);
        assert_eq!(c.iterations(), 16);
        assert_eq!(c.base_lr, 0.001);
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 0.001);
        assert_eq!(lr_at(49, &c), 0.001);
        assert_eq!(lr_at(50, &c), 0.0005);
        assert!((lr_at(199, &c) - 0.000125).abs() < 1e-15);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.regime = Regime::Separate;
        c.seed = 9;
        c.arch.decoder_lstm = [8, 8, 4];
        c.limit = 2000;
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(TrainConfig::from_text("bogus=1").is_err());
        assert!(TrainConfig::from_text("epochs").is_err());
        assert!(TrainConfig::from_text("epochs=two").is_err());
        assert!(TrainConfig::from_text("regime=federated").is_err());
        assert!(TrainConfig::from_text("batch_size=0").is_err());
        let c = TrainConfig::from_text("# note\n\nepochs = 3\n").unwrap();
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn sharing_counts() {
        let mut c = TrainConfig {
            m: 4,
            ..Default::default()
        };
        c.regime = Regime::Joint;
        assert_eq!((c.num_encoders(), c.num_decoders()), (1, 1));
        c.regime = Regime::Distributed;
        assert_eq!((c.num_encoders(), c.num_decoders()), (4, 1));
        c.regime = Regime::Separate;
        assert_eq!((c.num_encoders(), c.num_decoders()), (4, 4));
    }
}
