use sha2::{Digest, Sha256};

use crate::autodiff::{ConvLstmSpec, ConvSpec};
use crate::error::{Error, Result};

/// Spatial reduction between image and code grids.
pub const DOWNSAMPLE: usize = 8;

/// Layer widths of the symmetric recurrent autoencoder.
///
/// Encoder: `conv 3x3/2 -> ConvLSTM /2 -> ConvLSTM /2 -> conv 1x1 -> tanh`.
/// Decoder: `conv 1x1 -> 3 x (ConvLSTM, depth-to-space x2) -> conv 1x1 -> tanh`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub image_channels: usize,
    pub encoder_conv: usize,
    pub encoder_lstm: [usize; 2],
    /// Code channels per iteration (bits per code-grid cell).
    pub code_bits: usize,
    pub decoder_conv: usize,
    /// Hidden widths of the decoder ConvLSTMs; each must be divisible by 4
    /// for the depth-to-space that follows it.
    pub decoder_lstm: [usize; 3],
    /// Kernel of the hidden-to-gates convolutions.
    pub hidden_kernel: usize,
    /// Residual iterations per image.
    pub iterations: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_channels: 1,
            encoder_conv: 32,
            encoder_lstm: [64, 96],
            code_bits: 2,
            decoder_conv: 96,
            decoder_lstm: [64, 64, 64],
            hidden_kernel: 3,
            iterations: 16,
        }
    }
}

impl ArchConfig {
    /// Narrow variant for single-core CPU runs: 8 iterations, 1x1 hidden
    /// kernels, and decoder layers sized for small canvases.
    pub fn desk() -> Self {
        ArchConfig {
            image_channels: 1,
            encoder_conv: 8,
            encoder_lstm: [16, 16],
            code_bits: 2,
            decoder_conv: 16,
            decoder_lstm: [16, 16, 8],
            hidden_kernel: 1,
            iterations: 8,
        }
    }
}

/// All convolution geometries derived from an [`ArchConfig`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpecs {
    pub encoder_conv: ConvSpec,
    pub encoder_lstm: [ConvLstmSpec; 2],
    pub bottleneck: ConvSpec,
    pub decoder_conv: ConvSpec,
    pub decoder_lstm: [ConvLstmSpec; 3],
    pub decoder_out: ConvSpec,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.image_channels,
            self.encoder_conv,
            self.encoder_lstm[0],
            self.encoder_lstm[1],
            self.code_bits,
            self.decoder_conv,
            self.iterations,
        ];
        if widths.contains(&0) || self.decoder_lstm.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "architecture widths and iteration count must be positive: {self:?}"
            )));
        }
        if let Some(w) = self.decoder_lstm.iter().find(|&&w| w % 4 != 0) {
            return Err(Error::InvalidArgument(format!(
                "decoder ConvLSTM width {w} is not divisible by 4 (needed for depth-to-space)"
            )));
        }
        if self.hidden_kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden kernel must be odd, got {}",
                self.hidden_kernel
            )));
        }
        Ok(())
    }

    pub fn layer_specs(&self) -> Result<LayerSpecs> {
        self.validate()?;
        let hk = self.hidden_kernel;
        let [e0, e1] = self.encoder_lstm;
        let [d0, d1, d2] = self.decoder_lstm;
        Ok(LayerSpecs {
            encoder_conv: ConvSpec::new(self.image_channels, self.encoder_conv, 3, 2, 1)?,
            encoder_lstm: [
                ConvLstmSpec::new(self.encoder_conv, e0, 3, 2, hk)?,
                ConvLstmSpec::new(e0, e1, 3, 2, hk)?,
            ],
            bottleneck: ConvSpec::new(e1, self.code_bits, 1, 1, 0)?,
            decoder_conv: ConvSpec::new(self.code_bits, self.decoder_conv, 1, 1, 0)?,
            decoder_lstm: [
                ConvLstmSpec::new(self.decoder_conv, d0, 3, 1, hk)?,
                ConvLstmSpec::new(d0 / 4, d1, 3, 1, hk)?,
                ConvLstmSpec::new(d1 / 4, d2, 3, 1, hk)?,
            ],
            decoder_out: ConvSpec::new(d2 / 4, self.image_channels, 1, 1, 0)?,
        })
    }

    /// Code bits emitted per image per iteration.
    pub fn bits_per_iteration(&self, height: usize, width: usize) -> usize {
        self.code_bits * (height / DOWNSAMPLE) * (width / DOWNSAMPLE)
    }

    /// Canonical `key=value` lines; the hash and checkpoints are built on it.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("image_channels".into(), self.image_channels.to_string()),
            ("encoder_conv".into(), self.encoder_conv.to_string()),
            ("encoder_lstm".into(), list(&self.encoder_lstm)),
            ("code_bits".into(), self.code_bits.to_string()),
            ("decoder_conv".into(), self.decoder_conv.to_string()),
            ("decoder_lstm".into(), list(&self.decoder_lstm)),
            ("hidden_kernel".into(), self.hidden_kernel.to_string()),
            ("iterations".into(), self.iterations.to_string()),
        ]
    }

    /// Applies one `key=value` setting; returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = |v: &str| -> Result<usize> {
            v.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("{key}: expected an integer, got {v:?}"))
            })
        };
        let list = |v: &str, n: usize| -> Result<Vec<usize>> {
            let xs = v.split(',').map(num).collect::<Result<Vec<_>>>()?;
            if xs.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{key}: expected {n} comma-separated integers, got {v:?}"
                )));
            }
            Ok(xs)
        };
        match key {
            "image_channels" => self.image_channels = num(value)?,
            "encoder_conv" => self.encoder_conv = num(value)?,
            "encoder_lstm" => {
                let v = list(value, 2)?;
                self.encoder_lstm = [v[0], v[1]];
            }
            "code_bits" => self.code_bits = num(value)?,
            "decoder_conv" => self.decoder_conv = num(value)?,
            "decoder_lstm" => {
                let v = list(value, 3)?;
                self.decoder_lstm = [v[0], v[1], v[2]];
            }
            "hidden_kernel" => self.hidden_kernel = num(value)?,
            "iterations" => self.iterations = num(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Fingerprint of the layer geometry (not of parameter values).
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (k, v) in self.to_kv() {
            if k == "iterations" {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let a = ArchConfig::default();
        let s = a.layer_specs().unwrap();
        assert_eq!(s.encoder_conv.output_size(32).unwrap(), 16);
        assert_eq!(s.encoder_lstm[0].input.output_size(16).unwrap(), 8);
        assert_eq!(s.encoder_lstm[1].input.output_size(8).unwrap(), 4);
        assert_eq!(s.decoder_out.in_channels, 16);
        assert_eq!(a.bits_per_iteration(32, 32), 32);
    }

    #[test]
    fn kv_round_trip() {
        let mut a = ArchConfig::default();
        a.decoder_lstm = [16, 16, 8];
        let mut b = ArchConfig::default();
        for (k, v) in a.to_kv() {
            assert!(b.set(&k, &v).unwrap());
        }
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), ArchConfig::default().hash());
        assert!(!b.set("nope", "1").unwrap());
    }

    #[test]
    fn rejects_indivisible_decoder_width() {
        let a = ArchConfig {
            decoder_lstm: [64, 62, 64],
            ..ArchConfig::default()
        };
        assert!(a.validate().is_err());
    }
}
