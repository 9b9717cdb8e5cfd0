use rand::Rng;
use sha2::{Digest, Sha256};

use super::arch::ArchConfig;
use crate::autodiff::{ConvLstmSpec, ConvLstmVars, ConvSpec, Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Named parameter tensors of one network half, tagged with the
/// architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F = f32> {
    pub arch_hash: u64,
    pub tensors: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::ModelMismatch(format!("missing parameter {name:?}")))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|(_, t)| t.is_finite())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        ParamSet {
            arch_hash: self.arch_hash,
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    /// First 8 bytes (LE) of a SHA-256 over the architecture hash, names,
    /// shapes and value bits. Streams carry it to pin their decoder.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.arch_hash.to_le_bytes());
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_f64().unwrap_or(f64::NAN).to_bits().to_le_bytes());
            }
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    /// Same names and shapes, every value zero.
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            arch_hash: self.arch_hash,
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Puts every tensor on `g`; handles come back in storage order.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|(_, t)| g.leaf(t.clone(), trainable))
            .collect()
    }
}

fn layout_conv(
    out: &mut Vec<(String, Vec<usize>, usize)>,
    name: &str,
    spec: &ConvSpec,
    bias: bool,
) {
    out.push((
        format!("{name}.weight"),
        spec.weight_shape().to_vec(),
        spec.fan_in(),
    ));
    if bias {
        out.push((format!("{name}.bias"), vec![spec.out_channels], 0));
    }
}

fn layout_lstm(out: &mut Vec<(String, Vec<usize>, usize)>, name: &str, spec: &ConvLstmSpec) {
    layout_conv(out, &format!("{name}.input"), &spec.input, true);
    layout_conv(out, &format!("{name}.hidden"), &spec.hidden, false);
}

/// `(name, shape, fan_in)`; `fan_in == 0` marks a bias.
pub(crate) fn encoder_layout(arch: &ArchConfig) -> Result<Vec<(String, Vec<usize>, usize)>> {
    let s = arch.layer_specs()?;
    let mut out = Vec::new();
    layout_conv(&mut out, "conv", &s.encoder_conv, true);
    layout_lstm(&mut out, "lstm0", &s.encoder_lstm[0]);
    layout_lstm(&mut out, "lstm1", &s.encoder_lstm[1]);
    layout_conv(&mut out, "bottleneck", &s.bottleneck, true);
    Ok(out)
}

pub(crate) fn decoder_layout(arch: &ArchConfig) -> Result<Vec<(String, Vec<usize>, usize)>> {
    let s = arch.layer_specs()?;
    let mut out = Vec::new();
    layout_conv(&mut out, "conv", &s.decoder_conv, true);
    for (i, l) in s.decoder_lstm.iter().enumerate() {
        layout_lstm(&mut out, &format!("lstm{i}"), l);
    }
    layout_conv(&mut out, "out", &s.decoder_out, true);
    Ok(out)
}

fn build<F: Scalar>(
    arch: &ArchConfig,
    layout: Vec<(String, Vec<usize>, usize)>,
    mut init: impl FnMut(usize) -> F,
) -> ParamSet<F> {
    ParamSet {
        arch_hash: arch.hash(),
        tensors: layout
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let t = if fan_in == 0 {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::from_fn(&shape, |_| init(fan_in))
                };
                (name, t)
            })
            .collect(),
    }
}

fn uniform_init<F: Scalar>(rng: &mut impl Rng) -> impl FnMut(usize) -> F + '_ {
    move |fan_in| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        F::lit(rng.gen_range(-bound..bound))
    }
}

fn check_layout<F: Scalar>(
    p: &ParamSet<F>,
    arch: &ArchConfig,
    layout: &[(String, Vec<usize>, usize)],
    what: &str,
) -> Result<()> {
    if p.arch_hash != arch.hash() {
        return Err(Error::ModelMismatch(format!(
            "{what} parameters belong to architecture {:016x}, expected {:016x}",
            p.arch_hash,
            arch.hash()
        )));
    }
    if p.tensors.len() != layout.len() {
        return Err(Error::ModelMismatch(format!(
            "{what} has {} tensors, architecture needs {}",
            p.tensors.len(),
            layout.len()
        )));
    }
    for ((name, t), (want, shape, _)) in p.tensors.iter().zip(layout) {
        if name != want || t.shape() != shape.as_slice() {
            return Err(Error::ModelMismatch(format!(
                "{what} tensor {name:?} {:?} does not match expected {want:?} {shape:?}",
                t.shape()
            )));
        }
    }
    if !p.is_finite() {
        return Err(Error::NonFinite(format!(
            "{what} parameters contain NaN or infinity"
        )));
    }
    Ok(())
}

/// Encoder parameters (one per data source).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F = f32>(pub ParamSet<F>);

/// Decoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<F = f32>(pub ParamSet<F>);

impl<F: Scalar> EncoderParams<F> {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(arch: &ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(EncoderParams(build(
            arch,
            encoder_layout(arch)?,
            uniform_init(rng),
        )))
    }

    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        Ok(EncoderParams(build(arch, encoder_layout(arch)?, |_| {
            F::zero()
        })))
    }

    pub fn validate(&self, arch: &ArchConfig) -> Result<()> {
        check_layout(&self.0, arch, &encoder_layout(arch)?, "encoder")
    }
}

impl<F: Scalar> DecoderParams<F> {
    pub fn init(arch: &ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(DecoderParams(build(
            arch,
            decoder_layout(arch)?,
            uniform_init(rng),
        )))
    }

    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        Ok(DecoderParams(build(arch, decoder_layout(arch)?, |_| {
            F::zero()
        })))
    }

    pub fn validate(&self, arch: &ArchConfig) -> Result<()> {
        check_layout(&self.0, arch, &decoder_layout(arch)?, "decoder")
    }
}

/// Handles for a conv layer with bias.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
    pub spec: ConvSpec,
}

/// Encoder parameters bound to a graph.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub conv: ConvVars,
    pub lstm: [ConvLstmVars; 2],
    pub bottleneck: ConvVars,
    /// Every handle in [`ParamSet`] order, for gradient extraction.
    pub all: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct DecoderVars {
    pub conv: ConvVars,
    pub lstm: [ConvLstmVars; 3],
    pub out: ConvVars,
    pub all: Vec<Var>,
}

fn lstm_vars(v: &[Var], spec: ConvLstmSpec) -> ConvLstmVars {
    ConvLstmVars {
        input_weight: v[0],
        bias: v[1],
        hidden_weight: v[2],
        spec,
    }
}

impl EncoderVars {
    pub fn bind<F: Scalar>(
        g: &mut Graph<F>,
        p: &EncoderParams<F>,
        arch: &ArchConfig,
        trainable: bool,
    ) -> Result<Self> {
        p.validate(arch)?;
        Self::from_vars(p.0.bind(g, trainable), arch)
    }

    /// Wraps handles already on a graph, given in [`ParamSet`] order.
    pub fn from_vars(v: Vec<Var>, arch: &ArchConfig) -> Result<Self> {
        let s = arch.layer_specs()?;
        let expected = encoder_layout(arch)?.len();
        if v.len() != expected {
            return Err(Error::ModelMismatch(format!(
                "encoder needs {expected} tensors, got {}",
                v.len()
            )));
        }
        Ok(EncoderVars {
            conv: ConvVars {
                weight: v[0],
                bias: v[1],
                spec: s.encoder_conv,
            },
            lstm: [
                lstm_vars(&v[2..5], s.encoder_lstm[0]),
                lstm_vars(&v[5..8], s.encoder_lstm[1]),
            ],
            bottleneck: ConvVars {
                weight: v[8],
                bias: v[9],
                spec: s.bottleneck,
            },
            all: v,
        })
    }
}

impl DecoderVars {
    pub fn bind<F: Scalar>(
        g: &mut Graph<F>,
        p: &DecoderParams<F>,
        arch: &ArchConfig,
        trainable: bool,
    ) -> Result<Self> {
        p.validate(arch)?;
        Self::from_vars(p.0.bind(g, trainable), arch)
    }

    /// Wraps handles already on a graph, given in [`ParamSet`] order.
    pub fn from_vars(v: Vec<Var>, arch: &ArchConfig) -> Result<Self> {
        let s = arch.layer_specs()?;
        let expected = decoder_layout(arch)?.len();
        if v.len() != expected {
            return Err(Error::ModelMismatch(format!(
                "decoder needs {expected} tensors, got {}",
                v.len()
            )));
        }
        Ok(DecoderVars {
            conv: ConvVars {
                weight: v[0],
                bias: v[1],
                spec: s.decoder_conv,
            },
            lstm: [
                lstm_vars(&v[2..5], s.decoder_lstm[0]),
                lstm_vars(&v[5..8], s.decoder_lstm[1]),
                lstm_vars(&v[8..11], s.decoder_lstm[2]),
            ],
            out: ConvVars {
                weight: v[11],
                bias: v[12],
                spec: s.decoder_out,
            },
            all: v,
        })
    }
}
