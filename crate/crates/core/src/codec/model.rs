use super::arch::{ArchConfig, DOWNSAMPLE};
use super::params::{ConvVars, DecoderVars, EncoderVars};
use crate::autodiff::{convlstm_cell, ConvLstmState, Graph, Scalar, Var};
use crate::error::{Error, Result};

/// ConvLSTM states of one network half, outermost layer first.
#[derive(Clone, Debug)]
pub struct RecurrentState {
    pub layers: Vec<ConvLstmState>,
}

impl RecurrentState {
    /// Zero encoder state for `batch` images of `height x width`.
    pub fn encoder<F: Scalar>(
        g: &mut Graph<F>,
        arch: &ArchConfig,
        batch: usize,
        height: usize,
        width: usize,
    ) -> Self {
        let [e0, e1] = arch.encoder_lstm;
        RecurrentState {
            layers: vec![
                ConvLstmState::zeros(g, [batch, e0, height / 4, width / 4]),
                ConvLstmState::zeros(g, [batch, e1, height / 8, width / 8]),
            ],
        }
    }

    /// Zero decoder state for codes decoding to `height x width`.
    pub fn decoder<F: Scalar>(
        g: &mut Graph<F>,
        arch: &ArchConfig,
        batch: usize,
        height: usize,
        width: usize,
    ) -> Self {
        let [d0, d1, d2] = arch.decoder_lstm;
        RecurrentState {
            layers: vec![
                ConvLstmState::zeros(g, [batch, d0, height / 8, width / 8]),
                ConvLstmState::zeros(g, [batch, d1, height / 4, width / 4]),
                ConvLstmState::zeros(g, [batch, d2, height / 2, width / 2]),
            ],
        }
    }
}

fn conv_tanh<F: Scalar>(g: &mut Graph<F>, x: Var, c: &ConvVars) -> Result<Var> {
    let y = g.conv2d(x, c.weight, Some(c.bias), c.spec)?;
    Ok(g.tanh(y))
}

/// Checks that an image batch can be coded: right channel count and spatial
/// size divisible by 8.
pub fn check_image_shape(arch: &ArchConfig, shape: &[usize]) -> Result<()> {
    let &[_, c, h, w] = shape else {
        return Err(Error::shape(
            "encode_step",
            format!("expected 4 axes, got {shape:?}"),
        ));
    };
    if c != arch.image_channels {
        return Err(Error::shape(
            "encode_step",
            format!(
                "image has {c} channels, model expects {}",
                arch.image_channels
            ),
        ));
    }
    if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
        return Err(Error::shape(
            "encode_step",
            format!("spatial size {h}x{w} is not divisible by {DOWNSAMPLE}; pad the images first"),
        ));
    }
    Ok(())
}

/// `z_t = f(x_t)`: one encoder iteration. Output is in `(-1, 1)` with
/// `code_bits` channels on a grid 8x smaller than the input.
pub fn encode_step<F: Scalar>(
    g: &mut Graph<F>,
    arch: &ArchConfig,
    x: Var,
    state: &RecurrentState,
    enc: &EncoderVars,
) -> Result<(Var, RecurrentState)> {
    check_image_shape(arch, g.value(x).shape())?;
    let h = conv_tanh(g, x, &enc.conv)?;
    let (h, s0) = convlstm_cell(g, h, &state.layers[0], &enc.lstm[0])?;
    let (h, s1) = convlstm_cell(g, h, &state.layers[1], &enc.lstm[1])?;
    let z = conv_tanh(g, h, &enc.bottleneck)?;
    Ok((
        z,
        RecurrentState {
            layers: vec![s0, s1],
        },
    ))
}

/// `x̂_t = g(b_t)`: one decoder iteration, producing an image-shaped tensor
/// in `(-1, 1)`.
pub fn decode_step<F: Scalar>(
    g: &mut Graph<F>,
    arch: &ArchConfig,
    codes: Var,
    state: &RecurrentState,
    dec: &DecoderVars,
) -> Result<(Var, RecurrentState)> {
    let [_, c, _, _] = g.value(codes).dims4()?;
    if c != arch.code_bits {
        return Err(Error::shape(
            "decode_step",
            format!(
                "codes have {c} channels, decoder expects {}",
                arch.code_bits
            ),
        ));
    }
    let mut h = conv_tanh(g, codes, &dec.conv)?;
    let mut layers = Vec::with_capacity(3);
    for (lstm, s) in dec.lstm.iter().zip(&state.layers) {
        let (out, ns) = convlstm_cell(g, h, s, lstm)?;
        h = g.depth_to_space(out, 2)?;
        layers.push(ns);
    }
    let x = conv_tanh(g, h, &dec.out)?;
    Ok((x, RecurrentState { layers }))
}
