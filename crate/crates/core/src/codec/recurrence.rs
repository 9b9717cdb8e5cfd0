//! Residual recurrence: each iteration codes what the previous iterations
//! failed to reconstruct.
//!
//! ```text
//! x_1 = normalize(x)
//! b_t = binarize(f(x_t)),  x̂_t = g(b_t),  x_{t+1} = x_t - x̂_t
//! recon_t = x̂_1 + ... + x̂_t
//! ```
//!
//! Inputs and decoder outputs live on a `2^-16` fixed-point grid, so every sum
//! and difference above is exact in `f32` and `x_1 = recon_t + x_{t+1}` holds
//! bit-for-bit.

use rand::Rng;

use super::arch::ArchConfig;
use super::binarize::{binarize, BinarizeMode, CodeTensor};
use super::model::{check_image_shape, decode_step, encode_step, RecurrentState};
use super::params::{DecoderParams, DecoderVars, EncoderParams, EncoderVars};
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Residual iterations used unless configured otherwise.
pub const DEFAULT_ITERATIONS: usize = 16;

/// Fractional bits of the fixed-point grid for inputs and reconstructions.
pub const GRID_BITS: i32 = 16;

/// Images per graph when compressing without gradients.
const INFERENCE_CHUNK: usize = 100;

pub fn snap_to_grid<F: Scalar>(t: &Tensor<F>) -> Tensor<F> {
    let scale = F::lit((GRID_BITS as f64).exp2());
    t.map(|v| (v * scale).round() / scale)
}

/// Maps pixels in `[0, 1]` to the centred coding domain `[-0.5, 0.5]`.
pub fn normalize<F: Scalar>(pixels: &Tensor<F>) -> Tensor<F> {
    let half = F::lit(0.5);
    snap_to_grid(&pixels.map(|v| v - half))
}

/// Maps a reconstruction from the coding domain back to pixels, clipped to
/// `[0, 1]`.
pub fn to_pixels<F: Scalar>(recon: &Tensor<F>) -> Tensor<F> {
    let half = F::lit(0.5);
    recon.map(|v| (v + half).max(F::zero()).min(F::one()))
}

/// Graph handles produced by unrolling one source.
#[derive(Clone, Debug)]
pub struct SourceUnroll {
    pub codes: Vec<Var>,
    /// Cumulative reconstructions `recon_1..recon_T`.
    pub partials: Vec<Var>,
    /// `x_1..x_{T+1}`.
    pub residuals: Vec<Var>,
}

/// Unrolls the recurrence for one or more sources that share a decoder.
///
/// Source `m` is encoded by `encoders[m]`; each iteration's codes from all
/// sources are concatenated along the batch axis and decoded in one pass.
/// `inputs` are normalized images already on the graph.
#[allow(clippy::too_many_arguments)]
pub fn unroll<F: Scalar>(
    g: &mut Graph<F>,
    arch: &ArchConfig,
    inputs: &[Var],
    encoders: &[&EncoderVars],
    decoder: &DecoderVars,
    iterations: usize,
    mode: BinarizeMode,
    rng: &mut impl Rng,
) -> Result<Vec<SourceUnroll>> {
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "iteration count must be at least 1".into(),
        ));
    }
    if inputs.is_empty() || inputs.len() != encoders.len() {
        return Err(Error::InvalidArgument(format!(
            "{} input batches for {} encoders",
            inputs.len(),
            encoders.len()
        )));
    }
    let mut sizes = Vec::with_capacity(inputs.len());
    let mut hw = None;
    for &x in inputs {
        let [n, _, h, w] = g.value(x).dims4()?;
        check_image_shape(arch, g.value(x).shape())?;
        if *hw.get_or_insert((h, w)) != (h, w) {
            return Err(Error::shape(
                "unroll",
                format!(
                    "sources disagree on image size: {:?} vs {:?}",
                    hw.unwrap(),
                    (h, w)
                ),
            ));
        }
        sizes.push(n);
    }
    let (h, w) = hw.unwrap();
    let total: usize = sizes.iter().sum();

    let mut enc_states: Vec<RecurrentState> = sizes
        .iter()
        .map(|&n| RecurrentState::encoder(g, arch, n, h, w))
        .collect();
    let mut dec_state = RecurrentState::decoder(g, arch, total, h, w);
    let mut out: Vec<SourceUnroll> = inputs
        .iter()
        .map(|&x| SourceUnroll {
            codes: Vec::with_capacity(iterations),
            partials: Vec::with_capacity(iterations),
            residuals: vec![x],
        })
        .collect();

    for _ in 0..iterations {
        let mut codes = Vec::with_capacity(inputs.len());
        for (m, enc) in encoders.iter().enumerate() {
            let x_t = *out[m].residuals.last().unwrap();
            let (z, s) = encode_step(g, arch, x_t, &enc_states[m], enc)?;
            enc_states[m] = s;
            let b = binarize(g, z, mode, rng)?;
            out[m].codes.push(b);
            codes.push(b);
        }
        let joint = if codes.len() == 1 {
            codes[0]
        } else {
            g.concat_batch(&codes)?
        };
        let (decoded, s) = decode_step(g, arch, joint, &dec_state, decoder)?;
        dec_state = s;
        let snapped = snap_to_grid(g.value(decoded));
        let decoded = g.straight_through(decoded, snapped)?;

        let mut offset = 0;
        for (m, &n) in sizes.iter().enumerate() {
            let x_hat = if sizes.len() == 1 {
                decoded
            } else {
                g.slice_batch(decoded, offset, n)?
            };
            offset += n;
            let src = &mut out[m];
            let partial = match src.partials.last() {
                Some(&p) => g.add(p, x_hat)?,
                None => x_hat,
            };
            src.partials.push(partial);
            let residual = g.sub(*src.residuals.last().unwrap(), x_hat)?;
            src.residuals.push(residual);
        }
    }
    Ok(out)
}

/// Everything one compression run produced, in the coding domain.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionTrace {
    /// One code block per iteration.
    pub codes: Vec<CodeTensor>,
    /// `recon_t` for `t = 1..=T`.
    pub partial_recons: Vec<Tensor<f32>>,
    /// `x_t` for `t = 1..=T+1`; `residuals[0]` is the normalized input.
    pub residuals: Vec<Tensor<f32>>,
}

impl CompressionTrace {
    pub fn iterations(&self) -> usize {
        self.codes.len()
    }

    pub fn input(&self) -> &Tensor<f32> {
        &self.residuals[0]
    }

    /// Pixel-domain reconstruction after `t` iterations (1-based).
    pub fn pixels_at(&self, t: usize) -> Tensor<f32> {
        to_pixels(&self.partial_recons[t - 1])
    }

    fn append(&mut self, other: CompressionTrace) -> Result<()> {
        for (a, b) in self.codes.iter_mut().zip(&other.codes) {
            let merged = Tensor::concat_batch(&[&a.to_tensor::<f32>(), &b.to_tensor()])?;
            *a = CodeTensor::from_tensor(a.iteration, &merged)?;
        }
        for (a, b) in self.partial_recons.iter_mut().zip(&other.partial_recons) {
            *a = Tensor::concat_batch(&[a, b])?;
        }
        for (a, b) in self.residuals.iter_mut().zip(&other.residuals) {
            *a = Tensor::concat_batch(&[a, b])?;
        }
        Ok(())
    }
}

/// Compresses pixel images (`[n, c, h, w]` in `[0, 1]`) for `iterations`
/// steps. Encoder and decoder states persist across iterations.
pub fn compress(
    pixels: &Tensor<f32>,
    iterations: usize,
    arch: &ArchConfig,
    encoder: &EncoderParams,
    decoder: &DecoderParams,
    mode: BinarizeMode,
    rng: &mut impl Rng,
) -> Result<CompressionTrace> {
    check_image_shape(arch, pixels.shape())?;
    let n = pixels.shape()[0];
    let mut trace: Option<CompressionTrace> = None;
    for start in (0..n).step_by(INFERENCE_CHUNK) {
        let len = INFERENCE_CHUNK.min(n - start);
        let chunk = normalize(&pixels.slice_batch(start, len)?);
        let mut g = Graph::new();
        let enc = EncoderVars::bind(&mut g, encoder, arch, false)?;
        let dec = DecoderVars::bind(&mut g, decoder, arch, false)?;
        let x = g.constant(chunk);
        let u = unroll(&mut g, arch, &[x], &[&enc], &dec, iterations, mode, rng)?.remove(0);
        let part = CompressionTrace {
            codes: u
                .codes
                .iter()
                .enumerate()
                .map(|(t, &c)| CodeTensor::from_tensor(t + 1, g.value(c)))
                .collect::<Result<_>>()?,
            partial_recons: u.partials.iter().map(|&p| g.value(p).clone()).collect(),
            residuals: u.residuals.iter().map(|&r| g.value(r).clone()).collect(),
        };
        match trace.as_mut() {
            None => trace = Some(part),
            Some(t) => t.append(part)?,
        }
    }
    trace.ok_or_else(|| Error::InvalidArgument("cannot compress an empty batch".into()))
}

/// Decodes a contiguous prefix `codes[0..t]` (iterations `1..=t`) into the
/// coding-domain reconstruction `recon_t`, replaying the decoder from a zero
/// state. Needs nothing but the codes of this source.
pub fn reconstruct_prefix(
    codes: &[CodeTensor],
    arch: &ArchConfig,
    decoder: &DecoderParams,
) -> Result<Tensor<f32>> {
    let first = codes
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one code block".into()))?;
    for (i, c) in codes.iter().enumerate() {
        if c.iteration != i + 1 {
            return Err(Error::InvalidArgument(format!(
                "code blocks must be the prefix 1..={}; position {} holds iteration {}",
                codes.len(),
                i + 1,
                c.iteration
            )));
        }
        if c.shape() != first.shape() {
            return Err(Error::shape(
                "reconstruct_prefix",
                format!(
                    "block {} is {:?}, block 1 is {:?}",
                    i + 1,
                    c.shape(),
                    first.shape()
                ),
            ));
        }
    }
    let [n, c, hc, wc] = first.shape();
    if c != arch.code_bits {
        return Err(Error::shape(
            "reconstruct_prefix",
            format!(
                "codes have {c} channels, decoder expects {}",
                arch.code_bits
            ),
        ));
    }
    let (h, w) = (hc * super::arch::DOWNSAMPLE, wc * super::arch::DOWNSAMPLE);
    let mut parts = Vec::new();
    for start in (0..n).step_by(INFERENCE_CHUNK) {
        let len = INFERENCE_CHUNK.min(n - start);
        let mut g = Graph::<f32>::new();
        let dec = DecoderVars::bind(&mut g, decoder, arch, false)?;
        let mut state = RecurrentState::decoder(&mut g, arch, len, h, w);
        let mut partial: Option<Var> = None;
        for block in codes {
            let b = g.constant(block.slice_batch(start, len)?.to_tensor());
            let (decoded, s) = decode_step(&mut g, arch, b, &state, &dec)?;
            state = s;
            let snapped = snap_to_grid(g.value(decoded));
            let x_hat = g.straight_through(decoded, snapped)?;
            partial = Some(match partial {
                Some(p) => g.add(p, x_hat)?,
                None => x_hat,
            });
        }
        parts.push(g.value(partial.unwrap()).clone());
    }
    Tensor::concat_batch(&parts.iter().collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            encoder_conv: 4,
            encoder_lstm: [4, 4],
            decoder_conv: 4,
            decoder_lstm: [4, 8, 4],
            iterations: 4,
            ..ArchConfig::default()
        }
    }

    fn pixels(n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[n, 1, 16, 8], |_| rng.gen::<u8>() as f32 / 255.0)
    }

    #[test]
    fn grid_values_are_exact() {
        let t = Tensor::<f32>::new(vec![3], vec![0.123_456_7, -0.5, 0.999_999]).unwrap();
        let s = snap_to_grid(&t);
        for v in s.data() {
            assert_eq!(*v * 65536.0, (*v * 65536.0).round());
        }
    }

    #[test]
    fn zero_decoder_reconstructs_zero() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderParams::init(&arch, &mut rng).unwrap();
        let dec = DecoderParams::zeros(&arch).unwrap();
        let trace = compress(
            &pixels(2, 0),
            3,
            &arch,
            &enc,
            &dec,
            BinarizeMode::Deterministic,
            &mut rng,
        )
        .unwrap();
        assert!(trace
            .partial_recons
            .iter()
            .all(|p| p.data().iter().all(|&v| v == 0.0)));
        assert_eq!(trace.residuals[3], trace.residuals[0]);
    }

    #[test]
    fn trace_invariants_hold_bit_exactly() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = EncoderParams::init(&arch, &mut rng).unwrap();
        let dec = DecoderParams::init(&arch, &mut rng).unwrap();
        let trace = compress(
            &pixels(3, 1),
            5,
            &arch,
            &enc,
            &dec,
            BinarizeMode::Stochastic,
            &mut rng,
        )
        .unwrap();
        assert_eq!(trace.codes.len(), 5);
        assert_eq!(trace.residuals.len(), 6);
        let x1 = trace.input();
        for t in 0..5 {
            let p = &trace.partial_recons[t];
            let back: Vec<f32> = p
                .data()
                .iter()
                .zip(trace.residuals[t + 1].data())
                .map(|(a, b)| a + b)
                .collect();
            assert_eq!(back.as_slice(), x1.data(), "t = {}", t + 1);
        }
    }

    #[test]
    fn rejects_indivisible_images() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = EncoderParams::init(&arch, &mut rng).unwrap();
        let dec = DecoderParams::init(&arch, &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 1, 12, 8]);
        let err = compress(
            &x,
            2,
            &arch,
            &enc,
            &dec,
            BinarizeMode::Deterministic,
            &mut rng,
        )
        .unwrap_err();
        assert!(err.to_string().contains("pad"), "{err}");
        assert!(compress(
            &pixels(1, 0),
            0,
            &arch,
            &enc,
            &dec,
            BinarizeMode::Deterministic,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn prefix_must_be_contiguous() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = EncoderParams::init(&arch, &mut rng).unwrap();
        let dec = DecoderParams::init(&arch, &mut rng).unwrap();
        let trace = compress(
            &pixels(2, 2),
            3,
            &arch,
            &enc,
            &dec,
            BinarizeMode::Deterministic,
            &mut rng,
        )
        .unwrap();
        let skipped = vec![trace.codes[0].clone(), trace.codes[2].clone()];
        assert!(reconstruct_prefix(&skipped, &arch, &dec).is_err());
        assert!(reconstruct_prefix(&[], &arch, &dec).is_err());
        let r = reconstruct_prefix(&trace.codes[..2], &arch, &dec).unwrap();
        assert_eq!(r, trace.partial_recons[1]);
    }
}
