//! Fixtures shared by the benchmarks.

use drasic::autodiff::Tensor;
use drasic::codec::{ArchConfig, DecoderParams, EncoderParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic pseudo-images in `[0, 1]`.
pub fn images(n: usize, side: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 1, side, side], |_| rng.gen_range(0.0..1.0))
}

pub fn params(arch: &ArchConfig, seed: u64) -> (EncoderParams, DecoderParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = EncoderParams::init(arch, &mut rng).expect("valid arch");
    let dec = DecoderParams::init(arch, &mut rng).expect("valid arch");
    (enc, dec)
}
