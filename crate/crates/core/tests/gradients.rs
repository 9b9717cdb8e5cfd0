use drasic::autodiff::{
    convlstm_cell, grad_check, ConvLstmSpec, ConvLstmState, ConvLstmVars, ConvSpec, Tensor,
};
use drasic::codec::{
    binarize, decode_step, encode_step, ArchConfig, BinarizeMode, DecoderParams, DecoderVars,
    EncoderParams, EncoderVars, RecurrentState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

#[test]
fn tanh_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[3, 4], &mut rng, 2.0);
    let r = grad_check(
        &[x],
        |g, v| {
            let t = g.tanh(v[0]);
            g.mul(t, t)
        },
        1e-6,
    )
    .unwrap();
    assert!(r.max_relative_error < TOL, "{r:?}");
}

#[test]
fn strided_conv_with_padding() {
    let spec = ConvSpec::new(3, 2, 3, 2, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = [
        random(&[1, 3, 6, 5], &mut rng, 1.0),
        random(&spec.weight_shape(), &mut rng, 0.5),
        random(&[2], &mut rng, 0.5),
    ];
    let r = grad_check(
        &inputs,
        |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), spec)?;
            g.mul(y, y)
        },
        1e-6,
    )
    .unwrap();
    assert!(r.max_relative_error < TOL, "{r:?}");
}

#[test]
fn convlstm_two_steps() {
    let spec = ConvLstmSpec::new(2, 3, 3, 1, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs = [
        random(&[1, 2, 3, 3], &mut rng, 1.0),
        random(&spec.input.weight_shape(), &mut rng, 0.5),
        random(&[12], &mut rng, 0.5),
        random(&spec.hidden.weight_shape(), &mut rng, 0.5),
    ];
    let r = grad_check(
        &inputs,
        |g, v| {
            let p = ConvLstmVars {
                input_weight: v[1],
                bias: v[2],
                hidden_weight: v[3],
                spec,
            };
            let zeros = Tensor::zeros(&[1, 3, 3, 3]);
            let s = ConvLstmState {
                hidden: g.constant(zeros.clone()),
                cell: g.constant(zeros),
            };
            let (_, s) = convlstm_cell(g, v[0], &s, &p)?;
            let (h, _) = convlstm_cell(g, v[0], &s, &p)?;
            g.mul(h, h)
        },
        1e-6,
    )
    .unwrap();
    assert!(r.max_relative_error < TOL, "{r:?}");
}

/// Encoder, relaxed binarizer (straight-through identity) and decoder for
/// one iteration, checked with respect to the input and every parameter.
#[test]
fn full_iteration_straight_through() {
    let arch = ArchConfig {
        encoder_conv: 2,
        encoder_lstm: [2, 2],
        code_bits: 2,
        decoder_conv: 2,
        decoder_lstm: [4, 4, 4],
        hidden_kernel: 1,
        iterations: 1,
        ..ArchConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let enc = EncoderParams::<f32>::init(&arch, &mut rng)
        .unwrap()
        .0
        .cast::<f64>();
    let dec = DecoderParams::<f32>::init(&arch, &mut rng)
        .unwrap()
        .0
        .cast::<f64>();
    let n_enc = enc.tensors.len();
    let mut inputs = vec![random(&[1, 1, 8, 8], &mut rng, 0.5)];
    inputs.extend(enc.tensors.iter().map(|(_, t)| t.clone()));
    inputs.extend(dec.tensors.iter().map(|(_, t)| t.clone()));
    let r = grad_check(
        &inputs,
        |g, v| {
            let ev = EncoderVars::from_vars(v[1..1 + n_enc].to_vec(), &arch)?;
            let dv = DecoderVars::from_vars(v[1 + n_enc..].to_vec(), &arch)?;
            let es = RecurrentState::encoder(g, &arch, 1, 8, 8);
            let ds = RecurrentState::decoder(g, &arch, 1, 8, 8);
            let (z, _) = encode_step(g, &arch, v[0], &es, &ev)?;
            let b = binarize(
                g,
                z,
                BinarizeMode::Relaxed,
                &mut ChaCha8Rng::seed_from_u64(0),
            )?;
            let (x_hat, _) = decode_step(g, &arch, b, &ds, &dv)?;
            g.mse(x_hat, v[0])
        },
        // Encoder gradients at initialization are ~1e-8 against a loss of
        // ~0.5, so a small step is dominated by round-off.
        1e-3,
    )
    .unwrap();
    assert!(r.checked > 100);
    assert!(r.max_relative_error < TOL, "{r:?}");
}
