use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use drasic::autodiff::{
    convlstm_cell, ConvLstmSpec, ConvLstmState, ConvLstmVars, ConvSpec, Graph, Tensor,
};
use drasic::bitstream::{pack, unpack, StreamHeader};
use drasic::codec::{compress, reconstruct_prefix, ArchConfig, BinarizeMode};
use drasic::training::{train, Regime, TrainConfig};
use drasic_bench::{images, params};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv(c: &mut Criterion) {
    let spec = ConvSpec::new(16, 32, 3, 2, 1).unwrap();
    let x = images(8, 32, 0).map(|v| v - 0.5);
    let x = Tensor::from_fn(&[8, 16, 32, 32], |i| x.data()[i % x.len()]);
    let w = Tensor::from_fn(&spec.weight_shape(), |i| ((i % 13) as f32 - 6.0) * 0.01);
    let b = Tensor::zeros(&[32]);
    c.bench_function("conv3x3s2_forward_8x16x32x32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xi, wi, bi) = (
                g.constant(x.clone()),
                g.constant(w.clone()),
                g.constant(b.clone()),
            );
            black_box(g.conv2d(xi, wi, Some(bi), spec).unwrap());
        })
    });
    c.bench_function("conv3x3s2_forward_backward_8x16x32x32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xi, wi, bi) = (g.param(x.clone()), g.param(w.clone()), g.param(b.clone()));
            let y = g.conv2d(xi, wi, Some(bi), spec).unwrap();
            let s = g.sum(y);
            black_box(g.backward(s).unwrap());
        })
    });
}

fn convlstm(c: &mut Criterion) {
    let spec = ConvLstmSpec::new(16, 32, 3, 1, 1).unwrap();
    let x = Tensor::from_fn(&[8, 16, 8, 8], |i| ((i % 11) as f32 - 5.0) * 0.05);
    let wi = Tensor::from_fn(&spec.input.weight_shape(), |i| {
        ((i % 7) as f32 - 3.0) * 0.01
    });
    let wh = Tensor::from_fn(&spec.hidden.weight_shape(), |i| {
        ((i % 5) as f32 - 2.0) * 0.01
    });
    let b = Tensor::zeros(&[spec.input.out_channels]);
    c.bench_function("convlstm_two_steps_8x16x8x8", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let p = ConvLstmVars {
                input_weight: g.param(wi.clone()),
                bias: g.param(b.clone()),
                hidden_weight: g.param(wh.clone()),
                spec,
            };
            let input = g.constant(x.clone());
            let s0 = ConvLstmState::zeros(&mut g, [8, 32, 8, 8]);
            let (_, s1) = convlstm_cell(&mut g, input, &s0, &p).unwrap();
            black_box(convlstm_cell(&mut g, input, &s1, &p).unwrap());
        })
    });
}

fn codec(c: &mut Criterion) {
    let arch = ArchConfig::desk();
    let (enc, dec) = params(&arch, 1);
    let x = images(16, 32, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = arch.iterations;
    c.bench_function("compress_desk_16x32x32", |bench| {
        bench.iter(|| {
            black_box(
                compress(
                    &x,
                    t,
                    &arch,
                    &enc,
                    &dec,
                    BinarizeMode::Deterministic,
                    &mut rng,
                )
                .unwrap(),
            )
        })
    });
    let one = x.slice_batch(0, 1).unwrap();
    let trace = compress(
        &one,
        t,
        &arch,
        &enc,
        &dec,
        BinarizeMode::Deterministic,
        &mut rng,
    )
    .unwrap();
    c.bench_function("reconstruct_prefix_desk_1x32x32", |bench| {
        bench.iter(|| black_box(reconstruct_prefix(&trace.codes, &arch, &dec).unwrap()))
    });
    let header = StreamHeader {
        orig_height: 28,
        orig_width: 28,
        channels: 1,
        padded_height: 32,
        padded_width: 32,
        code_bits: arch.code_bits,
        iterations: t,
        source_id: 0,
        model_hash: dec.0.fingerprint(),
    };
    c.bench_function("pack_unpack_desk", |bench| {
        bench.iter(|| black_box(unpack(&pack(&trace.codes, header).unwrap()).unwrap()))
    });
}

fn training(c: &mut Criterion) {
    let arch = ArchConfig {
        iterations: 4,
        ..ArchConfig::desk()
    };
    let sources: Vec<_> = (0..2).map(|s| images(8, 32, s)).collect();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    for regime in Regime::ALL {
        let cfg = TrainConfig {
            regime,
            m: 2,
            batch_size: 8,
            epochs: 1,
            seed: 3,
            arch: arch.clone(),
            ..TrainConfig::default()
        };
        group.bench_function(format!("{regime}_one_epoch_2x8"), |bench| {
            bench.iter_batched(
                || cfg.clone(),
                |cfg| black_box(train(&sources, &cfg).unwrap()),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, conv, convlstm, codec, training);
criterion_main!(benches);
