use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{lr_at, Regime, TrainConfig};
use super::loss::graph_distributed_loss;
use super::optim::Adam;
use crate::autodiff::{Graph, Tensor};
use crate::codec::{
    check_image_shape, normalize, unroll, BinarizeMode, DecoderParams, DecoderVars, EncoderParams,
    EncoderVars, ParamSet,
};
use crate::error::{Error, Result};

/// One optimizer step's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    /// 0-based.
    pub epoch: usize,
    /// 0-based within the epoch.
    pub step: usize,
    pub regime: Regime,
    pub loss: f64,
    pub lr: f64,
}

/// Reported once per finished epoch.
#[derive(Clone, Debug)]
pub struct EpochSummary {
    pub regime: Regime,
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Trained parameters for every source.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedSystem {
    pub config: TrainConfig,
    /// One per source (a single shared encoder in the joint regime).
    pub encoders: Vec<EncoderParams>,
    /// One per source in the separate regime, otherwise a single decoder.
    pub decoders: Vec<DecoderParams>,
    pub history: Vec<LossRecord>,
}

impl TrainedSystem {
    pub fn regime(&self) -> Regime {
        self.config.regime
    }

    /// Sources this system serves.
    pub fn num_sources(&self) -> usize {
        self.config.m
    }

    pub fn encoder(&self, source: usize) -> Result<&EncoderParams> {
        self.check_source(source)?;
        Ok(&self.encoders[if self.encoders.len() == 1 { 0 } else { source }])
    }

    pub fn decoder(&self, source: usize) -> Result<&DecoderParams> {
        self.check_source(source)?;
        Ok(&self.decoders[if self.decoders.len() == 1 { 0 } else { source }])
    }

    fn check_source(&self, source: usize) -> Result<()> {
        if source >= self.config.m {
            return Err(Error::InvalidArgument(format!(
                "source {source} out of range for a system with {} sources",
                self.config.m
            )));
        }
        Ok(())
    }

    /// Checks set counts against the regime and every set against the
    /// architecture.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (ne, nd) = (self.config.num_encoders(), self.config.num_decoders());
        if self.encoders.len() != ne || self.decoders.len() != nd {
            return Err(Error::ModelMismatch(format!(
                "{} regime with m={} needs {ne} encoders and {nd} decoders, found {} and {}",
                self.config.regime,
                self.config.m,
                self.encoders.len(),
                self.decoders.len()
            )));
        }
        for e in &self.encoders {
            e.validate(&self.config.arch)?;
        }
        for d in &self.decoders {
            d.validate(&self.config.arch)?;
        }
        Ok(())
    }

    /// Mean loss of every epoch, in order.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.history {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

/// Fresh parameters for `config`, deterministic in `config.seed`.
///
/// Encoder `m` and decoder `d` draw from their own random streams, so slot 0
/// starts identically in every regime.
pub fn init_system(config: &TrainConfig) -> Result<TrainedSystem> {
    config.validate()?;
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(s);
        r
    };
    let encoders = (0..config.num_encoders())
        .map(|m| EncoderParams::init(&config.arch, &mut stream(1 + m as u64)))
        .collect::<Result<_>>()?;
    let decoders = (0..config.num_decoders())
        .map(|d| DecoderParams::init(&config.arch, &mut stream(1 << 32 | d as u64)))
        .collect::<Result<_>>()?;
    Ok(TrainedSystem {
        config: config.clone(),
        encoders,
        decoders,
        history: Vec::new(),
    })
}

/// One optimisation unit: encoders and a decoder updated together on the
/// listed data sources.
struct Group {
    encoders: Vec<usize>,
    decoder: usize,
    data: Vec<usize>,
}

fn groups(regime: Regime, m: usize) -> Vec<Group> {
    match regime {
        Regime::Joint => vec![Group {
            encoders: vec![0],
            decoder: 0,
            data: vec![0],
        }],
        Regime::Distributed => vec![Group {
            encoders: (0..m).collect(),
            decoder: 0,
            data: (0..m).collect(),
        }],
        Regime::Separate => (0..m)
            .map(|i| Group {
                encoders: vec![i],
                decoder: i,
                data: vec![i],
            })
            .collect(),
    }
}

fn sample_batch(images: &Tensor<f32>, batch: usize, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    let n = images.shape()[0];
    let per = images.len() / n;
    let mut data = Vec::with_capacity(batch * per);
    for _ in 0..batch {
        let i = rng.gen_range(0..n);
        data.extend_from_slice(&images.data()[i * per..(i + 1) * per]);
    }
    let mut shape = images.shape().to_vec();
    shape[0] = batch;
    Tensor::new(shape, data)
}

/// Trains without progress reporting. See [`train_with`].
pub fn train(sources: &[Tensor<f32>], config: &TrainConfig) -> Result<TrainedSystem> {
    train_with(sources, config, |_| {})
}

/// Trains `config.regime` on per-source pixel batches `[n_m, c, h, w]`
/// (values in `[0, 1]`, sides divisible by 8). The joint regime pools the
/// sources. Every step samples one minibatch per source with replacement;
/// an epoch is `ceil(largest source / batch_size)` steps.
pub fn train_with(
    sources: &[Tensor<f32>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainedSystem> {
    config.validate()?;
    if sources.len() != config.m {
        return Err(Error::InvalidArgument(format!(
            "config expects m={} sources, got {}",
            config.m,
            sources.len()
        )));
    }
    let mut data = Vec::with_capacity(sources.len());
    for (m, s) in sources.iter().enumerate() {
        check_image_shape(&config.arch, s.shape())?;
        let n = s.shape()[0];
        let keep = if config.limit == 0 {
            n
        } else {
            n.min(config.limit)
        };
        if keep == 0 {
            return Err(Error::Data(format!("source {m} has no training images")));
        }
        data.push(s.slice_batch(0, keep)?);
    }
    if config.regime == Regime::Joint {
        let refs: Vec<&Tensor<f32>> = data.iter().collect();
        data = vec![Tensor::concat_batch(&refs)?];
    }
    let largest = data.iter().map(|d| d.shape()[0]).max().unwrap_or(0);
    let steps = largest.div_ceil(config.batch_size);

    let mut system = init_system(config)?;
    let mut enc_opt: Vec<Adam> = system.encoders.iter().map(|e| Adam::new(&e.0)).collect();
    let mut dec_opt: Vec<Adam> = system.decoders.iter().map(|d| Adam::new(&d.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let plan = groups(config.regime, config.m);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, config);
        let mut epoch_total = 0.0;
        for step in 0..steps {
            let mut step_total = 0.0;
            for group in &plan {
                let loss = group_step(
                    &mut system,
                    &mut enc_opt,
                    &mut dec_opt,
                    group,
                    &data,
                    lr,
                    &mut rng,
                )
                .map_err(|e| match e {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("epoch {epoch}, step {step}: {msg}"))
                    }
                    other => other,
                })?;
                step_total += loss;
            }
            let loss = step_total / plan.len() as f64;
            epoch_total += loss;
            system.history.push(LossRecord {
                epoch,
                step,
                regime: config.regime,
                loss,
                lr,
            });
        }
        on_epoch(&EpochSummary {
            regime: config.regime,
            epoch,
            mean_loss: epoch_total / steps as f64,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(system)
}

fn group_step(
    system: &mut TrainedSystem,
    enc_opt: &mut [Adam],
    dec_opt: &mut [Adam],
    group: &Group,
    data: &[Tensor<f32>],
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let config = &system.config;
    let arch = &config.arch;
    let mut g = Graph::<f32>::new();
    let enc_vars = group
        .encoders
        .iter()
        .map(|&e| EncoderVars::bind(&mut g, &system.encoders[e], arch, true))
        .collect::<Result<Vec<_>>>()?;
    let dec_vars = DecoderVars::bind(&mut g, &system.decoders[group.decoder], arch, true)?;
    let mut inputs = Vec::with_capacity(group.data.len());
    for &d in &group.data {
        let batch = sample_batch(&data[d], config.batch_size, rng)?;
        inputs.push(g.constant(normalize(&batch)));
    }
    let enc_refs: Vec<&EncoderVars> = enc_vars.iter().collect();
    let unrolled = unroll(
        &mut g,
        arch,
        &inputs,
        &enc_refs,
        &dec_vars,
        config.iterations(),
        BinarizeMode::Stochastic,
        rng,
    )?;
    let loss_var = graph_distributed_loss(&mut g, &unrolled, config.loss_kind)?;
    let loss = g.value(loss_var).data()[0] as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {loss}")));
    }
    let grads = g.backward(loss_var)?;
    for (vars, &e) in enc_vars.iter().zip(&group.encoders) {
        let gs: Vec<Option<&[f32]>> = vars.all.iter().map(|&v| grads.raw(v)).collect();
        enc_opt[e].update(&mut system.encoders[e].0, &gs, lr)?;
    }
    let gs: Vec<Option<&[f32]>> = dec_vars.all.iter().map(|&v| grads.raw(v)).collect();
    dec_opt[group.decoder].update(&mut system.decoders[group.decoder].0, &gs, lr)?;
    check_finite(&system.decoders[group.decoder].0, "decoder")?;
    for &e in &group.encoders {
        check_finite(&system.encoders[e].0, "encoder")?;
    }
    Ok(loss)
}

fn check_finite(p: &ParamSet, what: &str) -> Result<()> {
    if p.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} parameters diverged")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ArchConfig;

    fn tiny(regime: Regime, m: usize) -> TrainConfig {
        TrainConfig {
            regime,
            m,
            batch_size: 4,
            epochs: 2,
            base_lr: 0.01,
            arch: ArchConfig {
                encoder_conv: 4,
                encoder_lstm: [4, 4],
                decoder_conv: 4,
                decoder_lstm: [4, 4, 4],
                hidden_kernel: 1,
                iterations: 2,
                ..ArchConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn data(m: usize, n: usize) -> Vec<Tensor<f32>> {
        (0..m)
            .map(|s| Tensor::from_fn(&[n, 1, 8, 8], |i| ((i * (s + 3)) % 11) as f32 / 10.0))
            .collect()
    }

    #[test]
    fn set_counts_per_regime() {
        // Joint pools 18 images (5 steps of 4); the others step over 6 (2 steps).
        for (regime, ne, nd, steps) in [
            (Regime::Joint, 1, 1, 5),
            (Regime::Distributed, 3, 1, 2),
            (Regime::Separate, 3, 3, 2),
        ] {
            let s = train(&data(3, 6), &tiny(regime, 3)).unwrap();
            assert_eq!((s.encoders.len(), s.decoders.len()), (ne, nd));
            s.validate().unwrap();
            assert_eq!(s.history.len(), 2 * steps);
            assert_eq!(s.epoch_losses().len(), 2);
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let c = tiny(Regime::Distributed, 2);
        let a = train(&data(2, 5), &c).unwrap();
        let b = train(&data(2, 5), &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn source_count_must_match() {
        assert!(train(&data(2, 5), &tiny(Regime::Distributed, 3)).is_err());
    }

    #[test]
    fn limit_caps_each_source() {
        let mut c = tiny(Regime::Joint, 2);
        c.limit = 4;
        let s = train(&data(2, 20), &c).unwrap();
        // 8 pooled images at batch 4.
        assert_eq!(s.history.len(), 2 * 2);
    }

    #[test]
    fn slot_zero_init_shared_across_regimes() {
        let j = init_system(&tiny(Regime::Joint, 3)).unwrap();
        let d = init_system(&tiny(Regime::Distributed, 3)).unwrap();
        let s = init_system(&tiny(Regime::Separate, 3)).unwrap();
        assert_eq!(j.encoders[0], d.encoders[0]);
        assert_eq!(d.decoders[0], s.decoders[0]);
        assert_ne!(s.decoders[0], s.decoders[1]);
    }
    #[test]
    fn one_distributed_step_moves_every_parameter_set() {
        let mut c = tiny(Regime::Distributed, 3);
        c.epochs = 1;
        let before = init_system(&c).unwrap();
        // 4 images per source at batch 4: exactly one step.
        let after = train(&data(3, 4), &c).unwrap();
        assert_eq!(after.history.len(), 1);
        for (b, a) in before.encoders.iter().zip(&after.encoders) {
            assert_ne!(b, a);
        }
        assert_eq!(after.decoders.len(), 1);
        assert_ne!(before.decoders[0], after.decoders[0]);
    }

    #[test]
    fn single_source_distributed_matches_joint_history() {
        let j = train(&data(1, 6), &tiny(Regime::Joint, 1)).unwrap();
        let d = train(&data(1, 6), &tiny(Regime::Distributed, 1)).unwrap();
        let losses = |s: &TrainedSystem| s.history.iter().map(|r| r.loss).collect::<Vec<_>>();
        assert_eq!(losses(&j), losses(&d));
    }
}
