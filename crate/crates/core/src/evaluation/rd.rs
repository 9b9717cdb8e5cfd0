use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{confidence_band, psnr_per_image, Band};
use crate::autodiff::Tensor;
use crate::bitstream::BppDenominator;
use crate::codec::{
    check_image_shape, compress, ArchConfig, BinarizeMode, DecoderParams, EncoderParams,
};
use crate::data::SplitStrategy;
use crate::error::{Error, Result};
use crate::training::{Regime, TrainedSystem};

/// One point of a rate-distortion curve.
#[derive(Clone, Debug, PartialEq)]
pub struct RDPoint {
    pub regime: Regime,
    pub m: usize,
    pub strategy: SplitStrategy,
    pub seed: u64,
    /// `None` for a curve pooled over all sources.
    pub source_id: Option<usize>,
    /// 1-based iteration.
    pub t: usize,
    pub bpp: f64,
    pub psnr_db: f64,
    /// Canvas the PSNR was measured on, e.g. `padded_32x32`.
    pub psnr_domain: String,
    pub bpp_denominator: BppDenominator,
}

/// Rate-distortion points of one or more curves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RDCurveSet {
    pub points: Vec<RDPoint>,
}

impl RDCurveSet {
    /// Points of one curve, ordered by `t`.
    pub fn curve(&self, regime: Regime, source_id: Option<usize>) -> Vec<&RDPoint> {
        let mut pts: Vec<&RDPoint> = self
            .points
            .iter()
            .filter(|p| p.regime == regime && p.source_id == source_id)
            .collect();
        pts.sort_by_key(|p| p.t);
        pts
    }

    pub fn regimes(&self) -> Vec<Regime> {
        let mut r: Vec<Regime> = self.points.iter().map(|p| p.regime).collect();
        r.sort();
        r.dedup();
        r
    }

    /// Source ids with their own curve under `regime`, ascending.
    pub fn sources(&self, regime: Regime) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .points
            .iter()
            .filter(|p| p.regime == regime)
            .filter_map(|p| p.source_id)
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// PSNR-by-`t` of every per-source curve of `regime`.
    pub fn source_curves(&self, regime: Regime) -> Vec<Vec<f64>> {
        self.sources(regime)
            .into_iter()
            .map(|s| {
                self.curve(regime, Some(s))
                    .iter()
                    .map(|p| p.psnr_db)
                    .collect()
            })
            .collect()
    }

    /// Bits per pixel by `t` (taken from the first per-source curve).
    pub fn bpp_axis(&self, regime: Regime) -> Vec<f64> {
        self.sources(regime)
            .first()
            .map(|&s| self.curve(regime, Some(s)).iter().map(|p| p.bpp).collect())
            .unwrap_or_default()
    }

    /// Mean and band across the per-source curves of `regime`.
    pub fn band(&self, regime: Regime) -> Result<Band> {
        confidence_band(&self.source_curves(regime))
    }

    /// Mean over sources of the PSNR at the last iteration.
    pub fn final_mean(&self, regime: Regime) -> Result<f64> {
        let b = self.band(regime)?;
        Ok(*b.mean.last().expect("curves are non-empty"))
    }

    /// Sample standard deviation across sources at the last iteration.
    pub fn final_sd(&self, regime: Regime) -> Result<Option<f64>> {
        Ok(self
            .band(regime)?
            .sd
            .map(|sd| *sd.last().expect("non-empty")))
    }

    pub fn extend(&mut self, other: RDCurveSet) {
        self.points.extend(other.points);
    }

    /// Canonical order: regime, pooled curve first, source, `t`.
    pub fn sort(&mut self) {
        self.points.sort_by(|a, b| {
            (a.regime, a.strategy.as_str(), a.m, a.seed, a.source_id, a.t).cmp(&(
                b.regime,
                b.strategy.as_str(),
                b.m,
                b.seed,
                b.source_id,
                b.t,
            ))
        });
    }
}

/// Reporting choices shared by every curve of an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub strategy: SplitStrategy,
    pub bpp_denominator: BppDenominator,
    /// Image size before padding, used by [`BppDenominator::Original`].
    pub orig_height: usize,
    pub orig_width: usize,
}

impl EvalOptions {
    pub fn mnist(strategy: SplitStrategy) -> Self {
        EvalOptions {
            strategy,
            bpp_denominator: BppDenominator::Padded,
            orig_height: 28,
            orig_width: 28,
        }
    }
}

/// PSNR of every image after every iteration (`[image][t - 1]`), with
/// deterministic binarization.
pub fn psnr_curves(
    images: &Tensor<f32>,
    iterations: usize,
    arch: &ArchConfig,
    encoder: &EncoderParams,
    decoder: &DecoderParams,
) -> Result<Vec<Vec<f64>>> {
    // Deterministic binarization never draws from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = compress(
        images,
        iterations,
        arch,
        encoder,
        decoder,
        BinarizeMode::Deterministic,
        &mut rng,
    )?;
    let n = images.shape()[0];
    let mut out = vec![Vec::with_capacity(iterations); n];
    for t in 1..=iterations {
        for (row, p) in out
            .iter_mut()
            .zip(psnr_per_image(images, &trace.pixels_at(t))?)
        {
            row.push(p);
        }
    }
    Ok(out)
}

fn mean_by_t(curves: &[Vec<f64>]) -> Vec<f64> {
    let t = curves.first().map_or(0, Vec::len);
    (0..t)
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64)
        .collect()
}

fn check_sources(system: &TrainedSystem, sources: &[Tensor<f32>]) -> Result<[usize; 2]> {
    if sources.len() != system.num_sources() {
        return Err(Error::InvalidArgument(format!(
            "system was trained on {} sources but {} test sources were given",
            system.num_sources(),
            sources.len()
        )));
    }
    let mut hw = None;
    for s in sources {
        check_image_shape(&system.config.arch, s.shape())?;
        let dims = [s.shape()[2], s.shape()[3]];
        if *hw.get_or_insert(dims) != dims {
            return Err(Error::shape("rd_eval", "test sources differ in image size"));
        }
    }
    Ok(hw.expect("at least one source"))
}

fn points(
    system: &TrainedSystem,
    opts: &EvalOptions,
    hw: [usize; 2],
    source_id: Option<usize>,
    psnr_by_t: &[f64],
) -> Vec<RDPoint> {
    let arch = &system.config.arch;
    let bits = arch.bits_per_iteration(hw[0], hw[1]);
    let pixels = match opts.bpp_denominator {
        BppDenominator::Padded => hw[0] * hw[1],
        BppDenominator::Original => opts.orig_height * opts.orig_width,
    };
    psnr_by_t
        .iter()
        .enumerate()
        .map(|(i, &psnr_db)| RDPoint {
            regime: system.regime(),
            m: system.num_sources(),
            strategy: opts.strategy,
            seed: system.config.seed,
            source_id,
            t: i + 1,
            bpp: ((i + 1) * bits) as f64 / pixels as f64,
            psnr_db,
            psnr_domain: format!("padded_{}x{}", hw[0], hw[1]),
            bpp_denominator: opts.bpp_denominator,
        })
        .collect()
}

/// Per-source rate-distortion curves for `t = 1..=T` on padded test batches
/// split the same way as the training data. The joint regime also gets a
/// curve pooled over all test images.
pub fn rd_eval(
    system: &TrainedSystem,
    sources: &[Tensor<f32>],
    opts: &EvalOptions,
) -> Result<RDCurveSet> {
    let hw = check_sources(system, sources)?;
    let all: Vec<usize> = (0..sources.len()).collect();
    let mut set = eval_sources(system, sources, &all, opts, hw)?;
    if system.regime() == Regime::Joint {
        let arch = &system.config.arch;
        let mut per_image = Vec::new();
        for (m, s) in sources.iter().enumerate() {
            per_image.extend(psnr_curves(
                s,
                arch.iterations,
                arch,
                system.encoder(m)?,
                system.decoder(m)?,
            )?);
        }
        set.points
            .extend(points(system, opts, hw, None, &mean_by_t(&per_image)));
    }
    set.sort();
    Ok(set)
}

fn eval_sources(
    system: &TrainedSystem,
    sources: &[Tensor<f32>],
    active: &[usize],
    opts: &EvalOptions,
    hw: [usize; 2],
) -> Result<RDCurveSet> {
    let arch = &system.config.arch;
    let mut set = RDCurveSet::default();
    for &m in active {
        let curves = psnr_curves(
            &sources[m],
            arch.iterations,
            arch,
            system.encoder(m)?,
            system.decoder(m)?,
        )?;
        set.points
            .extend(points(system, opts, hw, Some(m), &mean_by_t(&curves)));
    }
    Ok(set)
}

/// Curves of the `active` sources of a distributed system, each decoded from
/// its own codes only. Inactive sources need not be present in `sources`
/// beyond occupying their slot.
pub fn robustness_eval(
    system: &TrainedSystem,
    sources: &[Tensor<f32>],
    active: &[usize],
    opts: &EvalOptions,
) -> Result<RDCurveSet> {
    if system.regime() != Regime::Distributed {
        return Err(Error::InvalidArgument(format!(
            "robustness evaluation needs a distributed system, got {}",
            system.regime()
        )));
    }
    if active.is_empty() {
        return Err(Error::InvalidArgument("no active sources".into()));
    }
    let hw = check_sources(system, sources)?;
    let mut seen = vec![false; sources.len()];
    for &m in active {
        if m >= sources.len() || std::mem::replace(&mut seen[m], true) {
            return Err(Error::InvalidArgument(format!(
                "active source {m} is out of range or repeated"
            )));
        }
    }
    let mut set = eval_sources(system, sources, active, opts, hw)?;
    set.sort();
    Ok(set)
}
