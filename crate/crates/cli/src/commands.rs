use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use drasic::autodiff::Tensor;
use drasic::bitstream::{pack, truncate, unpack, ScalableStream, StreamHeader};
use drasic::codec::{
    compress, crop_images, pad_images, pad_to_grid, padded_side, reconstruct_prefix, to_pixels,
    ArchConfig, BinarizeMode,
};
use drasic::data::{make_split, off_diagonal_variance, pearson_matrix, DataSplit, SourceSplit};
use drasic::evaluation::{
    heatmap_svg, rd_eval, rd_plot_svg, read_results, results_to_csv, robustness_eval, summarize,
    EvalOptions, RDCurveSet, RDPoint,
};
use drasic::training::{
    checkpoint, restore, train_with, write_loss_csv, Regime, TrainConfig, TrainedSystem,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::images::{read_gray, write_gray};
use crate::manifest::{self, RunManifest};
use crate::{Context, DecodeArgs, EncodeArgs, EvalArgs, ReportArgs, SplitArgs, TrainArgs};

pub const TRAIN_SPLIT_FILE: &str = "train.csv";
pub const TEST_SPLIT_FILE: &str = "test.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.drck";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const STREAM_EXT: &str = "drsc";

/// A command-line mistake that clap could not catch.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn split(ctx: &Context, a: &SplitArgs) -> Result<()> {
    let mut man = RunManifest::start("split");
    let out = ctx.output(&a.out);
    create_dir(&out)?;
    let train = ctx.load(DataSplit::Train)?;
    let test = ctx.load(DataSplit::Test)?;
    let train_split = make_split(&train, a.strategy, a.m, a.seed)?;
    let test_split = make_split(&test, a.strategy, a.m, a.seed)?;
    for (file, s) in [
        (TRAIN_SPLIT_FILE, &train_split),
        (TEST_SPLIT_FILE, &test_split),
    ] {
        let path = out.join(file);
        s.write_csv(&path)?;
        man.output(path);
    }

    let matrix = pearson_matrix(&train_split, &train)?;
    let mut csv = String::new();
    for row in &matrix {
        csv.push_str(
            &row.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        csv.push('\n');
    }
    let corr = out.join("correlation.csv");
    write_file(&corr, csv)?;
    let svg = out.join("correlation.svg");
    let title = format!(
        "Pearson correlation of source means ({}, M={})",
        a.strategy, a.m
    );
    write_file(&svg, heatmap_svg(&matrix, &title)?)?;
    let var = off_diagonal_variance(&matrix);

    println!(
        "{} split into {} sources: train sizes {:?}, test sizes {:?}; off-diagonal correlation variance {var:.4e}",
        a.strategy,
        a.m,
        train_split.source_sizes(),
        test_split.source_sizes()
    );
    man.set("strategy", a.strategy.as_str())
        .set("m", a.m)
        .set("seed", a.seed)
        .set("train_sizes", train_split.source_sizes())
        .set("test_sizes", test_split.source_sizes())
        .set("off_diagonal_variance", var)
        .datasets(&[DataSplit::Train, DataSplit::Test])
        .output(corr)
        .output(svg);
    man.write(&out)
}

fn read_split(dir: &Path, file: &str) -> Result<SourceSplit> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(usage(format!(
            "{} not found; run `drasic split --out {}` first",
            path.display(),
            dir.display()
        )));
    }
    Ok(SourceSplit::read_csv(&path)?)
}

/// Config keys assigned by a `key=value` text.
fn assigned_keys(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('=').map(|(k, _)| k.trim().to_string()))
        .collect()
}

/// Effective training config: defaults, then the config file, then flags.
/// Returns the config and whether `m` was set explicitly.
fn build_config(a: &TrainArgs) -> Result<(TrainConfig, bool)> {
    let mut cfg = TrainConfig::default();
    if a.desk {
        cfg.arch = ArchConfig::desk();
    }
    let mut explicit_m = false;
    if let Some(path) = &a.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)?;
        explicit_m |= assigned_keys(&text).iter().any(|k| k == "m");
    }
    if let Some(r) = a.regime {
        cfg.regime = r;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(l) = a.limit {
        cfg.limit = l;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.iterations {
        cfg.arch.iterations = t;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
        explicit_m |= k.trim() == "m";
    }
    Ok((cfg, explicit_m))
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let (mut cfg, explicit_m) = build_config(a)?;
    if a.print_config {
        cfg.validate()?;
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let split_dir = a.split.as_ref().ok_or_else(|| {
        usage("--split is required: training reads its sources from a `drasic split` directory")
    })?;
    let split = read_split(split_dir, TRAIN_SPLIT_FILE)?;
    if explicit_m && cfg.m != split.m {
        return Err(usage(format!(
            "config sets m={} but the split has {} sources",
            cfg.m, split.m
        )));
    }
    cfg.m = split.m;
    cfg.validate()?;

    let out = ctx.output(a.out.as_deref().unwrap_or(&PathBuf::from(format!(
        "runs/{}-{}-m{}-seed{}",
        cfg.regime, split.strategy, cfg.m, cfg.seed
    ))));
    create_dir(&out)?;
    let mut man = RunManifest::start("train");
    let train_ds = ctx.load(DataSplit::Train)?;
    split.check_matches(&train_ds)?;
    let sources = split
        .gather(&train_ds)?
        .iter()
        .map(pad_to_grid)
        .collect::<drasic::Result<Vec<_>>>()?;

    eprintln!(
        "training {} regime, M={}, {} epochs, T={}, sources {:?}",
        cfg.regime,
        cfg.m,
        cfg.epochs,
        cfg.iterations(),
        sources
            .iter()
            .map(|s| s.shape()[0].min(if cfg.limit == 0 {
                usize::MAX
            } else {
                cfg.limit
            }))
            .collect::<Vec<_>>()
    );
    let started = Instant::now();
    let system = train_with(&sources, &cfg, |e| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  lr {:.3e}  {:.1}s",
            e.epoch, e.mean_loss, e.lr, e.seconds
        )
    })?;

    let config_path = out.join(CONFIG_FILE);
    write_file(&config_path, cfg.to_text())?;
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint(&system, &ckpt)?;
    let loss = out.join(LOSS_FILE);
    write_loss_csv(&system.history, &loss)?;
    println!(
        "trained in {:.1}s; final epoch loss {:.6}; wrote {}",
        started.elapsed().as_secs_f64(),
        system.epoch_losses().last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    man.set("config", cfg.to_text())
        .set("seed", cfg.seed)
        .set("regime", cfg.regime.as_str())
        .set("split_dir", split_dir.display().to_string())
        .set("split_strategy", split.strategy.as_str())
        .set("split_seed", split.seed)
        .set("m", split.m)
        .set("epoch_losses", system.epoch_losses())
        .datasets(&[DataSplit::Train])
        .output(config_path)
        .output(ckpt)
        .output(loss);
    man.write(&out)
}

/// Accepts a training directory or a checkpoint file.
fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_system(p: &Path) -> Result<TrainedSystem> {
    let path = checkpoint_path(p);
    restore(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn stem(p: &Path) -> Result<String> {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| usage(format!("{} has no file name", p.display())))
}

/// Streams for `images`, each coded with encoder slot `source` for `t`
/// iterations.
pub fn encode_images(
    system: &TrainedSystem,
    source: usize,
    t: usize,
    images: &[Tensor<f32>],
) -> Result<Vec<ScalableStream>> {
    let arch = &system.config.arch;
    let enc = system.encoder(source)?;
    let dec = system.decoder(source)?;
    let model_hash = dec.0.fingerprint();
    // Deterministic binarization never draws from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    images
        .iter()
        .map(|img| {
            let [_, c, h, w] = img.dims4()?;
            let (ph, pw) = (padded_side(h), padded_side(w));
            let padded = pad_images(img, ph, pw)?;
            let trace = compress(
                &padded,
                t,
                arch,
                enc,
                dec,
                BinarizeMode::Deterministic,
                &mut rng,
            )?;
            let header = StreamHeader {
                orig_height: h,
                orig_width: w,
                channels: c,
                padded_height: ph,
                padded_width: pw,
                code_bits: arch.code_bits,
                iterations: t,
                source_id: source,
                model_hash,
            };
            Ok(pack(&trace.codes, header)?)
        })
        .collect()
}

/// Pixel reconstruction of one stream after its first `t` blocks (all when
/// `None`), cropped to the original size.
pub fn decode_stream(
    system: &TrainedSystem,
    stream: &ScalableStream,
    t: Option<usize>,
) -> Result<Tensor<f32>> {
    let stream = match t {
        Some(t) => truncate(stream, t)?,
        None => stream.clone(),
    };
    let h = stream.header;
    if h.source_id >= system.num_sources() {
        bail!(drasic::Error::ModelMismatch(format!(
            "stream is from source {} but the checkpoint has {} sources",
            h.source_id,
            system.num_sources()
        )));
    }
    let dec = system.decoder(h.source_id)?;
    if dec.0.fingerprint() != h.model_hash {
        bail!(drasic::Error::ModelMismatch(format!(
            "stream was made for model {:016x}, checkpoint decoder for source {} is {:016x}",
            h.model_hash,
            h.source_id,
            dec.0.fingerprint()
        )));
    }
    if h.code_bits != system.config.arch.code_bits {
        bail!(drasic::Error::ModelMismatch(format!(
            "stream has {} code bits, model expects {}",
            h.code_bits, system.config.arch.code_bits
        )));
    }
    let codes = unpack(&stream)?;
    let recon = reconstruct_prefix(&codes, &system.config.arch, dec)?;
    Ok(crop_images(
        &to_pixels(&recon),
        h.orig_height,
        h.orig_width,
    )?)
}

pub fn encode(ctx: &Context, a: &EncodeArgs) -> Result<()> {
    let system = load_system(&a.checkpoint)?;
    let trained_t = system.config.iterations();
    let t = a.t.unwrap_or(trained_t);
    if t == 0 || t > trained_t {
        return Err(usage(format!("--t must be in 1..={trained_t}, got {t}")));
    }
    if a.source >= system.num_sources() {
        return Err(usage(format!(
            "--source {} out of range for a system with {} sources",
            a.source,
            system.num_sources()
        )));
    }
    let out = ctx.output(&a.out);
    create_dir(&out)?;
    let mut man = RunManifest::start("encode");
    let images = a
        .images
        .iter()
        .map(|p| read_gray(p))
        .collect::<Result<Vec<_>>>()?;
    let streams = encode_images(&system, a.source, t, &images)?;
    let mut total = 0;
    for (p, s) in a.images.iter().zip(&streams) {
        let path = out.join(format!("{}.{STREAM_EXT}", stem(p)?));
        let bytes = s.to_bytes();
        total += bytes.len();
        write_file(&path, bytes)?;
        man.output(path);
    }
    println!(
        "encoded {} images at t={t} into {total} bytes",
        streams.len()
    );
    man.set("checkpoint", a.checkpoint.display().to_string())
        .set("source", a.source)
        .set("t", t)
        .set(
            "inputs",
            json!(a
                .images
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()),
        );
    man.write(&out)
}

pub fn decode(ctx: &Context, a: &DecodeArgs) -> Result<()> {
    let system = load_system(&a.checkpoint)?;
    let out = ctx.output(&a.out);
    create_dir(&out)?;
    let mut man = RunManifest::start("decode");
    for p in &a.streams {
        let stream = ScalableStream::read(p)?;
        if let Some(t) = a.t {
            if t == 0 || t > stream.header.iterations {
                return Err(usage(format!(
                    "--t must be in 1..={} for {}, got {t}",
                    stream.header.iterations,
                    p.display()
                )));
            }
        }
        let img = decode_stream(&system, &stream, a.t)?;
        let path = out.join(format!("{}.{}", stem(p)?, a.format));
        write_gray(&path, &img)?;
        man.output(path);
    }
    println!("decoded {} streams", a.streams.len());
    man.set("checkpoint", a.checkpoint.display().to_string())
        .set("t", json!(a.t))
        .set(
            "inputs",
            json!(a
                .streams
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()),
        );
    man.write(&out)
}

/// The split recorded by `train` next to a checkpoint, if any.
fn trained_split(checkpoint: &Path) -> Result<Option<(String, usize)>> {
    let dir = if checkpoint.is_dir() {
        checkpoint.to_path_buf()
    } else {
        checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    };
    let records = manifest::read(&dir)?;
    Ok(records
        .iter()
        .rev()
        .find(|r| r["command"] == "train")
        .and_then(|r| {
            Some((
                r["split_strategy"].as_str()?.to_string(),
                r["m"].as_u64()? as usize,
            ))
        }))
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let test_split = read_split(&a.split, TEST_SPLIT_FILE)?;
    let test = ctx.load(DataSplit::Test)?;
    test_split.check_matches(&test)?;
    let sources = test_split
        .gather(&test)?
        .iter()
        .map(|s| {
            let n = s.shape()[0];
            let keep = if a.test_limit == 0 {
                n
            } else {
                n.min(a.test_limit)
            };
            pad_to_grid(&s.slice_batch(0, keep)?)
        })
        .collect::<drasic::Result<Vec<_>>>()?;
    let [_, _, oh, ow] = test.images.dims4()?;
    let opts = EvalOptions {
        strategy: test_split.strategy,
        bpp_denominator: a.bpp_denominator,
        orig_height: oh,
        orig_width: ow,
    };

    let out = ctx.output(&a.out);
    create_dir(&out)?;
    let mut man = RunManifest::start("eval");
    let mut set = RDCurveSet::default();
    for ck in &a.checkpoints {
        let system = load_system(ck)?;
        if let Some((strategy, m)) = trained_split(ck)? {
            if strategy != test_split.strategy.as_str() || m != test_split.m {
                bail!(drasic::Error::ModelMismatch(format!(
                    "{} was trained on a {strategy} split with M={m}, but the test split is {} with M={}",
                    ck.display(),
                    test_split.strategy,
                    test_split.m
                )));
            }
        }
        let part = if a.active.is_empty() {
            rd_eval(&system, &sources, &opts)?
        } else {
            robustness_eval(&system, &sources, &a.active, &opts)?
        };
        set.extend(part);
    }
    set.sort();
    let csv = out.join(RESULTS_FILE);
    write_file(&csv, results_to_csv(&set)?)?;
    man.output(&csv);
    if a.plot_format == "svg" {
        let plot = out.join("rd.svg");
        write_file(&plot, rd_plot_svg(&set)?)?;
        man.output(plot);
    }
    let summary = summary_table(&set)?;
    let summary_path = out.join("summary.md");
    write_file(&summary_path, &summary)?;
    print!("{summary}");
    man.set(
        "checkpoints",
        json!(a
            .checkpoints
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()),
    )
    .set("split_dir", a.split.display().to_string())
    .set("active", json!(a.active))
    .set("test_limit", a.test_limit)
    .set("bpp_denominator", a.bpp_denominator.as_str())
    .datasets(&[DataSplit::Test])
    .output(summary_path);
    man.write(&out)
}

type GroupKey = (String, usize, u64);

fn group(set: &RDCurveSet) -> BTreeMap<GroupKey, RDCurveSet> {
    let mut groups: BTreeMap<GroupKey, RDCurveSet> = BTreeMap::new();
    for p in &set.points {
        groups
            .entry((p.strategy.as_str().to_string(), p.m, p.seed))
            .or_default()
            .points
            .push(p.clone());
    }
    groups
}

/// Markdown table of final-iteration PSNR per regime with the regime gaps,
/// one section per (strategy, M, seed).
pub fn summary_table(set: &RDCurveSet) -> Result<String> {
    let mut s = String::new();
    for ((strategy, m, seed), g) in group(set) {
        s.push_str(&format!("## strategy={strategy} M={m} seed={seed}\n\n"));
        s.push_str("| regime | final t | bpp | mean PSNR (dB) | sd across sources (dB) |\n");
        s.push_str("|---|---|---|---|---|\n");
        for r in summarize(&g)? {
            let t = g
                .sources(r.regime)
                .first()
                .map_or(0, |&src| g.curve(r.regime, Some(src)).len());
            let sd = r
                .final_sd_db
                .map_or("n/a".to_string(), |v| format!("{v:.3}"));
            s.push_str(&format!(
                "| {} | {t} | {:.4} | {:.3} | {sd} |\n",
                r.regime, r.final_bpp, r.final_mean_db
            ));
        }
        s.push('\n');
        for (a, b) in [
            (Regime::Joint, Regime::Distributed),
            (Regime::Distributed, Regime::Separate),
        ] {
            if let Some(gap) = drasic::evaluation::final_gap(&g, a, b) {
                s.push_str(&format!("- {a} - {b} at final t: {gap:+.3} dB\n"));
            }
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn report(ctx: &Context, a: &ReportArgs) -> Result<()> {
    let mut set = RDCurveSet::default();
    for dir in &a.results {
        let path = dir.join(RESULTS_FILE);
        if !path.exists() {
            bail!(drasic::Error::Data(format!(
                "{} has no {RESULTS_FILE}; run `drasic eval --out {}` first",
                dir.display(),
                dir.display()
            )));
        }
        let part = read_results(&path)?;
        if part.points.is_empty() {
            bail!(drasic::Error::Data(format!(
                "{} holds no results",
                path.display()
            )));
        }
        set.extend(part);
    }
    dedup(&mut set)?;
    let out = ctx.output(&a.out);
    create_dir(&out)?;
    let mut man = RunManifest::start("report");
    for ((strategy, m, seed), g) in group(&set) {
        let plot = out.join(format!("rd_{strategy}_m{m}_seed{seed}.svg"));
        write_file(&plot, rd_plot_svg(&g)?)?;
        man.output(plot);
    }
    let csv = out.join(RESULTS_FILE);
    write_file(&csv, results_to_csv(&set)?)?;
    let summary = summary_table(&set)?;
    let summary_path = out.join("summary.md");
    write_file(&summary_path, &summary)?;
    print!("{summary}");
    man.set(
        "inputs",
        json!(a
            .results
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()),
    )
    .output(csv)
    .output(summary_path);
    man.write(&out)
}

/// Drops exact duplicates and rejects conflicting values for the same point.
fn dedup(set: &mut RDCurveSet) -> Result<()> {
    set.sort();
    let mut kept: Vec<RDPoint> = Vec::with_capacity(set.points.len());
    for p in set.points.drain(..) {
        if let Some(last) = kept.last() {
            let same_key = (
                last.regime,
                last.m,
                last.strategy,
                last.seed,
                last.source_id,
                last.t,
            ) == (p.regime, p.m, p.strategy, p.seed, p.source_id, p.t);
            if same_key {
                if *last != p {
                    bail!(drasic::Error::Data(format!(
                        "conflicting results for {} M={} seed={} source {:?} t={}",
                        p.regime, p.m, p.seed, p.source_id, p.t
                    )));
                }
                continue;
            }
        }
        kept.push(p);
    }
    set.points = kept;
    Ok(())
}
