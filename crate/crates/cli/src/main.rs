//! `drasic`: split, train, encode, decode, eval and report.

mod commands;
mod images;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drasic::bitstream::BppDenominator;
use drasic::data::{DataSplit, SplitStrategy, DATA_DIR_ENV};
use drasic::training::Regime;

pub const OUTPUT_ROOT_ENV: &str = "DRASIC_OUTPUT_ROOT";

/// Exit status for command-line misuse (also what clap uses).
pub const EXIT_USAGE: u8 = 2;
/// Exit status for missing or corrupt data and artifacts.
pub const EXIT_DATA: u8 = 3;
/// Exit status for non-finite values during training or evaluation.
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "drasic",
    version,
    about = "Distributed recurrent autoencoder for scalable image compression"
)]
struct Cli {
    /// Directory holding the uncompressed MNIST IDX files.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,

    /// Relative output paths are resolved against this directory.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = ".")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assign MNIST train and test images to M sources.
    Split(SplitArgs),
    /// Train one regime and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Compress images into one scalable stream per image.
    Encode(EncodeArgs),
    /// Reconstruct images from streams, optionally from a prefix.
    Decode(DecodeArgs),
    /// Rate-distortion curves of trained checkpoints on the test split.
    Eval(EvalArgs),
    /// Merge result sets into overlaid plots and a summary table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long, value_parser = parse_from_str::<SplitStrategy>)]
    pub strategy: SplitStrategy,
    #[arg(long)]
    pub m: usize,
    /// Shuffle seed for the random strategy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Key-value config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by `split`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Output directory [default: runs/<regime>-<strategy>-m<M>-seed<seed>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Start from the narrow single-core architecture instead of the default.
    #[arg(long)]
    pub desk: bool,
    /// joint, distributed or separate.
    #[arg(long, value_parser = parse_from_str::<Regime>)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use at most this many training images per source (0 = all).
    #[arg(long)]
    pub limit: Option<usize>,
    /// Seed for initialization, minibatch sampling and binarization noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Residual iterations T.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Encoder slot to use (ignored by the joint regime).
    #[arg(long, default_value_t = 0)]
    pub source: usize,
    /// Iterations to store (defaults to the trained T).
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// PNG or PGM images.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Decode only the first t iterations.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Output image format.
    #[arg(long, default_value = "png", value_parser = ["png", "pgm"])]
    pub format: String,
    #[arg(required = true)]
    pub streams: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// One or more training output directories or checkpoint files.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Directory written by `split`, matching the one used for training.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate only these sources of a distributed system (e.g. `0,2`).
    #[arg(long, value_delimiter = ',')]
    pub active: Vec<usize>,
    /// Use at most this many test images per source (0 = all).
    #[arg(long, default_value_t = 0)]
    pub test_limit: usize,
    /// Pixel count dividing the bits: the padded canvas or the original image.
    #[arg(long, default_value = "padded", value_parser = parse_from_str::<BppDenominator>)]
    pub bpp_denominator: BppDenominator,
    #[arg(long, default_value = "svg", value_parser = ["svg", "none"])]
    pub plot_format: String,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directories containing `results.csv`.
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_from_str<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

/// Shared command context.
pub struct Context {
    pub data_dir: PathBuf,
    pub output_root: PathBuf,
}

impl Context {
    pub fn output(&self, p: &Path) -> PathBuf {
        self.output_root.join(p)
    }

    pub fn load(&self, split: DataSplit) -> anyhow::Result<drasic::data::Dataset> {
        Ok(drasic::data::load_mnist(&self.data_dir, split)?)
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use drasic::Error;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::NonFinite(_) => EXIT_NUMERIC,
                Error::Data(_)
                | Error::Checksum { .. }
                | Error::Format(_)
                | Error::ModelMismatch(_)
                | Error::Io { .. }
                | Error::Csv(_) => EXIT_DATA,
                Error::InvalidArgument(_) | Error::Shape { .. } => EXIT_USAGE,
            };
        }
        if cause.is::<commands::UsageError>() {
            return EXIT_USAGE;
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<image::ImageError>().is_some()
        {
            return EXIT_DATA;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Context {
        data_dir: cli.data_dir.unwrap_or_else(drasic::data::default_data_dir),
        output_root: cli.output_root,
    };
    let result = match cli.command {
        Command::Split(a) => commands::split(&ctx, &a),
        Command::Train(a) => commands::train(&ctx, &a),
        Command::Encode(a) => commands::encode(&ctx, &a),
        Command::Decode(a) => commands::decode(&ctx, &a),
        Command::Eval(a) => commands::eval(&ctx, &a),
        Command::Report(a) => commands::report(&ctx, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
