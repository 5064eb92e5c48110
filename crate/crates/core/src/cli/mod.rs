//! The `mipin` command line.
//!
//! ```text
//! mipin <train|trace|fit|attribute|eval|render|gen-shapes> [flags]
//! ```
//!
//! Every flag can also come from a `key = value` file given by `--config`
//! or `$MIPIN_CONFIG`; flags on the command line win. Exit status is 0 on
//! success, 1 for runtime and data errors, 2 for usage errors.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};

pub use config::{parse_config, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(name = "mipin", version, about = "Attribution with mutual-information preserving inverse networks")]
struct Cli {
    /// key = value file with defaults for any flag [env: MIPIN_CONFIG]
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train a classifier and report its test accuracy.
    Train(TrainArgs),
    /// Record forward traces of a dataset split.
    Trace(TraceArgs),
    /// Fit one inverse network per requested class.
    Fit(FitArgs),
    /// Attribute samples with fitted inverse networks.
    Attribute(AttributeArgs),
    /// Evaluate completeness, localization or class sensitivity.
    Eval(EvalArgs),
    /// Render an attribution record as a PGM or PPM heatmap.
    Render(RenderArgs),
    /// Generate the synthetic shapes dataset.
    GenShapes(GenShapesArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for crate::data::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => crate::data::Split::Train,
            SplitArg::Test => crate::data::Split::Test,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// Directory with IDX image/label files [default: $MIPIN_MNIST_DIR or data/mnist]
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// mlp-m, cnn-m, cnn-c or cnn-shapes
    #[arg(long)]
    arch: String,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Use only the first N training images
    #[arg(long, value_name = "N")]
    train_samples: Option<usize>,
    /// Evaluate on the first N test images
    #[arg(long, value_name = "N")]
    test_samples: Option<usize>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TraceArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    /// Trace only the first N images of the split
    #[arg(long, value_name = "N")]
    samples: Option<usize>,
    /// Trace file to write
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SubsetArg {
    Class,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum InitArg {
    Forward,
    Random,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    traces: PathBuf,
    /// Classes to fit: `all`, `3`, `1,4,7` or an inclusive range `0..9`
    #[arg(long, default_value = "all")]
    class: String,
    /// Directory for the `class-<c>.mipi` files
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    lambda: f64,
    /// Gradient-descent epochs per convolutional inverse
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Fit on the target class's samples only, or on all traced samples
    #[arg(long, value_enum, default_value_t = SubsetArg::Class)]
    fit_subset: SubsetArg,
    #[arg(long, value_enum, default_value_t = InitArg::Forward)]
    kernel_init: InitArg,
    /// Seed for `--kernel-init random`
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Least-squares rescaling of the initial kernel
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, value_name = "BOOL")]
    rescale_init: bool,
    /// Mask the source signal with the input's non-zero pattern
    #[arg(long)]
    mask_input: bool,
    /// Clamp attributions at zero
    #[arg(long)]
    positive_only: bool,
    /// Start attribution from 1 instead of the logit
    #[arg(long)]
    unit_init: bool,
}

#[derive(Debug, Args, Serialize)]
struct AttributeArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "DIR")]
    inverse_dir: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Take sample traces from this trace file instead of recomputing them
    #[arg(long, value_name = "PATH")]
    traces: Option<PathBuf>,
    /// Sample indices: `3`, `1,4,7` or `0..9`
    #[arg(long, default_value = "0")]
    sample: String,
    /// Target class [default: each sample's label]
    #[arg(long)]
    class: Option<usize>,
    /// Attribution file to write
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Metric {
    Apc,
    Papc,
    Loc,
    Sens,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(value_enum)]
    metric: Metric,
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "DIR")]
    inverse_dir: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Evaluate the first N images of the split
    #[arg(long, value_name = "N")]
    samples: Option<usize>,
    /// Class pair for `sens`
    #[arg(long, num_args = 2, value_names = ["A", "B"], default_values_t = [3, 8])]
    classes: Vec<usize>,
    /// Noisy copies per smoothed gradient
    #[arg(long, default_value_t = crate::baselines::SMOOTH_GRAD_SAMPLES)]
    smooth_samples: usize,
    /// Noise level [default: 0.15 * (max - min) of each image]
    #[arg(long)]
    smooth_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as JSON lines
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FieldArg {
    Attribution,
    Source,
}

#[derive(Debug, Args, Serialize)]
struct RenderArgs {
    /// Attribution file from `mipin attribute`
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Position of the record within the file
    #[arg(long, default_value_t = 0)]
    record: usize,
    #[arg(long, value_enum, default_value_t = FieldArg::Attribution)]
    field: FieldArg,
    /// Image to write; `.pgm` for grayscale, `.ppm` for color
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct GenShapesArgs {
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    /// Image side length
    #[arg(long, default_value_t = 32)]
    size: usize,
}

/// Parses `args` (program name first) and runs the chosen command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let command = Cli::command();
    let merged = config::merge_config(&command, args)?;
    let matches = match command.try_get_matches_from(merged) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text.trim_end().trim_start_matches("error: ");
            return Err(Error::Usage(text.to_string()));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Error::Usage(e.to_string()))?;
    match cli.command {
        Cmd::Train(a) => commands::train(&a),
        Cmd::Trace(a) => commands::trace(&a),
        Cmd::Fit(a) => commands::fit(&a),
        Cmd::Attribute(a) => commands::attribute(&a),
        Cmd::Eval(a) => commands::eval(&a),
        Cmd::Render(a) => commands::render(&a),
        Cmd::GenShapes(a) => commands::gen_shapes(&a),
    }
}

/// Entry point of the `mipin` binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
