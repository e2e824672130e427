use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gnpp::{parse_arch, ArchSpec, NeighborhoodType, Shape4};

use crate::{cfg_err, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "gnpp",
    version,
    about = "Train and analyse CNNs with geometric neural phrase pooling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write learning curves plus a checkpoint.
    Train(TrainArgs),
    /// Train every phrase-pooling placement over a grid of types and sigmas.
    Sweep(SweepArgs),
    /// Central-difference gradient check in 64-bit mode.
    Gradcheck(GradcheckArgs),
    /// Receptive fields, latent connections and heatmaps.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetName {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetName {
    pub fn classes(self) -> usize {
        match self {
            DatasetName::Mnist | DatasetName::Cifar10 => 10,
            DatasetName::Cifar100 => 100,
        }
    }

    pub fn default_arch(self) -> &'static str {
        match self {
            DatasetName::Mnist => gnpp::MNIST_LENET,
            DatasetName::Cifar10 => gnpp::LENET3,
            DatasetName::Cifar100 => "{C5(S1P2)@32-MP3(S2)}{C5(S1P2)@32-AP3(S2)}{C5(S1P2)@64-AP3(S2)}{FC100}",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    /// Pixels in [0, 1].
    Scale255,
    /// Additionally subtract the per-channel training mean.
    MeanSubtract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NbArg {
    Type1,
    Type2,
}

impl From<NbArg> for NeighborhoodType {
    fn from(a: NbArg) -> Self {
        match a {
            NbArg::Type1 => NeighborhoodType::Type1,
            NbArg::Type2 => NeighborhoodType::Type2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GnppArg {
    None,
    Type1,
    Type2,
}

impl GnppArg {
    pub fn nb_type(self) -> Option<NeighborhoodType> {
        match self {
            GnppArg::None => None,
            GnppArg::Type1 => Some(NeighborhoodType::Type1),
            GnppArg::Type2 => Some(NeighborhoodType::Type2),
        }
    }
}

/// Flags shared by `train` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Architecture string, or a preset: mnist-lenet, lenet3, alexnet.
    /// Defaults to the dataset's LeNet.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long, value_enum, default_value = "mnist")]
    pub dataset: DatasetName,
    /// Directory with the dataset files (also searched: <dir>/mnist, <dir>/cifar-10-batches-bin, ...).
    #[arg(long, env = "GNPP_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Learning-rate stages, e.g. "20@1e-3,4@1e-4,1@1e-5". Defaults to the dataset's schedule.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Train only the first N epochs of the schedule.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long = "wd", default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Independent runs with seeds seed..seed+R-1.
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    /// Horizontal flip probability. Defaults to 0 for MNIST and 0.5 for CIFAR.
    #[arg(long)]
    pub flip_prob: Option<f64>,
    /// Defaults to scale255 for MNIST and mean-subtract for CIFAR.
    #[arg(long, value_enum)]
    pub normalize: Option<NormArg>,
    /// Use only the first N training samples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "type1")]
    pub types: Vec<NbArg>,
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub sigmas: Vec<f64>,
    /// 1-based pooling layers to consider (default: all).
    #[arg(long, value_delimiter = ',')]
    pub pools: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Architecture string or preset.
    #[arg(long, default_value = "mnist-lenet")]
    pub arch: String,
    /// Per-sample input as CxHxW.
    #[arg(long, default_value = "1x16x16")]
    pub input: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Check at most N random entries per tensor (default: every entry).
    #[arg(long)]
    pub max_per_tensor: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Also run the per-layer suite on small random instances.
    #[arg(long)]
    pub layers: bool,
    /// Scale the first analytic gradient by this factor (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt_backward: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub what: AnalyzeCommand,
}

#[derive(Debug, Clone, Subcommand)]
pub enum AnalyzeCommand {
    /// Receptive field, jump and overlap of every spatial layer.
    Rf {
        #[arg(long, default_value = "alexnet")]
        arch: String,
        /// Report only this 0-based layer index.
        #[arg(long)]
        layer: Option<usize>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Connections between conv layers and their inputs.
    Connections {
        #[arg(long, default_value = "alexnet")]
        arch: String,
        /// Per-sample input as CxHxW.
        #[arg(long, default_value = "3x227x227")]
        input: String,
        /// 0-based conv layer index (default: every conv layer).
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, value_enum, default_value = "none")]
        gnpp: GnppArg,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Channel-averaged diffusion heatmap of one test image, as PGM.
    Heatmap {
        /// Trained checkpoint; without it a freshly initialised `--arch` net is used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, value_enum, default_value = "mnist")]
        dataset: DatasetName,
        #[arg(long, env = "GNPP_DATA_DIR")]
        data_dir: Option<PathBuf>,
        /// Test-set image index.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// 0-based arch layer whose responses are diffused.
        #[arg(long)]
        layer: usize,
        #[arg(long, default_value_t = 0.25)]
        std_factor: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "heatmap.pgm")]
        out: PathBuf,
    },
}

/// Resolves a preset name or parses an architecture string.
pub fn resolve_arch(text: &str) -> CliResult<ArchSpec> {
    let t = match text.trim().to_ascii_lowercase().as_str() {
        "mnist-lenet" | "lenet2" => gnpp::MNIST_LENET.to_string(),
        "lenet3" | "cifar-lenet" => gnpp::LENET3.to_string(),
        "alexnet" => gnpp::ALEXNET.to_string(),
        _ => text.to_string(),
    };
    parse_arch(&t).map_err(cfg_err)
}

/// `CxHxW` to a batch-1 shape.
pub fn parse_shape(text: &str) -> CliResult<Shape4> {
    let dims: Vec<usize> = text
        .split(['x', 'X'])
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::config(format!("invalid shape {text:?}, expected CxHxW")))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape4::new(1, c, h, w)),
        _ => Err(CliError::config(format!(
            "invalid shape {text:?}, expected CxHxW with positive dims"
        ))),
    }
}
