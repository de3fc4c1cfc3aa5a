use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bss_lasso::pipeline::{Mode, ReconstructTarget};

#[derive(Debug, Parser)]
#[command(name = "bsslasso", version, about = "Fault localization on optical fiber links from swept-subcarrier profiles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a randomized bench of simulated links.
    GenBench(GenBenchArgs),
    /// Locate events on one profile or on every link of a bench.
    Detect(DetectArgs),
    /// Fill event magnitudes of an existing report.
    Reconstruct(ReconstructArgs),
    /// Score reports against a bench's ground truth.
    Evaluate(EvaluateArgs),
    /// Compare the numeric and closed-form transforms of a link.
    ValidateModel(ValidateModelArgs),
}

#[derive(Debug, Args)]
pub struct GenBenchArgs {
    /// Output directory.
    #[arg(long, env = "BSSLASSO_BENCH_DIR")]
    pub out: PathBuf,
    /// Bench spec JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub faults: Option<usize>,
    #[arg(long)]
    pub links: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_length: Option<f64>,
    #[arg(long)]
    pub max_length: Option<f64>,
    #[arg(long)]
    pub reflection_probability: Option<f64>,
    /// Standard deviation of complex Gaussian noise added to each sample.
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub freq_start: Option<f64>,
    #[arg(long)]
    pub freq_stop: Option<f64>,
    #[arg(long)]
    pub freq_step: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    BssLasso,
    #[value(name = "bss-1")]
    Bss1,
    Sinclasso,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::BssLasso => Mode::BssLasso,
            ModeArg::Bss1 => Mode::Bss1,
            ModeArg::Sinclasso => Mode::SincLasso,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Fitted,
    Observation,
}

impl From<TargetArg> for ReconstructTarget {
    fn from(t: TargetArg) -> ReconstructTarget {
        match t {
            TargetArg::Fitted => ReconstructTarget::Fitted,
            TargetArg::Observation => ReconstructTarget::Observation,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunConfigArgs {
    /// Detection config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Position grid step in meters.
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Reduced penalty factor of the correction stage.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Relative threshold on reflective coefficients in the correction stage.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub ebic_gamma: Option<f64>,
    #[arg(long)]
    pub lambda_count: Option<usize>,
    /// Fit an unpenalized intercept.
    #[arg(long)]
    pub intercept: Option<bool>,
    /// Cluster the reflection block as well as the fault block.
    #[arg(long)]
    pub cluster_reflections: Option<bool>,
    /// Attenuation in dB/km.
    #[arg(long)]
    pub attenuation_db_km: Option<f64>,
    #[arg(long)]
    pub group_index: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Single profile CSV (needs --length).
    #[arg(long, conflicts_with = "bench", required_unless_present = "bench")]
    pub profile: Option<PathBuf>,
    /// Link length in meters for a single profile.
    #[arg(long, requires = "profile")]
    pub length: Option<f64>,
    /// Bench directory; every link is processed.
    #[arg(long, env = "BSSLASSO_BENCH_DIR")]
    pub bench: Option<PathBuf>,
    /// Report file (single profile) or directory (bench).
    #[arg(long, env = "BSSLASSO_REPORTS_DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunConfigArgs,
    /// Also reconstruct event magnitudes.
    #[arg(long)]
    pub reconstruct: bool,
    #[arg(long, value_enum, default_value = "fitted")]
    pub target: TargetArg,
    /// Store wall-clock runtime in reports (makes outputs run-dependent).
    #[arg(long)]
    pub record_runtime: bool,
    /// Worker threads for bench mode (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Report JSON written by `detect`.
    #[arg(long)]
    pub report: PathBuf,
    /// Measured profile, needed with `--target observation`.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fitted")]
    pub target: TargetArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "BSSLASSO_BENCH_DIR")]
    pub bench: PathBuf,
    /// Report directories, one per estimator; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', required = true)]
    pub reports: Vec<PathBuf>,
    /// Matching radius in meters.
    #[arg(long, default_value_t = bss_lasso::metrics::DEFAULT_RADIUS_M)]
    pub radius: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateModelArgs {
    /// Link JSON: `{"length_m": .., "events": [..]}`.
    #[arg(long)]
    pub link: PathBuf,
    #[arg(long)]
    pub dz: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    pub freq_start: f64,
    #[arg(long, default_value_t = 100_000.0)]
    pub freq_stop: f64,
    #[arg(long, default_value_t = 100.0)]
    pub freq_step: f64,
    /// Write the result as JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}
