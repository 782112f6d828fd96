//! `cardiokey` command-line interface.
//!
//! Each command prints a short human summary (or the JSON report with
//! `--json`) and can also write the report to `--report`. Reports carry
//! `schema: 1` and contain no timestamps, so reruns are byte-identical.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cardiokey", version, about = "ECG biometrics and template-security toolkit")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Also write the JSON report to this file.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Print the JSON report instead of the human summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossName {
    Triplet,
    Secure,
    SecureTl2,
    Stochastic,
    Arcface,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LinkabilityName {
    Stats,
    Kld,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExplainMethod {
    Occlusion,
    Saliency,
    /// Mean absolute saliency over every embedding dimension.
    SaliencyAll,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic ECG dataset directory.
    Synth {
        #[arg(long, default_value_t = 20)]
        identities: usize,
        #[arg(long, default_value_t = 3)]
        recordings: usize,
        /// Recording length in seconds.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 100.0)]
        rate: f64,
        /// Additive noise standard deviation.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Filter a signal, detect R peaks and cut z-scored beats.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Beats CSV: `r_index` then one column per sample.
        #[arg(long)]
        out: PathBuf,
        /// Also save the filtered signal.
        #[arg(long)]
        filtered: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        low_hz: f64,
        #[arg(long, default_value_t = 40.0)]
        high_hz: f64,
        #[arg(long)]
        no_filter: bool,
        #[arg(long, default_value_t = 250.0)]
        pre_ms: f64,
        #[arg(long, default_value_t = 450.0)]
        post_ms: f64,
        /// Drop DMEAN outliers.
        #[arg(long)]
        dmean: bool,
        #[arg(long, default_value_t = 1.2)]
        dmean_alpha: f64,
        #[arg(long, default_value_t = 1.5)]
        dmean_beta: f64,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Apply one augmentation to a signal.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Augmentation name, e.g. random_permutations or flip.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Train an embedding network.
    Train {
        /// TOML run configuration; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory; generated from the configuration when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        loss: Option<LossName>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// ArcFace scale.
        #[arg(long)]
        scale: Option<f64>,
        /// ArcFace angular margin.
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long, value_enum)]
        linkability: Option<LinkabilityName>,
        #[arg(long, default_value_t = 50)]
        kld_bins: usize,
        #[arg(long, default_value_t = 0.05)]
        kld_bandwidth: f64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        triplets_per_epoch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Probability of corrupting positives and negatives.
        #[arg(long)]
        error_probability: Option<f64>,
        #[arg(long)]
        train_identities: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Score held-out identities of a dataset with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Score CSV: `score,label` or, for keyed models, `score,mated,same_key`.
        #[arg(long)]
        out: PathBuf,
        /// Identification score matrix (unkeyed models).
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        enroll_beats: usize,
        /// Seed for the evaluation keys.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Verification metrics from a `score,label` CSV.
    EvalVerify {
        #[arg(long)]
        scores: PathBuf,
        /// Scores are similarities (higher means more alike).
        #[arg(long)]
        similarity: bool,
        /// Write `threshold,fmr,fnmr` curves here.
        #[arg(long)]
        curves: Option<PathBuf>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Identification metrics from a score matrix CSV.
    EvalIdentify {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        /// Return candidates only below this dissimilarity.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Cancelability and unlinkability analysis.
    EvalSecurity {
        /// Keyed score CSV (`score,mated,same_key`).
        #[arg(long, conflicts_with_all = ["model", "data"], required_unless_present = "model")]
        scores: Option<PathBuf>,
        #[arg(long, requires = "data")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        enroll_beats: usize,
        /// Fixed KDE bandwidth; Silverman's rule per score list when absent.
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Template-update policies on a synthetic drift timeline.
    UpdateSim {
        #[arg(long, default_value_t = 10)]
        identities: usize,
        #[arg(long, default_value_t = 7)]
        time_points: usize,
        /// Blend toward the drift target reached at the last time point.
        #[arg(long, default_value_t = 0.8)]
        drift: f64,
        /// Upper edge of the update acceptance band (normalized distance).
        #[arg(long, default_value_t = 0.2)]
        band_high: f64,
        /// Adaptive fixation step: n + j n templates fixed at time point j.
        #[arg(long, default_value_t = 1)]
        fix_step: usize,
        #[arg(long, default_value_t = 20)]
        capacity: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Confidence-threshold cascade over two modalities.
    CascadeSim {
        /// Probability-stream CSV; a synthetic complementary stream when absent.
        #[arg(long)]
        stream: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 600)]
        rows: usize,
        /// Fraction of rows used to train the fusion model.
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        /// Number of thresholds in [0, 1]; 1.01 is always added.
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Relevance of each beat sample for a trained model.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// Signal CSV.
        #[arg(long)]
        input: PathBuf,
        /// Which beat of the recording to explain.
        #[arg(long, default_value_t = 0)]
        beat: usize,
        #[arg(long, value_enum, default_value = "occlusion")]
        method: ExplainMethod,
        #[arg(long, default_value_t = cardiokey::explain::DEFAULT_OCCLUSION_WINDOW)]
        window: usize,
        /// Explain this class probability (ArcFace models).
        #[arg(long)]
        class: Option<usize>,
        /// Key for keyed models, as hex; a seeded random key when absent.
        #[arg(long)]
        key_hex: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Relevance CSV: `sample_index,amplitude,relevance`.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
