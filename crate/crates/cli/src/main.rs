//! `bolt` command-line driver.
//!
//! Exit codes: 0 on success, 1 on IO / format / input errors, 2 on usage
//! errors (reported by clap).

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use bolt::Reduction;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "bolt",
    version,
    about = "4-bit vector quantization with quantized lookup-table scans"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Global {
    /// Bytes per encoded vector.
    #[arg(long, global = true, default_value_t = 16, value_parser = parse_bytes)]
    pub bytes: usize,
    /// Reduction to approximate.
    #[arg(long, global = true, default_value = "l2", value_parser = parse_metric)]
    pub metric: Reduction,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::Json)]
    pub report: ReportFormat,
    /// Use (fit, encode, query) or add (bench, eval) the 256-centroid baseline.
    #[arg(long, global = true, value_enum)]
    pub baseline: Option<Baseline>,
    /// Share of the training rows held out to calibrate table quantization.
    #[arg(long, global = true, default_value_t = bolt::index::DEFAULT_CALIBRATION_FRACTION)]
    pub calibration_fraction: f64,
    /// k-means iterations per codebook.
    #[arg(long, global = true, default_value_t = bolt::kmeans::DEFAULT_ITERS)]
    pub iters: usize,
    /// Write the report here instead of stdout.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
}

fn parse_bytes(s: &str) -> Result<usize, String> {
    match s.parse() {
        Ok(b @ (8 | 16 | 32)) => Ok(b),
        _ => Err(format!("expected 8, 16 or 32, got '{s}'")),
    }
}

fn parse_metric(s: &str) -> Result<Reduction, String> {
    match s {
        "l2" => Ok(Reduction::SquaredEuclidean),
        "dot" => Ok(Reduction::DotProduct),
        other => Err(format!("expected 'l2' or 'dot', got '{other}'")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Pq,
}

#[derive(Debug, Clone, clap::Args)]
pub struct DataArgs {
    /// Training vectors (.fvecs, .bvecs or .csv).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Database vectors; defaults to the training set with --db-equals-train.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// True nearest neighbors (.ivecs, first column used).
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Reuse the training set as the database.
    #[arg(long)]
    pub db_equals_train: bool,
    /// Generate this many synthetic train and database vectors instead of reading files.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value = "correlated_blocks")]
    pub structure: bolt::dataset::Structure,
    /// Synthetic query count.
    #[arg(long, default_value_t = 1000)]
    pub num_queries: usize,
    /// Directory for cached brute-force ground truth.
    #[arg(long)]
    pub gt_cache: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and calibrate a model, then write the model file.
    Fit { train: PathBuf, model: PathBuf },
    /// Encode vectors with a model and write the codes file.
    Encode {
        model: PathBuf,
        data: PathBuf,
        codes: PathBuf,
    },
    /// Top-k neighbors of each query against encoded vectors.
    Query {
        model: PathBuf,
        codes: PathBuf,
        queries: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
    /// Encoding, query-encoding and scan throughput.
    Bench {
        #[arg(long, default_value_t = bolt::bench::RUNS_PER_TRIAL)]
        runs: usize,
        #[arg(long, default_value_t = bolt::bench::TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 100_000)]
        scan_rows: usize,
        #[arg(long, default_value_t = 256)]
        scan_dim: usize,
        #[arg(long, default_value_t = 10_000)]
        encode_rows: usize,
        #[arg(long, default_value_t = 128)]
        encode_dim: usize,
    },
    /// Recall@R and correlation on a dataset.
    Eval {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Empirical checks of the error bounds.
    Verify {
        #[command(flatten)]
        data: DataArgs,
        /// Number of (query, vector) pairs.
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        /// Treat distributional bounds as strict (default only for synthetic data).
        #[arg(long)]
        strict: bool,
    },
    /// Approximate matrix product A * B.
    Matmul {
        /// Square Gaussian matrices of this size instead of files.
        #[arg(long)]
        size: Option<usize>,
        /// Left matrix, one row per record.
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        /// Right matrix, one row per record.
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        /// Time the query phase only, as if B were already encoded.
        #[arg(long)]
        exclude_encoding: bool,
        /// Also time the naive triple loop and report correlation.
        #[arg(long)]
        compare: bool,
        /// Write the estimated product here (.fvecs or .csv).
        #[arg(long)]
        product: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
