//! `ppss`: encrypt images and datasets with keyed block scrambling, score
//! segmentation output and analyze what the encryption leaks.
//!
//! Exit codes: 0 success, 1 invalid input or arguments, 2 processing failure.

mod commands;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "ppss",
    version,
    about = "Keyed block-scrambling image encryption toolkit"
)]
struct Cli {
    /// Master seed file: 32 raw bytes or 64 hex characters.
    #[arg(long, global = true, alias = "master-seed-file", value_name = "PATH")]
    seed_file: Option<PathBuf>,
    /// Worker threads for batch work (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Suppress progress notes on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    output_format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Text,
    /// One JSON object per line.
    Machine,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Seeded,
    Explicit,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// A separate key for every sub-block.
    SubBlock,
    /// One key reused for every sub-block of an image.
    Image,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encrypt one image.
    Encrypt(EncryptArgs),
    /// Decrypt one image.
    Decrypt(DecryptArgs),
    /// Encrypt or verify a whole dataset.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Generate a master seed or a per-image key manifest.
    #[command(subcommand)]
    Keygen(KeygenCommand),
    /// Score predicted label maps against ground truth.
    Metrics(MetricsArgs),
    /// Keyspace, leak and correlation analysis.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Known-plaintext attack: recover keys from a plaintext/ciphertext pair.
    Attack(AttackArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GeometryArgs {
    #[arg(long, default_value_t = 16, value_name = "M")]
    pub block_size: usize,
    #[arg(long, value_name = "MS")]
    pub sub_block_size: usize,
}

#[derive(Args, Debug)]
pub struct EncryptArgs {
    #[arg(long = "in", value_name = "IMAGE")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "PNG")]
    pub output: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, value_enum, default_value_t = Mode::Seeded)]
    pub mode: Mode,
    /// Key derivation id (seeded mode). Defaults to the input file name.
    #[arg(long)]
    pub image_id: Option<String>,
    #[arg(long, value_enum, default_value_t = Scope::SubBlock)]
    pub key_scope: Scope,
    /// Write the key manifest here. Required in explicit mode.
    #[arg(long, value_name = "JSON")]
    pub key_out: Option<PathBuf>,
    /// Embed the master seed in the key manifest.
    #[arg(long, requires = "key_out")]
    pub export_seed: bool,
}

#[derive(Args, Debug)]
pub struct DecryptArgs {
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "PNG")]
    pub output: PathBuf,
    /// Key manifest written by `encrypt --key-out` or `keygen image`.
    #[arg(long, value_name = "JSON", conflicts_with_all = ["image_id", "sub_block_size"])]
    pub key: Option<PathBuf>,
    #[arg(long)]
    pub image_id: Option<String>,
    #[arg(long, default_value_t = 16, value_name = "M")]
    pub block_size: usize,
    #[arg(long, value_name = "MS")]
    pub sub_block_size: Option<usize>,
    #[arg(long, value_enum, default_value_t = Scope::SubBlock)]
    pub key_scope: Scope,
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Encrypt every image under a directory; labels are copied untouched.
    Encrypt(DatasetEncryptArgs),
    /// Re-hash and, with key material, decrypt every record of a dataset.
    Verify(DatasetVerifyArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorPolicy {
    Skip,
    Abort,
}

#[derive(Args, Debug)]
pub struct DatasetEncryptArgs {
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "DIR")]
    pub output: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, value_enum, default_value_t = Mode::Seeded)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = Scope::SubBlock)]
    pub key_scope: Scope,
    /// Resize every image (bilinear) and label map (nearest) first.
    #[arg(long, value_name = "WxH", value_parser = parse_size)]
    pub resize: Option<(u32, u32)>,
    /// Label directory relative to --in, mirrored under --out.
    #[arg(long, value_name = "DIR")]
    pub labels_subdir: Option<String>,
    #[arg(long, value_enum, default_value_t = ErrorPolicy::Abort)]
    pub on_error: ErrorPolicy,
}

#[derive(Args, Debug)]
pub struct DatasetVerifyArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long = "out", alias = "in", value_name = "DIR")]
    pub dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum KeygenCommand {
    /// Write a fresh random master seed as hex.
    Seed(KeygenSeedArgs),
    /// Write a key manifest for one image of the given size.
    Image(KeygenImageArgs),
}

#[derive(Args, Debug)]
pub struct KeygenSeedArgs {
    #[arg(long = "out", value_name = "PATH")]
    pub output: PathBuf,
    /// Replace an existing file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct KeygenImageArgs {
    #[arg(long = "out", value_name = "JSON")]
    pub output: PathBuf,
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub height: u32,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, value_enum, default_value_t = Mode::Explicit)]
    pub mode: Mode,
    #[arg(long)]
    pub image_id: String,
    #[arg(long, value_enum, default_value_t = Scope::SubBlock)]
    pub key_scope: Scope,
    #[arg(long)]
    pub export_seed: bool,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Predicted label map, or a directory of them.
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    /// Ground-truth label map, or a directory mirroring --pred.
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
    #[arg(long)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 255)]
    pub ignore_label: u8,
    /// Also write the report to this file.
    #[arg(long, value_name = "PATH")]
    pub report_out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Independence {
    /// One pixel permutation per channel.
    Independent,
    /// One pixel permutation shared by the three channels.
    Shared,
}

#[derive(Subcommand, Debug)]
enum AnalyzeCommand {
    /// Exact key counts per sub-block, block and image.
    Keyspace(KeyspaceArgs),
    /// Per-sub-block channel sums, the information the cipher preserves.
    Leak(LeakArgs),
    /// Adjacent-pixel correlation per channel.
    Correlation(CorrelationArgs),
}

#[derive(Args, Debug)]
pub struct KeyspaceArgs {
    #[arg(
        long = "M",
        alias = "block-size",
        value_name = "M",
        default_value_t = 16
    )]
    pub block_size: usize,
    #[arg(long = "Ms", alias = "sub-block-size", value_name = "MS")]
    pub sub_block_size: usize,
    #[arg(long, value_enum, default_value_t = Independence::Independent)]
    pub independence: Independence,
    #[arg(long, value_enum, default_value_t = Scope::SubBlock)]
    pub key_scope: Scope,
    /// Add per-image totals for a WxH image.
    #[arg(long, value_name = "WxH", value_parser = parse_size)]
    pub image_size: Option<(u32, u32)>,
}

#[derive(Args, Debug)]
pub struct LeakArgs {
    #[arg(long = "in", value_name = "IMAGE")]
    pub input: PathBuf,
    #[arg(long, value_name = "MS")]
    pub sub_block_size: usize,
    /// Lossy 8-bit PNG of the per-cell means, for viewing only.
    #[arg(long, value_name = "PNG")]
    pub png_out: Option<PathBuf>,
    /// Exact sums as JSON.
    #[arg(long, value_name = "JSON")]
    pub matrix_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorrelationArgs {
    #[arg(long = "in", value_name = "IMAGE")]
    pub input: PathBuf,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long, value_name = "IMAGE")]
    pub plain: PathBuf,
    #[arg(long, value_name = "IMAGE")]
    pub cipher: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Write the recovered keys as an explicit key manifest.
    #[arg(long, value_name = "JSON")]
    pub key_out: Option<PathBuf>,
    #[arg(long, default_value = "recovered")]
    pub image_id: String,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<u32>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("expected a positive integer, got {v:?}"))
    };
    Ok((parse(w)?, parse(h)?))
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_FAILED: u8 = 2;

pub fn invalid(msg: impl Display) -> CliError {
    CliError {
        code: EXIT_INVALID,
        error: anyhow::anyhow!("{msg}"),
    }
}

pub fn failed(msg: impl Display) -> CliError {
    CliError {
        code: EXIT_FAILED,
        error: anyhow::anyhow!("{msg}"),
    }
}

pub trait Classify<T> {
    fn or_invalid(self) -> Result<T, CliError>;
    fn or_failed(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_invalid(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            code: EXIT_INVALID,
            error: e.into(),
        })
    }

    fn or_failed(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            code: EXIT_FAILED,
            error: e.into(),
        })
    }
}

/// Output sink honouring `--quiet` and `--output-format`.
pub struct Ui {
    pub format: OutputFormat,
    pub quiet: bool,
}

impl Ui {
    pub fn note(&self, msg: impl Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    /// Prints `text` or `record`, depending on the output format.
    pub fn emit(&self, text: impl Display, record: serde_json::Value) {
        match self.format {
            OutputFormat::Text => println!("{text}"),
            OutputFormat::Machine => println!("{record}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .or_failed()?;
    }
    let ui = Ui {
        format: cli.output_format,
        quiet: cli.quiet,
    };
    let seed = cli.seed_file.as_deref();
    match cli.command {
        Command::Encrypt(a) => commands::encrypt(&ui, seed, a),
        Command::Decrypt(a) => commands::decrypt(&ui, seed, a),
        Command::Dataset(DatasetCommand::Encrypt(a)) => commands::dataset_encrypt(&ui, seed, a),
        Command::Dataset(DatasetCommand::Verify(a)) => commands::dataset_verify(&ui, seed, a),
        Command::Keygen(KeygenCommand::Seed(a)) => commands::keygen_seed(&ui, a),
        Command::Keygen(KeygenCommand::Image(a)) => commands::keygen_image(&ui, seed, a),
        Command::Metrics(a) => commands::metrics(&ui, a),
        Command::Analyze(AnalyzeCommand::Keyspace(a)) => commands::keyspace(&ui, a),
        Command::Analyze(AnalyzeCommand::Leak(a)) => commands::leak(&ui, a),
        Command::Analyze(AnalyzeCommand::Correlation(a)) => commands::correlation(&ui, a),
        Command::Attack(a) => commands::attack(&ui, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
