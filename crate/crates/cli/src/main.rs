//! `sgz` — batch front end for the scene-graph codec.
//!
//! Subcommands cover the full experiment loop: generate a synthetic
//! dataset, train a model, compress and decompress datasets, measure
//! compression against a deflate baseline, and verify losslessness plus
//! the decodability invariants. Every run that writes an artifact also
//! writes a manifest recording the command, effective configuration,
//! seeds, input hashes and metrics, so any report can be regenerated
//! bit-identically from its manifest.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or i/o error,
//! 4 verification failure.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgz_core::coder::CompressionOrder;
use sgz_core::pipeline::PreprocMode;
use sgz_core::predictor::DistKind;

#[derive(Parser)]
#[command(name = "sgz", version, about = "Lossless scene-graph compressor")]
struct Cli {
    /// Worker threads for graph-level parallelism (default: all cores).
    #[arg(short, long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Compress every graph of a dataset into a directory of .sgz1 files.
    Compress(CompressArgs),
    /// Decode a directory of .sgz1 files back into a dataset.
    Decompress(DecompressArgs),
    /// Measure compression on a dataset and emit a CSV report.
    Eval(EvalArgs),
    /// Check losslessness and symbol-causality on every graph.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator configuration (JSON). Mutually exclusive with --preset.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: "scene" (correlated indoor scenes) or
    /// "er" (uniform random graphs, 32 nodes, edge probability 0.1).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Number of graphs when using --preset.
    #[arg(long, default_value_t = 2000, value_name = "N")]
    graphs: usize,
    /// Generator seed when using --preset.
    #[arg(long, default_value_t = 7, value_name = "SEED")]
    seed: u64,
    /// Output dataset path (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (JSON).
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Portion of the dataset to train on; "train" holds out the same
    /// graphs that `eval --split test` measures.
    #[arg(long, default_value = "all", value_name = "WHICH")]
    split: commands::Split,
    /// Model and optimiser settings (JSON); defaults are used when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Initialisation and shuffling seed.
    #[arg(long, default_value_t = 7, value_name = "SEED")]
    seed: u64,
    /// Node reordering applied to the training graphs; should match the
    /// mode used at compression time.
    #[arg(long, default_value = "scc", value_name = "MODE")]
    preproc: PreprocMode,
}

#[derive(Args)]
struct CompressArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Input dataset (JSON).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Output directory; one .sgz1 file per graph plus manifest.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Node reordering applied before coding.
    #[arg(long, default_value = "scc", value_name = "MODE")]
    preproc: PreprocMode,
    /// Additionally code the original node order so decompression
    /// restores it exactly.
    #[arg(long)]
    keep_order: bool,
    /// Seed for the random reordering mode.
    #[arg(long, default_value_t = 0, value_name = "SEED")]
    seed: u64,
}

#[derive(Args)]
struct DecompressArgs {
    /// Model checkpoint; must be the one used to compress.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Directory of .sgz1 files.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output dataset path (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Dataset to measure (JSON).
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Portion of the dataset to evaluate.
    #[arg(long, default_value = "all", value_name = "WHICH")]
    split: commands::Split,
    /// Disable context paths at evaluation time, e.g.
    /// "context=node,structure,edge" or "context=none".
    #[arg(long, value_name = "SPEC")]
    ablate: Option<String>,
    /// Assert the checkpoint's location model (usage error on mismatch).
    #[arg(long, value_name = "KIND")]
    dist: Option<DistKind>,
    /// Assert the checkpoint's stream order (usage error on mismatch).
    #[arg(long, value_name = "ORDER")]
    order: Option<CompressionOrder>,
    /// Node reordering applied before coding.
    #[arg(long, default_value = "scc", value_name = "MODE")]
    preproc: PreprocMode,
    /// Also measure an off-the-shelf codec on the same graphs ("deflate").
    #[arg(long, value_name = "CODEC")]
    baseline: Option<String>,
    /// Write the report CSV here (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Seed for the random reordering mode.
    #[arg(long, default_value_t = 0, value_name = "SEED")]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Dataset to verify (JSON).
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Node reordering applied before coding.
    #[arg(long, default_value = "scc", value_name = "MODE")]
    preproc: PreprocMode,
    /// Symbol mutations probed per graph.
    #[arg(long, default_value_t = 4, value_name = "N")]
    mutations: usize,
}

/// Failure category carrying the process exit code.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Verify(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Verify(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Verify(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
