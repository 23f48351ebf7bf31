//! `evmscan` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad input (unreadable or
//! malformed files, unreachable RPC), 3 internal failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "evmscan", version, about = "Bytecode-only vulnerability detection for EVM contracts")]
struct Cli {
    /// TOML file with defaults for any flag; flags given here win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Disassemble bytecode given as hex or as a file.
    Disasm(DisasmArgs),
    /// Recover the control-flow graph of a contract.
    Cfg(CfgArgs),
    /// Split a dataset 60/20/20 in input order.
    Split(SplitArgs),
    /// Train one vulnerability model (and the block encoder if needed).
    Train(TrainArgs),
    /// Show the architecture search grid.
    Grid(GridArgs),
    /// Export contract embeddings under one model.
    Embed(EmbedArgs),
    /// Sibling index maintenance.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Look up query embeddings in a sibling index.
    Siblings(SiblingArgs),
    /// List differently labeled index entries within a radius.
    Contradictions(ContradictionArgs),
    /// Analyze contracts from a dataset or a live address.
    Analyze(AnalyzeArgs),
    /// Score models on a labeled dataset.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct DisasmArgs {
    /// Hex string (0x optional) or path to a hex or binary file.
    input: String,
    /// One line, mnemonics and immediates separated by spaces.
    #[arg(long)]
    sentence: bool,
    /// Drop a trailing compiler metadata blob first.
    #[arg(long)]
    strip_metadata: bool,
}

#[derive(Args, Debug)]
struct CfgArgs {
    input: String,
    #[arg(long, conflicts_with = "json")]
    dot: bool,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    strip_metadata: bool,
}

#[derive(Args, Debug)]
struct SplitArgs {
    dataset: PathBuf,
    /// Where to write the three parts (default: next to the dataset).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    dataset: PathBuf,
    #[arg(long)]
    vuln: String,
    #[arg(long)]
    size: evmscan::sc2v::SizeClass,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for model, encoder and index files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use this block encoder instead of `<out>/encoder.dlva` or a new one.
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Also write the training embeddings as a sibling index.
    #[arg(long)]
    write_index: bool,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, conflicts_with = "count")]
    list: bool,
    #[arg(long)]
    count: bool,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    dataset: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Block encoder (default: encoder.dlva beside the model).
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum IndexAction {
    /// Join exported embeddings with dataset labels into an index.
    Build(IndexBuildArgs),
}

#[derive(Args, Debug)]
struct IndexBuildArgs {
    embeddings: PathBuf,
    /// Dataset whose records carry the labels.
    labels: PathBuf,
    #[arg(long)]
    size: Option<evmscan::sc2v::SizeClass>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SiblingArgs {
    /// Embeddings file of query contracts.
    query: PathBuf,
    index: PathBuf,
    #[arg(long)]
    max_distance: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args, Debug)]
struct ContradictionArgs {
    index: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Dataset file, or an address when --rpc is given.
    target: String,
    #[arg(long)]
    rpc: Option<String>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    indices: Option<PathBuf>,
    /// Restrict to these vulnerabilities (repeatable).
    #[arg(long)]
    vuln: Vec<String>,
    #[arg(long)]
    no_siblings: bool,
    #[arg(long)]
    max_distance: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    dataset: PathBuf,
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    indices: Option<PathBuf>,
    #[arg(long)]
    mode: Option<evmscan::pipeline::EvalMode>,
    #[arg(long)]
    vuln: Vec<String>,
    /// Evaluate only the last 20% of the dataset.
    #[arg(long)]
    test_split: bool,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    max_distance: Option<f64>,
}

/// Marks a failure caused by what the user supplied.
#[derive(Debug)]
pub struct InputError(pub anyhow::Error);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(InputError(e.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<InputError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
