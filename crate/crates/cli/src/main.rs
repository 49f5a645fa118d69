//! `dualtrain`: command-line driver for baseline training, self-/back-training
//! adaptation, filtering, evaluation and analysis.

mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dualtrain_core::augmentation::{Direction, TaskSelection};
use dualtrain_core::evaluation::EvalSplit;
use dualtrain_core::filters::FilterKind;

#[derive(Parser, Debug)]
#[command(
    name = "dualtrain",
    version,
    about = "Self-training and back-training for QG and passage retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand. Flags override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run config. A previous run's run_meta.json is accepted as well.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (write-once unless --force).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, global = true, value_enum)]
    pub filter: Option<FilterArg>,
    #[arg(long, global = true, value_name = "FLOAT")]
    pub accept_fraction: Option<f64>,
    #[arg(long, global = true, value_name = "INT")]
    pub iters: Option<usize>,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true, value_name = "INT")]
    pub threads: Option<usize>,
    /// Replace an existing run directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Corpus manifest (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Directory holding generator.ckpt / retriever.ckpt from an earlier run.
    #[arg(long, global = true, value_name = "DIR")]
    pub models: Option<PathBuf>,
    /// Generator backend: native or plugin:<command>.
    #[arg(long, global = true, value_name = "BACKEND")]
    pub generator: Option<String>,
    /// Retriever backend: native-bm25, native-dual or plugin:<command>.
    #[arg(long, global = true, value_name = "BACKEND")]
    pub retriever: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    #[value(name = "self")]
    SelfTraining,
    Back,
}

impl From<ModeArg> for Direction {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SelfTraining => Direction::SelfTraining,
            ModeArg::Back => Direction::Back,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum TaskArg {
    Qg,
    Ir,
    Both,
}

impl From<TaskArg> for TaskSelection {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Qg => TaskSelection::Qg,
            TaskArg::Ir => TaskSelection::Ir,
            TaskArg::Both => TaskSelection::Both,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum FilterArg {
    None,
    #[value(name = "self")]
    SelfConsistency,
    Cross,
}

impl From<FilterArg> for FilterKind {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::None => FilterKind::None,
            FilterArg::SelfConsistency => FilterKind::SelfConsistency,
            FilterArg::Cross => FilterKind::CrossConsistency,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SplitArg {
    Dev,
    Test,
}

impl From<SplitArg> for EvalSplit {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Dev => EvalSplit::Dev,
            SplitArg::Test => EvalSplit::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a corpus (or generate the synthetic desk corpus) and write a normalized copy.
    Ingest {
        /// Generate the synthetic desk corpus instead of reading --corpus.
        #[arg(long)]
        desk: bool,
        /// Seed of the desk corpus generator.
        #[arg(long, default_value_t = 7)]
        desk_seed: u64,
    },
    /// Check the config and corpus; exits 1 on problems.
    Validate,
    /// Train both models on the source pairs and evaluate on the test split.
    TrainBaseline,
    /// Iterative self- or back-training.
    Adapt,
    /// Score a synthetic.jsonl with the critic models and mark kept records.
    Filter {
        #[arg(long, value_name = "PATH")]
        synthetic: PathBuf,
    },
    /// Evaluate saved models.
    Eval {
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Confidence distributions, trajectories, question taxonomy and domain filter.
    Analyze {
        /// Acceptance threshold of the domain filter.
        #[arg(long, default_value_t = dualtrain_core::analysis::DEFAULT_ACCEPT_THRESHOLD)]
        alpha: f64,
        /// Fine-tuning slices for the generator trajectory.
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Collect report.json files of several runs into one CSV table.
    Report {
        #[arg(required = true, value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Validate => "validate",
            Command::TrainBaseline => "train-baseline",
            Command::Adapt => "adapt",
            Command::Filter { .. } => "filter",
            Command::Eval { .. } => "eval",
            Command::Analyze { .. } => "analyze",
            Command::Report { .. } => "report",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DUALTRAIN_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
