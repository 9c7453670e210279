use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, CommandFactory, Parser, Subcommand};

use fleetlens_core::backend::{BackendSpec, Mode};
use fleetlens_core::Task;

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "fleetlens", version, about = "Plate-grouped vehicle attribute pipeline", args_override_self = true)]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "FLEETLENS_STORE")]
    store: Option<PathBuf>,

    /// TOML file whose keys mirror command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a manifest (and optionally one task's label files) into the store.
    Ingest(IngestArgs),
    /// Resolve truth per task: merges, plate conflicts, frequency filter.
    Curate(CurateArgs),
    /// Seeded plate-disjoint train/val/test split.
    Split(SplitArgs),
    /// Write a YOLO-layout dataset for one task.
    BuildDataset(BuildDatasetArgs),
    /// Run a backend over records and write per-image predictions.
    Infer(InferArgs),
    /// Majority vote per plate.
    Aggregate(AggregateArgs),
    /// Score prediction files and render the report grid.
    Evaluate(EvaluateArgs),
    /// Monte Carlo SVI against MVI accuracy for a stochastic backend.
    Simulate(SimulateArgs),
    /// Serve the query API.
    Serve(ServeArgs),
    /// Talk to a running query service.
    Query(QueryArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Task annotated by the manifest's label files.
    #[arg(long, requires = "classes")]
    pub task: Option<Task>,
    /// Class list indexed by the label files' class ids.
    #[arg(long, requires = "task")]
    pub classes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Tasks to curate; defaults to every task with a taxonomy.
    #[arg(long)]
    pub task: Vec<Task>,
    /// Taxonomy JSON files to install into the store first.
    #[arg(long)]
    pub taxonomy: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.30)]
    pub test: f64,
    /// Validation share of what remains after the test cut.
    #[arg(long, default_value_t = 0.20)]
    pub val: f64,
    /// Put everything in train when there are fewer than three plates.
    #[arg(long)]
    pub small_set_fallback: bool,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub out: PathBuf,
    /// Link images instead of copying them.
    #[arg(long)]
    pub symlink: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitSelector {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub task: Task,
    /// `mock:<fixtures.json>`, `sim:p=..,q=..,seed=..` or `remote:<base-url>`.
    #[arg(long)]
    pub backend: BackendSpec,
    #[arg(long, default_value = "detect")]
    pub mode: Mode,
    /// Identifier recorded in predictions; defaults to the backend spec.
    #[arg(long)]
    pub backend_id: Option<String>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitSelector,
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent backend calls.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Value for `produced_at`; defaults to the current time.
    #[arg(long)]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also upsert the tallies into the store's index.
    #[arg(long)]
    pub publish: bool,
    /// Make this run's backend the active one for its task.
    #[arg(long, requires = "publish")]
    pub activate: bool,
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub model: String,
    pub size: String,
    pub preds: PathBuf,
    pub tallies: Option<PathBuf>,
}

impl std::str::FromStr for RunSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.splitn(4, ':').collect();
        if parts.len() < 3 || parts[..3].iter().any(|p| p.is_empty()) {
            return Err(format!("expected MODEL:SIZE:PREDS[:TALLIES], got {s:?}"));
        }
        Ok(RunSpec {
            model: parts[0].to_string(),
            size: parts[1].to_string(),
            preds: PathBuf::from(parts[2]),
            tallies: parts.get(3).filter(|p| !p.is_empty()).map(PathBuf::from),
        })
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub task: Task,
    /// `MODEL:SIZE:PREDS[:TALLIES]`; repeat for each grid cell.
    #[arg(long = "run", required = true)]
    pub runs: Vec<RunSpec>,
    /// Directory for report.json and report.md.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Append a model-by-size MVI comparison table to report.md.
    #[arg(long)]
    pub comparison: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Probability a view is labelled correctly.
    #[arg(long = "p")]
    pub p: f64,
    /// Probability a view yields no detection.
    #[arg(long = "q", default_value_t = 0.0)]
    pub q: f64,
    #[arg(long, default_value_t = 2)]
    pub labels: usize,
    #[arg(long, default_value_t = 5)]
    pub views: usize,
    #[arg(long, default_value_t = 100_000)]
    pub plates: usize,
    #[arg(long)]
    pub seed: u64,
    /// Print the result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, env = "FLEETLENS_URL", default_value = "http://127.0.0.1:8080")]
    pub url: String,
    #[arg(long)]
    pub make: Vec<String>,
    #[arg(long)]
    pub shape: Vec<String>,
    #[arg(long)]
    pub colour: Vec<String>,
    #[arg(long)]
    pub colour_binary: Vec<String>,
    #[arg(long)]
    pub from: Option<DateTime<Utc>>,
    #[arg(long)]
    pub to: Option<DateTime<Utc>>,
    #[arg(long, allow_hyphen_values = true)]
    pub lat_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lat_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lon_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lon_max: Option<f64>,
    #[arg(long)]
    pub include_unknown: bool,
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    #[arg(long, default_value_t = 50)]
    pub limit: usize,
    /// Show one plate instead of searching.
    #[arg(long, conflicts_with_all = ["health", "taxonomies"])]
    pub plate: Option<String>,
    /// With --plate: record a correction, `TASK=LABEL`.
    #[arg(long, requires_all = ["plate", "author"])]
    pub correct: Option<String>,
    #[arg(long)]
    pub author: Option<String>,
    #[arg(long, conflicts_with = "taxonomies")]
    pub health: bool,
    #[arg(long)]
    pub taxonomies: bool,
}

/// A problem with how the command was invoked, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl Cli {
    pub fn store(&self) -> anyhow::Result<&Path> {
        self.store
            .as_deref()
            .ok_or_else(|| usage("no store given: pass --store or set FLEETLENS_STORE"))
    }
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let argv = match config::inject(&Cli::command(), raw) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
