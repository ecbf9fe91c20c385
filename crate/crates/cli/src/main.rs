//! `glinkx` command line: dataset bundles, embedding training, pipeline and
//! baseline runs, synthetic generators, estimator experiments and reports.
//! Every command writes JSON lines to stdout; failures exit nonzero with a
//! JSON object carrying an `error` code on stderr.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use glinkx::exec::Exec;
use glinkx::kge::KgeLoss;
use glinkx::mlap::{Component, PeMode, Scope};
use glinkx::synth::Regime;

use commands::Emitter;
use error::CliError;

#[derive(Parser)]
#[command(name = "glinkx", version, about = "Propagation-light node classification on graphs")]
struct Cli {
    /// Run every kernel on one thread regardless of GLINKX_THREADS.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate text inputs and write a checksummed bundle.
    Ingest(IngestArgs),
    /// Train node embeddings on a bundle's graph.
    KgeTrain(KgeArgs),
    /// Run the full pipeline on every split.
    Run(RunArgs),
    /// Run the pipeline with components removed.
    Ablate(AblateArgs),
    /// Label propagation baseline.
    Lp(LpArgs),
    /// Adjacency-plus-features baseline, or the feature-only MLP.
    Linkx(LinkxArgs),
    /// Predict nodes revealed after training with a saved model.
    Inductive(InductiveArgs),
    /// Generate a synthetic bundle.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Estimator experiments on generated instances.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Summarize run records as mean and sample std per method.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Text rows or a DMAT1 file.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Split file with one role per line; repeat for several splits.
    #[arg(long)]
    pub split: Vec<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Add the reverse of every edge.
    #[arg(long)]
    pub undirected: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct KgeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "paper-defaults", conflicts_with = "config")]
    pub profile: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    /// `margin` or `softmax`.
    #[arg(long)]
    pub loss: Option<KgeLoss>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on this edge list over the bundle's nodes instead of its graph,
    /// e.g. the training subgraph.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Write the table as DMAT1.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Store the table in the bundle for later runs.
    #[arg(long)]
    pub store: bool,
}

#[derive(Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `paper-defaults` or `<dataset>-<adjacency|kge>`.
    #[arg(long, default_value = "paper-defaults", conflicts_with = "config")]
    pub profile: String,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Positional embeddings: `adjacency` or `kge`.
    #[arg(long)]
    pub pe: Option<PeMode>,
    /// Embedding table in DMAT1 format.
    #[arg(long)]
    pub pe_file: Option<PathBuf>,
    /// Run without positional embeddings.
    #[arg(long, conflicts_with_all = ["pe", "pe_file"])]
    pub no_pe: bool,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Only this split.
    #[arg(long)]
    pub split: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Propagate over the symmetrized graph.
    #[arg(long)]
    pub symmetrize: bool,
    /// Report binary AUC on two-class tasks.
    #[arg(long)]
    pub auc: bool,
    /// Reject settings outside the published sweep grids.
    #[arg(long)]
    pub paper_grid: bool,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Save each run's model under this directory.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    /// Also emit per-epoch records.
    #[arg(long)]
    pub log_epochs: bool,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Components to remove: `ego`, `prop`, `pe`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub drop: Vec<Component>,
    /// `all` removes them from every stage, `stage3` from the final one.
    #[arg(long, default_value = "all")]
    pub scope: Scope,
}

#[derive(Args)]
pub struct LpArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub hops: usize,
    /// One or more values; several are selected by validation accuracy.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,
    /// Reset training rows to their labels after every iteration.
    #[arg(long)]
    pub clamp: bool,
    /// Propagate over 2-hop-exclusive pairs only.
    #[arg(long)]
    pub masked: bool,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub split: Option<usize>,
    #[arg(long)]
    pub auc: bool,
}

#[derive(Args)]
pub struct LinkxArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Train on node features alone.
    #[arg(long)]
    pub features_only: bool,
}

#[derive(Args)]
pub struct InductiveArgs {
    /// Directory written by `run --save-model`.
    #[arg(long)]
    pub model: PathBuf,
    /// Number of new nodes; they take ids after the known ones.
    #[arg(long)]
    pub count: usize,
    /// Revealed edges over known and new ids.
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Labels of the new nodes, to report accuracy.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum SynthCommand {
    /// Planted-partition graph with Gaussian class features.
    Planted {
        #[arg(long, default_value_t = 2000)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        degree: usize,
        /// `homophilous`, `heterophilous` or `mixed`.
        #[arg(long, default_value = "heterophilous")]
        regime: Regime,
        /// Same-class mixing weight of the homophilous regions.
        #[arg(long, default_value_t = 0.9)]
        strength: f64,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, default_value_t = 1.0)]
        signal: f64,
        #[arg(long, default_value_t = 10)]
        splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regular bipartite-block instance with known likelihoods.
    Theory {
        #[arg(long, default_value_t = 5000)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        degree: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        splits: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum TheoryCommand {
    /// Error of the counting estimator against neighborhood size.
    Counting {
        #[arg(long, default_value_t = 5000)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 17)]
        degree: usize,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512,1024")]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 100)]
        nodes_per_trial: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parametric neighbor model against counting, per seed.
    Parametric {
        #[arg(long, default_value_t = 5000)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        degree: usize,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 500.0)]
        decay: f64,
    },
    /// Two-phase training against label-only SGD, with a paired t-test.
    TwoPhase {
        #[arg(long, default_value_t = 4000)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        degree: usize,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 400.0)]
        decay: f64,
        #[arg(long, default_value_t = 200)]
        phase1_steps: usize,
        #[arg(long, default_value_t = 0.5)]
        phase1_lr: f64,
        /// Fixed mixing weight; the plug-in estimate when omitted.
        #[arg(long)]
        lambda: Option<f64>,
    },
}

#[derive(Args)]
pub struct ReportArgs {
    /// JSON-lines logs; stdin when none are given.
    pub logs: Vec<PathBuf>,
    /// Print a text table instead of JSON lines.
    #[arg(long)]
    pub table: bool,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("GLINKX_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().map_err(|_| CliError::Threads(raw.clone()))?;
    if threads == 0 {
        return Err(CliError::Threads(raw));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let mut em = Emitter::new();
    match cli.command {
        Command::Ingest(a) => commands::ingest_cmd(&a, &mut em),
        Command::KgeTrain(a) => commands::kge(&a, exec, &mut em),
        Command::Run(a) => commands::run(&a, exec, &mut em),
        Command::Ablate(a) => commands::ablate(&a, exec, &mut em),
        Command::Lp(a) => commands::lp(&a, exec, &mut em),
        Command::Linkx(a) => commands::linkx(&a, &mut em),
        Command::Inductive(a) => commands::inductive(&a, &mut em),
        Command::Synth(c) => commands::synth(&c, &mut em),
        Command::Theory(c) => commands::theory(&c, exec, &mut em),
        Command::Report(a) => commands::report(&a, &mut em),
    }
}

fn fail(code: &str, message: String, status: u8) -> ExitCode {
    eprintln!("{}", json!({"error": code, "message": message}));
    ExitCode::from(status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), 2),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed reader (`| head`) is not a failure
        Err(CliError::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e @ CliError::Usage(_)) => fail(e.code(), e.to_string(), 2),
        Err(e) => fail(e.code(), e.to_string(), 1),
    }
}
