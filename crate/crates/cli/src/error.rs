use std::path::PathBuf;

use glinkx::baselines::LpError;
use glinkx::config::ConfigError;
use glinkx::dataset::DatasetError;
use glinkx::dense::dmat::DmatError;
use glinkx::kge::KgeError;
use glinkx::mlap::PipelineError;
use glinkx::report::ReportError;
use glinkx::synth::SynthError;
use glinkx::theory::TheoryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("GLINKX_THREADS must be a positive integer, got {0:?}")]
    Threads(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dmat(#[from] DmatError),
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl CliError {
    /// Stable machine-readable code written to stderr.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Threads(_) => "invalid_threads",
            CliError::Io { .. } => "io",
            CliError::Dataset(e) => e.code(),
            CliError::Config(ConfigError::UnknownProfile(_)) => "unknown_profile",
            CliError::Config(ConfigError::OffGrid { .. }) => "off_grid",
            CliError::Config(_) => "config",
            CliError::Dmat(DmatError::RowMismatch { .. }) => "dimension_mismatch",
            CliError::Dmat(_) => "dmat",
            CliError::Kge(KgeError::NodeCount { .. }) => "dimension_mismatch",
            CliError::Kge(KgeError::NoEdges) => "no_edges",
            CliError::Kge(_) => "kge",
            CliError::Pipeline(PipelineError::Shape(_)) => "dimension_mismatch",
            CliError::Pipeline(PipelineError::NoStage2Signal) => "no_stage2_signal",
            CliError::Pipeline(PipelineError::AllBranchesRemoved) => "all_branches_removed",
            CliError::Pipeline(_) => "pipeline",
            CliError::Lp(LpError::NoTwoHopExclusive) => "no_two_hop_exclusive",
            CliError::Lp(_) => "label_propagation",
            CliError::Synth(_) => "synth",
            CliError::Theory(TheoryError::Diverged(_)) => "diverged",
            CliError::Theory(_) => "theory",
            CliError::Report(ReportError::Empty) => "empty_logs",
            CliError::Report(_) => "bad_record",
        }
    }
}

pub fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
