//! Label propagation around a learned neighbor-distribution model: the
//! forward and backward passes, the two trained stages, ablations and
//! inductive prediction for nodes unseen during training.

pub mod inductive;
pub mod pipeline;
pub mod propagate;

use thiserror::Error;

use crate::dense::dmat::DmatError;
use crate::dense::NnError;
use crate::graph::GraphError;

pub use inductive::{inductive_predict, GlinkxModel, InductivePrediction, NewNodes};
pub use pipeline::{
    adjacency_pe, run_glinkx, stage2_train, stage3_train, Ablation, Component, GlinkxConfig, GlinkxRun, PeMode,
    PipelineData, Scope, Stage2Result, Stage3Result,
};
pub use propagate::{mlap_backward, mlap_forward, SoftLabels};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: NnError,
    },
    #[error("no supervised stage 2 signal: no training node has a training in-neighbor")]
    NoStage2Signal,
    #[error("every input branch was removed")]
    AllBranchesRemoved,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("model artifact: {0}")]
    Io(#[from] std::io::Error),
    #[error("model artifact: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Dmat(#[from] DmatError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl PipelineError {
    pub(crate) fn stage(stage: &'static str, source: NnError) -> Self {
        PipelineError::Stage { stage, source }
    }
}
