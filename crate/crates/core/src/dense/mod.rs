//! Dense matrices, the multi-branch shallow network, AdamW, training loop,
//! finite-difference gradient checks and `DMAT1` matrix files.

pub mod adamw;
pub mod dmat;
pub mod gradcheck;
pub mod matrix;
pub mod nn;
pub mod train;

use thiserror::Error;

pub use adamw::{AdamWConfig, AdamWState};
pub use matrix::{softmax_rows, DenseMatrix, FeatureMatrix, SparseRows};
pub use nn::{Batch, NetConfig, TwoBranchNet};
pub use train::{train_model, NetInputs, TrainConfig, TrainOutcome, ValidationSignal};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("network needs at least one input branch")]
    NoBranches,
    #[error("no training nodes")]
    NoTrainNodes,
}
