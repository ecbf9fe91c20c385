//! Node classification on homophilous and heterophilous graphs with a
//! shallow, propagation-light pipeline: graph embeddings as positional
//! features, one forward and one backward pass of label propagation, and
//! minibatch-trained multilayer perceptrons. Label propagation and LINKX
//! baselines, synthetic graph generators and estimator experiments ship
//! alongside.
//!
//! Data-parallel kernels use rayon when the default `parallel` feature is
//! on; every kernel also runs sequentially through [`exec::Exec`].

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod dense;
pub mod exec;
pub mod graph;
pub mod kge;
pub mod metrics;
pub mod mlap;
pub mod report;
pub mod synth;
pub mod theory;
