//! Label propagation variants and the feature-only and LINKX baselines.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::train::argmax;
use crate::dense::{DenseMatrix, FeatureMatrix};
use crate::exec::Exec;
use crate::graph::{build_graph, CsrGraph, GraphError, LabelVector, Role, SplitMasks};
use crate::mlap::{adjacency_pe, stage3_train, GlinkxConfig, PipelineError, Stage3Result};

#[derive(Debug, Error)]
pub enum LpError {
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("iterations must be at least 1")]
    Iterations,
    #[error("hops must be 1 or 2, got {0}")]
    Hops(usize),
    #[error("no 2-hop-exclusive structure")]
    NoTwoHopExclusive,
    #[error("labels cover {labels} nodes, graph has {nodes}")]
    Shape { labels: usize, nodes: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpConfig {
    pub alpha: f64,
    pub hops: usize,
    pub iterations: usize,
    /// Reset training rows to their one-hot label after every iteration.
    pub clamp: bool,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            hops: 1,
            iterations: 50,
            clamp: false,
        }
    }
}

impl LpConfig {
    fn validate(&self) -> Result<(), LpError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LpError::Alpha(self.alpha));
        }
        if self.iterations == 0 {
            return Err(LpError::Iterations);
        }
        if !(1..=2).contains(&self.hops) {
            return Err(LpError::Hops(self.hops));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LpOutcome {
    pub scores: DenseMatrix,
    pub predictions: Vec<usize>,
    /// Nodes without neighbors in the propagation graph, predicted as the
    /// majority training class.
    pub fallback: Vec<bool>,
    pub train_acc: f64,
    pub valid_acc: f64,
    pub test_acc: f64,
}

/// Undirected binary graph whose edges join nodes at exactly-`h`-step walk
/// distance: the support of `A^h` on the symmetrized graph, without self-loops.
pub fn hop_graph(g: &CsrGraph, hops: usize) -> CsrGraph {
    let sym = g.symmetrized();
    if hops == 1 {
        return without_self_loops(&sym);
    }
    let mut edges = Vec::new();
    let mut seen = vec![usize::MAX; sym.n()];
    for i in 0..sym.n() {
        for &k in sym.out_neighbors(i) {
            for &j in sym.out_neighbors(k as usize) {
                let j = j as usize;
                if j != i && seen[j] != i {
                    seen[j] = i;
                    edges.push((i, j));
                }
            }
        }
    }
    build_graph(&edges, sym.n(), false, true).expect("endpoints come from a valid graph")
}

fn without_self_loops(g: &CsrGraph) -> CsrGraph {
    let edges: Vec<(usize, usize)> = g.edges().filter(|(s, d)| s != d).collect();
    build_graph(&edges, g.n(), false, false).expect("endpoints come from a valid graph")
}

/// Entries `(i, j)` with `(A^2)_ij - A_ij - I_ij >= 1` on the binary
/// symmetrized adjacency, diagonal removed.
pub fn two_hop_exclusive(g: &CsrGraph) -> Result<CsrGraph, LpError> {
    let sym = without_self_loops(&g.symmetrized());
    let two = hop_graph(&sym, 2);
    let mut edges = Vec::new();
    for i in 0..two.n() {
        for &j in two.out_neighbors(i) {
            let j = j as usize;
            if walk_count(&sym, i, j) > usize::from(sym.has_edge(i, j)) {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        return Err(LpError::NoTwoHopExclusive);
    }
    Ok(build_graph(&edges, sym.n(), false, false)?)
}

fn walk_count(g: &CsrGraph, i: usize, j: usize) -> usize {
    g.out_neighbors(i).iter().filter(|&&k| g.has_edge(k as usize, j)).count()
}

/// `Y <- alpha S Y + (1 - alpha) Y0` with `S = D^-1/2 (A + I) D^-1/2` over the
/// hop-`h` graph.
pub fn label_prop(
    g: &CsrGraph,
    labels: &LabelVector,
    split: &SplitMasks,
    cfg: &LpConfig,
    exec: Exec,
) -> Result<LpOutcome, LpError> {
    cfg.validate()?;
    propagate_on(&hop_graph(g, cfg.hops), labels, split, cfg, exec)
}

/// Label propagation on the strictly-2-hop graph.
pub fn label_prop_masked(
    g: &CsrGraph,
    labels: &LabelVector,
    split: &SplitMasks,
    cfg: &LpConfig,
    exec: Exec,
) -> Result<LpOutcome, LpError> {
    cfg.validate()?;
    propagate_on(&two_hop_exclusive(g)?, labels, split, cfg, exec)
}

/// Runs the iteration on an undirected support graph without self-loops.
pub fn propagate_on(
    support: &CsrGraph,
    labels: &LabelVector,
    split: &SplitMasks,
    cfg: &LpConfig,
    exec: Exec,
) -> Result<LpOutcome, LpError> {
    cfg.validate()?;
    let n = support.n();
    if labels.len() != n || split.len() != n {
        return Err(LpError::Shape {
            labels: labels.len().min(split.len()),
            nodes: n,
        });
    }
    let c = labels.classes();
    let mut seed = DenseMatrix::zeros(n, c);
    let mut counts = vec![0usize; c];
    for i in split.train() {
        if let Some(l) = labels.get(i) {
            seed.set(i, l, 1.0);
            counts[l] += 1;
        }
    }
    if counts.iter().all(|&k| k == 0) {
        return Err(GraphError::EmptyTrainSplit.into());
    }
    let majority = argmax(&counts.iter().map(|&k| k as f64).collect::<Vec<_>>());
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((support.out_degree(i) + 1) as f64).sqrt()).collect();
    let alpha = cfg.alpha;
    let mut y = seed.clone();
    let mut next = DenseMatrix::zeros(n, c);
    for _ in 0..cfg.iterations {
        exec.rows_mut(next.data_mut(), c, |i, row| {
            let di = inv_sqrt[i];
            for ((o, &v), &s) in row.iter_mut().zip(y.row(i)).zip(seed.row(i)) {
                *o = alpha * di * di * v + (1.0 - alpha) * s;
            }
            for &j in support.out_neighbors(i) {
                let w = alpha * di * inv_sqrt[j as usize];
                for (o, &v) in row.iter_mut().zip(y.row(j as usize)) {
                    *o += w * v;
                }
            }
        });
        if cfg.clamp {
            for i in split.train() {
                if labels.get(i).is_some() {
                    next.row_mut(i).copy_from_slice(seed.row(i));
                }
            }
        }
        std::mem::swap(&mut y, &mut next);
    }
    let mut fallback = vec![false; n];
    let predictions: Vec<usize> = (0..n)
        .map(|i| {
            if support.out_degree(i) == 0 && !(split.is_train(i) && labels.get(i).is_some()) {
                fallback[i] = true;
                majority
            } else {
                argmax(y.row(i))
            }
        })
        .collect();
    let isolated_test = (0..n).filter(|&i| fallback[i] && split.role(i) == Role::Test).count();
    if isolated_test > 0 {
        warn!("{isolated_test} test nodes are isolated; predicted as the majority training class");
    }
    let acc = |role| role_accuracy(&predictions, labels, split, role);
    Ok(LpOutcome {
        train_acc: acc(Role::Train),
        valid_acc: acc(Role::Valid),
        test_acc: acc(Role::Test),
        scores: y,
        predictions,
        fallback,
    })
}

fn role_accuracy(predictions: &[usize], labels: &LabelVector, split: &SplitMasks, role: Role) -> f64 {
    let scored: Vec<bool> = split
        .nodes(role)
        .into_iter()
        .filter_map(|i| labels.get(i).map(|l| predictions[i] == l))
        .collect();
    if scored.is_empty() {
        return 0.0;
    }
    scored.iter().filter(|&&hit| hit).count() as f64 / scored.len() as f64
}

/// Feature-only MLP trained like the final classifier.
pub fn feature_mlp_baseline(
    features: &FeatureMatrix,
    labels: &LabelVector,
    split: &SplitMasks,
    cfg: &GlinkxConfig,
    seed: u64,
) -> Result<Stage3Result, PipelineError> {
    stage3_train(Some(features), None, None, labels, split, cfg, seed)
}

/// MLP on features combined with an MLP on adjacency rows.
pub fn linkx_baseline(
    g: &CsrGraph,
    features: Option<&FeatureMatrix>,
    labels: &LabelVector,
    split: &SplitMasks,
    cfg: &GlinkxConfig,
    seed: u64,
) -> Result<Stage3Result, PipelineError> {
    let adjacency = adjacency_pe(g);
    stage3_train(features, Some(&adjacency), None, labels, split, cfg, seed)
}
