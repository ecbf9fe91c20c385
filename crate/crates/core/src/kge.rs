//! Positional embeddings from the graph viewed as a single-relation knowledge
//! graph. DistMult scoring with the relation fixed to all-ones, negative
//! sampling, plain SGD on the rows a minibatch touches.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::dmat::{Dmat, DmatError};
use crate::dense::DenseMatrix;
use crate::exec::{derive_seed, Exec};
use crate::graph::CsrGraph;

const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("graph has no edges to embed")]
    NoEdges,
    #[error("invalid kge config: {0}")]
    Config(String),
    #[error("embedding table has {found} rows but graph has {expected} nodes")]
    NodeCount { expected: usize, found: usize },
    #[error(transparent)]
    Format(#[from] DmatError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeLoss {
    /// `max(0, margin - f(pos) + f(neg))`, averaged over negatives.
    Margin,
    /// `-log(exp f(pos) / (exp f(pos) + sum exp f(neg)))`.
    Softmax,
}

impl std::str::FromStr for KgeLoss {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "margin" | "ranking" => Ok(KgeLoss::Margin),
            "softmax" => Ok(KgeLoss::Softmax),
            other => Err(format!("unknown kge loss {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgeConfig {
    pub dim: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub batch: usize,
    pub lr: f64,
    pub loss: KgeLoss,
    pub margin: f64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        Self {
            dim: 400,
            epochs: 50,
            negatives: 1000,
            batch: 10000,
            lr: 0.1,
            loss: KgeLoss::Softmax,
            margin: 1.0,
        }
    }
}

impl KgeConfig {
    fn validate(&self) -> Result<(), KgeError> {
        if self.dim == 0 || self.negatives == 0 || self.batch == 0 {
            return Err(KgeError::Config("dim, negatives and batch must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(KgeError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Trained `n x dim` embedding table stored in single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct KgeTable {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl KgeTable {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let d = Dmat::from_dense(m);
        Self {
            rows: d.rows,
            dim: d.cols,
            data: d.data,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.to_dmat().to_dense()
    }

    fn to_dmat(&self) -> Dmat {
        Dmat {
            rows: self.rows,
            cols: self.dim,
            data: self.data.clone(),
        }
    }

    /// Score of the pair under the all-ones relation.
    pub fn score(&self, h: usize, t: usize) -> f64 {
        let a: Vec<f64> = self.row(h).iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = self.row(t).iter().map(|&v| v as f64).collect();
        distmult_score(&a, &b)
    }
}

/// `sum_i h_i * 1 * t_i`.
pub fn distmult_score(h: &[f64], t: &[f64]) -> f64 {
    debug_assert_eq!(h.len(), t.len());
    h.iter().zip(t).map(|(a, b)| a * b).sum()
}

pub fn export_kge(table: &KgeTable, path: &Path) -> Result<(), KgeError> {
    table.to_dmat().write(path)?;
    Ok(())
}

/// Loads a table and checks it has one row per graph node.
pub fn import_kge(path: &Path, expected_rows: usize) -> Result<KgeTable, KgeError> {
    let d = Dmat::read(path)?;
    if d.rows != expected_rows {
        return Err(KgeError::NodeCount {
            expected: expected_rows,
            found: d.rows,
        });
    }
    Ok(KgeTable {
        rows: d.rows,
        dim: d.cols,
        data: d.data,
    })
}

/// Gradient of the loss with respect to the score `emb[a] . emb[b]`.
#[derive(Clone, Copy, Debug)]
struct ScoreGrad {
    a: usize,
    b: usize,
    g: f64,
}

/// Stateful trainer; exposes single minibatch steps for inspection.
pub struct KgeTrainer<'g> {
    graph: &'g CsrGraph,
    edges: Vec<(usize, usize)>,
    cfg: KgeConfig,
    seed: u64,
    exec: Exec,
    emb: DenseMatrix,
    degenerate_negatives: u64,
}

impl<'g> KgeTrainer<'g> {
    pub fn new(graph: &'g CsrGraph, cfg: KgeConfig, seed: u64, exec: Exec) -> Result<Self, KgeError> {
        cfg.validate()?;
        if graph.m() == 0 {
            return Err(KgeError::NoEdges);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (cfg.dim as f64).sqrt();
        let data = (0..graph.n() * cfg.dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let emb = DenseMatrix::from_vec(graph.n(), cfg.dim, data).expect("sized by construction");
        Ok(Self {
            graph,
            edges: graph.edges().collect(),
            cfg,
            seed,
            exec,
            emb,
            degenerate_negatives: 0,
        })
    }

    pub fn embeddings(&self) -> &DenseMatrix {
        &self.emb
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Negatives that had to be accepted although they are edges of the graph.
    pub fn degenerate_negatives(&self) -> u64 {
        self.degenerate_negatives
    }

    /// Replaces the head or the tail with a uniform node, rejecting known
    /// edges and self-pairs.
    fn corrupt(&self, u: usize, v: usize, rng: &mut ChaCha8Rng) -> ((usize, usize), bool) {
        let n = self.graph.n();
        let mut last = (u, v);
        for _ in 0..MAX_REJECTIONS {
            let w = rng.random_range(0..n);
            last = if rng.random_bool(0.5) { (w, v) } else { (u, w) };
            if last.0 != last.1 && !self.graph.has_edge(last.0, last.1) {
                return (last, false);
            }
        }
        (last, true)
    }

    fn positive_grads(&self, u: usize, v: usize, rng: &mut ChaCha8Rng) -> (Vec<ScoreGrad>, f64, u64) {
        let nu = self.cfg.negatives;
        let s_pos = distmult_score(self.emb.row(u), self.emb.row(v));
        let mut negs = Vec::with_capacity(nu);
        let mut degenerate = 0;
        for _ in 0..nu {
            let (pair, bad) = self.corrupt(u, v, rng);
            degenerate += u64::from(bad);
            negs.push((pair, distmult_score(self.emb.row(pair.0), self.emb.row(pair.1))));
        }
        let mut grads = Vec::with_capacity(nu + 1);
        let loss = match self.cfg.loss {
            KgeLoss::Margin => {
                let w = 1.0 / nu as f64;
                let mut loss = 0.0;
                let mut g_pos = 0.0;
                for &((a, b), s) in &negs {
                    let viol = self.cfg.margin - s_pos + s;
                    if viol > 0.0 {
                        loss += w * viol;
                        g_pos -= w;
                        grads.push(ScoreGrad { a, b, g: w });
                    }
                }
                grads.push(ScoreGrad { a: u, b: v, g: g_pos });
                loss
            }
            KgeLoss::Softmax => {
                let max = negs.iter().map(|n| n.1).fold(s_pos, f64::max);
                let z: f64 = (s_pos - max).exp() + negs.iter().map(|n| (n.1 - max).exp()).sum::<f64>();
                let p_pos = (s_pos - max).exp() / z;
                for &((a, b), s) in &negs {
                    grads.push(ScoreGrad {
                        a,
                        b,
                        g: (s - max).exp() / z,
                    });
                }
                grads.push(ScoreGrad { a: u, b: v, g: p_pos - 1.0 });
                -(s_pos - max) + z.ln()
            }
        };
        (grads, loss, degenerate)
    }

    /// One SGD step over the given edge indices. Gradients are computed from
    /// the pre-step table and summed over the batch. Returns the summed loss.
    pub fn step(&mut self, batch: &[usize], epoch: usize) -> f64 {
        let per_positive = self.exec.map(batch.len(), |k| {
            let e = batch[k];
            let (u, v) = self.edges[e];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch as u64, e as u64));
            self.positive_grads(u, v, &mut rng)
        });
        let dim = self.cfg.dim;
        let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut loss = 0.0;
        for (grads, l, bad) in per_positive {
            loss += l;
            self.degenerate_negatives += bad;
            for sg in grads {
                if sg.g == 0.0 {
                    continue;
                }
                let ea = self.emb.row(sg.a);
                let eb = self.emb.row(sg.b);
                let ga = acc.entry(sg.a).or_insert_with(|| vec![0.0; dim]);
                for (x, y) in ga.iter_mut().zip(eb) {
                    *x += sg.g * y;
                }
                let gb = acc.entry(sg.b).or_insert_with(|| vec![0.0; dim]);
                for (x, y) in gb.iter_mut().zip(ea) {
                    *x += sg.g * y;
                }
            }
        }
        let lr = self.cfg.lr;
        for (row, g) in acc {
            for (p, d) in self.emb.row_mut(row).iter_mut().zip(&g) {
                *p -= lr * d;
            }
        }
        loss
    }

    /// Runs one epoch over shuffled edges and returns the mean loss.
    pub fn epoch(&mut self, epoch: usize, order_rng: &mut ChaCha8Rng) -> f64 {
        let mut order: Vec<usize> = (0..self.edges.len()).collect();
        order.shuffle(order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch) {
            total += self.step(chunk, epoch);
        }
        total / self.edges.len() as f64
    }

    pub fn into_table(self) -> KgeTable {
        KgeTable::from_dense(&self.emb)
    }
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct KgeRun {
    pub table: KgeTable,
    pub epoch_losses: Vec<f64>,
}

pub fn kge_train(g: &CsrGraph, cfg: &KgeConfig, seed: u64, exec: Exec) -> Result<KgeRun, KgeError> {
    let mut trainer = KgeTrainer::new(g, cfg.clone(), seed, exec)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        epoch_losses.push(trainer.epoch(epoch, &mut order_rng));
    }
    if trainer.degenerate_negatives() > 0 {
        warn!(
            "{} negative samples coincide with edges after {MAX_REJECTIONS} rejections",
            trainer.degenerate_negatives()
        );
    }
    Ok(KgeRun {
        table: trainer.into_table(),
        epoch_losses,
    })
}

/// Mean scores of within-block and cross-block pairs (distinct nodes).
pub fn block_scores(table: &KgeTable, block_of: &[usize]) -> (f64, f64) {
    let (mut intra, mut ni, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..table.rows() {
        for b in 0..table.rows() {
            if a == b {
                continue;
            }
            let s = table.score(a, b);
            if block_of[a] == block_of[b] {
                intra += s;
                ni += 1;
            } else {
                cross += s;
                nc += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, cross / nc.max(1) as f64)
}
