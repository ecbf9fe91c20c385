//! Planted-partition graphs with controllable homophily or monophily, and
//! theory instances with known per-node class likelihoods.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{softmax_rows, DenseMatrix};
use crate::graph::{build_graph, CsrGraph, GraphError, LabelVector, Role, SplitMasks};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("degree {k} is infeasible for {n} nodes")]
    InfeasibleDegree { k: usize, n: usize },
    #[error("minimum degree {k} must exceed classes squared ({c}^2)")]
    DegreeBelowClassSquare { k: usize, c: usize },
    #[error("invalid generator config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Regime {
    /// Class-mixing row `a` is `strength * e_a + (1 - strength) / c`.
    Homophilous { strength: f64 },
    /// Every class links to exactly one partner class.
    Heterophilous,
    /// Half the nodes (by region) homophilous, half heterophilous; edges stay
    /// within a region.
    Mixed { strength: f64 },
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "homophilous" | "homo" => Ok(Regime::Homophilous { strength: 0.9 }),
            "heterophilous" | "hetero" => Ok(Regime::Heterophilous),
            "mixed" => Ok(Regime::Mixed { strength: 0.9 }),
            other => Err(format!("unknown regime {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub nodes: usize,
    pub classes: usize,
    /// Target mean degree.
    pub degree: usize,
    pub regime: Regime,
    pub feature_dim: usize,
    /// Scale of the class centroids relative to unit noise.
    pub feature_signal: f64,
    pub feature_noise: f64,
    /// Train and validation fractions; the remainder is test.
    pub split_fractions: (f64, f64),
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            nodes: 2000,
            classes: 4,
            degree: 20,
            regime: Regime::Heterophilous,
            feature_dim: 16,
            feature_signal: 1.0,
            feature_noise: 1.0,
            split_fractions: (0.5, 0.25),
            seed: 0,
        }
    }
}

/// Generated graph with its features, labels and a random split.
#[derive(Clone, Debug)]
pub struct PlantedGraph {
    pub graph: CsrGraph,
    pub features: DenseMatrix,
    pub labels: LabelVector,
    pub split: SplitMasks,
    /// Region of each node: 0 homophilous, 1 heterophilous.
    pub region: Vec<u8>,
    pub mixing: DenseMatrix,
}

/// Partner of each class in the heterophilous regime: `(0,1), (2,3), ...`;
/// with an odd class count the last class is its own partner.
pub fn partner_class(a: usize, c: usize) -> usize {
    let b = a ^ 1;
    if b >= c {
        a
    } else {
        b
    }
}

pub fn mixing_matrix(regime: Regime, c: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(c, c);
    match regime {
        Regime::Homophilous { strength } | Regime::Mixed { strength } => {
            for a in 0..c {
                for b in 0..c {
                    m.set(a, b, (1.0 - strength) / c as f64 + if a == b { strength } else { 0.0 });
                }
            }
        }
        Regime::Heterophilous => {
            for a in 0..c {
                m.set(a, partner_class(a, c), 1.0);
            }
        }
    }
    m
}

pub fn sample_label<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    row.len() - 1
}

/// Random split with the given train and validation fractions. At least one
/// node is always training.
pub fn random_split(n: usize, fractions: (f64, f64), seed: u64, index: usize) -> Result<SplitMasks, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0000 ^ index as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((n as f64 * fractions.0).round() as usize).clamp(1.min(n), n);
    let n_valid = ((n as f64 * fractions.1).round() as usize).min(n - n_train);
    let mut roles = vec![Role::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        roles[i] = if rank < n_train {
            Role::Train
        } else if rank < n_train + n_valid {
            Role::Valid
        } else {
            Role::Test
        };
    }
    SplitMasks::new(index, roles)
}

/// Each node draws `degree / 2` neighbor stubs: a class from its mixing row,
/// then a uniform node of that class in its region. Edges are undirected.
pub fn generate_planted(cfg: &PlantedConfig) -> Result<PlantedGraph, SynthError> {
    let (n, c) = (cfg.nodes, cfg.classes);
    if c < 2 {
        return Err(SynthError::Invalid(format!("need at least 2 classes, got {c}")));
    }
    if cfg.degree == 0 || cfg.degree >= n {
        return Err(SynthError::InfeasibleDegree { k: cfg.degree, n });
    }
    if let Regime::Homophilous { strength } | Regime::Mixed { strength } = cfg.regime {
        if !(0.0..=1.0).contains(&strength) {
            return Err(SynthError::Invalid(format!("strength {strength} not in [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let regions = if matches!(cfg.regime, Regime::Mixed { .. }) { 2 } else { 1 };
    let region: Vec<u8> = (0..n)
        .map(|i| match cfg.regime {
            Regime::Mixed { .. } => u8::from(i % 2 == 1),
            Regime::Heterophilous => 1,
            Regime::Homophilous { .. } => 0,
        })
        .collect();
    // balanced classes within each region
    let mut labels = vec![0usize; n];
    let mut members = vec![vec![Vec::new(); c]; 2];
    for r in 0..regions {
        let mut nodes: Vec<usize> = (0..n).filter(|&i| region[i] as usize == r || regions == 1).collect();
        nodes.shuffle(&mut rng);
        for (rank, &i) in nodes.iter().enumerate() {
            labels[i] = rank % c;
        }
    }
    for i in 0..n {
        members[region[i] as usize][labels[i]].push(i);
    }
    let homo = mixing_matrix(cfg.regime, c);
    let hetero = mixing_matrix(Regime::Heterophilous, c);
    let mixing = if matches!(cfg.regime, Regime::Heterophilous) { hetero.clone() } else { homo.clone() };
    let stubs = cfg.degree.div_ceil(2);
    let mut edges = Vec::with_capacity(n * stubs);
    for i in 0..n {
        let r = region[i] as usize;
        let row = if r == 1 { hetero.row(labels[i]) } else { homo.row(labels[i]) };
        for _ in 0..stubs {
            for _attempt in 0..32 {
                let b = sample_label(row, &mut rng);
                let pool = &members[r][b];
                if pool.is_empty() {
                    continue;
                }
                let j = pool[rng.random_range(0..pool.len())];
                if j != i {
                    edges.push((i, j));
                    break;
                }
            }
        }
    }
    let graph = build_graph(&edges, n, true, true)?;

    let d = cfg.feature_dim;
    let centroids: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| cfg.feature_signal * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
        .collect();
    let mut features = DenseMatrix::zeros(n, d);
    for i in 0..n {
        for (k, v) in features.row_mut(i).iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v = centroids[labels[i]][k] + cfg.feature_noise * noise;
        }
    }
    let split = random_split(n, cfg.split_fractions, cfg.seed, 0)?;
    Ok(PlantedGraph {
        graph,
        features,
        labels: LabelVector::from_known(&labels, c)?,
        split,
        region,
        mixing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub nodes: usize,
    pub classes: usize,
    /// Every node has exactly this many neighbors.
    pub degree: usize,
    /// Standard deviation of the per-side logits.
    pub logit_scale: f64,
    /// Standard deviation of per-node logit perturbations.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            nodes: 5000,
            classes: 3,
            degree: 10,
            logit_scale: 1.5,
            jitter: 0.0,
            seed: 0,
        }
    }
}

/// Nodes with known class likelihoods `p`, neighbor likelihoods `q` (exact
/// neighbor means of `p`), features `xi` and labels sampled from `p`.
#[derive(Clone, Debug)]
pub struct TheoryInstance {
    pub graph: CsrGraph,
    pub p: DenseMatrix,
    pub q: DenseMatrix,
    /// `[centered log p_i ; centered log q_i]`, so both likelihoods are
    /// softmax-linear in `xi`.
    pub xi: DenseMatrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl TheoryInstance {
    pub fn n(&self) -> usize {
        self.p.rows()
    }
}

fn centered_log(row: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = row.iter().map(|v| v.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    logs.iter().map(|v| v - mean).collect()
}

/// Neighbor means of the rows of `p`.
pub fn neighbor_mean(g: &CsrGraph, p: &DenseMatrix) -> DenseMatrix {
    let mut q = DenseMatrix::zeros(p.rows(), p.cols());
    for i in 0..g.n() {
        let nb = g.out_neighbors(i);
        if nb.is_empty() {
            continue;
        }
        let inv = 1.0 / nb.len() as f64;
        let row = q.row_mut(i);
        for &j in nb {
            for (o, v) in row.iter_mut().zip(p.row(j as usize)) {
                *o += v * inv;
            }
        }
    }
    q
}

/// Disjoint complete bipartite blocks `K_{K,K}`; each side shares a random
/// logit vector, perturbed per node by `jitter`.
pub fn generate_theory_instance(cfg: &TheoryConfig) -> Result<TheoryInstance, SynthError> {
    let (k, c) = (cfg.degree, cfg.classes);
    if c < 2 {
        return Err(SynthError::Invalid(format!("need at least 2 classes, got {c}")));
    }
    if k <= c * c {
        return Err(SynthError::DegreeBelowClassSquare { k, c });
    }
    let blocks = cfg.nodes / (2 * k);
    if blocks == 0 {
        return Err(SynthError::InfeasibleDegree { k, n: cfg.nodes });
    }
    let n = blocks * 2 * k;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut edges = Vec::with_capacity(n * k);
    let mut logits = DenseMatrix::zeros(n, c);
    for b in 0..blocks {
        let base = b * 2 * k;
        let sides: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..c).map(|_| cfg.logit_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
            .collect();
        for s in 0..2 {
            for t in 0..k {
                let i = base + s * k + t;
                for (l, v) in logits.row_mut(i).iter_mut().enumerate() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v = sides[s][l] + cfg.jitter * e;
                }
            }
        }
        for a in 0..k {
            for bb in 0..k {
                edges.push((base + a, base + k + bb));
            }
        }
    }
    let graph = build_graph(&edges, n, true, true)?;
    let p = softmax_rows(&logits);
    let q = neighbor_mean(&graph, &p);
    let mut xi = DenseMatrix::zeros(n, 2 * c);
    for i in 0..n {
        let row = xi.row_mut(i);
        row[..c].copy_from_slice(&centered_log(p.row(i)));
        row[c..].copy_from_slice(&centered_log(q.row(i)));
    }
    let labels = (0..n).map(|i| sample_label(p.row(i), &mut rng)).collect();
    Ok(TheoryInstance {
        graph,
        p,
        q,
        xi,
        labels,
        classes: c,
    })
}

/// Draws a fresh label for every node from its likelihood row.
pub fn resample_labels<R: Rng>(p: &DenseMatrix, rng: &mut R) -> Vec<usize> {
    (0..p.rows()).map(|i| sample_label(p.row(i), rng)).collect()
}
