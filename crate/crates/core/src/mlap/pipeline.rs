//! Stages 2 and 3: neighbor-distribution model, back-propagated soft labels
//! and the final classifier, with optional branch ablations.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::propagate::{mlap_backward, mlap_forward, SoftLabels};
use super::PipelineError;
use crate::dense::train::{accuracy, one_hot, predict_nodes, EpochLog, TrainOutcome};
use crate::dense::{
    train_model, AdamWConfig, DenseMatrix, FeatureMatrix, NetConfig, NetInputs, SparseRows, TrainConfig,
    TwoBranchNet, ValidationSignal,
};
use crate::exec::{derive_seed, Exec};
use crate::graph::{CsrGraph, LabelVector, SplitMasks};
use crate::metrics::binary_auc;

/// Shared hyperparameters of both trained stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlinkxConfig {
    pub layers_x: usize,
    pub layers_p: usize,
    pub layers_y: usize,
    pub layers_agg: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Propagate over the symmetrized graph.
    pub symmetrize: bool,
}

impl Default for GlinkxConfig {
    fn default() -> Self {
        Self {
            layers_x: 1,
            layers_p: 1,
            layers_y: 1,
            layers_agg: 1,
            hidden: 64,
            dropout: 0.5,
            lr: 0.001,
            weight_decay: 0.0,
            epochs: 200,
            batch_size: 4096,
            symmetrize: false,
        }
    }
}

impl GlinkxConfig {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adamw: AdamWConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..Default::default()
            },
            seed,
        }
    }

    fn net_config(&self, x: Option<usize>, p: Option<usize>, y: Option<usize>, classes: usize) -> NetConfig {
        NetConfig {
            x_dim: x,
            p_dim: p,
            y_dim: y,
            layers_x: self.layers_x,
            layers_p: self.layers_p,
            layers_y: self.layers_y,
            layers_agg: self.layers_agg,
            hidden: self.hidden,
            classes,
            dropout: self.dropout,
        }
    }
}

/// Where positional embeddings come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    Kge,
    Adjacency,
}

impl std::str::FromStr for PeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kge" => Ok(PeMode::Kge),
            "adjacency" | "adj" => Ok(PeMode::Adjacency),
            other => Err(format!("unknown pe source {other:?}")),
        }
    }
}

/// Sparse binary rows of the symmetrized adjacency matrix.
pub fn adjacency_pe(g: &CsrGraph) -> FeatureMatrix {
    FeatureMatrix::Sparse(SparseRows::from_adjacency(&g.symmetrized()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Ego,
    #[serde(alias = "prop")]
    Propagation,
    Pe,
}

impl std::str::FromStr for Component {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ego" => Ok(Component::Ego),
            "prop" | "propagation" => Ok(Component::Propagation),
            "pe" => Ok(Component::Pe),
            other => Err(format!("unknown component {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// The component is removed from every stage.
    All,
    /// The component is removed from the final stage only.
    Stage3,
}

impl std::str::FromStr for Scope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Scope::All),
            "stage3" => Ok(Scope::Stage3),
            other => Err(format!("unknown scope {other:?}")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub drop: Vec<Component>,
    pub scope: Option<Scope>,
}

impl Ablation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn dropping(component: Component, scope: Scope) -> Self {
        Self {
            drop: vec![component],
            scope: Some(scope),
        }
    }

    fn drops(&self, c: Component) -> bool {
        self.drop.contains(&c)
    }

    fn in_stage2(&self, c: Component) -> bool {
        !(self.drops(c) && self.scope == Some(Scope::All))
    }

    fn in_stage3(&self, c: Component) -> bool {
        !self.drops(c)
    }
}

/// Graph, inputs and labels for one split.
#[derive(Clone, Copy)]
pub struct PipelineData<'a> {
    pub graph: &'a CsrGraph,
    pub features: Option<&'a FeatureMatrix>,
    pub pe: Option<&'a FeatureMatrix>,
    pub labels: &'a LabelVector,
    pub split: &'a SplitMasks,
}

#[derive(Clone, Debug)]
pub struct Stage2Result {
    pub outcome: TrainOutcome,
    /// Predicted neighbor distributions of every node under the selected
    /// parameters.
    pub y_tilde: DenseMatrix,
    pub train_rows: usize,
}

#[derive(Clone, Debug)]
pub struct Stage3Result {
    pub outcome: TrainOutcome,
    pub train_acc: f64,
    pub valid_acc: f64,
    pub test_acc: f64,
    /// Test AUC of class 1 on two-class tasks.
    pub test_auc: Option<f64>,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct GlinkxRun {
    pub seed: u64,
    pub nodes: usize,
    pub y_hat: Option<SoftLabels>,
    pub stage2: Option<Stage2Result>,
    pub y_prime: Option<SoftLabels>,
    pub stage3: Stage3Result,
    /// Full passes over the propagation graph's edges during this run.
    pub edge_passes: u64,
}

impl GlinkxRun {
    pub fn test_acc(&self) -> f64 {
        self.stage3.test_acc
    }

    pub fn valid_acc(&self) -> f64 {
        self.stage3.valid_acc
    }

    pub fn stage2_log(&self) -> &[EpochLog] {
        self.stage2.as_ref().map(|s| s.outcome.log.as_slice()).unwrap_or(&[])
    }

    pub fn stage3_log(&self) -> &[EpochLog] {
        &self.stage3.outcome.log
    }
}

fn pick(m: Option<&FeatureMatrix>, keep: bool) -> Option<&FeatureMatrix> {
    if keep {
        m
    } else {
        None
    }
}

fn all_nodes(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Trains the neighbor-distribution model on training rows with a valid
/// propagated target and evaluates it on every node.
pub fn stage2_train(
    x: Option<&FeatureMatrix>,
    p: Option<&FeatureMatrix>,
    y_hat: &SoftLabels,
    split: &SplitMasks,
    cfg: &GlinkxConfig,
    seed: u64,
) -> Result<Stage2Result, PipelineError> {
    let c = y_hat.classes();
    let train: Vec<usize> = split.train().into_iter().filter(|&i| y_hat.valid[i]).collect();
    if train.is_empty() {
        return Err(PipelineError::NoStage2Signal);
    }
    let valid_nodes: Vec<usize> = split.valid().into_iter().filter(|&i| y_hat.valid[i]).collect();
    let validation = if valid_nodes.is_empty() {
        ValidationSignal::None
    } else {
        ValidationSignal::SoftArgmax {
            targets: y_hat.probs.gather_rows(&valid_nodes),
            nodes: valid_nodes,
        }
    };
    let net_cfg = cfg.net_config(x.map(FeatureMatrix::cols), p.map(FeatureMatrix::cols), None, c);
    let tag = |e| PipelineError::stage("stage2", e);
    let net = TwoBranchNet::new(net_cfg, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0))).map_err(tag)?;
    let inputs = NetInputs {
        x: x.cloned(),
        p: p.cloned(),
        y: None,
    };
    let outcome = train_model(
        net,
        &inputs,
        &y_hat.probs,
        &train,
        &validation,
        &cfg.train_config(derive_seed(seed, 2, 1)),
    )
    .map_err(tag)?;
    let y_tilde = predict_nodes(&outcome.best, &inputs, &all_nodes(split.len())).map_err(tag)?;
    Ok(Stage2Result {
        outcome,
        y_tilde,
        train_rows: train.len(),
    })
}

/// Trains the final classifier on one-hot training labels and scores the
/// selected parameters on every split.
pub fn stage3_train(
    x: Option<&FeatureMatrix>,
    p: Option<&FeatureMatrix>,
    y_prime: Option<&DenseMatrix>,
    labels: &LabelVector,
    split: &SplitMasks,
    cfg: &GlinkxConfig,
    seed: u64,
) -> Result<Stage3Result, PipelineError> {
    let c = labels.classes();
    let train = split.train();
    let train_labels: Vec<Option<usize>> = (0..split.len())
        .map(|i| if split.is_train(i) { labels.get(i) } else { None })
        .collect();
    let targets = one_hot(&train_labels, c);
    let known = |nodes: Vec<usize>| -> (Vec<usize>, Vec<usize>) {
        nodes.into_iter().filter_map(|i| labels.get(i).map(|l| (i, l))).unzip()
    };
    let (valid_nodes, valid_labels) = known(split.valid());
    let validation = if valid_nodes.is_empty() {
        ValidationSignal::None
    } else {
        ValidationSignal::Accuracy {
            nodes: valid_nodes.clone(),
            labels: valid_labels.clone(),
        }
    };
    let tag = |e| PipelineError::stage("stage3", e);
    let net_cfg = cfg.net_config(
        x.map(FeatureMatrix::cols),
        p.map(FeatureMatrix::cols),
        y_prime.map(|_| c),
        c,
    );
    let net = TwoBranchNet::new(net_cfg, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, 0))).map_err(tag)?;
    let inputs = NetInputs {
        x: x.cloned(),
        p: p.cloned(),
        y: y_prime.map(|m| FeatureMatrix::Dense(m.clone())),
    };
    let outcome = train_model(
        net,
        &inputs,
        &targets,
        &train,
        &validation,
        &cfg.train_config(derive_seed(seed, 3, 1)),
    )
    .map_err(tag)?;
    let (train_nodes, train_l) = known(train);
    let (test_nodes, test_labels) = known(split.test());
    let best = &outcome.best;
    let train_acc = accuracy(best, &inputs, &train_nodes, &train_l).map_err(tag)?;
    let valid_acc = accuracy(best, &inputs, &valid_nodes, &valid_labels).map_err(tag)?;
    let test_acc = accuracy(best, &inputs, &test_nodes, &test_labels).map_err(tag)?;
    let test_auc = if c == 2 {
        let probs = predict_nodes(best, &inputs, &test_nodes).map_err(tag)?;
        let scores: Vec<f64> = (0..test_nodes.len()).map(|r| probs.get(r, 1)).collect();
        let positive: Vec<bool> = test_labels.iter().map(|&l| l == 1).collect();
        binary_auc(&scores, &positive)
    } else {
        None
    };
    Ok(Stage3Result {
        outcome,
        train_acc,
        valid_acc,
        test_acc,
        test_auc,
    })
}

/// Runs stages 2 and 3 for one seed. The propagation graph is traversed
/// exactly twice, outside any training loop.
pub fn run_glinkx(
    data: PipelineData<'_>,
    cfg: &GlinkxConfig,
    seed: u64,
    ablation: &Ablation,
    exec: Exec,
) -> Result<GlinkxRun, PipelineError> {
    let n = data.graph.n();
    if data.labels.len() != n || data.split.len() != n {
        return Err(PipelineError::Shape(format!(
            "graph has {n} nodes, labels {} and split {}",
            data.labels.len(),
            data.split.len()
        )));
    }
    for (name, m) in [("features", data.features), ("pe", data.pe)] {
        if let Some(m) = m {
            if m.rows() != n {
                return Err(PipelineError::Shape(format!("{name} have {} rows, graph has {n} nodes", m.rows())));
            }
        }
    }
    let x3 = pick(data.features, ablation.in_stage3(Component::Ego));
    let p3 = pick(data.pe, ablation.in_stage3(Component::Pe));
    let use_prop = ablation.in_stage3(Component::Propagation);
    if x3.is_none() && p3.is_none() && !use_prop {
        return Err(PipelineError::AllBranchesRemoved);
    }

    // Labels of non-training nodes never reach stage 2.
    let train_labels = data.labels.restricted_to(data.split);

    let symmetrized;
    let prop_graph = if cfg.symmetrize {
        symmetrized = data.graph.symmetrized();
        &symmetrized
    } else {
        data.graph
    };
    let passes_before = prop_graph.edge_passes();

    let (y_hat, stage2, y_prime) = if use_prop || ablation.in_stage2(Component::Propagation) {
        let y_hat = mlap_forward(prop_graph, &train_labels, data.split, exec);
        info!("stage 2: {} of {} nodes have propagated targets", y_hat.valid_count(), n);
        let x2 = pick(data.features, ablation.in_stage2(Component::Ego));
        let p2 = pick(data.pe, ablation.in_stage2(Component::Pe));
        let s2 = stage2_train(x2, p2, &y_hat, data.split, cfg, seed)?;
        let y_prime = mlap_backward(prop_graph, &s2.y_tilde, exec);
        let missing = n - y_prime.valid_count();
        if missing > 0 {
            warn!("{missing} nodes have no out-neighbors; their propagated row is uniform");
        }
        (Some(y_hat), Some(s2), Some(y_prime))
    } else {
        (None, None, None)
    };
    let edge_passes = prop_graph.edge_passes() - passes_before;

    let y3 = if use_prop { y_prime.as_ref().map(|s| &s.probs) } else { None };
    let stage3 = stage3_train(x3, p3, y3, data.labels, data.split, cfg, seed)?;
    Ok(GlinkxRun {
        seed,
        nodes: n,
        y_hat,
        stage2,
        y_prime,
        stage3,
        edge_passes,
    })
}

/// Convenience wrapper with no ablation.
pub fn run_default(data: PipelineData<'_>, cfg: &GlinkxConfig, seed: u64) -> Result<GlinkxRun, PipelineError> {
    run_glinkx(data, cfg, seed, &Ablation::none(), Exec::default())
}
