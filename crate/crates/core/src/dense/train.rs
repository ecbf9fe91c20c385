//! Minibatch training loop with validation-based epoch selection.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{AdamWConfig, AdamWState};
use super::matrix::{DenseMatrix, FeatureMatrix};
use super::nn::{Batch, TwoBranchNet};
use super::NnError;

const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4096,
            adamw: AdamWConfig::default(),
            seed: 0,
        }
    }
}

/// Full-graph inputs for every branch, indexed by node id.
#[derive(Clone, Debug, Default)]
pub struct NetInputs {
    pub x: Option<FeatureMatrix>,
    pub p: Option<FeatureMatrix>,
    pub y: Option<FeatureMatrix>,
}

impl NetInputs {
    pub fn gather(&self, idx: &[usize]) -> Batch {
        Batch {
            x: self.x.as_ref().map(|m| m.gather_rows(idx)),
            p: self.p.as_ref().map(|m| m.gather_rows(idx)),
            y: self.y.as_ref().map(|m| m.gather_rows(idx)),
        }
    }
}

/// Eval-mode class probabilities for `nodes`, in order.
pub fn predict_nodes(net: &TwoBranchNet, inputs: &NetInputs, nodes: &[usize]) -> Result<DenseMatrix, NnError> {
    let c = net.classes();
    let mut data = Vec::with_capacity(nodes.len() * c);
    for chunk in nodes.chunks(EVAL_CHUNK) {
        let probs = net.predict(&inputs.gather(chunk))?;
        data.extend_from_slice(probs.data());
    }
    DenseMatrix::from_vec(nodes.len(), c, data)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// How epochs are ranked.
#[derive(Clone, Debug)]
pub enum ValidationSignal {
    /// Accuracy against known labels; ties keep the earlier epoch.
    Accuracy { nodes: Vec<usize>, labels: Vec<usize> },
    /// Argmax agreement with soft targets, soft cross-entropy as tiebreak.
    SoftArgmax { nodes: Vec<usize>, targets: DenseMatrix },
    /// No validation nodes: the final epoch is returned.
    None,
}

impl ValidationSignal {
    fn score(&self, net: &TwoBranchNet, inputs: &NetInputs) -> Result<Option<(f64, f64)>, NnError> {
        match self {
            ValidationSignal::Accuracy { nodes, labels } => {
                if nodes.is_empty() {
                    return Ok(None);
                }
                let probs = predict_nodes(net, inputs, nodes)?;
                let hits = labels
                    .iter()
                    .enumerate()
                    .filter(|(i, l)| argmax(probs.row(*i)) == **l)
                    .count();
                Ok(Some((hits as f64 / nodes.len() as f64, 0.0)))
            }
            ValidationSignal::SoftArgmax { nodes, targets } => {
                if nodes.is_empty() {
                    return Ok(None);
                }
                let probs = predict_nodes(net, inputs, nodes)?;
                let hits = (0..nodes.len())
                    .filter(|&i| argmax(probs.row(i)) == argmax(targets.row(i)))
                    .count();
                let ce = TwoBranchNet::soft_ce(&probs, targets);
                Ok(Some((hits as f64 / nodes.len() as f64, ce)))
            }
            ValidationSignal::None => Ok(None),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_score: Option<f64>,
    pub valid_tiebreak: Option<f64>,
    /// Digest of all parameters after the epoch's updates.
    pub param_digest: u64,
    pub aborted: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub best: TwoBranchNet,
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    /// Parameters after the last epoch.
    pub last: TwoBranchNet,
    pub log: Vec<EpochLog>,
}

/// Trains `net` on soft targets of `train_nodes` (rows of `targets` are
/// indexed by node id; only training rows are read) and returns the
/// parameters of the best validation epoch.
pub fn train_model(
    mut net: TwoBranchNet,
    inputs: &NetInputs,
    targets: &DenseMatrix,
    train_nodes: &[usize],
    validation: &ValidationSignal,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    if train_nodes.is_empty() {
        return Err(NnError::NoTrainNodes);
    }
    if targets.cols() != net.classes() {
        return Err(NnError::Shape(format!(
            "targets have {} columns, network has {} classes",
            targets.cols(),
            net.classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamWState::new(cfg.adamw, net.param_count());
    let mut order = train_nodes.to_vec();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(TwoBranchNet, usize, f64, f64)> = None;
    let batch_size = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut aborted = false;
        for chunk in order.chunks(batch_size) {
            let batch = inputs.gather(chunk);
            let batch_targets = targets.gather_rows(chunk);
            let fwd = net.forward(&batch, Some(&mut rng))?;
            let loss = net.backward(&fwd, &batch_targets)?;
            if let Err(e) = opt.step(&mut net) {
                warn!("epoch {epoch}: aborting epoch: {e}");
                aborted = true;
                break;
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let score = validation.score(&net, inputs)?;
        log.push(EpochLog {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            valid_score: score.map(|s| s.0),
            valid_tiebreak: score.map(|s| s.1),
            param_digest: net.param_digest(),
            aborted,
        });
        if let Some((s, tie)) = score {
            let better = match &best {
                None => true,
                Some((_, _, bs, bt)) => s > *bs || (s == *bs && tie < *bt),
            };
            if better {
                best = Some((net.clone(), epoch, s, tie));
            }
        }
    }

    let (best_net, best_epoch, best_score) = match best {
        Some((n, e, s, _)) => (n, e, Some(s)),
        None => {
            if !matches!(validation, ValidationSignal::None) || cfg.epochs > 0 {
                warn!("no validation signal; returning final-epoch parameters");
            }
            (net.clone(), cfg.epochs.saturating_sub(1), None)
        }
    };
    Ok(TrainOutcome {
        best: best_net,
        best_epoch,
        best_score,
        last: net,
        log,
    })
}

/// Fraction of `nodes` whose argmax prediction equals the label.
pub fn accuracy(net: &TwoBranchNet, inputs: &NetInputs, nodes: &[usize], labels: &[usize]) -> Result<f64, NnError> {
    if nodes.is_empty() {
        return Ok(f64::NAN);
    }
    let probs = predict_nodes(net, inputs, nodes)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, l)| argmax(probs.row(*i)) == **l)
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}

/// One-hot rows for labelled nodes; rows of nodes with unknown labels are zero.
pub fn one_hot(labels: &[Option<usize>], classes: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(labels.len(), classes);
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            m.set(i, *l, 1.0);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::nn::NetConfig;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (NetInputs, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let l = usize::from(a + 0.5 * b > 0.0);
            // push points away from the boundary
            let shift = if l == 1 { 0.2 } else { -0.2 };
            data.push(a + shift);
            data.push(b);
            labels.push(l);
        }
        let x = DenseMatrix::from_vec(n, 2, data).unwrap();
        (
            NetInputs {
                x: Some(FeatureMatrix::Dense(x)),
                ..Default::default()
            },
            labels,
        )
    }

    fn net(seed: u64) -> TwoBranchNet {
        let cfg = NetConfig {
            x_dim: Some(2),
            p_dim: None,
            y_dim: None,
            layers_x: 1,
            layers_p: 1,
            layers_y: 1,
            layers_agg: 1,
            hidden: 16,
            classes: 2,
            dropout: 0.0,
        };
        TwoBranchNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn train_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            adamw: AdamWConfig {
                lr: 0.01,
                ..Default::default()
            },
            seed: 3,
        }
    }

    #[test]
    fn separable_toy_reaches_high_train_accuracy() {
        let (inputs, labels) = separable(200, 1);
        let targets = one_hot(&labels.iter().map(|&l| Some(l)).collect::<Vec<_>>(), 2);
        let nodes: Vec<usize> = (0..200).collect();
        let out = train_model(net(2), &inputs, &targets, &nodes, &ValidationSignal::None, &train_cfg()).unwrap();
        let acc = accuracy(&out.last, &inputs, &nodes, &labels).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let (inputs, labels) = separable(100, 4);
        let targets = one_hot(&labels.iter().map(|&l| Some(l)).collect::<Vec<_>>(), 2);
        let train: Vec<usize> = (0..70).collect();
        let valid = ValidationSignal::Accuracy {
            nodes: (70..100).collect(),
            labels: labels[70..].to_vec(),
        };
        let mut cfg = train_cfg();
        cfg.epochs = 30;
        let a = train_model(net(5), &inputs, &targets, &train, &valid, &cfg).unwrap();
        let b = train_model(net(5), &inputs, &targets, &train, &valid, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.best.param_digest(), b.best.param_digest());
    }

    #[test]
    fn selected_params_reproduce_logged_best_score() {
        let (inputs, labels) = separable(120, 6);
        let targets = one_hot(&labels.iter().map(|&l| Some(l)).collect::<Vec<_>>(), 2);
        let train: Vec<usize> = (0..60).collect();
        let vnodes: Vec<usize> = (60..120).collect();
        let valid = ValidationSignal::Accuracy {
            nodes: vnodes.clone(),
            labels: labels[60..].to_vec(),
        };
        let mut cfg = train_cfg();
        cfg.epochs = 40;
        let out = train_model(net(7), &inputs, &targets, &train, &valid, &cfg).unwrap();
        let best_logged = out
            .log
            .iter()
            .filter_map(|l| l.valid_score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_score, Some(best_logged));
        let again = accuracy(&out.best, &inputs, &vnodes, &labels[60..]).unwrap();
        assert_eq!(again, best_logged);
        assert_eq!(out.log[out.best_epoch].param_digest, out.best.param_digest());
    }

    #[test]
    fn empty_train_set_is_an_error() {
        let (inputs, labels) = separable(10, 8);
        let targets = one_hot(&labels.iter().map(|&l| Some(l)).collect::<Vec<_>>(), 2);
        let r = train_model(net(9), &inputs, &targets, &[], &ValidationSignal::None, &train_cfg());
        assert!(matches!(r, Err(NnError::NoTrainNodes)));
    }
}
