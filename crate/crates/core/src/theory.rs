//! Empirical checks of the neighbor-distribution error bounds: counting
//! versus parametric estimation of neighbor likelihoods, and naive versus
//! two-phase SGD for the label model.

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dense::{softmax_rows, DenseMatrix};
use crate::exec::{derive_seed, Exec};
use crate::graph::CsrGraph;
use crate::synth::{resample_labels, TheoryInstance};

const MAX_RESTARTS: usize = 5;
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("sgd diverged after {0} restarts")]
    Diverged(usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid harness argument: {0}")]
    Invalid(String),
}

/// `lr_t = lr0 / (1 + t / decay)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr0: f64,
    pub decay: f64,
}

impl Schedule {
    pub fn at(&self, t: usize) -> f64 {
        self.lr0 / (1.0 + t as f64 / self.decay)
    }

    fn halved(self) -> Self {
        Schedule {
            lr0: self.lr0 / 2.0,
            ..self
        }
    }
}

fn softmax_linear(w: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let mut z: Vec<f64> = (0..w.rows()).map(|l| w.row(l).iter().zip(x).map(|(a, b)| a * b).sum()).collect();
    crate::dense::matrix::softmax_in_place(&mut z);
    z
}

/// Adds `scale * (target - probs) x^T` to `acc`: the gradient of
/// `sum_j target_j log softmax(W x)_j` with respect to `W`.
fn add_log_lik_grad(acc: &mut DenseMatrix, x: &[f64], target: &[f64], probs: &[f64], scale: f64) {
    for l in 0..acc.rows() {
        let coef = scale * (target[l] - probs[l]);
        if coef == 0.0 {
            continue;
        }
        for (a, xv) in acc.row_mut(l).iter_mut().zip(x) {
            *a += coef * xv;
        }
    }
}

fn one_hot(label: usize, c: usize) -> Vec<f64> {
    let mut v = vec![0.0; c];
    v[label] = 1.0;
    v
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Share of each class among the sampled labels of `i`'s neighbors. Never
/// reads `labels[i]` unless `i` is its own neighbor.
pub fn counting_estimate(g: &CsrGraph, labels: &[usize], i: usize, classes: usize) -> Vec<f64> {
    let nb = g.out_neighbors(i);
    let mut q = vec![0.0; classes];
    if nb.is_empty() {
        return q;
    }
    let inv = 1.0 / nb.len() as f64;
    for &j in nb {
        q[labels[j as usize]] += inv;
    }
    q
}

/// Counting estimates for every node.
pub fn counting_estimates(g: &CsrGraph, labels: &[usize], classes: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(g.n(), classes);
    for i in 0..g.n() {
        m.row_mut(i).copy_from_slice(&counting_estimate(g, labels, i, classes));
    }
    m
}

/// Mean over rows of `max_j |a_ij - b_ij|` and of `mean_j |a_ij - b_ij|`.
pub fn estimation_error(a: &DenseMatrix, b: &DenseMatrix) -> (f64, f64) {
    let n = a.rows() as f64;
    let mut inf = 0.0;
    let mut abs = 0.0;
    for i in 0..a.rows() {
        inf += inf_dist(a.row(i), b.row(i));
        abs += a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.cols() as f64;
    }
    (inf / n, abs / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingRow {
    pub k: usize,
    pub mean_inf_error: f64,
    pub mean_abs_error: f64,
}

/// For every `K`, draws random `K`-neighborhoods for `nodes_per_trial`
/// nodes, labels the neighbors from their likelihoods and reports the mean
/// distance between the counted and the true neighbor likelihood.
pub fn counting_estimator_error(
    inst: &TheoryInstance,
    ks: &[usize],
    trials: usize,
    nodes_per_trial: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<CountingRow>, TheoryError> {
    let n = inst.n();
    let c = inst.classes;
    if trials == 0 || nodes_per_trial == 0 {
        return Err(TheoryError::Invalid("trials and nodes per trial must be positive".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k >= n) {
        return Err(TheoryError::Invalid(format!("neighborhood size {k} outside 1..{n}")));
    }
    for &k in ks.iter().filter(|&&k| k <= c * c) {
        warn!("neighborhood size {k} does not exceed classes squared ({c}^2); the rate is only asymptotic there");
    }
    let rows = exec.map(ks.len(), |ki| {
        let k = ks[ki];
        let mut inf_sum = 0.0;
        let mut abs_sum = 0.0;
        for trial in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64, trial as u64));
            for _ in 0..nodes_per_trial {
                let i = rng.random_range(0..n);
                let mut q = vec![0.0; c];
                let mut q_hat = vec![0.0; c];
                let mut taken = 0;
                for j in sample(&mut rng, n, k + 1).into_iter().filter(|&j| j != i).take(k) {
                    let row = inst.p.row(j);
                    for (a, b) in q.iter_mut().zip(row) {
                        *a += b;
                    }
                    q_hat[crate::synth::sample_label(row, &mut rng)] += 1.0;
                    taken += 1;
                }
                let inv = 1.0 / taken as f64;
                q.iter_mut().for_each(|v| *v *= inv);
                q_hat.iter_mut().for_each(|v| *v *= inv);
                inf_sum += inf_dist(&q, &q_hat);
                abs_sum += q.iter().zip(&q_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / c as f64;
            }
        }
        let count = (trials * nodes_per_trial) as f64;
        CountingRow {
            k,
            mean_inf_error: inf_sum / count,
            mean_abs_error: abs_sum / count,
        }
    });
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Mean cross-entropy `-(1/n) sum_i sum_j t_ij log softmax(W xi_i)_j`.
fn mean_ce(w: &DenseMatrix, xi: &DenseMatrix, targets: &DenseMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..xi.rows() {
        let p = softmax_linear(w, xi.row(i));
        total -= targets.row(i).iter().zip(&p).map(|(t, q)| t * q.max(1e-300).ln()).sum::<f64>();
    }
    total / xi.rows() as f64
}

fn predictions(w: &DenseMatrix, xi: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(xi.rows(), w.rows());
    for i in 0..xi.rows() {
        out.row_mut(i).copy_from_slice(&softmax_linear(w, xi.row(i)));
    }
    out
}

/// SGD on `sum_i sum_j t_ij log softmax(W xi_i)_j`, one uniformly sampled node
/// per step. Restarts with half the step size when the loss exceeds ten
/// times its initial value.
fn soft_target_sgd(
    xi: &DenseMatrix,
    targets: &DenseMatrix,
    steps: usize,
    schedule: Schedule,
    seed: u64,
) -> Result<(DenseMatrix, usize, Schedule), TheoryError> {
    let c = targets.cols();
    let d = xi.cols();
    let n = xi.rows();
    let check_every = (steps / 20).max(1);
    let mut sched = schedule;
    for restart in 0..=MAX_RESTARTS {
        let mut w = DenseMatrix::zeros(c, d);
        let initial = mean_ce(&w, xi, targets);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut diverged = false;
        for t in 0..steps {
            let i = rng.random_range(0..n);
            let p = softmax_linear(&w, xi.row(i));
            add_log_lik_grad(&mut w, xi.row(i), targets.row(i), &p, sched.at(t));
            if (t + 1) % check_every == 0 {
                let loss = mean_ce(&w, xi, targets);
                if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial {
                    diverged = true;
                    break;
                }
            }
        }
        if !diverged {
            return Ok((w, restart, sched));
        }
        warn!("sgd diverged with lr0 {}; halving and restarting", sched.lr0);
        sched = sched.halved();
    }
    Err(TheoryError::Diverged(MAX_RESTARTS))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParametricQ {
    /// `c x 2c` weights of the neighbor-likelihood model.
    pub theta: DenseMatrix,
    pub parametric_inf_error: f64,
    pub parametric_abs_error: f64,
    pub counting_inf_error: f64,
    pub counting_abs_error: f64,
    pub restarts: usize,
}

/// Fits `q(.|xi; theta) = softmax(theta xi)` by SGD toward the counting
/// estimates of the instance's own labels, and compares both estimators
/// against the true neighbor likelihoods.
pub fn parametric_q_sgd(
    inst: &TheoryInstance,
    steps: usize,
    schedule: Schedule,
    seed: u64,
) -> Result<ParametricQ, TheoryError> {
    let q_hat = counting_estimates(&inst.graph, &inst.labels, inst.classes);
    let (theta, restarts, _) = soft_target_sgd(&inst.xi, &q_hat, steps, schedule, seed)?;
    let fitted = predictions(&theta, &inst.xi);
    let (p_inf, p_abs) = estimation_error(&fitted, &inst.q);
    let (c_inf, c_abs) = estimation_error(&q_hat, &inst.q);
    Ok(ParametricQ {
        theta,
        parametric_inf_error: p_inf,
        parametric_abs_error: p_abs,
        counting_inf_error: c_inf,
        counting_abs_error: c_abs,
        restarts,
    })
}

/// `G(w) = (1/n) sum_i sum_j P_ij log p(j | xi_i; w)`.
pub fn population_objective(inst: &TheoryInstance, w: &DenseMatrix) -> f64 {
    -mean_ce(w, &inst.xi, &inst.p)
}

/// `G(w*) - G(w)` where `w*` reproduces the true likelihoods.
pub fn optimality_gap(inst: &TheoryInstance, w: &DenseMatrix) -> f64 {
    let best: f64 = (0..inst.n())
        .map(|i| inst.p.row(i).iter().map(|p| p * p.ln()).sum::<f64>())
        .sum::<f64>()
        / inst.n() as f64;
    best - population_objective(inst, w)
}

/// Surrogate targets `P_hat_i = mean over neighbors k of q(.|xi_k; theta)`.
pub fn surrogate_targets(inst: &TheoryInstance, theta: &DenseMatrix) -> DenseMatrix {
    crate::synth::neighbor_mean(&inst.graph, &predictions(theta, &inst.xi))
}

/// Full gradient of `(1/n) sum_i sum_j t_ij log p(j | xi_i; w)`.
fn full_gradient(xi: &DenseMatrix, targets: &DenseMatrix, w: &DenseMatrix) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(w.rows(), w.cols());
    let scale = 1.0 / xi.rows() as f64;
    for i in 0..xi.rows() {
        let p = softmax_linear(w, xi.row(i));
        add_log_lik_grad(&mut g, xi.row(i), targets.row(i), &p, scale);
    }
    g
}

fn axpy(w: &mut DenseMatrix, a: f64, g: &DenseMatrix) {
    for (x, y) in w.data_mut().iter_mut().zip(g.data()) {
        *x += a * y;
    }
}

/// SGD on sampled labels mixed with the surrogate full gradient:
/// `g_t = (1 - lambda) grad log p(y_i | xi_i) + lambda grad G_hat`.
/// With `lambda = 0` this is plain single-sample SGD on the labels.
pub fn mixed_sgd(
    inst: &TheoryInstance,
    surrogate: &DenseMatrix,
    start: &DenseMatrix,
    lambda: f64,
    steps: usize,
    schedule: Schedule,
    seed: u64,
) -> DenseMatrix {
    let c = inst.classes;
    let n = inst.n();
    let mut w = start.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..steps {
        let i = rng.random_range(0..n);
        let lr = schedule.at(t);
        let p = softmax_linear(&w, inst.xi.row(i));
        let full = (lambda > 0.0).then(|| full_gradient(&inst.xi, surrogate, &w));
        if lambda < 1.0 {
            add_log_lik_grad(&mut w, inst.xi.row(i), &one_hot(inst.labels[i], c), &p, lr * (1.0 - lambda));
        }
        if let Some(g) = full {
            axpy(&mut w, lr * lambda, &g);
        }
    }
    w
}

/// Full-gradient ascent on the surrogate objective; returns the final
/// weights and the objective after every step.
pub fn surrogate_ascent(
    inst: &TheoryInstance,
    surrogate: &DenseMatrix,
    start: &DenseMatrix,
    steps: usize,
    lr: f64,
) -> (DenseMatrix, Vec<f64>) {
    let mut w = start.clone();
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(-mean_ce(&w, &inst.xi, surrogate));
    for _ in 0..steps {
        let g = full_gradient(&inst.xi, surrogate, &w);
        axpy(&mut w, lr, &g);
        trace.push(-mean_ce(&w, &inst.xi, surrogate));
    }
    (w, trace)
}

/// Plug-in minimizer of `lambda^2 A + (1 - lambda)^2 B`, where `A` estimates
/// the squared bias of the surrogate gradient and `B` the per-step noise of
/// the label gradient, both at `w`.
pub fn plug_in_lambda(inst: &TheoryInstance, surrogate: &DenseMatrix, w: &DenseMatrix, lr: f64) -> f64 {
    let n = inst.n();
    let c = inst.classes;
    let labels: DenseMatrix = {
        let mut m = DenseMatrix::zeros(n, c);
        for i in 0..n {
            m.set(i, inst.labels[i], 1.0);
        }
        m
    };
    let g_lab = full_gradient(&inst.xi, &labels, w);
    let g_sur = full_gradient(&inst.xi, surrogate, w);
    let mut var = 0.0;
    let mut smooth: f64 = 0.0;
    for i in 0..n {
        let x = inst.xi.row(i);
        let p = softmax_linear(w, x);
        let mut gi = DenseMatrix::zeros(c, x.len());
        add_log_lik_grad(&mut gi, x, labels.row(i), &p, 1.0);
        var += gi.data().iter().zip(g_lab.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        smooth = smooth.max(x.iter().map(|v| v * v).sum::<f64>() / 2.0);
    }
    var /= n as f64;
    let diff: f64 = g_sur.data().iter().zip(g_lab.data()).map(|(a, b)| (a - b).powi(2)).sum();
    let bias = (diff - var / n as f64).max(0.0);
    let noise = lr * var * smooth / 2.0;
    if bias + noise == 0.0 {
        return 1.0;
    }
    noise / (bias + noise)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoPhaseResult {
    pub lambda: f64,
    pub naive_gap: f64,
    pub two_phase_gap: f64,
    pub phase1_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseConfig {
    pub phase1_steps: usize,
    pub phase1_lr: f64,
    /// Steps of both the naive run and phase II; the node count by default.
    pub steps: usize,
    pub schedule: Schedule,
    /// Fixed mixing weight; the plug-in minimizer when absent.
    pub lambda: Option<f64>,
}

/// Runs the naive scheme (label SGD from zero) and the two-phase scheme
/// (surrogate ascent, then mixed SGD) with the same node-sampling seed.
pub fn two_phase_sgd(
    inst: &TheoryInstance,
    theta: &DenseMatrix,
    cfg: &TwoPhaseConfig,
    seed: u64,
) -> Result<TwoPhaseResult, TheoryError> {
    let c = inst.classes;
    let d = inst.xi.cols();
    let zero = DenseMatrix::zeros(c, d);
    let surrogate = surrogate_targets(inst, theta);
    let naive = mixed_sgd(inst, &surrogate, &zero, 0.0, cfg.steps, cfg.schedule, seed);
    let (w1, _) = surrogate_ascent(inst, &surrogate, &zero, cfg.phase1_steps, cfg.phase1_lr);
    let mean_lr = (0..cfg.steps).map(|t| cfg.schedule.at(t)).sum::<f64>() / cfg.steps.max(1) as f64;
    let lambda = cfg
        .lambda
        .unwrap_or_else(|| plug_in_lambda(inst, &surrogate, &w1, mean_lr));
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TheoryError::Invalid(format!("lambda {lambda} not in [0, 1]")));
    }
    let w2 = mixed_sgd(inst, &surrogate, &w1, lambda, cfg.steps, cfg.schedule, seed);
    Ok(TwoPhaseResult {
        lambda,
        naive_gap: optimality_gap(inst, &naive),
        two_phase_gap: optimality_gap(inst, &w2),
        phase1_gap: optimality_gap(inst, &w1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a - b) < 0`.
    pub p_value: f64,
}

/// Paired one-sided t-test of `mean(a - b) < 0`.
pub fn paired_t_less(a: &[f64], b: &[f64]) -> Result<PairedTest, TheoryError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(TheoryError::TooFewSamples { needed: 2, got: a.len().min(b.len()) });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd == 0.0 {
        let p = if mean < 0.0 { 0.0 } else { 1.0 };
        return Ok(PairedTest {
            mean_diff: mean,
            t: if mean < 0.0 { f64::NEG_INFINITY } else { f64::INFINITY },
            p_value: p,
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| TheoryError::Invalid(e.to_string()))?;
    Ok(PairedTest {
        mean_diff: mean,
        t,
        p_value: dist.cdf(t),
    })
}

/// Mean of the counting estimate of node `i` over `resamples` fresh label
/// draws, with its standard error per class.
pub fn counting_mean_over_resamples(inst: &TheoryInstance, i: usize, resamples: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let c = inst.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; c];
    let mut sq = vec![0.0; c];
    for _ in 0..resamples {
        let labels = resample_labels(&inst.p, &mut rng);
        let q = counting_estimate(&inst.graph, &labels, i, c);
        for l in 0..c {
            sum[l] += q[l];
            sq[l] += q[l] * q[l];
        }
    }
    let r = resamples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / r).collect();
    let se = (0..c)
        .map(|l| ((sq[l] / r - mean[l] * mean[l]).max(0.0) / r).sqrt())
        .collect();
    (mean, se)
}

/// Exact softmax of the true neighbor logits; useful as a sanity reference.
pub fn true_neighbor_model(inst: &TheoryInstance) -> DenseMatrix {
    let c = inst.classes;
    let mut logits = DenseMatrix::zeros(inst.n(), c);
    for i in 0..inst.n() {
        logits.row_mut(i).copy_from_slice(&inst.xi.row(i)[c..]);
    }
    softmax_rows(&logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_theory_instance, TheoryConfig};

    fn instance(nodes: usize, classes: usize, degree: usize, seed: u64) -> TheoryInstance {
        generate_theory_instance(&TheoryConfig {
            nodes,
            classes,
            degree,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn deterministic_labels_give_zero_counting_error() {
        let mut inst = instance(200, 2, 5, 1);
        for i in 0..inst.n() {
            inst.p.row_mut(i).copy_from_slice(&[1.0, 0.0]);
        }
        let rows = counting_estimator_error(&inst, &[4, 16], 3, 50, 0, Exec::Sequential).unwrap();
        for r in rows {
            assert_eq!(r.mean_inf_error, 0.0);
        }
    }

    #[test]
    fn fair_coin_counting_error_matches_binomial_deviation() {
        let mut inst = instance(1000, 2, 5, 2);
        for i in 0..inst.n() {
            inst.p.row_mut(i).copy_from_slice(&[0.5, 0.5]);
        }
        let rows = counting_estimator_error(&inst, &[100], 20, 200, 0, Exec::Sequential).unwrap();
        // E|Binomial(100, 1/2)/100 - 1/2| = sqrt(0.25/100) * sqrt(2/pi)
        let expected = (0.25f64 / 100.0).sqrt() * (2.0 / std::f64::consts::PI).sqrt();
        let got = rows[0].mean_inf_error;
        assert!((got - expected).abs() <= 0.5 * expected, "{got} vs {expected}");
    }

    #[test]
    fn counting_estimate_ignores_own_label() {
        let inst = instance(200, 3, 10, 3);
        let mut labels = inst.labels.clone();
        let before = counting_estimate(&inst.graph, &labels, 7, 3);
        labels[7] = (labels[7] + 1) % 3;
        assert_eq!(before, counting_estimate(&inst.graph, &labels, 7, 3));
    }

    #[test]
    fn counting_estimate_is_unbiased() {
        let inst = instance(200, 3, 10, 4);
        let (mean, se) = counting_mean_over_resamples(&inst, 0, 10_000, 5);
        for l in 0..3 {
            assert!((mean[l] - inst.q.get(0, l)).abs() <= 3.0 * se[l] + 1e-12);
        }
    }

    #[test]
    fn estimates_lie_on_the_simplex() {
        let inst = instance(400, 3, 10, 6);
        let q_hat = counting_estimates(&inst.graph, &inst.labels, 3);
        let fit = parametric_q_sgd(&inst, 400, Schedule { lr0: 0.1, decay: 100.0 }, 1).unwrap();
        let fitted = predictions(&fit.theta, &inst.xi);
        for m in [&q_hat, &fitted] {
            for i in 0..m.rows() {
                assert!(m.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
                assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn parametric_error_shrinks_with_more_nodes() {
        let sched = Schedule { lr0: 0.1, decay: 100.0 };
        let mut inversions = 0;
        for seed in 0..5 {
            let small = parametric_q_sgd(&instance(200, 3, 10, seed), 200, sched, seed).unwrap();
            let large = parametric_q_sgd(&instance(5000, 3, 10, seed), 5000, sched, seed).unwrap();
            if large.parametric_inf_error >= small.parametric_inf_error {
                inversions += 1;
            }
        }
        assert!(inversions <= 1);
    }

    #[test]
    fn realizable_soft_targets_are_fit_closely() {
        let inst = instance(2000, 3, 10, 7);
        let (theta, _, _) = soft_target_sgd(&inst.xi, &inst.q, 20_000, Schedule { lr0: 0.5, decay: 2000.0 }, 7).unwrap();
        let (inf, _) = estimation_error(&predictions(&theta, &inst.xi), &inst.q);
        assert!(inf < 0.02, "{inf}");
    }

    #[test]
    fn zero_lambda_matches_naive_run_from_the_same_start() {
        let inst = instance(400, 3, 10, 8);
        let theta = true_neighbor_theta(3);
        let sur = surrogate_targets(&inst, &theta);
        let sched = Schedule { lr0: 0.1, decay: 100.0 };
        let start = DenseMatrix::zeros(3, 6);
        let (w1, _) = surrogate_ascent(&inst, &sur, &start, 20, 0.05);
        let a = mixed_sgd(&inst, &sur, &w1, 0.0, 400, sched, 9);
        let b = mixed_sgd(&inst, &sur, &w1, 0.0, 400, sched, 9);
        assert!((optimality_gap(&inst, &a) - optimality_gap(&inst, &b)).abs() < 1e-9);
        let zero = mixed_sgd(&inst, &sur, &start, 0.0, 400, sched, 9);
        let cfg = TwoPhaseConfig {
            phase1_steps: 20,
            phase1_lr: 0.05,
            steps: 400,
            schedule: sched,
            lambda: Some(0.0),
        };
        let res = two_phase_sgd(&inst, &theta, &cfg, 9).unwrap();
        assert!((res.naive_gap - optimality_gap(&inst, &zero)).abs() < 1e-9);
        assert!((res.two_phase_gap - optimality_gap(&inst, &a)).abs() < 1e-9);
    }

    #[test]
    fn unit_lambda_ascends_the_surrogate_monotonically() {
        let inst = instance(400, 3, 10, 10);
        let sur = surrogate_targets(&inst, &true_neighbor_theta(3));
        let (_, trace) = surrogate_ascent(&inst, &sur, &DenseMatrix::zeros(3, 6), 50, 0.05);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        // lambda = 1 ignores the sampled labels entirely
        let mut other = inst.clone();
        other.labels.iter_mut().for_each(|l| *l = (*l + 1) % 3);
        let sched = Schedule { lr0: 0.05, decay: 1e9 };
        let a = mixed_sgd(&inst, &sur, &DenseMatrix::zeros(3, 6), 1.0, 30, sched, 1);
        let b = mixed_sgd(&other, &sur, &DenseMatrix::zeros(3, 6), 1.0, 30, sched, 1);
        assert_eq!(a, b);
    }

    #[test]
    fn paired_test_detects_a_consistent_shift() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.5, 2.4, 3.6, 4.5, 5.4];
        let r = paired_t_less(&a, &b).unwrap();
        assert!(r.mean_diff < 0.0 && r.p_value < 0.05);
        let r = paired_t_less(&b, &a).unwrap();
        assert!(r.p_value > 0.95);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let xs: Vec<f64> = (1..10).map(|k| (1 << k) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }

    fn true_neighbor_theta(c: usize) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(c, 2 * c);
        for l in 0..c {
            t.set(l, c + l, 1.0);
        }
        t
    }
}
