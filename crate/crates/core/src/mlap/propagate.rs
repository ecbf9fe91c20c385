//! The two label-propagation passes: train labels averaged over in-neighbors,
//! then predicted neighbor distributions averaged over out-neighbors.

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::exec::Exec;
use crate::graph::{CsrGraph, LabelVector, SplitMasks};

/// Row-stochastic `n x c` matrix with a per-row validity flag. Invalid rows
/// had no contributing neighbor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabels {
    pub probs: DenseMatrix,
    pub valid: Vec<bool>,
}

impl SoftLabels {
    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// `y_hat[i]` = mean one-hot label over in-neighbors `j` of `i` that are
/// training nodes. Computed for every node; rows with no such neighbor are
/// all-zero and flagged invalid. Only training labels are read.
pub fn mlap_forward(g: &CsrGraph, labels: &LabelVector, split: &SplitMasks, exec: Exec) -> SoftLabels {
    let c = labels.classes();
    let n = g.n();
    g.record_edge_pass();
    let mut probs = DenseMatrix::zeros(n, c);
    exec.rows_mut(probs.data_mut(), c, |i, row| {
        let mut count = 0usize;
        for &j in g.in_neighbors(i) {
            let j = j as usize;
            if !split.is_train(j) {
                continue;
            }
            if let Some(l) = labels.get(j) {
                row[l] += 1.0;
                count += 1;
            }
        }
        if count > 0 {
            let inv = 1.0 / count as f64;
            row.iter_mut().for_each(|v| *v *= inv);
        }
    });
    let valid = (0..n).map(|i| probs.row(i).iter().any(|v| *v > 0.0)).collect();
    SoftLabels { probs, valid }
}

/// `y'[i]` = mean of `y_tilde[j]` over out-neighbors `j` of `i`. Nodes without
/// out-neighbors get the uniform row and are flagged invalid.
pub fn mlap_backward(g: &CsrGraph, y_tilde: &DenseMatrix, exec: Exec) -> SoftLabels {
    let c = y_tilde.cols();
    let n = g.n();
    assert_eq!(y_tilde.rows(), n, "one soft-label row per node");
    g.record_edge_pass();
    let mut probs = DenseMatrix::zeros(n, c);
    exec.rows_mut(probs.data_mut(), c, |i, row| {
        let nb = g.out_neighbors(i);
        if nb.is_empty() {
            row.iter_mut().for_each(|v| *v = 1.0 / c as f64);
            return;
        }
        for &j in nb {
            for (o, v) in row.iter_mut().zip(y_tilde.row(j as usize)) {
                *o += v;
            }
        }
        let inv = 1.0 / nb.len() as f64;
        row.iter_mut().for_each(|v| *v *= inv);
    });
    let valid = (0..n).map(|i| g.out_degree(i) > 0).collect();
    SoftLabels { probs, valid }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Role};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_adj(g: &CsrGraph) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; g.n()]; g.n()];
        for (s, d) in g.edges() {
            a[s][d] = 1.0;
        }
        a
    }

    /// `D_in^{-1} A_train^T Y` with rows of zero in-degree left at zero.
    fn forward_oracle(g: &CsrGraph, labels: &[usize], train: &[bool], c: usize) -> Vec<Vec<f64>> {
        let a = dense_adj(g);
        let n = g.n();
        let mut out = vec![vec![0.0; c]; n];
        for i in 0..n {
            let mut deg = 0.0;
            for j in 0..n {
                let w = if train[j] { a[j][i] } else { 0.0 };
                deg += w;
                out[i][labels[j]] += w;
            }
            if deg > 0.0 {
                out[i].iter_mut().for_each(|v| *v /= deg);
            }
        }
        out
    }

    /// `D_out^{-1} A Y_tilde`.
    fn backward_oracle(g: &CsrGraph, yt: &DenseMatrix) -> Vec<Vec<f64>> {
        let a = dense_adj(g);
        let n = g.n();
        let c = yt.cols();
        (0..n)
            .map(|i| {
                let deg: f64 = a[i].iter().sum();
                if deg == 0.0 {
                    return vec![1.0 / c as f64; c];
                }
                (0..c)
                    .map(|l| (0..n).map(|j| a[i][j] * yt.get(j, l)).sum::<f64>() / deg)
                    .collect()
            })
            .collect()
    }

    fn random_instance(seed: u64, n: usize, c: usize, symmetrize: bool) -> (CsrGraph, LabelVector, SplitMasks, DenseMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(0..4 * n);
        let edges: Vec<_> = (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
        let g = build_graph(&edges, n, symmetrize, true).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let mut roles: Vec<Role> = (0..n)
            .map(|_| match rng.random_range(0..3) {
                0 => Role::Train,
                1 => Role::Valid,
                _ => Role::Test,
            })
            .collect();
        roles[0] = Role::Train;
        let mut yt = DenseMatrix::zeros(n, c);
        for i in 0..n {
            let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for l in 0..c {
                yt.set(i, l, raw[l] / s);
            }
        }
        (
            g,
            LabelVector::from_known(&labels, c).unwrap(),
            SplitMasks::new(0, roles).unwrap(),
            yt,
        )
    }

    #[test]
    fn mixed_in_neighbor_labels_average() {
        // classes g=0, r=1, b=2; node 5 receives {g, g, g, r, b}
        let edges = [(0, 5), (1, 5), (2, 5), (3, 5), (4, 5)];
        let g = build_graph(&edges, 6, false, false).unwrap();
        let y = LabelVector::from_known(&[0, 0, 0, 1, 2, 0], 3).unwrap();
        let split = SplitMasks::new(0, vec![Role::Train; 6]).unwrap();
        let out = mlap_forward(&g, &y, &split, Exec::Sequential);
        let row = out.probs.row(5);
        assert!((row[0] - 0.6).abs() < 1e-15 && (row[1] - 0.2).abs() < 1e-15 && (row[2] - 0.2).abs() < 1e-15);
        assert!(out.valid[5]);
        assert!(!out.valid[0]);
    }

    #[test]
    fn single_in_neighbor_gives_one_hot() {
        let g = build_graph(&[(0, 1)], 2, false, false).unwrap();
        let y = LabelVector::from_known(&[2, 0], 3).unwrap();
        let split = SplitMasks::new(0, vec![Role::Train, Role::Test]).unwrap();
        let out = mlap_forward(&g, &y, &split, Exec::Sequential);
        assert_eq!(out.probs.row(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn non_train_in_neighbors_are_ignored() {
        let g = build_graph(&[(0, 2), (1, 2)], 3, false, false).unwrap();
        let y = LabelVector::from_known(&[0, 1, 0], 2).unwrap();
        let split = SplitMasks::new(0, vec![Role::Train, Role::Valid, Role::Test]).unwrap();
        let out = mlap_forward(&g, &y, &split, Exec::Sequential);
        assert_eq!(out.probs.row(2), &[1.0, 0.0]);
    }

    #[test]
    fn star_center_averages_leaves() {
        let g = build_graph(&[(0, 1), (0, 2), (0, 3)], 4, false, false).unwrap();
        let yt = DenseMatrix::from_rows(&[
            vec![0.5, 0.5],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.4, 0.6],
        ])
        .unwrap();
        let out = mlap_backward(&g, &yt, Exec::Sequential);
        let expected = [(1.0 + 0.0 + 0.4) / 3.0, (0.0 + 1.0 + 0.6) / 3.0];
        for l in 0..2 {
            assert!((out.probs.get(0, l) - expected[l]).abs() < 1e-15);
        }
        assert!(!out.valid[1]);
        assert_eq!(out.probs.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn uniform_input_is_a_fixed_point() {
        let (g, _, _, _) = random_instance(3, 30, 4, true);
        let yt = DenseMatrix::from_vec(30, 4, vec![0.25; 120]).unwrap();
        let out = mlap_backward(&g, &yt, Exec::Sequential);
        for i in 0..30 {
            for v in out.probs.row(i) {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn each_pass_counts_one_edge_traversal() {
        let (g, y, split, yt) = random_instance(5, 20, 3, false);
        g.reset_edge_passes();
        mlap_forward(&g, &y, &split, Exec::Sequential);
        mlap_backward(&g, &yt, Exec::Sequential);
        assert_eq!(g.edge_passes(), 2);
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let (g, y, split, yt) = random_instance(6, 64, 5, false);
        assert_eq!(
            mlap_forward(&g, &y, &split, Exec::Sequential),
            mlap_forward(&g, &y, &split, Exec::Parallel)
        );
        assert_eq!(mlap_backward(&g, &yt, Exec::Sequential), mlap_backward(&g, &yt, Exec::Parallel));
    }

    proptest! {
        #[test]
        fn passes_match_dense_oracles(seed in any::<u64>(), n in 1usize..=64, c in 2usize..6, sym in any::<bool>()) {
            let (g, y, split, yt) = random_instance(seed, n, c, sym);
            let labels: Vec<usize> = (0..n).map(|i| y.get(i).unwrap()).collect();
            let train: Vec<bool> = (0..n).map(|i| split.is_train(i)).collect();
            let fwd = mlap_forward(&g, &y, &split, Exec::Parallel);
            let oracle = forward_oracle(&g, &labels, &train, c);
            for i in 0..n {
                for l in 0..c {
                    prop_assert!((fwd.probs.get(i, l) - oracle[i][l]).abs() <= 1e-12);
                }
                if fwd.valid[i] {
                    let s: f64 = fwd.probs.row(i).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-6);
                }
            }
            let bwd = mlap_backward(&g, &yt, Exec::Parallel);
            let oracle = backward_oracle(&g, &yt);
            for i in 0..n {
                for l in 0..c {
                    prop_assert!((bwd.probs.get(i, l) - oracle[i][l]).abs() <= 1e-12);
                }
            }
            prop_assert_eq!(bwd.probs.cols(), c);
        }

        #[test]
        fn backward_is_linear(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
            let (g, _, _, a) = random_instance(seed, 25, 3, false);
            let (_, _, _, b) = random_instance(seed.wrapping_add(1), 25, 3, false);
            let mut mix = DenseMatrix::zeros(25, 3);
            for (o, (x, y)) in mix.data_mut().iter_mut().zip(a.data().iter().zip(b.data())) {
                *o = alpha * x + (1.0 - alpha) * y;
            }
            let pa = mlap_backward(&g, &a, Exec::Sequential);
            let pb = mlap_backward(&g, &b, Exec::Sequential);
            let pm = mlap_backward(&g, &mix, Exec::Sequential);
            for i in (0..25).filter(|&i| pm.valid[i]) {
                for l in 0..3 {
                    let lin = alpha * pa.probs.get(i, l) + (1.0 - alpha) * pb.probs.get(i, l);
                    prop_assert!((pm.probs.get(i, l) - lin).abs() < 1e-12);
                }
            }
        }
    }
}
