//! Immutable directed graph in CSR form, node splits, labels and homophily
//! measures.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge {index} ({src}, {dst}) has an endpoint outside 0..{n}")]
    EndpointOutOfRange {
        index: usize,
        src: usize,
        dst: usize,
        n: usize,
    },
    #[error("graph has no edges")]
    NoEdges,
    #[error("every node is isolated")]
    AllIsolated,
    #[error("label vector has {labels} entries but graph has {nodes} nodes")]
    LengthMismatch { labels: usize, nodes: usize },
    #[error("label of node {node} is unknown")]
    UnknownLabel { node: usize },
    #[error("label {label} of node {node} is not below class count {classes}")]
    LabelOutOfRange {
        node: usize,
        label: u32,
        classes: usize,
    },
    #[error("class count must be at least 2, got {0}")]
    TooFewClasses(usize),
    #[error("split has no training nodes")]
    EmptyTrainSplit,
    #[error("node count {0} does not fit in u32 ids")]
    TooManyNodes(usize),
}

/// Directed graph with both out- and in-adjacency in compressed sparse row
/// form. Neighbor lists are sorted ascending.
#[derive(Debug, Serialize, Deserialize)]
pub struct CsrGraph {
    n: usize,
    out_offsets: Vec<usize>,
    out_targets: Vec<u32>,
    in_offsets: Vec<usize>,
    in_sources: Vec<u32>,
    /// Number of full passes over the edge set made by propagation kernels.
    #[serde(skip)]
    edge_passes: AtomicU64,
}

impl Clone for CsrGraph {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            out_offsets: self.out_offsets.clone(),
            out_targets: self.out_targets.clone(),
            in_offsets: self.in_offsets.clone(),
            in_sources: self.in_sources.clone(),
            edge_passes: AtomicU64::new(self.edge_passes()),
        }
    }
}

impl PartialEq for CsrGraph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.out_offsets == other.out_offsets
            && self.out_targets == other.out_targets
    }
}

/// Builds a [`CsrGraph`] from an edge list.
///
/// With `symmetrize`, every `(i, j)` also yields `(j, i)`; self-loops are kept
/// as given and never doubled. With `dedup`, repeated edges collapse.
pub fn build_graph(
    edges: &[(usize, usize)],
    n: usize,
    symmetrize: bool,
    dedup: bool,
) -> Result<CsrGraph, GraphError> {
    if n > u32::MAX as usize {
        return Err(GraphError::TooManyNodes(n));
    }
    for (index, &(src, dst)) in edges.iter().enumerate() {
        if src >= n || dst >= n {
            return Err(GraphError::EndpointOutOfRange {
                index,
                src,
                dst,
                n,
            });
        }
    }
    let mut list: Vec<(u32, u32)> = Vec::with_capacity(edges.len() * if symmetrize { 2 } else { 1 });
    for &(s, d) in edges {
        list.push((s as u32, d as u32));
        if symmetrize && s != d {
            list.push((d as u32, s as u32));
        }
    }
    // symmetrizing a graph that already holds both directions produces
    // duplicates even when the caller did not ask for dedup
    list.sort_unstable();
    if dedup || symmetrize {
        list.dedup();
    }
    Ok(CsrGraph::from_sorted_pairs(n, &list))
}

impl CsrGraph {
    fn from_sorted_pairs(n: usize, pairs: &[(u32, u32)]) -> Self {
        let mut out_offsets = vec![0usize; n + 1];
        let mut in_offsets = vec![0usize; n + 1];
        for &(s, d) in pairs {
            out_offsets[s as usize + 1] += 1;
            in_offsets[d as usize + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
            in_offsets[i + 1] += in_offsets[i];
        }
        let out_targets: Vec<u32> = pairs.iter().map(|&(_, d)| d).collect();
        // pairs are sorted by source, so filling in-lists in pair order keeps
        // every in-list sorted by source id
        let mut in_sources = vec![0u32; pairs.len()];
        let mut cursor = in_offsets.clone();
        for &(s, d) in pairs {
            in_sources[cursor[d as usize]] = s;
            cursor[d as usize] += 1;
        }
        Self {
            n,
            out_offsets,
            out_targets,
            in_offsets,
            in_sources,
            edge_passes: AtomicU64::new(0),
        }
    }

    /// Graph with no edges.
    pub fn empty(n: usize) -> Self {
        Self::from_sorted_pairs(n, &[])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.out_targets.len()
    }

    pub fn out_offsets(&self) -> &[usize] {
        &self.out_offsets
    }

    pub fn out_neighbors(&self, i: usize) -> &[u32] {
        &self.out_targets[self.out_offsets[i]..self.out_offsets[i + 1]]
    }

    pub fn in_neighbors(&self, i: usize) -> &[u32] {
        &self.in_sources[self.in_offsets[i]..self.in_offsets[i + 1]]
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.out_offsets[i + 1] - self.out_offsets[i]
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.in_offsets[i + 1] - self.in_offsets[i]
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.out_neighbors(src).binary_search(&(dst as u32)).is_ok()
    }

    /// All edges `(src, dst)` in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.out_neighbors(i).iter().map(move |&j| (i, j as usize)))
    }

    /// Rebuilds the out-adjacency from the in-adjacency.
    pub fn transpose(&self) -> CsrGraph {
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(self.m());
        for d in 0..self.n {
            for &s in self.in_neighbors(d) {
                pairs.push((d as u32, s));
            }
        }
        pairs.sort_unstable();
        CsrGraph::from_sorted_pairs(self.n, &pairs)
    }

    /// Undirected version: union of both directions, deduplicated.
    pub fn symmetrized(&self) -> CsrGraph {
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(2 * self.m());
        for (s, d) in self.edges() {
            pairs.push((s as u32, d as u32));
            if s != d {
                pairs.push((d as u32, s as u32));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        CsrGraph::from_sorted_pairs(self.n, &pairs)
    }

    /// Subgraph induced by `nodes`; node `nodes[k]` becomes `k`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> CsrGraph {
        let mut remap = vec![u32::MAX; self.n];
        for (k, &v) in nodes.iter().enumerate() {
            remap[v] = k as u32;
        }
        let mut pairs = Vec::new();
        for &v in nodes {
            for &t in self.out_neighbors(v) {
                let rt = remap[t as usize];
                if rt != u32::MAX {
                    pairs.push((remap[v], rt));
                }
            }
        }
        pairs.sort_unstable();
        CsrGraph::from_sorted_pairs(nodes.len(), &pairs)
    }

    /// Records one full pass over the edge set.
    pub fn record_edge_pass(&self) {
        self.edge_passes.fetch_add(1, Ordering::Relaxed);
    }

    pub fn edge_passes(&self) -> u64 {
        self.edge_passes.load(Ordering::Relaxed)
    }

    pub fn reset_edge_passes(&self) {
        self.edge_passes.store(0, Ordering::Relaxed);
    }

    /// Applies a node permutation: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> CsrGraph {
        let mut pairs: Vec<(u32, u32)> = self
            .edges()
            .map(|(s, d)| (perm[s] as u32, perm[d] as u32))
            .collect();
        pairs.sort_unstable();
        CsrGraph::from_sorted_pairs(self.n, &pairs)
    }
}

/// Role of a node within one split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Valid,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Valid => "valid",
            Role::Test => "test",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Role::Train),
            "valid" | "val" => Ok(Role::Valid),
            "test" => Ok(Role::Test),
            other => Err(format!("unknown split role `{other}`")),
        }
    }
}

/// Train/valid/test assignment of every node for one split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub index: usize,
    roles: Vec<Role>,
}

impl SplitMasks {
    pub fn new(index: usize, roles: Vec<Role>) -> Result<Self, GraphError> {
        if !roles.contains(&Role::Train) {
            return Err(GraphError::EmptyTrainSplit);
        }
        Ok(Self { index, roles })
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn role(&self, i: usize) -> Role {
        self.roles[i]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn is_train(&self, i: usize) -> bool {
        self.roles[i] == Role::Train
    }

    pub fn nodes(&self, role: Role) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train(&self) -> Vec<usize> {
        self.nodes(Role::Train)
    }

    pub fn valid(&self) -> Vec<usize> {
        self.nodes(Role::Valid)
    }

    pub fn test(&self) -> Vec<usize> {
        self.nodes(Role::Test)
    }
}

/// Per-node class ids; `None` marks an unknown label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<Option<u32>>,
    classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<Option<u32>>, classes: usize) -> Result<Self, GraphError> {
        if classes < 2 {
            return Err(GraphError::TooFewClasses(classes));
        }
        for (node, l) in labels.iter().enumerate() {
            if let Some(label) = *l {
                if label as usize >= classes {
                    return Err(GraphError::LabelOutOfRange {
                        node,
                        label,
                        classes,
                    });
                }
            }
        }
        Ok(Self { labels, classes })
    }

    /// All labels known.
    pub fn from_known(labels: &[usize], classes: usize) -> Result<Self, GraphError> {
        Self::new(labels.iter().map(|&l| Some(l as u32)).collect(), classes)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.labels[i].map(|l| l as usize)
    }

    pub fn require(&self, i: usize) -> Result<usize, GraphError> {
        self.get(i).ok_or(GraphError::UnknownLabel { node: i })
    }

    pub fn raw(&self) -> &[Option<u32>] {
        &self.labels
    }

    /// Copy keeping only the labels of training nodes; every other node is
    /// unknown.
    pub fn restricted_to(&self, split: &SplitMasks) -> LabelVector {
        let labels = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| if split.is_train(i) { *l } else { None })
            .collect();
        LabelVector {
            labels,
            classes: self.classes,
        }
    }

    fn check_len(&self, n: usize) -> Result<(), GraphError> {
        if self.labels.len() != n {
            return Err(GraphError::LengthMismatch {
                labels: self.labels.len(),
                nodes: n,
            });
        }
        Ok(())
    }
}

/// Fraction of edges whose endpoints share a label.
pub fn edge_homophily(g: &CsrGraph, y: &LabelVector) -> Result<f64, GraphError> {
    y.check_len(g.n())?;
    if g.m() == 0 {
        return Err(GraphError::NoEdges);
    }
    let mut same = 0usize;
    for (s, d) in g.edges() {
        if y.require(s)? == y.require(d)? {
            same += 1;
        }
    }
    Ok(same as f64 / g.m() as f64)
}

/// Same-label fraction of each node's out-neighbors; `None` for nodes with no
/// out-neighbors.
pub fn node_homophily_per_node(
    g: &CsrGraph,
    y: &LabelVector,
) -> Result<Vec<Option<f64>>, GraphError> {
    y.check_len(g.n())?;
    (0..g.n())
        .map(|i| {
            let nb = g.out_neighbors(i);
            if nb.is_empty() {
                return Ok(None);
            }
            let yi = y.require(i)?;
            let mut same = 0usize;
            for &j in nb {
                if y.require(j as usize)? == yi {
                    same += 1;
                }
            }
            Ok(Some(same as f64 / nb.len() as f64))
        })
        .collect()
}

/// Mean over non-isolated nodes of the same-label neighbor fraction.
pub fn node_homophily(g: &CsrGraph, y: &LabelVector) -> Result<f64, GraphError> {
    let per_node = node_homophily_per_node(g, y)?;
    let vals: Vec<f64> = per_node.into_iter().flatten().collect();
    if vals.is_empty() {
        return Err(GraphError::AllIsolated);
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Class-insensitive homophily
/// `(1/(C-1)) * sum_k max(0, h_k - |C_k|/n)`, where `h_k` is the
/// same-label share of all edges leaving class-`k` nodes.
pub fn class_insensitive_homophily(g: &CsrGraph, y: &LabelVector) -> Result<f64, GraphError> {
    y.check_len(g.n())?;
    let c = y.classes();
    let mut same = vec![0usize; c];
    let mut total = vec![0usize; c];
    let mut counts = vec![0usize; c];
    let mut any_edges = false;
    for i in 0..g.n() {
        let yi = y.require(i)?;
        counts[yi] += 1;
        for &j in g.out_neighbors(i) {
            any_edges = true;
            total[yi] += 1;
            if y.require(j as usize)? == yi {
                same[yi] += 1;
            }
        }
    }
    if !any_edges {
        return Err(GraphError::AllIsolated);
    }
    let n = g.n() as f64;
    let mut acc = 0.0;
    for k in 0..c {
        if total[k] == 0 {
            continue;
        }
        let h_k = same[k] as f64 / total[k] as f64;
        acc += (h_k - counts[k] as f64 / n).max(0.0);
    }
    Ok(acc / (c as f64 - 1.0))
}

/// Fraction of length-2 walks `i -> j -> k` with `k != i` whose endpoints
/// share a label. Measures monophily.
pub fn two_hop_agreement(g: &CsrGraph, y: &LabelVector) -> Result<f64, GraphError> {
    y.check_len(g.n())?;
    let mut same = 0u64;
    let mut total = 0u64;
    for i in 0..g.n() {
        let yi = y.require(i)?;
        for &j in g.out_neighbors(i) {
            for &k in g.out_neighbors(j as usize) {
                if k as usize == i {
                    continue;
                }
                total += 1;
                if y.require(k as usize)? == yi {
                    same += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(GraphError::NoEdges);
    }
    Ok(same as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_edges(n: usize, m: usize, seed: u64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .collect()
    }

    #[test]
    fn degrees_of_a_small_path() {
        let g = build_graph(&[(0, 1), (1, 2)], 3, false, false).unwrap();
        let out: Vec<_> = (0..3).map(|i| g.out_degree(i)).collect();
        let inn: Vec<_> = (0..3).map(|i| g.in_degree(i)).collect();
        assert_eq!(out, vec![1, 1, 0]);
        assert_eq!(inn, vec![0, 1, 1]);
    }

    #[test]
    fn symmetrize_single_edge() {
        let g = build_graph(&[(0, 1)], 2, true, false).unwrap();
        assert_eq!(g.m(), 2);
        assert_eq!(g.in_neighbors(0), &[1]);
    }

    #[test]
    fn self_loops_are_not_doubled() {
        let g = build_graph(&[(0, 0), (0, 1)], 2, true, true).unwrap();
        assert_eq!(g.out_neighbors(0), &[0, 1]);
        assert_eq!(g.m(), 3);
    }

    #[test]
    fn dedup_collapses_repeats() {
        let g = build_graph(&[(0, 1), (0, 1), (1, 0)], 2, false, true).unwrap();
        assert_eq!(g.m(), 2);
        let g = build_graph(&[(0, 1), (0, 1)], 2, false, false).unwrap();
        assert_eq!(g.m(), 2);
    }

    #[test]
    fn out_of_range_endpoint_is_rejected() {
        let err = build_graph(&[(0, 1), (3, 0)], 3, false, false).unwrap_err();
        assert_eq!(
            err,
            GraphError::EndpointOutOfRange {
                index: 1,
                src: 3,
                dst: 0,
                n: 3
            }
        );
    }

    #[test]
    fn empty_edge_list_gives_isolated_graph() {
        let g = build_graph(&[], 4, true, true).unwrap();
        assert_eq!(g.m(), 0);
        assert_eq!(g.out_offsets(), &[0, 0, 0, 0, 0]);
    }

    #[test]
    fn in_adjacency_matches_dense_transpose() {
        let n = 50;
        let edges = random_edges(n, 300, 7);
        let g = build_graph(&edges, n, false, true).unwrap();
        let mut dense = vec![vec![false; n]; n];
        for &(s, d) in &edges {
            dense[s][d] = true;
        }
        for d in 0..n {
            let expected: Vec<u32> = (0..n).filter(|&s| dense[s][d]).map(|s| s as u32).collect();
            assert_eq!(g.in_neighbors(d), expected.as_slice());
        }
    }

    #[test]
    fn homophily_extremes() {
        let clique = build_graph(&[(0, 1)], 2, true, true).unwrap();
        let same = LabelVector::from_known(&[0, 0], 2).unwrap();
        assert_eq!(edge_homophily(&clique, &same).unwrap(), 1.0);
        assert_eq!(node_homophily(&clique, &same).unwrap(), 1.0);

        let k22 = build_graph(&[(0, 2), (0, 3), (1, 2), (1, 3)], 4, true, true).unwrap();
        let coloring = LabelVector::from_known(&[0, 0, 1, 1], 2).unwrap();
        assert_eq!(edge_homophily(&k22, &coloring).unwrap(), 0.0);
        assert_eq!(node_homophily(&k22, &coloring).unwrap(), 0.0);
        assert_eq!(class_insensitive_homophily(&k22, &coloring).unwrap(), 0.0);
    }

    #[test]
    fn class_insensitive_is_one_for_perfect_balanced_homophily() {
        let g = build_graph(&[(0, 1), (2, 3)], 4, true, true).unwrap();
        let y = LabelVector::from_known(&[0, 0, 1, 1], 2).unwrap();
        assert!((class_insensitive_homophily(&g, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_homophily_matches_brute_force_scan() {
        let n = 30;
        let edges = random_edges(n, 90, 3);
        let g = build_graph(&edges, n, false, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let y = LabelVector::from_known(&labels, 3).unwrap();
        let mut uniq = edges.clone();
        uniq.sort();
        uniq.dedup();
        let same = uniq.iter().filter(|&&(s, d)| labels[s] == labels[d]).count();
        let expected = same as f64 / uniq.len() as f64;
        assert!((edge_homophily(&g, &y).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn metric_errors() {
        let g = CsrGraph::empty(3);
        let y = LabelVector::from_known(&[0, 1, 0], 2).unwrap();
        assert_eq!(edge_homophily(&g, &y), Err(GraphError::NoEdges));
        assert_eq!(node_homophily(&g, &y), Err(GraphError::AllIsolated));
        assert!(LabelVector::from_known(&[0, 2], 2).is_err());
        assert!(LabelVector::from_known(&[0], 1).is_err());
        assert!(SplitMasks::new(0, vec![Role::Test, Role::Valid]).is_err());
    }

    proptest! {
        #[test]
        fn transpose_round_trip(n in 1usize..200, m in 0usize..600, seed in 0u64..1000) {
            let edges = random_edges(n, m, seed);
            let g = build_graph(&edges, n, false, false).unwrap();
            let back = g.transpose().transpose();
            prop_assert_eq!(&back, &g);
            let out_sum: usize = (0..n).map(|i| g.out_degree(i)).sum();
            let in_sum: usize = (0..n).map(|i| g.in_degree(i)).sum();
            prop_assert_eq!(out_sum, g.m());
            prop_assert_eq!(in_sum, g.m());
        }

        #[test]
        fn homophily_is_relabel_invariant(n in 4usize..40, seed in 0u64..500) {
            let edges = random_edges(n, 3 * n, seed);
            let g = build_graph(&edges, n, true, true).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let y = LabelVector::from_known(&labels, 3).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let gp = g.permuted(&perm);
            let mut plabels = vec![0; n];
            for i in 0..n {
                plabels[perm[i]] = labels[i];
            }
            let yp = LabelVector::from_known(&plabels, 3).unwrap();
            let pairs = [
                (edge_homophily(&g, &y).unwrap(), edge_homophily(&gp, &yp).unwrap()),
                (node_homophily(&g, &y).unwrap(), node_homophily(&gp, &yp).unwrap()),
                (class_insensitive_homophily(&g, &y).unwrap(), class_insensitive_homophily(&gp, &yp).unwrap()),
            ];
            for (a, b) in pairs {
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
