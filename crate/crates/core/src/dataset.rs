//! Text ingestion and the on-disk dataset bundle.
//!
//! Input files are line oriented; `#` starts a comment and blank lines are
//! skipped everywhere.
//!
//! * edges: `src dst` per line (whitespace or comma separated);
//! * features: one whitespace-separated row per node, or a DMAT1 file;
//! * labels: one class id per node, `?` or `-1` for unknown;
//! * splits: one role per node (`train`, `valid`, `test`).
//!
//! A bundle is a directory holding `manifest.json`, `edges.txt`,
//! `labels.txt`, `split_<k>.txt` and optionally `features.dmat` and
//! `pe.dmat`; the manifest records counts and a SHA-256 per file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dense::dmat::{Dmat, DmatError, MAGIC};
use crate::dense::DenseMatrix;
use crate::graph::{build_graph, CsrGraph, GraphError, LabelVector, Role, SplitMasks};

pub const BUNDLE_FORMAT: &str = "glinkx-bundle-1";
const MANIFEST: &str = "manifest.json";
const EDGES: &str = "edges.txt";
const LABELS: &str = "labels.txt";
const FEATURES: &str = "features.dmat";
const PE: &str = "pe.dmat";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}:{line}: node {node} is not below node count {n}")]
    UnknownNode { file: String, line: usize, node: usize, n: usize },
    #[error("{file}:{line}: label {label} is not below class count {classes}")]
    LabelOutOfRange { file: String, line: usize, label: usize, classes: usize },
    #[error("{file}:{line}: row has {found} values, expected {expected}")]
    RaggedFeatures { file: String, line: usize, expected: usize, found: usize },
    #[error("{file}: {found} rows for {expected} nodes")]
    RowCount { file: String, expected: usize, found: usize },
    #[error("{file}: checksum mismatch")]
    Checksum { file: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{file}: {source}")]
    Dmat {
        file: String,
        #[source]
        source: DmatError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl DatasetError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::Io { .. } => "io",
            DatasetError::Parse { .. } => "parse",
            DatasetError::UnknownNode { .. } => "unknown_node",
            DatasetError::LabelOutOfRange { .. } => "label_out_of_range",
            DatasetError::RaggedFeatures { .. } => "ragged_features",
            DatasetError::RowCount { .. } => "dimension_mismatch",
            DatasetError::Checksum { .. } => "checksum",
            DatasetError::Manifest(_) => "manifest",
            DatasetError::Dmat { .. } => "dmat",
            DatasetError::Graph(_) => "graph",
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|e| DatasetError::Parse {
        file: display(path),
        line: 0,
        message: format!("not UTF-8: {e}"),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(k, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((k + 1, line))
    })
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty())
}

/// Parses an edge list; endpoints are checked against `n`.
pub fn parse_edges(text: &str, file: &str, n: usize) -> Result<Vec<(usize, usize)>, DatasetError> {
    let mut edges = Vec::new();
    for (line, content) in content_lines(text) {
        let parts: Vec<&str> = tokens(content).collect();
        if parts.len() != 2 {
            return Err(DatasetError::Parse {
                file: file.into(),
                line,
                message: format!("expected 2 node ids, found {}", parts.len()),
            });
        }
        let mut ends = [0usize; 2];
        for (slot, tok) in ends.iter_mut().zip(&parts) {
            *slot = tok.parse().map_err(|_| DatasetError::Parse {
                file: file.into(),
                line,
                message: format!("bad node id {tok:?}"),
            })?;
            if *slot >= n {
                return Err(DatasetError::UnknownNode {
                    file: file.into(),
                    line,
                    node: *slot,
                    n,
                });
            }
        }
        edges.push((ends[0], ends[1]));
    }
    Ok(edges)
}

/// Parses one label per node. With `classes` absent the class count is the
/// largest label plus one.
pub fn parse_labels(text: &str, file: &str, classes: Option<usize>) -> Result<LabelVector, DatasetError> {
    let mut raw: Vec<(usize, Option<usize>)> = Vec::new();
    for (line, content) in content_lines(text) {
        let label = match content {
            "?" | "-1" => None,
            tok => Some(tok.parse::<usize>().map_err(|_| DatasetError::Parse {
                file: file.into(),
                line,
                message: format!("bad label {tok:?}"),
            })?),
        };
        raw.push((line, label));
    }
    let c = match classes {
        Some(c) => c,
        None => raw.iter().filter_map(|&(_, l)| l).max().map_or(0, |m| m + 1),
    };
    let mut labels = Vec::with_capacity(raw.len());
    for (line, label) in raw {
        if let Some(l) = label {
            if l >= c {
                return Err(DatasetError::LabelOutOfRange {
                    file: file.into(),
                    line,
                    label: l,
                    classes: c,
                });
            }
        }
        labels.push(label.map(|l| l as u32));
    }
    Ok(LabelVector::new(labels, c)?)
}

/// Parses one role per node.
pub fn parse_split(text: &str, file: &str, index: usize, n: usize) -> Result<SplitMasks, DatasetError> {
    let mut roles = Vec::with_capacity(n);
    for (line, content) in content_lines(text) {
        roles.push(content.parse::<Role>().map_err(|message| DatasetError::Parse {
            file: file.into(),
            line,
            message,
        })?);
    }
    if roles.len() != n {
        return Err(DatasetError::RowCount {
            file: file.into(),
            expected: n,
            found: roles.len(),
        });
    }
    Ok(SplitMasks::new(index, roles)?)
}

/// Parses whitespace-separated feature rows, or a DMAT1 file when the bytes
/// start with its magic.
pub fn parse_features(bytes: &[u8], file: &str, n: usize) -> Result<DenseMatrix, DatasetError> {
    let m = if bytes.starts_with(&MAGIC[..]) {
        Dmat::from_bytes(bytes)
            .map_err(|source| DatasetError::Dmat {
                file: file.into(),
                source,
            })?
            .to_dense()
    } else {
        let text = std::str::from_utf8(bytes).map_err(|e| DatasetError::Parse {
            file: file.into(),
            line: 0,
            message: format!("not UTF-8: {e}"),
        })?;
        let mut data = Vec::new();
        let mut width = None;
        let mut rows = 0;
        for (line, content) in content_lines(text) {
            let start = data.len();
            for tok in tokens(content) {
                data.push(tok.parse::<f64>().map_err(|_| DatasetError::Parse {
                    file: file.into(),
                    line,
                    message: format!("bad number {tok:?}"),
                })?);
            }
            let found = data.len() - start;
            let expected = *width.get_or_insert(found);
            if found != expected {
                return Err(DatasetError::RaggedFeatures {
                    file: file.into(),
                    line,
                    expected,
                    found,
                });
            }
            rows += 1;
        }
        DenseMatrix::from_vec(rows, width.unwrap_or(0), data).map_err(|e| DatasetError::Parse {
            file: file.into(),
            line: 0,
            message: e.to_string(),
        })?
    };
    if m.rows() != n {
        return Err(DatasetError::RowCount {
            file: file.into(),
            expected: n,
            found: m.rows(),
        });
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub name: String,
    pub nodes: usize,
    pub edges: usize,
    pub feature_dim: Option<usize>,
    pub pe_dim: Option<usize>,
    pub classes: usize,
    pub directed: bool,
    pub splits: usize,
    /// SHA-256 of every other file in the bundle, hex encoded.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub graph: CsrGraph,
    pub features: Option<DenseMatrix>,
    pub pe: Option<DenseMatrix>,
    pub labels: LabelVector,
    pub splits: Vec<SplitMasks>,
    pub directed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct IngestSources {
    pub name: String,
    pub edges: PathBuf,
    pub labels: PathBuf,
    pub features: Option<PathBuf>,
    pub splits: Vec<PathBuf>,
    pub classes: Option<usize>,
    /// Add the reverse of every edge.
    pub undirected: bool,
}

/// Reads and validates text inputs; the node count comes from the label file.
pub fn ingest(src: &IngestSources) -> Result<Dataset, DatasetError> {
    let labels = parse_labels(&read_text(&src.labels)?, &display(&src.labels), src.classes)?;
    let n = labels.len();
    let edges = parse_edges(&read_text(&src.edges)?, &display(&src.edges), n)?;
    let graph = build_graph(&edges, n, src.undirected, true)?;
    let features = match &src.features {
        Some(p) => Some(parse_features(&read_file(p)?, &display(p), n)?),
        None => None,
    };
    let splits = src
        .splits
        .iter()
        .enumerate()
        .map(|(k, p)| parse_split(&read_text(p)?, &display(p), k, n))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        name: src.name.clone(),
        graph,
        features,
        pe: None,
        labels,
        splits,
        directed: !src.undirected,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn split_file(k: usize) -> String {
    format!("split_{k}.txt")
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn classes(&self) -> usize {
        self.labels.classes()
    }

    /// Canonical file contents of the bundle, keyed by file name.
    pub fn bundle_files(&self) -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut edges = String::new();
        for (s, d) in self.graph.edges() {
            edges.push_str(&format!("{s} {d}\n"));
        }
        files.push((EDGES.to_string(), edges.into_bytes()));
        let mut labels = String::new();
        for l in self.labels.raw() {
            match l {
                Some(l) => labels.push_str(&format!("{l}\n")),
                None => labels.push_str("?\n"),
            }
        }
        files.push((LABELS.to_string(), labels.into_bytes()));
        for (k, split) in self.splits.iter().enumerate() {
            let mut text = String::new();
            for &r in split.roles() {
                text.push_str(r.as_str());
                text.push('\n');
            }
            files.push((split_file(k), text.into_bytes()));
        }
        if let Some(x) = &self.features {
            files.push((FEATURES.to_string(), Dmat::from_dense(x).to_bytes()));
        }
        if let Some(p) = &self.pe {
            files.push((PE.to_string(), Dmat::from_dense(p).to_bytes()));
        }
        files
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: BUNDLE_FORMAT.to_string(),
            name: self.name.clone(),
            nodes: self.n(),
            edges: self.graph.m(),
            feature_dim: self.features.as_ref().map(DenseMatrix::cols),
            pe_dim: self.pe.as_ref().map(DenseMatrix::cols),
            classes: self.classes(),
            directed: self.directed,
            splits: self.splits.len(),
            checksums: self
                .bundle_files()
                .iter()
                .map(|(name, bytes)| (name.clone(), sha256_hex(bytes)))
                .collect(),
        }
    }

    /// Writes the bundle; re-saving a loaded bundle reproduces every byte.
    pub fn save(&self, dir: &Path) -> Result<Manifest, DatasetError> {
        fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.to_owned(),
            source,
        })?;
        for (name, bytes) in self.bundle_files() {
            write_file(&dir.join(name), &bytes)?;
        }
        let manifest = self.manifest();
        let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        json.push('\n');
        write_file(&dir.join(MANIFEST), json.as_bytes())?;
        Ok(manifest)
    }

    /// Loads a bundle, verifying every checksum.
    pub fn load(dir: &Path) -> Result<Dataset, DatasetError> {
        let manifest: Manifest = serde_json::from_slice(&read_file(&dir.join(MANIFEST))?)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(DatasetError::Manifest(format!("unsupported format {:?}", manifest.format)));
        }
        let fetch = |name: &str| -> Result<Vec<u8>, DatasetError> {
            let bytes = read_file(&dir.join(name))?;
            let expected = manifest
                .checksums
                .get(name)
                .ok_or_else(|| DatasetError::Manifest(format!("no checksum for {name}")))?;
            if &sha256_hex(&bytes) != expected {
                return Err(DatasetError::Checksum { file: name.into() });
            }
            Ok(bytes)
        };
        let text = |name: &str| -> Result<String, DatasetError> {
            String::from_utf8(fetch(name)?).map_err(|e| DatasetError::Parse {
                file: name.into(),
                line: 0,
                message: e.to_string(),
            })
        };
        let labels = parse_labels(&text(LABELS)?, LABELS, Some(manifest.classes))?;
        let n = manifest.nodes;
        if labels.len() != n {
            return Err(DatasetError::RowCount {
                file: LABELS.into(),
                expected: n,
                found: labels.len(),
            });
        }
        let edges = parse_edges(&text(EDGES)?, EDGES, n)?;
        if edges.len() != manifest.edges {
            return Err(DatasetError::Manifest(format!(
                "{} edges on disk, manifest records {}",
                edges.len(),
                manifest.edges
            )));
        }
        let graph = build_graph(&edges, n, false, false)?;
        let matrix = |name: &str, dim: Option<usize>| -> Result<Option<DenseMatrix>, DatasetError> {
            match dim {
                None => Ok(None),
                Some(d) => {
                    let m = parse_features(&fetch(name)?, name, n)?;
                    if m.cols() != d {
                        return Err(DatasetError::Manifest(format!("{name} has {} columns, manifest records {d}", m.cols())));
                    }
                    Ok(Some(m))
                }
            }
        };
        let features = matrix(FEATURES, manifest.feature_dim)?;
        let pe = matrix(PE, manifest.pe_dim)?;
        let splits = (0..manifest.splits)
            .map(|k| parse_split(&text(&split_file(k))?, &split_file(k), k, n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset {
            name: manifest.name,
            graph,
            features,
            pe,
            labels,
            splits,
            directed: manifest.directed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn toy(dir: &Path) -> IngestSources {
        IngestSources {
            name: "toy".into(),
            edges: write(dir, "e.txt", "# toy\n0 1\n1,2\n\n2 0\n"),
            labels: write(dir, "y.txt", "0\n1\n?\n"),
            features: Some(write(dir, "x.txt", "1 0\n0 1\n0.5 0.5\n")),
            splits: vec![write(dir, "s0.txt", "train\nvalid\ntest\n")],
            classes: Some(2),
            undirected: false,
        }
    }

    #[test]
    fn toy_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ingest(&toy(dir.path())).unwrap();
        let out = dir.path().join("bundle");
        let manifest = ds.save(&out).unwrap();
        assert_eq!((manifest.nodes, manifest.edges, manifest.classes), (3, 3, 2));
        let loaded = Dataset::load(&out).unwrap();
        assert_eq!(loaded.graph, ds.graph);
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.features, ds.features);
        assert_eq!(loaded.splits, ds.splits);
        assert_eq!(loaded.bundle_files(), ds.bundle_files());
    }

    #[test]
    fn resaving_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ingest(&toy(dir.path())).unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        ds.save(&a).unwrap();
        Dataset::load(&a).unwrap().save(&b).unwrap();
        let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
        }
    }

    #[test]
    fn corrupted_payload_byte_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ingest(&toy(dir.path())).unwrap();
        let out = dir.path().join("bundle");
        ds.save(&out).unwrap();
        let path = out.join(FEATURES);
        let clean = fs::read(&path).unwrap();
        for k in 0..clean.len() {
            let mut bytes = clean.clone();
            bytes[k] ^= 0x01;
            fs::write(&path, &bytes).unwrap();
            assert!(matches!(Dataset::load(&out), Err(DatasetError::Checksum { .. })), "byte {k}");
        }
    }

    #[test]
    fn feature_row_count_mismatch_is_typed() {
        let dir = tempfile::tempdir().unwrap();
        let mut src = toy(dir.path());
        src.features = Some(write(dir.path(), "x.txt", "1 0\n0 1\n"));
        assert!(matches!(ingest(&src), Err(DatasetError::RowCount { expected: 3, found: 2, .. })));
    }

    #[test]
    fn errors_name_the_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut src = toy(dir.path());
        src.edges = write(dir.path(), "e.txt", "0 1\n# note\n1 7\n");
        match ingest(&src) {
            Err(DatasetError::UnknownNode { line, node, .. }) => assert_eq!((line, node), (3, 7)),
            other => panic!("{other:?}"),
        }
        let mut src = toy(dir.path());
        src.labels = write(dir.path(), "y.txt", "0\n5\n1\n");
        match ingest(&src) {
            Err(DatasetError::LabelOutOfRange { line, label, .. }) => assert_eq!((line, label), (2, 5)),
            other => panic!("{other:?}"),
        }
        let mut src = toy(dir.path());
        src.features = Some(write(dir.path(), "x.txt", "1 0\n0\n1 1\n"));
        match ingest(&src) {
            Err(DatasetError::RaggedFeatures { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let mut src = toy(dir.path());
        src.splits = vec![write(dir.path(), "s.txt", "train\nholdout\ntest\n")];
        match ingest(&src) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dmat_features_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let mut src = toy(dir.path());
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let p = dir.path().join("x.dmat");
        fs::write(&p, Dmat::from_dense(&x).to_bytes()).unwrap();
        src.features = Some(p);
        assert_eq!(ingest(&src).unwrap().features.unwrap(), x);
    }
}
