//! Prediction for nodes revealed after training, and the saved model that
//! makes it possible.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::{GlinkxConfig, GlinkxRun, PeMode};
use super::PipelineError;
use crate::dense::dmat::{read_dense, write_dense};
use crate::dense::{Batch, DenseMatrix, FeatureMatrix, SparseRows, TwoBranchNet};
use crate::graph::build_graph;

const MODEL_FILE: &str = "model.json";
const PE_FILE: &str = "pe.dmat";

/// Trained parameters plus what inference on new nodes needs from the
/// training graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlinkxModel {
    pub config: GlinkxConfig,
    pub pe_mode: Option<PeMode>,
    pub classes: usize,
    pub known_nodes: usize,
    pub stage2: Option<TwoBranchNet>,
    pub stage3: TwoBranchNet,
    /// Predicted neighbor distributions of the known nodes.
    pub y_tilde: Option<DenseMatrix>,
    /// Embedding table of the known nodes, kept in its own file.
    #[serde(skip)]
    pub known_pe: Option<DenseMatrix>,
}

impl GlinkxModel {
    /// Collects the selected parameters of a finished run. `known_pe` is the
    /// embedding table when the run used learned embeddings.
    pub fn from_run(run: &GlinkxRun, config: &GlinkxConfig, pe_mode: Option<PeMode>, known_pe: Option<DenseMatrix>) -> Self {
        let stage3 = run.stage3.outcome.best.clone();
        Self {
            config: config.clone(),
            pe_mode,
            classes: stage3.classes(),
            known_nodes: run.nodes,
            stage2: run.stage2.as_ref().map(|s| s.outcome.best.clone()),
            stage3,
            y_tilde: run.stage2.as_ref().map(|s| s.y_tilde.clone()),
            known_pe,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MODEL_FILE), serde_json::to_vec(self)?)?;
        if let Some(pe) = &self.known_pe {
            write_dense(&dir.join(PE_FILE), pe)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let mut model: GlinkxModel = serde_json::from_slice(&fs::read(dir.join(MODEL_FILE))?)?;
        let pe_path = dir.join(PE_FILE);
        if model.pe_mode == Some(PeMode::Kge) {
            let pe = read_dense(&pe_path)?;
            if pe.rows() != model.known_nodes {
                return Err(PipelineError::Shape(format!(
                    "embedding table has {} rows, model knows {} nodes",
                    pe.rows(),
                    model.known_nodes
                )));
            }
            model.known_pe = Some(pe);
        }
        Ok(model)
    }
}

/// Nodes `known..known + count` revealed together with their edges. Edge
/// endpoints use the same id space; `features` has one row per new node.
#[derive(Clone, Debug)]
pub struct NewNodes {
    pub count: usize,
    pub features: Option<DenseMatrix>,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct InductivePrediction {
    pub probs: DenseMatrix,
    pub predictions: Vec<usize>,
    /// New nodes without any revealed out-neighbor.
    pub isolated: Vec<bool>,
}

fn batch_for(net: &TwoBranchNet, x: &Option<FeatureMatrix>, p: &Option<FeatureMatrix>, y: Option<FeatureMatrix>) -> Batch {
    Batch {
        x: net.x.as_ref().and(x.clone()),
        p: net.p.as_ref().and(p.clone()),
        y: net.y.as_ref().and(y),
    }
}

/// Infers embeddings, neighbor distributions and propagated soft labels for
/// the new nodes, then applies the final classifier.
pub fn inductive_predict(model: &GlinkxModel, new: &NewNodes) -> Result<InductivePrediction, PipelineError> {
    let known = model.known_nodes;
    let total = known + new.count;
    let c = model.classes;
    if let Some(f) = &new.features {
        if f.rows() != new.count {
            return Err(PipelineError::Shape(format!(
                "{} feature rows for {} new nodes",
                f.rows(),
                new.count
            )));
        }
    }
    let revealed = build_graph(&new.edges, total, model.config.symmetrize, true)?;
    let undirected = revealed.symmetrized();
    let new_ids: Vec<usize> = (known..total).collect();

    let pe = match model.pe_mode {
        None => None,
        Some(PeMode::Adjacency) => {
            let mut offsets = vec![0];
            let mut indices = Vec::new();
            for &i in &new_ids {
                indices.extend(undirected.in_neighbors(i).iter().copied().filter(|&j| (j as usize) < known));
                offsets.push(indices.len());
            }
            let values = vec![1.0; indices.len()];
            let rows = SparseRows::new(known, offsets, indices, values).map_err(|e| PipelineError::stage("inductive", e))?;
            Some(FeatureMatrix::Sparse(rows))
        }
        Some(PeMode::Kge) => {
            let table = model
                .known_pe
                .as_ref()
                .ok_or_else(|| PipelineError::Shape("model has no embedding table".into()))?;
            let mut pe = DenseMatrix::zeros(new.count, table.cols());
            for (r, &i) in new_ids.iter().enumerate() {
                let nb: Vec<usize> = undirected
                    .in_neighbors(i)
                    .iter()
                    .map(|&j| j as usize)
                    .filter(|&j| j < known)
                    .collect();
                if nb.is_empty() {
                    continue;
                }
                let inv = 1.0 / nb.len() as f64;
                let row = pe.row_mut(r);
                for j in nb {
                    for (o, v) in row.iter_mut().zip(table.row(j)) {
                        *o += v * inv;
                    }
                }
            }
            Some(FeatureMatrix::Dense(pe))
        }
    };
    let x = new.features.clone().map(FeatureMatrix::Dense);
    let stage = |e| PipelineError::stage("inductive", e);

    let isolated: Vec<bool> = new_ids.iter().map(|&i| revealed.out_degree(i) == 0).collect();
    let y_prime = match (&model.stage2, &model.y_tilde, model.stage3.y.is_some()) {
        (Some(f1), Some(known_tilde), true) => {
            let new_tilde = f1.predict(&batch_for(f1, &x, &pe, None)).map_err(stage)?;
            let tilde_of = |j: usize| if j < known { known_tilde.row(j) } else { new_tilde.row(j - known) };
            let mut yp = DenseMatrix::zeros(new.count, c);
            for (r, &i) in new_ids.iter().enumerate() {
                let nb = revealed.out_neighbors(i);
                let row = yp.row_mut(r);
                if nb.is_empty() {
                    row.iter_mut().for_each(|v| *v = 1.0 / c as f64);
                    continue;
                }
                for &j in nb {
                    for (o, v) in row.iter_mut().zip(tilde_of(j as usize)) {
                        *o += v;
                    }
                }
                let inv = 1.0 / nb.len() as f64;
                row.iter_mut().for_each(|v| *v *= inv);
            }
            Some(FeatureMatrix::Dense(yp))
        }
        (_, _, true) => return Err(PipelineError::Shape("model lacks the neighbor-distribution stage".into())),
        _ => None,
    };
    let probs = model.stage3.predict(&batch_for(&model.stage3, &x, &pe, y_prime)).map_err(stage)?;
    let predictions = (0..new.count).map(|r| crate::dense::train::argmax(probs.row(r))).collect();
    Ok(InductivePrediction {
        probs,
        predictions,
        isolated,
    })
}
