//! End-to-end plumbing shared by the command line and the C interface:
//! training from a data directory and serving a saved checkpoint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{make_splits, Fold, HeteroGraph, Split};
use crate::error::{Error, Result};
use crate::explain::{extract_metapaths_detailed, render_trace, Report};
use crate::metrics::{max_shortest_path_estimate, recommended_layers};
use crate::model::checkpoint::{load_model, save_model};
use crate::model::train::masked_slices;
use crate::model::{evaluate, train, EpochRecord, EvalReport, Model, PairInput, Prediction};
use crate::sparse::AdjacencySlice;

/// Sources sampled when `L = auto`.
const AUTO_LAYER_SAMPLES: usize = 1000;

/// Metadata stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub data: PathBuf,
    pub config: Config,
}

/// Reproduces the single train/val/test fold a run used.
pub fn fold_for(g: &HeteroGraph, cfg: &Config) -> Result<Fold> {
    let spec = make_splits(g, cfg.split_ratios()?, 1, cfg.negative_ratio, cfg.seed)?;
    Ok(spec.folds.into_iter().next().expect("one fold requested"))
}

/// Layer count for a graph under `cfg`.
pub fn resolve_layers(g: &HeteroGraph, cfg: &Config) -> Result<usize> {
    match cfg.layers {
        crate::config::Layers::Fixed(l) => Ok(l),
        crate::config::Layers::Auto => {
            Ok(recommended_layers(max_shortest_path_estimate(g, AUTO_LAYER_SAMPLES, cfg.seed)?))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub meta: RunMeta,
}

impl TrainRun {
    /// Per-epoch history as a JSON document.
    pub fn history_json(&self) -> serde_json::Value {
        serde_json::json!({ "best_epoch": self.best_epoch, "epochs": self.history })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, &self.model, &serde_json::to_value(&self.meta)?)
    }
}

/// Trains on the dataset in `data` (a directory written by `ingest`).
pub fn train_dir(data: &Path, cfg: &Config) -> Result<TrainRun> {
    let g = HeteroGraph::load_dir(data)?;
    train_graph(&g, cfg, data)
}

pub fn train_graph(g: &HeteroGraph, cfg: &Config, data: &Path) -> Result<TrainRun> {
    cfg.validate()?;
    if g.num_edge_types() == 0 {
        return Err(Error::invalid("graph has no edge types"));
    }
    let fold = fold_for(g, cfg)?;
    let signals = cfg.signals(g)?;
    let model = Model::new(cfg.model_config(resolve_layers(g, cfg)?)?, g.edge_types().to_vec())?;
    let out = train(model, g, &signals, &fold, &cfg.train_config())?;
    let data = std::path::absolute(data).unwrap_or_else(|_| data.to_path_buf());
    Ok(TrainRun {
        model: out.model,
        history: out.history,
        best_epoch: out.best_epoch,
        meta: RunMeta { data, config: cfg.clone() },
    })
}

/// A checkpoint bound to its dataset, ready to score pairs.
#[derive(Debug, Clone)]
pub struct Session {
    pub model: Model,
    pub meta: RunMeta,
    pub graph: HeteroGraph,
    pub fold: Fold,
    pub signals: Vec<Vec<f64>>,
    base: Vec<AdjacencySlice>,
}

impl Session {
    /// Loads a checkpoint and its dataset (`data` overrides the stored
    /// path).
    pub fn open(ckpt: &Path, data: Option<&Path>) -> Result<Self> {
        let cp = load_model(ckpt)?;
        let meta: RunMeta = serde_json::from_value(cp.meta)
            .map_err(|e| Error::Checkpoint(format!("checkpoint lacks run metadata: {e}")))?;
        let dir = data.map(Path::to_path_buf).unwrap_or_else(|| meta.data.clone());
        let graph = HeteroGraph::load_dir(&dir)?;
        Self::with_graph(cp.model, meta, graph)
    }

    pub fn with_graph(model: Model, meta: RunMeta, graph: HeteroGraph) -> Result<Self> {
        if graph.edge_types() != model.edge_types.as_slice() {
            return Err(Error::invalid("dataset edge types differ from the checkpoint's"));
        }
        let fold = fold_for(&graph, &meta.config)?;
        let signals = meta.config.signals(&graph)?;
        let base = graph.adjacency_slices_without(&fold.held_out());
        Ok(Self { model, meta, graph, fold, signals, base })
    }

    /// Node index for an id, or for a bare index when no id matches.
    pub fn resolve(&self, node: &str) -> Result<usize> {
        match self.graph.lookup(node) {
            Ok(v) => Ok(v),
            Err(e) => match node.parse::<usize>() {
                Ok(v) if v < self.graph.num_nodes() => Ok(v),
                _ => Err(e),
            },
        }
    }

    pub fn evaluate(&self, split: Split) -> Result<EvalReport> {
        evaluate(&self.model, &self.graph, &self.signals, &self.fold, split)
    }

    pub fn predict(&self, i: usize, j: usize) -> Result<Prediction> {
        let n = self.graph.num_nodes();
        for v in [i, j] {
            if v >= n {
                return Err(Error::NodeOutOfRange { index: v, nodes: n });
            }
        }
        let slices = masked_slices(&self.base, i as u32, j as u32);
        self.model.predict(&PairInput { slices: &slices, i, j, t_i: &self.signals[i], t_j: &self.signals[j] })
    }

    /// Prediction as JSON, with `y` keyed by edge type.
    pub fn predict_json(&self, i: usize, j: usize) -> Result<serde_json::Value> {
        let p = self.predict(i, j)?;
        let y: serde_json::Map<String, serde_json::Value> =
            self.model.edge_types.iter().zip(&p.y).map(|(t, v)| (t.clone(), serde_json::json!(v))).collect();
        Ok(serde_json::json!({
            "pair": [self.graph.node_id(i), self.graph.node_id(j)],
            "z_prob": p.z_prob,
            "y": y,
            "decision": p.decision().map(|k| self.model.edge_types[k].clone()),
        }))
    }

    pub fn explain(&self, i: usize, j: usize, top: usize) -> Result<Report> {
        let (trace, _) = extract_metapaths_detailed(&self.model, &self.base, &self.signals, i, j, top)?;
        render_trace(&trace, &self.graph)
    }
}
