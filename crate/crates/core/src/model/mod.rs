//! The link-prediction network: per-edge-type sparse hyperbolic encoders,
//! edge-type attention, a dense head over `[h_L, t_i, t_j]`, and the
//! factored existence/type loss.

pub mod checkpoint;
pub mod layer;
pub mod train;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sigmoid, softplus_inverse, Activation};
use crate::grad::{Gradients, Groups, Manifold, ParamId, ParamStore, ParamTensor, Tape, Var};
use crate::sparse::{inject_semantic, stack_adjacency, AdjacencySlice, InjectionMode};

pub use layer::{cell_features, conv_layer_forward, CellMap, ConvLayerParams};
pub use train::{evaluate, train, EpochRecord, EvalReport, TrainConfig, TrainOutcome};

/// Architecture settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channel count `D`.
    pub dim: usize,
    /// Convolution layers `L`.
    pub layers: usize,
    /// Window size `f`.
    pub window: usize,
    pub activation: String,
    /// Separate layer parameters per edge type.
    pub per_type_params: bool,
    pub injection: String,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            layers: 8,
            window: 3,
            activation: "relu".into(),
            per_type_params: false,
            injection: "add".into(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("D must be at least 1"));
        }
        if self.layers == 0 {
            return Err(Error::invalid("L must be at least 1"));
        }
        if self.window.is_multiple_of(2) {
            return Err(Error::invalid("window size f must be odd"));
        }
        Activation::parse(&self.activation)?;
        InjectionMode::parse(&self.injection)?;
        Ok(())
    }

    pub fn activation(&self) -> Activation {
        Activation::parse(&self.activation).unwrap_or(Activation::Relu)
    }

    pub fn injection(&self) -> InjectionMode {
        InjectionMode::parse(&self.injection).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerIds {
    pub w: ParamId,
    pub b: ParamId,
    pub c: ParamId,
    pub score_w: ParamId,
    pub score_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamIds {
    /// One stack of layers, or one per edge type.
    pub layers: Vec<Vec<LayerIds>>,
    pub pool_w: ParamId,
    pub pool_b: ParamId,
    pub edge_w: ParamId,
    pub edge_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Factored prediction: `y_k = z_prob · class_probs[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub z_prob: f64,
    pub class_probs: Vec<f64>,
    pub y: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Self {
        let z_prob = sigmoid(logits[0]);
        let rest = &logits[1..];
        let m = rest.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = rest.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = e.iter().sum();
        let class_probs: Vec<f64> = e.iter().map(|v| v / total).collect();
        let y = class_probs.iter().map(|p| z_prob * p).collect();
        Self { z_prob, class_probs, y }
    }

    /// `None` when existence is below 0.5, else the most likely type.
    pub fn decision(&self) -> Option<usize> {
        if self.z_prob < 0.5 {
            return None;
        }
        let mut best = 0;
        for (k, &p) in self.class_probs.iter().enumerate() {
            if p > self.class_probs[best] {
                best = k;
            }
        }
        Some(best)
    }
}

/// `BCE(z_prob, exists) + 1[exists]·CE(class_probs, k)`.
pub fn multi_step_loss(pred: &Prediction, label: Option<usize>) -> f64 {
    let clamp = |p: f64| p.clamp(1e-300, 1.0);
    match label {
        Some(k) => -clamp(pred.z_prob).ln() - clamp(pred.class_probs[k]).ln(),
        None => -clamp(1.0 - pred.z_prob).ln(),
    }
}

/// One query pair with the adjacency it is scored against.
#[derive(Debug, Clone, Copy)]
pub struct PairInput<'a> {
    pub slices: &'a [AdjacencySlice],
    pub i: usize,
    pub j: usize,
    pub t_i: &'a [f64],
    pub t_j: &'a [f64],
}

/// Per-layer record kept when tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub rows: usize,
    pub cols: usize,
    pub coords: Vec<(u32, u32)>,
    /// Tangent vectors `log_0(h_{p,l})` of the output locations (`len × D`).
    pub tangent: Vec<f64>,
    /// For every output location, the largest pooling weight in its group.
    pub alpha: Vec<f64>,
    /// Nonzero input locations of the layer.
    pub input_coords: Vec<(u32, u32)>,
}

/// Forward pass results recorded on a tape.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    pub logits: Var,
    pub encodings: Var,
    pub edge_alpha: Var,
    pub traces: Vec<Vec<LayerTrace>>,
}

/// Trained or freshly initialized network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub edge_types: Vec<String>,
    pub store: ParamStore,
    pub(crate) ids: ParamIds,
}

fn euclid(name: String, rows: usize, cols: usize, values: Vec<f64>) -> Result<ParamTensor> {
    ParamTensor::new(name, rows, cols, values, Manifold::Euclidean)
}

impl Model {
    /// Initializes `W ≈ I`, unit curvatures, biases at the origin, zero
    /// scorers and a small random head.
    pub fn new(config: ModelConfig, edge_types: Vec<String>) -> Result<Self> {
        config.validate()?;
        let k = edge_types.len();
        if k == 0 {
            return Err(Error::invalid("a model needs at least one edge type"));
        }
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let stacks = if config.per_type_params { k } else { 1 };
        let mut layers = Vec::with_capacity(stacks);
        for s in 0..stacks {
            let mut stack = Vec::with_capacity(config.layers);
            for l in 0..config.layers {
                let tag = format!("s{s}.l{l}");
                let w: Vec<f64> = (0..d * d)
                    .map(|e| if e / d == e % d { 1.0 } else { 0.0 } + rng.random_range(-0.05..0.05))
                    .collect();
                let w = store.add(euclid(format!("{tag}.W"), d, d, w)?);
                let c = store.add(euclid(format!("{tag}.c"), 1, 1, vec![softplus_inverse(1.0)])?);
                let b = store.add(ParamTensor::new(
                    format!("{tag}.b"),
                    1,
                    d,
                    vec![0.0; d],
                    Manifold::Poincare { curvature: c },
                )?);
                let score_w = store.add(euclid(format!("{tag}.score_w"), 1, d, vec![0.0; d])?);
                let score_b = store.add(euclid(format!("{tag}.score_b"), 1, 1, vec![0.0])?);
                stack.push(LayerIds { w, b, c, score_w, score_b });
            }
            layers.push(stack);
        }
        let pool_w = store.add(euclid("pool.w".into(), 1, d, vec![0.0; d])?);
        let pool_b = store.add(euclid("pool.b".into(), 1, 1, vec![0.0])?);
        let edge_w = store.add(euclid("edge.w".into(), 1, d, vec![0.0; d])?);
        let edge_b = store.add(euclid("edge.b".into(), k, 1, vec![0.0; k])?);
        let width = k * d + 2 * d;
        let scale = 1.0 / (width as f64).sqrt();
        let hw = (0..(1 + k) * width).map(|_| rng.random_range(-scale..scale)).collect();
        let head_w = store.add(euclid("head.W".into(), 1 + k, width, hw)?);
        let head_b = store.add(euclid("head.b".into(), 1, 1 + k, vec![0.0; 1 + k])?);
        let ids = ParamIds { layers, pool_w, pool_b, edge_w, edge_b, head_w, head_b };
        Ok(Self { config, edge_types, store, ids })
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    /// Plain-value view of one layer's parameters.
    pub fn layer_params(&self, edge_type: usize, layer: usize) -> ConvLayerParams {
        let stack = if self.config.per_type_params { edge_type } else { 0 };
        let ids = self.ids.layers[stack][layer];
        let c = crate::geometry::Curvature::new(self.store.curvature(ids.c)).expect("positive curvature");
        ConvLayerParams {
            w: self.store.get(ids.w).values.clone(),
            b: crate::geometry::project_to_ball(&self.store.get(ids.b).values, c).expect("finite bias"),
            c,
            scorer: self.store.get(ids.score_w).values.clone(),
            score_bias: self.store.get(ids.score_b).values[0],
        }
    }

    /// Curvature values `c_1 … c_L` of one edge type's stack.
    pub fn curvatures(&self, edge_type: usize) -> Vec<f64> {
        let stack = if self.config.per_type_params { edge_type } else { 0 };
        self.ids.layers[stack].iter().map(|l| self.store.curvature(l.c)).collect()
    }

    fn check_input(&self, x: &PairInput) -> Result<()> {
        if x.slices.len() != self.num_edge_types() {
            return Err(Error::DimensionMismatch { expected: self.num_edge_types(), got: x.slices.len() });
        }
        if x.t_i.len() != self.config.dim || x.t_j.len() != self.config.dim {
            return Err(Error::DimensionMismatch { expected: self.config.dim, got: x.t_i.len() });
        }
        Ok(())
    }

    /// Encodes one edge type into `h_{k,L}` (a `1×D` tangent row).
    fn encode(
        &self,
        tape: &mut Tape,
        k: usize,
        x: &PairInput,
        layer_vars: &[layer::LayerVars],
        pool: (Var, Var),
        trace: Option<&mut Vec<LayerTrace>>,
    ) -> Result<Var> {
        let d = self.config.dim;
        let stacked = stack_adjacency(&x.slices[k], d)?;
        let injected = inject_semantic(&stacked, x.i, x.j, x.t_i, x.t_j, self.config.injection())?;
        let map = CellMap::squashed(&injected);
        let raw = tape.constant(map.values, map.coords.len(), d)?;
        let mut feats = tape.project(raw, layer_vars[0].c)?;
        let mut coords = map.coords;
        let (mut rows, mut cols) = (map.rows, map.cols);
        let mut traces = Vec::new();
        for lv in layer_vars {
            let out = layer::conv_layer_tape(
                tape,
                feats,
                &coords,
                (rows, cols),
                lv,
                self.config.window,
                self.config.activation(),
            )?;
            if trace.is_some() {
                let av = tape.value(out.alpha);
                let mut best = vec![0.0f64; out.kept.len()];
                let mut slot = vec![usize::MAX; out.group_of.len().max(1)];
                for (pos, &g) in out.kept.iter().enumerate() {
                    slot[g as usize] = pos;
                }
                for (m, &g) in out.group_of.iter().enumerate() {
                    let pos = slot[g as usize];
                    if pos != usize::MAX {
                        best[pos] = best[pos].max(av[m]);
                    }
                }
                traces.push(LayerTrace {
                    rows: out.rows,
                    cols: out.cols,
                    coords: out.coords.clone(),
                    tangent: tape.value(out.tangent).to_vec(),
                    alpha: best,
                    input_coords: coords.clone(),
                });
            }
            feats = out.x;
            coords = out.coords;
            rows = out.rows;
            cols = out.cols;
        }
        if let Some(t) = trace {
            *t = traces;
        }
        let c_last = layer_vars[layer_vars.len() - 1].c_out;
        if coords.is_empty() {
            return tape.constant(vec![0.0; d], 1, d);
        }
        let t = tape.log0(feats, c_last)?;
        let s = tape.score_rows(t, pool.0, pool.1)?;
        let groups = Arc::new(Groups::single(coords.len()));
        let a = tape.group_softmax(s, groups.clone())?;
        let pooled = tape.group_weighted_sum(t, a, groups)?;
        let ball = tape.exp0(pooled, c_last)?;
        tape.log0(ball, c_last)
    }

    /// Records the full forward pass of one pair on `tape`.
    pub(crate) fn forward(&self, tape: &mut Tape, x: &PairInput, trace: bool) -> Result<Forward> {
        self.check_input(x)?;
        let k_types = self.num_edge_types();
        let d = self.config.dim;
        let mut stacks = Vec::with_capacity(self.ids.layers.len());
        for stack in &self.ids.layers {
            let mut curv = Vec::with_capacity(stack.len());
            for l in stack {
                let raw = tape.param(&self.store, l.c);
                curv.push(tape.softplus(raw)?);
            }
            let mut vars = Vec::with_capacity(stack.len());
            for (li, l) in stack.iter().enumerate() {
                vars.push(layer::LayerVars {
                    w: tape.param(&self.store, l.w),
                    b: tape.param(&self.store, l.b),
                    c: curv[li],
                    c_out: curv[(li + 1).min(stack.len() - 1)],
                    score_w: tape.param(&self.store, l.score_w),
                    score_b: tape.param(&self.store, l.score_b),
                });
            }
            stacks.push(vars);
        }
        let pool = (tape.param(&self.store, self.ids.pool_w), tape.param(&self.store, self.ids.pool_b));
        let mut hs = Vec::with_capacity(k_types);
        let mut traces = Vec::new();
        for k in 0..k_types {
            let vars = &stacks[if self.config.per_type_params { k } else { 0 }];
            let mut tr = Vec::new();
            let h = self.encode(tape, k, x, vars, pool, trace.then_some(&mut tr))?;
            hs.push(h);
            traces.push(tr);
        }
        let stacked = tape.stack_rows(&hs)?;
        let ew = tape.param(&self.store, self.ids.edge_w);
        let eb = tape.param(&self.store, self.ids.edge_b);
        let scores = tape.score_rows(stacked, ew, eb)?;
        let alpha = tape.group_softmax(scores, Arc::new(Groups::single(k_types)))?;
        let h_l = tape.scale_rows(stacked, alpha, 1.0, false)?;
        let ti = tape.constant(x.t_i.to_vec(), 1, d)?;
        let tj = tape.constant(x.t_j.to_vec(), 1, d)?;
        let out = tape.concat(&[h_l, ti, tj]);
        let hw = tape.param(&self.store, self.ids.head_w);
        let hb = tape.param(&self.store, self.ids.head_b);
        let logits = tape.linear(out, hw, hb)?;
        Ok(Forward { logits, encodings: stacked, edge_alpha: alpha, traces: if trace { traces } else { Vec::new() } })
    }

    /// Raw head logits `[z, class_1, …, class_K]`.
    pub fn logits(&self, x: &PairInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, false)?;
        Ok(tape.value(f.logits).to_vec())
    }

    pub fn predict(&self, x: &PairInput) -> Result<Prediction> {
        Ok(Prediction::from_logits(&self.logits(x)?))
    }

    /// Prediction plus edge-type weights and per-type layer traces.
    pub fn predict_traced(&self, x: &PairInput) -> Result<(Prediction, Vec<f64>, Vec<Vec<LayerTrace>>)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, true)?;
        let pred = Prediction::from_logits(tape.value(f.logits));
        Ok((pred, tape.value(f.edge_alpha).to_vec(), f.traces))
    }

    /// Loss and parameter gradients for one labelled pair.
    pub fn loss_and_grad(&self, x: &PairInput, label: Option<usize>) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, false)?;
        let loss = tape.multi_step_loss(f.logits, label)?;
        let grads = tape.backward(loss)?;
        Ok((tape.scalar(loss), grads))
    }

    /// Largest relative error between the reverse-mode gradient of one
    /// pair's loss and central differences with step `h`, per parameter
    /// tensor: `‖a - n‖ / max(‖a‖, ‖n‖, 1e-6)`.
    pub fn finite_difference_check(&self, x: &PairInput, label: Option<usize>, h: f64) -> Result<f64> {
        let (_, grads) = self.loss_and_grad(x, label)?;
        let loss_of = |m: &Model| -> Result<f64> { Ok(multi_step_loss(&m.predict(x)?, label)) };
        let mut worst: f64 = 0.0;
        let mut m = self.clone();
        for k in 0..self.store.len() {
            let id = ParamId(k);
            let n = self.store.get(id).len();
            let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or(vec![0.0; n]);
            let mut numeric = vec![0.0; n];
            for e in 0..n {
                let orig = m.store.get(id).values[e];
                m.store.get_mut(id).values[e] = orig + h;
                let up = loss_of(&m)?;
                m.store.get_mut(id).values[e] = orig - h;
                let down = loss_of(&m)?;
                m.store.get_mut(id).values[e] = orig;
                numeric[e] = (up - down) / (2.0 * h);
            }
            let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(diff / na.max(nn).max(crate::grad::REL_FLOOR));
        }
        Ok(worst)
    }

    /// Per-type tangent encodings `h_{k,L}`.
    pub fn encodings(&self, x: &PairInput) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, false)?;
        Ok(tape.value(f.encodings).chunks(self.config.dim).map(<[f64]>::to_vec).collect())
    }
}
