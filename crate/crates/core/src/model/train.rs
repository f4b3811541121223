//! Mini-batch training with per-sample tapes, and evaluation metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Model, PairInput, Prediction};
use crate::data::{sample_negatives, Fold, HeteroGraph, Split};
use crate::error::{Error, Result};
use crate::grad::{AdamConfig, Gradients};
use crate::sparse::AdjacencySlice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Negatives drawn per positive each epoch.
    pub negative_ratio: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 20,
            patience: 5,
            negative_ratio: 1.0,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// A query pair and its label: `None` for no link, else the edge type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub i: u32,
    pub j: u32,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub loss: f64,
    pub acc: f64,
    pub auc: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: EvalReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
}

/// Removes the pair's own link, in both directions and for every type.
pub fn masked_slices(base: &[AdjacencySlice], i: u32, j: u32) -> Vec<AdjacencySlice> {
    base.iter().map(|s| s.without(&[(i, j), (j, i)])).collect()
}

/// Labelled samples of a split: positives then the stored negatives.
pub fn split_samples(fold: &Fold, split: Split) -> Vec<Sample> {
    let mut out: Vec<Sample> = fold
        .positives(split)
        .iter()
        .map(|e| Sample { i: e.src, j: e.dst, label: Some(e.edge_type) })
        .collect();
    out.extend(fold.negatives(split).iter().map(|&(i, j)| Sample { i, j, label: None }));
    out
}

fn pair<'a>(slices: &'a [AdjacencySlice], signals: &'a [Vec<f64>], s: &Sample) -> PairInput<'a> {
    PairInput { slices, i: s.i as usize, j: s.j as usize, t_i: &signals[s.i as usize], t_j: &signals[s.j as usize] }
}

/// Predictions for a list of samples, each scored with its own link masked.
pub fn score_samples(
    model: &Model,
    base: &[AdjacencySlice],
    signals: &[Vec<f64>],
    samples: &[Sample],
) -> Result<Vec<Prediction>> {
    samples
        .par_iter()
        .map(|s| {
            let slices = masked_slices(base, s.i, s.j);
            model.predict(&pair(&slices, signals, s))
        })
        .collect()
}

/// Area under the ROC curve of `scores` for binary `labels`, ties counted
/// as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut rank_sum, mut pos) = (0.0, 0usize);
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && scores[idx[e + 1]] == scores[idx[k]] {
            e += 1;
        }
        let avg_rank = (k + e) as f64 / 2.0 + 1.0;
        for &m in &idx[k..=e] {
            if labels[m] {
                rank_sum += avg_rank;
                pos += 1;
            }
        }
        k = e + 1;
    }
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    (rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64
}

/// ACC, existence AUC and macro precision/F1 over the classes
/// `{none, type_1, …, type_K}`.
pub fn report(preds: &[Prediction], labels: &[Option<usize>]) -> EvalReport {
    let n = preds.len();
    if n == 0 {
        return EvalReport { samples: 0, loss: 0.0, acc: 0.0, auc: 0.5, precision: 0.0, f1: 0.0 };
    }
    let classes = preds[0].class_probs.len() + 1;
    let code = |c: Option<usize>| c.map_or(0, |k| k + 1);
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut loss = 0.0;
    for (p, &l) in preds.iter().zip(labels) {
        confusion[code(l)][code(p.decision())] += 1;
        loss += super::multi_step_loss(p, l);
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let (mut prec_sum, mut f1_sum, mut used) = (0.0, 0.0, 0);
    for c in 0..classes {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        if predicted == 0 && actual == 0 {
            continue;
        }
        used += 1;
        let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
        prec_sum += p;
        f1_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let scores: Vec<f64> = preds.iter().map(|p| p.z_prob).collect();
    let exists: Vec<bool> = labels.iter().map(Option::is_some).collect();
    EvalReport {
        samples: n,
        loss: loss / n as f64,
        acc: correct as f64 / n as f64,
        auc: auc(&scores, &exists),
        precision: prec_sum / used as f64,
        f1: f1_sum / used as f64,
    }
}

/// Scores one split of a fold against the graph with held-out links removed.
pub fn evaluate(model: &Model, graph: &HeteroGraph, signals: &[Vec<f64>], fold: &Fold, split: Split) -> Result<EvalReport> {
    let base = graph.adjacency_slices_without(&fold.held_out());
    let samples = split_samples(fold, split);
    let preds = score_samples(model, &base, signals, &samples)?;
    let labels: Vec<Option<usize>> = samples.iter().map(|s| s.label).collect();
    Ok(report(&preds, &labels))
}

/// Mean loss and averaged gradients of a batch; per-sample work runs in
/// parallel and is reduced in sample order.
pub fn batch_gradients(
    model: &Model,
    base: &[AdjacencySlice],
    signals: &[Vec<f64>],
    batch: &[Sample],
) -> Result<(f64, Gradients)> {
    let parts: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|s| {
            let slices = masked_slices(base, s.i, s.j);
            model.loss_and_grad(&pair(&slices, signals, s), s.label)
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::new(model.store.len());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.accumulate(g);
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

fn epoch_seed(seed: u64, epoch: usize, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((epoch as u64) << 8) ^ salt
}

/// Trains on the fold's training links with fresh negatives every epoch,
/// keeping the parameters with the lowest validation loss.
pub fn train(
    mut model: Model,
    graph: &HeteroGraph,
    signals: &[Vec<f64>],
    fold: &Fold,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if fold.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if signals.len() != graph.num_nodes() {
        return Err(Error::DimensionMismatch { expected: graph.num_nodes(), got: signals.len() });
    }
    let base = graph.adjacency_slices_without(&fold.held_out());
    let positives: Vec<Sample> =
        fold.train.iter().map(|e| Sample { i: e.src, j: e.dst, label: Some(e.edge_type) }).collect();
    let val = split_samples(fold, Split::Val);
    let val_labels: Vec<Option<usize>> = val.iter().map(|s| s.label).collect();
    let hp = cfg.adam();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, model.store.clone());
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let n_neg = (cfg.negative_ratio * positives.len() as f64).round() as usize;
        let mut samples = positives.clone();
        if n_neg > 0 {
            let negs = sample_negatives(graph, n_neg, epoch_seed(cfg.seed, epoch, 1))?;
            samples.extend(negs.into_iter().map(|(i, j)| Sample { i, j, label: None }));
        }
        samples.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch, 2)));
        let mut loss_sum = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradients(&model, &base, signals, batch)?;
            loss_sum += loss * batch.len() as f64;
            model.store.set_grads(&grads);
            model.store.step(&hp)?;
        }
        let val_report = if val.is_empty() {
            EvalReport { samples: 0, loss: f64::NAN, acc: 0.0, auc: 0.5, precision: 0.0, f1: 0.0 }
        } else {
            report(&score_samples(&model, &base, signals, &val)?, &val_labels)
        };
        let train_loss = loss_sum / samples.len() as f64;
        let monitored = if val.is_empty() { train_loss } else { val_report.loss };
        history.push(EpochRecord { epoch, train_loss, val: val_report });
        if monitored < best.0 {
            best = (monitored, epoch, model.store.clone());
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    let best_epoch = if history.is_empty() { 0 } else { best.1 };
    if !history.is_empty() {
        model.store = best.2;
    }
    model.store.zero_grads();
    Ok(TrainOutcome { model, history, best_epoch })
}
