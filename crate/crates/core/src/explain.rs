//! Metapath explanations: the strongest activation cell of every layer,
//! per edge type, with its dyadic footprint in the original adjacency.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::HeteroGraph;
use crate::error::{Error, Result};
use crate::model::{LayerTrace, Model, PairInput, Prediction};
use crate::sparse::AdjacencySlice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCell {
    pub layer: usize,
    pub row: u32,
    pub col: u32,
    /// Largest pooling weight inside the cell's merge group.
    pub alpha_p: f64,
    /// `[r0, r1, c0, c1]`, half-open.
    #[serde(rename = "box")]
    pub bounds: [u64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetapathPath {
    pub edge_type: String,
    pub alpha: f64,
    pub cells: Vec<TraceCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetapathTrace {
    pub pair: [usize; 2],
    pub prediction: Prediction,
    pub paths: Vec<MetapathPath>,
}

/// Rows (and columns) of the original adjacency covered by a cell of
/// layer `layer` (0-based): `[i·2^(layer+1), (i+1)·2^(layer+1))`.
pub fn dyadic_box(layer: usize, row: u32, col: u32) -> [u64; 4] {
    let s = 1u64 << (layer + 1);
    [row as u64 * s, (row as u64 + 1) * s, col as u64 * s, (col as u64 + 1) * s]
}

fn tangent_norm(t: &LayerTrace, k: usize, dim: usize) -> f64 {
    t.tangent[k * dim..(k + 1) * dim].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs the traced forward pass for `(i, j)` against `base` (the pair's own
/// link is masked as in training) and keeps the `top` strongest cells of
/// every layer. Also returns the raw layer traces.
pub fn extract_metapaths_detailed(
    model: &Model,
    base: &[AdjacencySlice],
    signals: &[Vec<f64>],
    i: usize,
    j: usize,
    top: usize,
) -> Result<(MetapathTrace, Vec<Vec<LayerTrace>>)> {
    let nodes = signals.len();
    for v in [i, j] {
        if v >= nodes {
            return Err(Error::NodeOutOfRange { index: v, nodes });
        }
    }
    if top == 0 {
        return Err(Error::invalid("at least one cell per layer must be traced"));
    }
    let slices = crate::model::train::masked_slices(base, i as u32, j as u32);
    let x = PairInput { slices: &slices, i, j, t_i: &signals[i], t_j: &signals[j] };
    let (prediction, alpha, traces) = model.predict_traced(&x)?;
    let dim = model.config.dim;
    let mut paths = Vec::with_capacity(traces.len());
    for (k, layers) in traces.iter().enumerate() {
        let mut cells = Vec::new();
        for (l, t) in layers.iter().enumerate() {
            let mut order: Vec<usize> = (0..t.coords.len()).collect();
            order.sort_by(|&a, &b| tangent_norm(t, b, dim).total_cmp(&tangent_norm(t, a, dim)).then(a.cmp(&b)));
            for &p in order.iter().take(top) {
                let (row, col) = t.coords[p];
                cells.push(TraceCell { layer: l, row, col, alpha_p: t.alpha[p], bounds: dyadic_box(l, row, col) });
            }
        }
        paths.push(MetapathPath { edge_type: model.edge_types[k].clone(), alpha: alpha[k], cells });
    }
    Ok((MetapathTrace { pair: [i, j], prediction, paths }, traces))
}

/// [`extract_metapaths_detailed`] with one cell per layer.
pub fn extract_metapaths(
    model: &Model,
    base: &[AdjacencySlice],
    signals: &[Vec<f64>],
    i: usize,
    j: usize,
) -> Result<MetapathTrace> {
    Ok(extract_metapaths_detailed(model, base, signals, i, j, 1)?.0)
}

/// Checks the structural guarantees of a trace against the layer records
/// it came from: every cell is a nonzero location of its layer, every
/// layer-`l` cell box contains the box of some nonzero layer-`l-1` cell,
/// and the edge-type weights sum to one.
pub fn check_trace(trace: &MetapathTrace, layers: &[Vec<LayerTrace>]) -> Result<()> {
    let fail = |msg: String| Err(Error::invalid(msg));
    let total: f64 = trace.paths.iter().map(|p| p.alpha).sum();
    if (total - 1.0).abs() > 1e-12 {
        return fail(format!("edge-type weights sum to {total}"));
    }
    for (path, recs) in trace.paths.iter().zip(layers) {
        for cell in &path.cells {
            let rec = &recs[cell.layer];
            if rec.coords.binary_search(&(cell.row, cell.col)).is_err() {
                return fail(format!("layer {} cell ({}, {}) is not an active location", cell.layer, cell.row, cell.col));
            }
            let [r0, r1, c0, c1] = cell.bounds;
            let has_parent = rec.input_coords.iter().any(|&(i, j)| {
                let [pr0, pr1, pc0, pc1] = if cell.layer == 0 {
                    [i as u64, i as u64 + 1, j as u64, j as u64 + 1]
                } else {
                    dyadic_box(cell.layer - 1, i, j)
                };
                r0 <= pr0 && pr1 <= r1 && c0 <= pc0 && pc1 <= c1
            });
            if !has_parent {
                return fail(format!("layer {} cell ({}, {}) has no active parent", cell.layer, cell.row, cell.col));
            }
        }
    }
    Ok(())
}

/// JSON and plain-text renderings of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub json: serde_json::Value,
    pub text: String,
}

pub fn render_trace(trace: &MetapathTrace, g: &HeteroGraph) -> Result<Report> {
    let mut json = serde_json::to_value(trace)?;
    let name = |v: usize| if v < g.num_nodes() { g.node_id(v).to_string() } else { v.to_string() };
    let text_of = |v: usize| if v < g.num_nodes() { g.text(v).to_string() } else { String::new() };
    let [i, j] = trace.pair;
    json["nodes"] = serde_json::json!([name(i), name(j)]);
    json["texts"] = serde_json::json!([text_of(i), text_of(j)]);

    let mut text = String::new();
    let p = &trace.prediction;
    let _ = writeln!(text, "pair {} -> {}  link probability {:.4}", name(i), name(j), p.z_prob);
    for (path, y) in trace.paths.iter().zip(&p.y) {
        let _ = writeln!(text, "  {}: y = {:.4}", path.edge_type, y);
    }
    for path in &trace.paths {
        let _ = writeln!(text, "edge type {} (alpha {:.4})", path.edge_type, path.alpha);
        if path.cells.is_empty() {
            let _ = writeln!(text, "  (no active cells)");
        }
        for c in &path.cells {
            let [r0, r1, c0, c1] = c.bounds;
            let _ = writeln!(
                text,
                "  layer {}: cell ({}, {})  rows [{r0}, {r1})  cols [{c0}, {c1})  alpha_p {:.4}",
                c.layer, c.row, c.col, c.alpha_p
            );
        }
    }
    let _ = writeln!(text, "{}: {}", name(i), text_of(i));
    let _ = writeln!(text, "{}: {}", name(j), text_of(j));
    Ok(Report { json, text })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model(k: usize, layers: usize) -> Model {
        let cfg = ModelConfig { dim: 2, layers, seed: 1, ..Default::default() };
        Model::new(cfg, (0..k).map(|t| format!("type{t}")).collect()).unwrap()
    }

    #[test]
    fn box_arithmetic() {
        assert_eq!(dyadic_box(1, 0, 0), [0, 4, 0, 4]);
        assert_eq!(dyadic_box(0, 3, 1), [6, 8, 2, 4]);
    }

    #[test]
    fn single_edge_propagates_through_every_layer() {
        let m = model(1, 3);
        let base = vec![AdjacencySlice::new(0, 16, vec![(9, 13)]).unwrap()];
        let zero = vec![vec![0.0; 2]; 16];
        let (trace, layers) = extract_metapaths_detailed(&m, &base, &zero, 2, 5, 1).unwrap();
        let cells = &trace.paths[0].cells;
        assert_eq!(cells.len(), 3);
        for c in cells {
            let s = 1u32 << (c.layer + 1);
            assert_eq!((c.row, c.col), (9 / s, 13 / s));
        }
        assert_eq!(trace.paths[0].alpha, 1.0);
        check_trace(&trace, &layers).unwrap();
    }

    #[test]
    fn tracing_does_not_change_predictions() {
        let mut m = model(2, 2);
        for k in 0..m.store.len() {
            let p = m.store.get_mut(crate::grad::ParamId(k));
            p.values.iter_mut().enumerate().for_each(|(e, v)| *v += 0.05 * ((e * 7 + k) % 5) as f64 - 0.1);
        }
        m.store.project_ball_params();
        let base = vec![
            AdjacencySlice::new(0, 8, vec![(0, 1), (2, 3), (5, 6)]).unwrap(),
            AdjacencySlice::new(1, 8, vec![(1, 7)]).unwrap(),
        ];
        let sig: Vec<Vec<f64>> = (0..8).map(|v| vec![0.1 * v as f64, -0.05 * v as f64]).collect();
        let (trace, layers) = extract_metapaths_detailed(&m, &base, &sig, 1, 4, 2).unwrap();
        let masked = crate::model::train::masked_slices(&base, 1, 4);
        let plain = m.predict(&PairInput { slices: &masked, i: 1, j: 4, t_i: &sig[1], t_j: &sig[4] }).unwrap();
        let bits = |p: &Prediction| p.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&plain), bits(&trace.prediction));
        check_trace(&trace, &layers).unwrap();
    }

    #[test]
    fn report_round_trips() {
        let m = model(1, 2);
        let g = HeteroGraph::from_parts(
            (0..4).map(|v| format!("n{v}")).collect(),
            (0..4).map(|v| format!("text {v}")).collect(),
            vec!["type0".into()],
            vec![vec![(0, 1)]],
        )
        .unwrap()
        .0;
        let zero = vec![vec![0.0; 2]; 4];
        let trace = extract_metapaths(&m, &g.adjacency_slices(), &zero, 0, 1).unwrap();
        // the pair's own link is masked and the signals are zero: nothing
        // is active
        assert!(trace.paths[0].cells.is_empty());
        let report = render_trace(&trace, &g).unwrap();
        assert!(report.text.contains("no active cells"));
        let back: MetapathTrace = serde_json::from_value(report.json.clone()).unwrap();
        assert_eq!(back, trace);
        let reparsed: serde_json::Value = serde_json::from_str(&report.json.to_string()).unwrap();
        assert_eq!(reparsed, report.json);
        assert_eq!(report.json["texts"][1], "text 1");
    }
}
