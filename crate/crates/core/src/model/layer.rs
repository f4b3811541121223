//! Sparse hyperbolic convolution over per-location feature maps.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{kernel, Activation, BallPoint, Curvature, BOUNDARY_EPS};
use crate::grad::{Groups, RowMix, Tape, Var};
use crate::sparse::{Cell, SparseTensor3};

/// Squashing applied to raw channel values before they enter the ball.
pub fn squash(v: f64) -> f64 {
    v.tanh() * (1.0 - BOUNDARY_EPS)
}

/// Feature vectors at the nonzero spatial locations of a `(D, rows, cols)`
/// tensor, sorted by `(row, col)`. `values` is `len × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMap {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub coords: Vec<(u32, u32)>,
    pub values: Vec<f64>,
}

impl CellMap {
    pub fn empty(dim: usize, rows: usize, cols: usize) -> Self {
        Self { rows, cols, dim, coords: Vec::new(), values: Vec::new() }
    }

    /// Gathers channel values per location and squashes them, without
    /// projecting into a ball.
    pub fn squashed(t: &SparseTensor3) -> Self {
        let (dim, rows, cols) = t.shape();
        let mut cells: Vec<&Cell> = t.cells().iter().collect();
        cells.sort_by_key(|c| (c.i, c.j, c.d));
        let mut map = Self::empty(dim, rows, cols);
        for c in cells {
            if map.coords.last() != Some(&(c.i, c.j)) {
                map.coords.push((c.i, c.j));
                map.values.extend(std::iter::repeat_n(0.0, dim));
            }
            let base = map.values.len() - dim;
            map.values[base + c.d as usize] = squash(c.value);
        }
        map
    }

    /// Squashed features projected into the ball of curvature `c`.
    pub fn from_tensor(t: &SparseTensor3, c: Curvature) -> Self {
        let mut map = Self::squashed(t);
        if map.dim > 0 {
            map.values.chunks_mut(map.dim).for_each(|r| {
                kernel::project(r, c.value());
            });
        }
        map
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Position of `(i, j)` among the locations.
    pub fn find(&self, i: u32, j: u32) -> Option<usize> {
        self.coords.binary_search(&(i, j)).ok()
    }

    /// Back to COO form, one cell per nonzero coordinate.
    pub fn to_tensor(&self) -> Result<SparseTensor3> {
        let mut cells = Vec::with_capacity(self.values.len());
        for (k, &(i, j)) in self.coords.iter().enumerate() {
            for (d, &v) in self.feature(k).iter().enumerate() {
                cells.push(Cell { d: d as u32, i, j, value: v });
            }
        }
        SparseTensor3::from_cells(self.dim, self.rows, self.cols, cells)
    }
}

/// Feature vector at one location: squashed channel values projected into
/// the ball. An empty location gives the origin.
pub fn cell_features(t: &SparseTensor3, i: usize, j: usize, c: Curvature) -> BallPoint {
    let mut v: Vec<f64> = (0..t.channels()).map(|d| squash(t.get(d, i, j))).collect();
    kernel::project(&mut v, c.value());
    BallPoint::from_kernel(v)
}

/// Uniform mean over the present locations inside the `f × f` window of
/// every location, the location itself included.
pub fn window_mix(coords: &[(u32, u32)], f: usize) -> Result<RowMix> {
    let half = (f / 2) as i64;
    let mut offsets = Vec::with_capacity(coords.len() + 1);
    let mut index = Vec::new();
    let mut weight = Vec::new();
    offsets.push(0);
    for &(i, j) in coords {
        let start = index.len();
        let (i, j) = (i as i64, j as i64);
        let c_lo = (j - half).max(0) as u32;
        for r in (i - half).max(0)..=(i + half) {
            let r = r as u32;
            let from = coords.partition_point(|&p| p < (r, c_lo));
            for (k, &(pr, pc)) in coords.iter().enumerate().skip(from) {
                if pr != r || pc as i64 > j + half {
                    break;
                }
                index.push(k as u32);
            }
        }
        let n = (index.len() - start) as f64;
        weight.extend(std::iter::repeat_n(1.0 / n, index.len() - start));
        offsets.push(index.len());
    }
    RowMix::new(offsets, index, weight)
}

/// Pooling groups keyed by `(⌊i/2⌋, ⌊j/2⌋)` and the sorted output
/// coordinates, one per group.
pub fn pool_groups(coords: &[(u32, u32)]) -> Result<(Groups, Vec<(u32, u32)>)> {
    let mut order: Vec<u32> = (0..coords.len() as u32).collect();
    let key = |k: u32| (coords[k as usize].0 / 2, coords[k as usize].1 / 2);
    order.sort_by_key(|&k| (key(k), k));
    let mut offsets = vec![0];
    let mut out = Vec::new();
    for (pos, &k) in order.iter().enumerate() {
        if out.last() != Some(&key(k)) {
            if pos > 0 {
                offsets.push(pos);
            }
            out.push(key(k));
        }
    }
    offsets.push(order.len());
    if order.is_empty() {
        offsets = vec![0];
    }
    Ok((Groups::new(offsets, order)?, out))
}

/// Parameters of one convolution layer as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    /// `D × D`, row-major.
    pub w: Vec<f64>,
    pub b: BallPoint,
    pub c: Curvature,
    pub scorer: Vec<f64>,
    pub score_bias: f64,
}

/// Layer parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerVars {
    pub w: Var,
    pub b: Var,
    pub c: Var,
    pub c_out: Var,
    pub score_w: Var,
    pub score_b: Var,
}

/// What one layer produced on the tape.
#[derive(Debug, Clone)]
pub(crate) struct LayerOutput {
    /// Output features in the `c_out` ball, one row per surviving location.
    pub x: Var,
    pub coords: Vec<(u32, u32)>,
    pub rows: usize,
    pub cols: usize,
    /// Tangent vectors `σ(log_0(pooled))` of the surviving rows.
    pub tangent: Var,
    /// Pooling weight of every input location and the group each input
    /// location fell into (indexed by output row before dropping).
    pub alpha: Var,
    pub group_of: Vec<u32>,
    pub kept: Vec<u32>,
}

/// One layer: window mean, Möbius transform and bias, attention pooling by
/// coordinate halving, activation into the next ball. Locations whose
/// activated tangent vector is exactly zero are dropped.
pub(crate) fn conv_layer_tape(
    tape: &mut Tape,
    x: Var,
    coords: &[(u32, u32)],
    (rows, cols): (usize, usize),
    p: &LayerVars,
    f: usize,
    act: Activation,
) -> Result<LayerOutput> {
    let (n, dim) = tape.shape(x);
    if n != coords.len() {
        return Err(Error::DimensionMismatch { expected: coords.len(), got: n });
    }
    let out_rows = rows.div_ceil(2);
    let out_cols = cols.div_ceil(2);
    if n == 0 {
        let empty = tape.constant(Vec::new(), 0, dim)?;
        let alpha = tape.constant(Vec::new(), 0, 1)?;
        return Ok(LayerOutput {
            x: empty,
            coords: Vec::new(),
            rows: out_rows,
            cols: out_cols,
            tangent: empty,
            alpha,
            group_of: Vec::new(),
            kept: Vec::new(),
        });
    }
    let mix = Arc::new(window_mix(coords, f)?);
    let u = tape.log0(x, p.c)?;
    let mean = tape.row_mix(u, mix)?;
    let xp = tape.exp0(mean, p.c)?;
    let v = tape.log0(xp, p.c)?;
    let mv = tape.matmul_rows(v, p.w)?;
    let o = tape.exp0(mv, p.c)?;
    let bias = tape.project(p.b, p.c)?;
    let o = tape.mobius_add(o, bias, p.c)?;
    let t = tape.log0(o, p.c)?;

    let (groups, pooled_coords) = pool_groups(coords)?;
    let mut group_of = vec![0u32; n];
    for g in 0..groups.len() {
        for &m in groups.group(g) {
            group_of[m as usize] = g as u32;
        }
    }
    let groups = Arc::new(groups);
    let s = tape.score_rows(t, p.score_w, p.score_b)?;
    let alpha = tape.group_softmax(s, groups.clone())?;
    let pooled = tape.group_weighted_sum(t, alpha, groups)?;
    let a = tape.exp0(pooled, p.c)?;
    let la = tape.log0(a, p.c)?;
    let h = tape.activation(la, act);

    let kept: Vec<u32> = (0..pooled_coords.len())
        .filter(|&g| tape.row(h, g).iter().any(|&v| v != 0.0))
        .map(|g| g as u32)
        .collect();
    let (h, out_coords) = if kept.len() == pooled_coords.len() {
        (h, pooled_coords)
    } else {
        let c = kept.iter().map(|&g| pooled_coords[g as usize]).collect();
        (tape.select_rows(h, kept.clone())?, c)
    };
    let x_out = tape.exp0(h, p.c_out)?;
    Ok(LayerOutput {
        x: x_out,
        coords: out_coords,
        rows: out_rows,
        cols: out_cols,
        tangent: h,
        alpha,
        group_of,
        kept,
    })
}

/// Runs one layer on a feature tensor whose channels are ball coordinates
/// in the `p.c` ball; the result lives in the `c_out` ball at halved
/// resolution.
pub fn conv_layer_forward(
    x: &SparseTensor3,
    p: &ConvLayerParams,
    c_out: Curvature,
    f: usize,
    act: Activation,
) -> Result<SparseTensor3> {
    let dim = x.channels();
    if p.w.len() != dim * dim || p.b.dim() != dim || p.scorer.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: p.b.dim() });
    }
    let mut map = CellMap::empty(dim, x.rows(), x.cols());
    let mut cells: Vec<&Cell> = x.cells().iter().collect();
    cells.sort_by_key(|c| (c.i, c.j, c.d));
    for c in cells {
        if map.coords.last() != Some(&(c.i, c.j)) {
            map.coords.push((c.i, c.j));
            map.values.extend(std::iter::repeat_n(0.0, dim));
        }
        let base = map.values.len() - dim;
        map.values[base + c.d as usize] = c.value;
    }
    let out = conv_map(&map, p, c_out, f, act)?;
    out.to_tensor()
}

/// [`conv_layer_forward`] on a [`CellMap`].
pub fn conv_map(map: &CellMap, p: &ConvLayerParams, c_out: Curvature, f: usize, act: Activation) -> Result<CellMap> {
    let dim = map.dim;
    let mut tape = Tape::new();
    let x = tape.constant(map.values.clone(), map.len(), dim)?;
    let vars = LayerVars {
        w: tape.constant(p.w.clone(), dim, dim)?,
        b: tape.constant(p.b.coords().to_vec(), 1, dim)?,
        c: tape.constant(vec![p.c.value()], 1, 1)?,
        c_out: tape.constant(vec![c_out.value()], 1, 1)?,
        score_w: tape.constant(p.scorer.clone(), 1, dim)?,
        score_b: tape.constant(vec![p.score_bias], 1, 1)?,
    };
    let out = conv_layer_tape(&mut tape, x, &map.coords, (map.rows, map.cols), &vars, f, act)?;
    Ok(CellMap {
        rows: out.rows,
        cols: out.cols,
        dim,
        values: tape.value(out.x).to_vec(),
        coords: out.coords,
    })
}
