use std::sync::Arc;

use super::param::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::kernel::{self, artanh_ratio, artanh_ratio_deriv, dot, norm_sq, tanh_ratio, tanh_ratio_deriv};
use crate::geometry::{sigmoid, softplus, Activation, BOUNDARY_EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Row partition used by group softmax and weighted sums: group `g` owns
/// `members[offsets[g]..offsets[g + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    offsets: Vec<usize>,
    members: Vec<u32>,
}

impl Groups {
    pub fn new(offsets: Vec<usize>, members: Vec<u32>) -> Result<Self> {
        let ok = offsets.first() == Some(&0)
            && offsets.last() == Some(&members.len())
            && offsets.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::invalid("malformed group offsets"));
        }
        Ok(Self { offsets, members })
    }

    /// One group holding rows `0..n`.
    pub fn single(n: usize) -> Self {
        Self { offsets: vec![0, n], members: (0..n as u32).collect() }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, g: usize) -> &[u32] {
        &self.members[self.offsets[g]..self.offsets[g + 1]]
    }
}

/// Constant sparse row-mixing matrix: output row `r` is
/// `Σ weight · input[index]` over `entries[offsets[r]..offsets[r + 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMix {
    offsets: Vec<usize>,
    index: Vec<u32>,
    weight: Vec<f64>,
}

impl RowMix {
    pub fn new(offsets: Vec<usize>, index: Vec<u32>, weight: Vec<f64>) -> Result<Self> {
        let ok = offsets.first() == Some(&0)
            && offsets.last() == Some(&index.len())
            && index.len() == weight.len()
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(Error::invalid("malformed row mix"));
        }
        Ok(Self { offsets, index, weight })
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.index[span.clone()].iter().map(|&i| i as usize).zip(self.weight[span].iter().copied())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Const,
    Softplus(Var),
    Project { x: Var, c: Var },
    Exp0 { v: Var, c: Var },
    Log0 { x: Var, c: Var },
    MobiusAdd { x: Var, y: Var, c: Var },
    Conformal { x: Var, c: Var },
    MatMulRows { x: Var, w: Var },
    Linear { x: Var, w: Var, b: Var },
    ScoreRows { x: Var, w: Var, b: Var },
    GroupSoftmax { s: Var, groups: Arc<Groups> },
    GroupWeightedSum { x: Var, a: Var, groups: Arc<Groups> },
    RowMix { x: Var, mix: Arc<RowMix> },
    Activation { x: Var, act: Activation },
    ScaleRows { x: Var, s: Var, factor: f64, invert: bool },
    ScaleConst { x: Var, k: f64 },
    Add { a: Var, b: Var },
    Sum { x: Var },
    StackRows(Vec<Var>),
    Concat(Vec<Var>),
    SelectRows { x: Var, rows: Vec<u32> },
    MultiStepLoss { logits: Var, label: Option<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::Softplus(_) => "softplus",
            Op::Project { .. } => "project_to_ball",
            Op::Exp0 { .. } => "exp0",
            Op::Log0 { .. } => "log0",
            Op::MobiusAdd { .. } => "mobius_add",
            Op::Conformal { .. } => "conformal_factor",
            Op::MatMulRows { .. } => "matmul_rows",
            Op::Linear { .. } => "dense_head",
            Op::ScoreRows { .. } => "score_rows",
            Op::GroupSoftmax { .. } => "attention_softmax",
            Op::GroupWeightedSum { .. } => "attention_sum",
            Op::RowMix { .. } => "window_mean",
            Op::Activation { .. } => "activation",
            Op::ScaleRows { .. } => "scale_rows",
            Op::ScaleConst { .. } => "scale",
            Op::Add { .. } => "add",
            Op::Sum { .. } => "sum",
            Op::StackRows(_) => "stack_rows",
            Op::Concat(_) => "concatenation",
            Op::SelectRows { .. } => "select_rows",
            Op::MultiStepLoss { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
}

/// Records a forward computation for one reverse-mode sweep.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: usize,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::invalid(msg()))
    }
}

/// `exp_0^c` of one row, projected. Matches `kernel::exp0`.
fn exp0_row(v: &[f64], c: f64, out: &mut [f64]) {
    kernel::exp0(v, c, out);
}

/// Backpropagates through the ball projection applied to `e`, rewriting
/// `g` (gradient w.r.t. the projected value) into the gradient w.r.t. `e`.
/// Returns the curvature contribution.
fn project_backward(e: &[f64], c: f64, g: &mut [f64]) -> f64 {
    let n2 = norm_sq(e);
    if c * n2 < 1.0 - BOUNDARY_EPS {
        return 0.0;
    }
    let r = n2.sqrt();
    let k = (1.0 - BOUNDARY_EPS) / (c.sqrt() * r);
    let eg = dot(e, g);
    // z = k e, so z·g = k (e·g)
    let c_bar = -(k * eg) / (2.0 * c);
    let proj = eg / n2;
    for (gi, ei) in g.iter_mut().zip(e) {
        *gi = k * (*gi - proj * ei);
    }
    c_bar
}

/// Backward of `e = f(√c‖v‖) v` for a ratio function `f` with derivative
/// `df`. Adds into `v_bar`, returns the curvature contribution.
fn radial_backward(
    v: &[f64],
    c: f64,
    e_bar: &[f64],
    f: fn(f64) -> f64,
    df: fn(f64) -> f64,
    v_bar: &mut [f64],
) -> f64 {
    let n = norm_sq(v).sqrt();
    let sc = c.sqrt();
    let u = sc * n;
    let fu = f(u);
    if n == 0.0 {
        v_bar.iter_mut().zip(e_bar).for_each(|(a, b)| *a += fu * b);
        return 0.0;
    }
    let dfu = df(u);
    let ve = dot(v, e_bar);
    let coef = dfu * sc / n * ve;
    for ((vb, eb), vi) in v_bar.iter_mut().zip(e_bar).zip(v) {
        *vb += fu * eb + coef * vi;
    }
    dfu * n / (2.0 * sc) * ve
}

/// Backward of the unprojected Möbius sum `N / den`. Adds into `x_bar`
/// and `y_bar`, returns the curvature contribution.
fn mobius_backward(x: &[f64], y: &[f64], c: f64, o_bar: &[f64], x_bar: &mut [f64], y_bar: &mut [f64]) -> f64 {
    let xy = dot(x, y);
    let x2 = norm_sq(x);
    let y2 = norm_sq(y);
    let a = 1.0 + 2.0 * c * xy + c * y2;
    let b = 1.0 - c * x2;
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    let xq = dot(x, o_bar) / den;
    let yq = dot(y, o_bar) / den;
    // N·ō where N = a x + b y
    let n_dot = a * xq * den + b * yq * den;
    let den_bar = -n_dot / (den * den);
    for k in 0..x.len() {
        let q = o_bar[k] / den;
        x_bar[k] += a * q + 2.0 * c * xq * y[k] - 2.0 * c * yq * x[k]
            + den_bar * (2.0 * c * y[k] + 2.0 * c * c * y2 * x[k]);
        y_bar[k] += b * q + xq * (2.0 * c * x[k] + 2.0 * c * y[k])
            + den_bar * (2.0 * c * x[k] + 2.0 * c * c * x2 * y[k]);
    }
    xq * (2.0 * xy + y2) - yq * x2 + den_bar * (2.0 * xy + 2.0 * c * x2 * y2)
}

fn unprojected_mobius(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
    let xy = dot(x, y);
    let x2 = norm_sq(x);
    let y2 = norm_sq(y);
    let a = 1.0 + 2.0 * c * xy + c * y2;
    let b = 1.0 - c * x2;
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = (a * xi + b * yi) / den;
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Existence BCE (from the logit) plus, for positive labels, the class
/// cross-entropy. `logits = [z, class_1, …, class_K]`.
pub fn multi_step_loss_from_logits(logits: &[f64], label: Option<usize>) -> f64 {
    let z = logits[0];
    let y = if label.is_some() { 1.0 } else { 0.0 };
    let bce = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    match label {
        Some(k) => bce - log_softmax(&logits[1..])[k],
        None => bce,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn row(&self, v: Var, r: usize) -> &[f64] {
        let n = &self.nodes[v.0];
        &n.value[r * n.cols..(r + 1) * n.cols]
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    fn check_scalar(&self, v: Var) -> Result<f64> {
        let (r, c) = self.shape(v);
        ensure(r == 1 && c == 1, || format!("expected a scalar, got {r}×{c}"))?;
        Ok(self.scalar(v))
    }

    /// Records a parameter leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.params = self.params.max(id.0 + 1);
        self.push(p.values.clone(), p.rows, p.cols, Op::Param(id))
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Result<Var> {
        ensure(value.len() == rows * cols, || format!("constant has {} values for {rows}×{cols}", value.len()))?;
        Ok(self.push(value, rows, cols, Op::Const))
    }

    /// `softplus` of a scalar; used for curvature.
    pub fn softplus(&mut self, raw: Var) -> Result<Var> {
        let r = self.check_scalar(raw)?;
        Ok(self.push(vec![softplus(r)], 1, 1, Op::Softplus(raw)))
    }

    /// Row-wise projection into the ball of curvature `c`.
    pub fn project(&mut self, x: Var, c: Var) -> Result<Var> {
        let cv = self.check_scalar(c)?;
        let (rows, cols) = self.shape(x);
        let mut value = self.value(x).to_vec();
        if cols > 0 {
            value.chunks_mut(cols).for_each(|r| {
                kernel::project(r, cv);
            });
        }
        Ok(self.push(value, rows, cols, Op::Project { x, c }))
    }

    /// Row-wise `exp_0^c`, projected.
    pub fn exp0(&mut self, v: Var, c: Var) -> Result<Var> {
        let cv = self.check_scalar(c)?;
        let (rows, cols) = self.shape(v);
        let mut value = vec![0.0; rows * cols];
        for r in 0..rows {
            exp0_row(self.row(v, r), cv, &mut value[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(value, rows, cols, Op::Exp0 { v, c }))
    }

    /// Row-wise `log_0^c`.
    pub fn log0(&mut self, x: Var, c: Var) -> Result<Var> {
        let cv = self.check_scalar(c)?;
        let (rows, cols) = self.shape(x);
        let mut value = vec![0.0; rows * cols];
        for r in 0..rows {
            kernel::log0(self.row(x, r), cv, &mut value[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(value, rows, cols, Op::Log0 { x, c }))
    }

    /// Row-wise `x ⊕_c y`, projected; `y` may be a single broadcast row.
    pub fn mobius_add(&mut self, x: Var, y: Var, c: Var) -> Result<Var> {
        let cv = self.check_scalar(c)?;
        let (rows, cols) = self.shape(x);
        let (yr, yc) = self.shape(y);
        ensure(yc == cols && (yr == rows || yr == 1), || format!("mobius_add shapes {rows}×{cols} and {yr}×{yc}"))?;
        let mut value = vec![0.0; rows * cols];
        for r in 0..rows {
            let yrow = self.row(y, if yr == 1 { 0 } else { r });
            kernel::mobius_add(self.row(x, r), yrow, cv, &mut value[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(value, rows, cols, Op::MobiusAdd { x, y, c }))
    }

    /// Row-wise conformal factor `2 / (1 - c‖x‖²)` as an `N×1` column.
    pub fn conformal(&mut self, x: Var, c: Var) -> Result<Var> {
        let cv = self.check_scalar(c)?;
        let (rows, _) = self.shape(x);
        let value = (0..rows).map(|r| kernel::conformal_factor(self.row(x, r), cv)).collect();
        Ok(self.push(value, rows, 1, Op::Conformal { x, c }))
    }

    fn matmul_values(&self, x: Var, w: Var) -> Result<(Vec<f64>, usize, usize)> {
        let (rows, cols) = self.shape(x);
        let (wo, wi) = self.shape(w);
        ensure(wi == cols, || format!("matmul: W is {wo}×{wi}, rows have {cols} entries"))?;
        let mut value = vec![0.0; rows * wo];
        let wv = self.value(w);
        for r in 0..rows {
            let xr = self.row(x, r);
            for o in 0..wo {
                value[r * wo + o] = dot(&wv[o * wi..(o + 1) * wi], xr);
            }
        }
        Ok((value, rows, wo))
    }

    /// `out_p = W x_p` for every row `x_p`; `W` is `out×in`.
    pub fn matmul_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (value, rows, wo) = self.matmul_values(x, w)?;
        Ok(self.push(value, rows, wo, Op::MatMulRows { x, w }))
    }

    /// Dense layer `W x_p + b` per row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (wo, _) = self.shape(w);
        let (br, bc) = self.shape(b);
        ensure(br == 1 && bc == wo, || format!("linear bias must be 1×{wo}, got {br}×{bc}"))?;
        let (mut value, rows, _) = self.matmul_values(x, w)?;
        let bv = self.value(b);
        for row in value.chunks_mut(wo.max(1)) {
            row.iter_mut().zip(bv).for_each(|(a, b)| *a += b);
        }
        Ok(self.push(value, rows, wo, Op::Linear { x, w, b }))
    }

    /// Scores `s_p = w·x_p + b` as an `N×1` column; `b` is `1×1` (shared)
    /// or `N×1`.
    pub fn score_rows(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        let (wr, wc) = self.shape(w);
        ensure(wr == 1 && wc == cols, || format!("scorer must be 1×{cols}, got {wr}×{wc}"))?;
        let (br, bc) = self.shape(b);
        ensure(bc == 1 && (br == 1 || br == rows), || format!("score bias must be 1×1 or {rows}×1"))?;
        let wv = self.value(w);
        let bv = self.value(b);
        let value = (0..rows).map(|r| dot(wv, self.row(x, r)) + bv[if br == 1 { 0 } else { r }]).collect();
        Ok(self.push(value, rows, 1, Op::ScoreRows { x, w, b }))
    }

    /// Softmax of an `N×1` score column within each group.
    pub fn group_softmax(&mut self, s: Var, groups: Arc<Groups>) -> Result<Var> {
        let (rows, cols) = self.shape(s);
        ensure(cols == 1, || "group softmax expects a column".into())?;
        let sv = self.value(s);
        let mut value = vec![0.0; rows];
        for g in 0..groups.len() {
            let members = groups.group(g);
            ensure(members.iter().all(|&m| (m as usize) < rows), || "group member out of range".into())?;
            let mx = members.iter().map(|&m| sv[m as usize]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = members.iter().map(|&m| (sv[m as usize] - mx).exp()).sum();
            for &m in members {
                value[m as usize] = (sv[m as usize] - mx).exp() / total;
            }
        }
        Ok(self.push(value, rows, 1, Op::GroupSoftmax { s, groups }))
    }

    /// `out_g = Σ_{p ∈ g} a_p x_p`; one output row per group.
    pub fn group_weighted_sum(&mut self, x: Var, a: Var, groups: Arc<Groups>) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        ensure(self.shape(a) == (rows, 1), || "attention weights must be an N×1 column".into())?;
        let av = self.value(a);
        let mut value = vec![0.0; groups.len() * cols];
        for g in 0..groups.len() {
            let out = &mut value[g * cols..(g + 1) * cols];
            for &m in groups.group(g) {
                let m = m as usize;
                ensure(m < rows, || "group member out of range".into())?;
                let w = av[m];
                out.iter_mut().zip(self.row(x, m)).for_each(|(o, xi)| *o += w * xi);
            }
        }
        Ok(self.push(value, groups.len(), cols, Op::GroupWeightedSum { x, a, groups }))
    }

    /// Constant sparse mixing of rows.
    pub fn row_mix(&mut self, x: Var, mix: Arc<RowMix>) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        ensure(mix.index.iter().all(|&i| (i as usize) < rows), || "row mix index out of range".into())?;
        let mut value = vec![0.0; mix.rows() * cols];
        for r in 0..mix.rows() {
            let out = &mut value[r * cols..(r + 1) * cols];
            for (i, w) in mix.row(r) {
                out.iter_mut().zip(self.row(x, i)).for_each(|(o, xi)| *o += w * xi);
            }
        }
        let out_rows = mix.rows();
        Ok(self.push(value, out_rows, cols, Op::RowMix { x, mix }))
    }

    /// Elementwise activation.
    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let (rows, cols) = self.shape(x);
        let value = self.value(x).iter().map(|&v| act.apply(v)).collect();
        self.push(value, rows, cols, Op::Activation { x, act })
    }

    /// `factor · s_p · x_p` (or `factor · x_p / s_p` when `invert`) with
    /// `s` an `N×1` column or a `1×1` scalar.
    pub fn scale_rows(&mut self, x: Var, s: Var, factor: f64, invert: bool) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        let (sr, sc) = self.shape(s);
        ensure(sc == 1 && (sr == rows || sr == 1), || format!("row scale must be {rows}×1 or 1×1"))?;
        let sv = self.value(s);
        let mut value = self.value(x).to_vec();
        for r in 0..rows {
            let sr_v = sv[if sr == 1 { 0 } else { r }];
            let k = if invert { factor / sr_v } else { factor * sr_v };
            value[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v *= k);
        }
        Ok(self.push(value, rows, cols, Op::ScaleRows { x, s, factor, invert }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let (rows, cols) = self.shape(x);
        let value = self.value(x).iter().map(|v| v * k).collect();
        self.push(value, rows, cols, Op::ScaleConst { x, k })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure(self.shape(a) == self.shape(b), || "add needs equal shapes".into())?;
        let (rows, cols) = self.shape(a);
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(value, rows, cols, Op::Add { a, b }))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![s], 1, 1, Op::Sum { x })
    }

    /// Vertical concatenation of row blocks with equal width.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure(!parts.is_empty(), || "stack of zero parts".into())?;
        let cols = self.shape(parts[0]).1;
        ensure(parts.iter().all(|&p| self.shape(p).1 == cols), || "stacked parts differ in width".into())?;
        let mut value = Vec::new();
        let mut rows = 0;
        for &p in parts {
            value.extend_from_slice(self.value(p));
            rows += self.shape(p).0;
        }
        Ok(self.push(value, rows, cols, Op::StackRows(parts.to_vec())))
    }

    /// Flattens and concatenates parts into one `1×n` row.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        let n = value.len();
        self.push(value, 1, n, Op::Concat(parts.to_vec()))
    }

    /// Gathers a subset of rows.
    pub fn select_rows(&mut self, x: Var, rows: Vec<u32>) -> Result<Var> {
        let (n, cols) = self.shape(x);
        ensure(rows.iter().all(|&r| (r as usize) < n), || "selected row out of range".into())?;
        let mut value = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            value.extend_from_slice(self.row(x, r as usize));
        }
        let m = rows.len();
        Ok(self.push(value, m, cols, Op::SelectRows { x, rows }))
    }

    /// Scalar multi-step loss of a `1×(1+K)` logit row.
    pub fn multi_step_loss(&mut self, logits: Var, label: Option<usize>) -> Result<Var> {
        let (r, n) = self.shape(logits);
        ensure(r == 1 && n >= 2, || format!("loss expects 1×(1+K) logits, got {r}×{n}"))?;
        if let Some(k) = label {
            ensure(k + 1 < n, || format!("label {k} out of range for {} classes", n - 1))?;
        }
        let loss = multi_step_loss_from_logits(self.value(logits), label);
        Ok(self.push(vec![loss], 1, 1, Op::MultiStepLoss { logits, label }))
    }

    /// Rows of ball-valued results (projections, `exp0`, Möbius sums) that
    /// lie outside their ball.
    pub fn ball_violations(&self) -> usize {
        let mut bad = 0;
        for node in &self.nodes {
            let c = match node.op {
                Op::Project { c, .. } | Op::Exp0 { c, .. } | Op::MobiusAdd { c, .. } => self.scalar(c),
                _ => continue,
            };
            if node.cols == 0 {
                continue;
            }
            bad += node.value.chunks(node.cols).filter(|r| !(c * norm_sq(r) < 1.0)).count();
        }
        bad
    }

    /// Reverse sweep from a scalar `loss`, returning the gradient of every
    /// parameter leaf it reaches.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Gradient { primitive: "backward", msg: "loss node not recorded on this tape".into() });
        }
        let (r, c) = self.shape(loss);
        if r != 1 || c != 1 {
            return Err(Error::Gradient { primitive: "backward", msg: format!("loss must be scalar, got {r}×{c}") });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new(self.params);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let touched = self.backward_node(node, &g, &mut grads, &mut out);
            for t in touched {
                if let Some(v) = &grads[t.0] {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Gradient {
                            primitive: node.op.name(),
                            msg: format!("non-finite gradient at tape node {id}"),
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    fn backward_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) -> Vec<Var> {
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(grads, &self.nodes, $v)
            };
        }
        let cols = node.cols;
        match &node.op {
            Op::Param(id) => {
                out.add(*id, g);
                vec![]
            }
            Op::Const => vec![],
            Op::Softplus(raw) => {
                let s = sigmoid(self.scalar(*raw));
                slot!(*raw)[0] += g[0] * s;
                vec![*raw]
            }
            Op::Project { x, c } => {
                let cv = self.scalar(*c);
                let mut c_bar = 0.0;
                let mut xb = vec![0.0; g.len()];
                for r in 0..node.rows {
                    let span = r * cols..(r + 1) * cols;
                    let mut gr = g[span.clone()].to_vec();
                    c_bar += project_backward(self.row(*x, r), cv, &mut gr);
                    xb[span].copy_from_slice(&gr);
                }
                slot!(*x).iter_mut().zip(&xb).for_each(|(a, b)| *a += b);
                slot!(*c)[0] += c_bar;
                vec![*x, *c]
            }
            Op::Exp0 { v, c } => {
                let cv = self.scalar(*c);
                let mut c_bar = 0.0;
                let mut vb = vec![0.0; g.len()];
                let mut e = vec![0.0; cols];
                for r in 0..node.rows {
                    let span = r * cols..(r + 1) * cols;
                    let vr = self.row(*v, r);
                    let f = tanh_ratio(cv.sqrt() * norm_sq(vr).sqrt());
                    e.iter_mut().zip(vr).for_each(|(o, x)| *o = f * x);
                    let mut gr = g[span.clone()].to_vec();
                    c_bar += project_backward(&e, cv, &mut gr);
                    c_bar += radial_backward(vr, cv, &gr, tanh_ratio, tanh_ratio_deriv, &mut vb[span]);
                }
                slot!(*v).iter_mut().zip(&vb).for_each(|(a, b)| *a += b);
                slot!(*c)[0] += c_bar;
                vec![*v, *c]
            }
            Op::Log0 { x, c } => {
                let cv = self.scalar(*c);
                let mut c_bar = 0.0;
                let mut xb = vec![0.0; g.len()];
                for r in 0..node.rows {
                    let span = r * cols..(r + 1) * cols;
                    c_bar += radial_backward(
                        self.row(*x, r),
                        cv,
                        &g[span.clone()],
                        artanh_ratio,
                        artanh_ratio_deriv,
                        &mut xb[span],
                    );
                }
                slot!(*x).iter_mut().zip(&xb).for_each(|(a, b)| *a += b);
                slot!(*c)[0] += c_bar;
                vec![*x, *c]
            }
            Op::MobiusAdd { x, y, c } => {
                let cv = self.scalar(*c);
                let yrows = self.shape(*y).0;
                let mut c_bar = 0.0;
                let mut xb = vec![0.0; g.len()];
                let mut yb = vec![0.0; yrows * cols];
                let mut e = vec![0.0; cols];
                for r in 0..node.rows {
                    let span = r * cols..(r + 1) * cols;
                    let yr = if yrows == 1 { 0 } else { r };
                    let (xr, yv) = (self.row(*x, r), self.row(*y, yr));
                    unprojected_mobius(xr, yv, cv, &mut e);
                    let mut gr = g[span.clone()].to_vec();
                    c_bar += project_backward(&e, cv, &mut gr);
                    c_bar += mobius_backward(xr, yv, cv, &gr, &mut xb[span], &mut yb[yr * cols..(yr + 1) * cols]);
                }
                slot!(*x).iter_mut().zip(&xb).for_each(|(a, b)| *a += b);
                slot!(*y).iter_mut().zip(&yb).for_each(|(a, b)| *a += b);
                slot!(*c)[0] += c_bar;
                vec![*x, *y, *c]
            }
            Op::Conformal { x, c } => {
                let cv = self.scalar(*c);
                let xcols = self.shape(*x).1;
                let mut c_bar = 0.0;
                let xs = slot!(*x);
                for r in 0..node.rows {
                    let lam = node.value[r];
                    let xr = &self.nodes[x.0].value[r * xcols..(r + 1) * xcols];
                    let k = g[r] * lam * lam * cv;
                    xs[r * xcols..(r + 1) * xcols].iter_mut().zip(xr).for_each(|(a, xi)| *a += k * xi);
                    c_bar += g[r] * lam * lam * norm_sq(xr) / 2.0;
                }
                slot!(*c)[0] += c_bar;
                vec![*x, *c]
            }
            Op::MatMulRows { x, w } | Op::Linear { x, w, .. } => {
                let (wo, wi) = self.shape(*w);
                let wv = &self.nodes[w.0].value;
                let xv = &self.nodes[x.0].value;
                {
                    let xs = slot!(*x);
                    for r in 0..node.rows {
                        let gr = &g[r * wo..(r + 1) * wo];
                        let xr = &mut xs[r * wi..(r + 1) * wi];
                        for (o, go) in gr.iter().enumerate() {
                            if *go != 0.0 {
                                xr.iter_mut().zip(&wv[o * wi..(o + 1) * wi]).for_each(|(a, wk)| *a += go * wk);
                            }
                        }
                    }
                }
                {
                    let ws = slot!(*w);
                    for r in 0..node.rows {
                        let gr = &g[r * wo..(r + 1) * wo];
                        let xr = &xv[r * wi..(r + 1) * wi];
                        for (o, go) in gr.iter().enumerate() {
                            if *go != 0.0 {
                                ws[o * wi..(o + 1) * wi].iter_mut().zip(xr).for_each(|(a, xk)| *a += go * xk);
                            }
                        }
                    }
                }
                if let Op::Linear { b, .. } = &node.op {
                    let bs = slot!(*b);
                    for r in 0..node.rows {
                        bs.iter_mut().zip(&g[r * wo..(r + 1) * wo]).for_each(|(a, gk)| *a += gk);
                    }
                    vec![*x, *w, *b]
                } else {
                    vec![*x, *w]
                }
            }
            Op::ScoreRows { x, w, b } => {
                let xcols = self.shape(*x).1;
                let brows = self.shape(*b).0;
                let wv = self.nodes[w.0].value.clone();
                {
                    let xs = slot!(*x);
                    for r in 0..node.rows {
                        xs[r * xcols..(r + 1) * xcols].iter_mut().zip(&wv).for_each(|(a, wk)| *a += g[r] * wk);
                    }
                }
                {
                    let xv = &self.nodes[x.0].value;
                    let ws = slot!(*w);
                    for r in 0..node.rows {
                        ws.iter_mut().zip(&xv[r * xcols..(r + 1) * xcols]).for_each(|(a, xk)| *a += g[r] * xk);
                    }
                }
                let bs = slot!(*b);
                for r in 0..node.rows {
                    bs[if brows == 1 { 0 } else { r }] += g[r];
                }
                vec![*x, *w, *b]
            }
            Op::GroupSoftmax { s, groups } => {
                let a = &node.value;
                let ss = slot!(*s);
                for gi in 0..groups.len() {
                    let members = groups.group(gi);
                    let inner: f64 = members.iter().map(|&m| a[m as usize] * g[m as usize]).sum();
                    for &m in members {
                        let m = m as usize;
                        ss[m] += a[m] * (g[m] - inner);
                    }
                }
                vec![*s]
            }
            Op::GroupWeightedSum { x, a, groups } => {
                let xcols = self.shape(*x).1;
                let av = self.nodes[a.0].value.clone();
                let xv = &self.nodes[x.0].value;
                let mut ab = vec![0.0; av.len()];
                for gi in 0..groups.len() {
                    let go = &g[gi * xcols..(gi + 1) * xcols];
                    for &m in groups.group(gi) {
                        let m = m as usize;
                        ab[m] += dot(&xv[m * xcols..(m + 1) * xcols], go);
                    }
                }
                {
                    let xs = slot!(*x);
                    for gi in 0..groups.len() {
                        let go = &g[gi * xcols..(gi + 1) * xcols];
                        for &m in groups.group(gi) {
                            let m = m as usize;
                            xs[m * xcols..(m + 1) * xcols].iter_mut().zip(go).for_each(|(t, gk)| *t += av[m] * gk);
                        }
                    }
                }
                slot!(*a).iter_mut().zip(&ab).for_each(|(t, b)| *t += b);
                vec![*x, *a]
            }
            Op::RowMix { x, mix } => {
                let xs = slot!(*x);
                for r in 0..mix.rows() {
                    let go = &g[r * cols..(r + 1) * cols];
                    for (i, w) in mix.row(r) {
                        xs[i * cols..(i + 1) * cols].iter_mut().zip(go).for_each(|(t, gk)| *t += w * gk);
                    }
                }
                vec![*x]
            }
            Op::Activation { x, act } => {
                let xv = &self.nodes[x.0].value;
                let xs = slot!(*x);
                for k in 0..g.len() {
                    xs[k] += g[k] * act.derivative(xv[k]);
                }
                vec![*x]
            }
            Op::ScaleRows { x, s, factor, invert } => {
                let srows = self.shape(*s).0;
                let sv = self.nodes[s.0].value.clone();
                let xv = &self.nodes[x.0].value;
                let mut sb = vec![0.0; srows];
                for r in 0..node.rows {
                    let si = if srows == 1 { 0 } else { r };
                    let xg = dot(&xv[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    sb[si] += if *invert { -factor * xg / (sv[si] * sv[si]) } else { factor * xg };
                }
                {
                    let xs = slot!(*x);
                    for r in 0..node.rows {
                        let sval = sv[if srows == 1 { 0 } else { r }];
                        let k = if *invert { factor / sval } else { factor * sval };
                        xs[r * cols..(r + 1) * cols].iter_mut().zip(&g[r * cols..(r + 1) * cols]).for_each(|(t, gk)| *t += k * gk);
                    }
                }
                slot!(*s).iter_mut().zip(&sb).for_each(|(t, b)| *t += b);
                vec![*x, *s]
            }
            Op::ScaleConst { x, k } => {
                slot!(*x).iter_mut().zip(g).for_each(|(t, gk)| *t += k * gk);
                vec![*x]
            }
            Op::Add { a, b } => {
                slot!(*a).iter_mut().zip(g).for_each(|(t, gk)| *t += gk);
                slot!(*b).iter_mut().zip(g).for_each(|(t, gk)| *t += gk);
                vec![*a, *b]
            }
            Op::Sum { x } => {
                slot!(*x).iter_mut().for_each(|t| *t += g[0]);
                vec![*x]
            }
            Op::StackRows(parts) | Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    slot!(p).iter_mut().zip(&g[offset..offset + len]).for_each(|(t, gk)| *t += gk);
                    offset += len;
                }
                parts.clone()
            }
            Op::SelectRows { x, rows } => {
                let xs = slot!(*x);
                for (k, &r) in rows.iter().enumerate() {
                    let r = r as usize;
                    xs[r * cols..(r + 1) * cols].iter_mut().zip(&g[k * cols..(k + 1) * cols]).for_each(|(t, gk)| *t += gk);
                }
                vec![*x]
            }
            Op::MultiStepLoss { logits, label } => {
                let lv = &self.nodes[logits.0].value;
                let mut lb = vec![0.0; lv.len()];
                let y = if label.is_some() { 1.0 } else { 0.0 };
                lb[0] = g[0] * (sigmoid(lv[0]) - y);
                if let Some(k) = label {
                    let ls = log_softmax(&lv[1..]);
                    for (j, l) in ls.iter().enumerate() {
                        lb[j + 1] = g[0] * (l.exp() - if j == *k { 1.0 } else { 0.0 });
                    }
                }
                slot!(*logits).iter_mut().zip(&lb).for_each(|(t, b)| *t += b);
                vec![*logits]
            }
        }
    }
}
