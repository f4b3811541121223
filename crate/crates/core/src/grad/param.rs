use crate::error::{Error, Result};
use crate::geometry::{kernel, softplus};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Geometry a parameter lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    Euclidean,
    /// Every row is a point of the Poincaré ball whose curvature is
    /// `softplus` of the referenced scalar parameter.
    Poincare { curvature: ParamId },
}

/// A trainable tensor with its gradient slot and Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub manifold: Manifold,
    pub grad: Option<Vec<f64>>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>, manifold: Manifold) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter initialization"));
        }
        let n = values.len();
        Ok(Self {
            name: name.into(),
            rows,
            cols,
            values,
            manifold,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update of `p` from its populated gradient.
///
/// Euclidean parameters take a plain Adam step. Poincaré parameters (with
/// curvature `c`) rescale the gradient by the inverse metric
/// `(1 - c‖x‖²)² / 4`, keep their moments in the tangent space, move along
/// `exp_x` and are projected back into the ball.
pub fn adam_step(p: &mut ParamTensor, hp: &AdamConfig, c: Option<f64>) -> Result<()> {
    let grad = p.grad.as_ref().ok_or_else(|| Error::Gradient {
        primitive: "adam_step",
        msg: format!("parameter `{}` has no gradient", p.name),
    })?;
    if grad.len() != p.values.len() {
        return Err(Error::DimensionMismatch { expected: p.values.len(), got: grad.len() });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Gradient { primitive: "adam_step", msg: format!("non-finite gradient for `{}`", p.name) });
    }
    p.step += 1;
    let t = p.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    match p.manifold {
        Manifold::Euclidean => {
            for k in 0..p.values.len() {
                let g = grad[k];
                p.m[k] = hp.beta1 * p.m[k] + (1.0 - hp.beta1) * g;
                p.v[k] = hp.beta2 * p.v[k] + (1.0 - hp.beta2) * g * g;
                let mh = p.m[k] / bc1;
                let vh = p.v[k] / bc2;
                p.values[k] -= hp.lr * mh / (vh.sqrt() + hp.eps);
            }
        }
        Manifold::Poincare { .. } => {
            let c = c.ok_or_else(|| Error::invalid(format!("curvature needed to update `{}`", p.name)))?;
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::invalid(format!("curvature must be positive and finite, got {c}")));
            }
            let cols = p.cols;
            let mut update = vec![0.0; cols];
            let mut next = vec![0.0; cols];
            for r in 0..p.rows {
                let span = r * cols..(r + 1) * cols;
                let x = &p.values[span.clone()];
                let metric = (1.0 - c * kernel::norm_sq(x)).powi(2) / 4.0;
                for (k, u) in span.clone().zip(update.iter_mut()) {
                    let g = grad[k] * metric;
                    p.m[k] = hp.beta1 * p.m[k] + (1.0 - hp.beta1) * g;
                    p.v[k] = hp.beta2 * p.v[k] + (1.0 - hp.beta2) * g * g;
                    let mh = p.m[k] / bc1;
                    let vh = p.v[k] / bc2;
                    *u = -hp.lr * mh / (vh.sqrt() + hp.eps);
                }
                kernel::exp_map(x, &update, c, &mut next);
                kernel::project(&mut next, c);
                p.values[span].copy_from_slice(&next);
            }
        }
    }
    Ok(())
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new(params: usize) -> Self {
        Self { grads: vec![None; params] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn add(&mut self, id: ParamId, g: &[f64]) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Adds another set of gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (k, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(k), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Euclidean norm over every gradient entry.
    pub fn norm(&self) -> f64 {
        self.grads.iter().flatten().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Ordered collection of parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, p: ParamTensor) -> ParamId {
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.params.iter().enumerate().map(|(k, p)| (ParamId(k), p))
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    /// Curvature `softplus(raw)` held by a scalar parameter.
    pub fn curvature(&self, raw: ParamId) -> f64 {
        softplus(self.params[raw.0].values[0])
    }

    /// Installs gradients; parameters the backward pass never reached get
    /// zeros.
    pub fn set_grads(&mut self, grads: &Gradients) {
        for (k, p) in self.params.iter_mut().enumerate() {
            p.grad = Some(match grads.get(ParamId(k)) {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.values.len()],
            });
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Adam step on every parameter, then re-projects ball parameters into
    /// the ball of their (possibly updated) curvature.
    pub fn step(&mut self, hp: &AdamConfig) -> Result<()> {
        let curvatures: Vec<Option<f64>> = self
            .params
            .iter()
            .map(|p| match p.manifold {
                Manifold::Poincare { curvature } => Some(self.curvature(curvature)),
                Manifold::Euclidean => None,
            })
            .collect();
        for (p, c) in self.params.iter_mut().zip(&curvatures) {
            adam_step(p, hp, *c)?;
        }
        self.project_ball_params();
        Ok(())
    }

    /// Projects every Poincaré parameter row into its current ball.
    pub fn project_ball_params(&mut self) {
        for k in 0..self.params.len() {
            if let Manifold::Poincare { curvature } = self.params[k].manifold {
                let c = self.curvature(curvature);
                let p = &mut self.params[k];
                if p.cols == 0 {
                    continue;
                }
                for row in p.values.chunks_mut(p.cols) {
                    kernel::project(row, c);
                }
            }
        }
    }

    /// Parameter values flattened in declaration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.values.iter().copied()).collect()
    }
}
