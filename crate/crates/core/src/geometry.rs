//! Poincaré-ball gyrovector algebra.
//!
//! Points live in the open ball `{x : c‖x‖² < 1}`. Every operation that
//! produces a point projects it back to `c‖x‖² < 1 − BOUNDARY_EPS`, so chains
//! of operations never drift onto the boundary where `artanh` blows up.
//!
//! The slice-level routines in [`kernel`] carry no validation and are what the
//! gradient tape and the convolution layers call in their inner loops. The
//! typed functions at module level validate their inputs and wrap the kernels.

use crate::error::{Error, Result};

/// Margin kept between any produced point and the ball boundary.
pub const BOUNDARY_EPS: f64 = 1e-5;

/// Upper clamp on the `artanh` argument.
pub const ARTANH_CLAMP: f64 = 1.0 - 1e-12;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        // ln(e^y - 1) = y + ln(1 - e^-y)
        y + (-(-y).exp()).ln_1p()
    }
}

/// Logistic sigmoid; also the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Ball curvature, stored as an unconstrained raw parameter whose softplus is
/// the effective (strictly positive) curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    raw: f64,
    value: f64,
}

impl Curvature {
    /// Curvature with effective value `c`.
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::invalid(format!("curvature must be positive and finite, got {c}")));
        }
        Ok(Self { raw: softplus_inverse(c), value: c })
    }

    /// Curvature from its raw (pre-softplus) parameter.
    pub fn from_raw(raw: f64) -> Result<Self> {
        let value = softplus(raw);
        if !raw.is_finite() || !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonFinite("curvature"));
        }
        Ok(Self { raw, value })
    }

    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// A point of the Poincaré ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    /// Validates that `coords` is finite and strictly inside the `c`-ball with
    /// the boundary margin.
    pub fn new(coords: Vec<f64>, c: Curvature) -> Result<Self> {
        check_finite(&coords, "ball point")?;
        let s = c.value() * kernel::norm_sq(&coords);
        if s >= 1.0 - BOUNDARY_EPS {
            return Err(Error::OutsideBall { scaled_norm_sq: s });
        }
        Ok(Self(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub(crate) fn from_kernel(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|v| v.is_finite()));
        Self(coords)
    }
}

/// A tangent vector (at whichever base point the caller has in mind).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords, "tangent vector")?;
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `B(d/2, 1/2)`, the scale that keeps β-split/β-concatenation
/// dimension-consistent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaCoefficient {
    pub d: usize,
    pub value: f64,
}

/// Componentwise nonlinearity applied in the tangent space at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative; the ReLU subgradient at 0 is 0.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_in_ball(x: &[f64], c: f64) -> Result<()> {
    check_finite(x, "ball point")?;
    let s = c * kernel::norm_sq(x);
    if s < 1.0 {
        Ok(())
    } else {
        Err(Error::OutsideBall { scaled_norm_sq: s })
    }
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, got: b })
    }
}

/// Unchecked slice kernels.
pub mod kernel {
    use super::{ARTANH_CLAMP, BOUNDARY_EPS};

    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[inline]
    pub fn norm_sq(a: &[f64]) -> f64 {
        dot(a, a)
    }

    /// `tanh(u)/u`, continuous at 0.
    #[inline]
    pub fn tanh_ratio(u: f64) -> f64 {
        if u < 1e-4 {
            let u2 = u * u;
            1.0 - u2 / 3.0 + 2.0 * u2 * u2 / 15.0
        } else {
            u.tanh() / u
        }
    }

    /// Derivative of [`tanh_ratio`].
    #[inline]
    pub fn tanh_ratio_deriv(u: f64) -> f64 {
        if u < 1e-3 {
            let u2 = u * u;
            -2.0 * u / 3.0 + 8.0 * u * u2 / 15.0
        } else {
            let t = u.tanh();
            (u * (1.0 - t * t) - t) / (u * u)
        }
    }

    /// `artanh(u)/u` with the argument clamped below 1, continuous at 0.
    #[inline]
    pub fn artanh_ratio(u: f64) -> f64 {
        if u < 1e-4 {
            let u2 = u * u;
            1.0 + u2 / 3.0 + u2 * u2 / 5.0
        } else {
            u.min(ARTANH_CLAMP).atanh() / u
        }
    }

    /// Derivative of [`artanh_ratio`]; zero slope is reported for the
    /// clamped branch's numerator.
    #[inline]
    pub fn artanh_ratio_deriv(u: f64) -> f64 {
        if u < 1e-3 {
            let u2 = u * u;
            2.0 * u / 3.0 + 4.0 * u * u2 / 5.0
        } else if u >= ARTANH_CLAMP {
            -ARTANH_CLAMP.atanh() / (u * u)
        } else {
            (u / (1.0 - u * u) - u.atanh()) / (u * u)
        }
    }

    /// Rescales `x` in place onto norm `(1-ε)/√c` when `c‖x‖² ≥ 1-ε`.
    /// Returns the applied scale factor (1 when untouched).
    #[inline]
    pub fn project(x: &mut [f64], c: f64) -> f64 {
        let n2 = norm_sq(x);
        if c * n2 >= 1.0 - BOUNDARY_EPS {
            let scale = (1.0 - BOUNDARY_EPS) / (c.sqrt() * n2.sqrt());
            x.iter_mut().for_each(|v| *v *= scale);
            scale
        } else {
            1.0
        }
    }

    /// `x ⊕_c y`, projected.
    pub fn mobius_add(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
        let xy = dot(x, y);
        let x2 = norm_sq(x);
        let y2 = norm_sq(y);
        let a = 1.0 + 2.0 * c * xy + c * y2;
        let b = 1.0 - c * x2;
        let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = (a * xi + b * yi) / den;
        }
        project(out, c);
    }

    /// `exp_0^c(v)`, projected.
    pub fn exp0(v: &[f64], c: f64, out: &mut [f64]) {
        let sc = c.sqrt();
        let f = tanh_ratio(sc * norm_sq(v).sqrt());
        for (o, vi) in out.iter_mut().zip(v) {
            *o = f * vi;
        }
        project(out, c);
    }

    /// `log_0^c(x)`.
    pub fn log0(x: &[f64], c: f64, out: &mut [f64]) {
        let sc = c.sqrt();
        let g = artanh_ratio(sc * norm_sq(x).sqrt());
        for (o, xi) in out.iter_mut().zip(x) {
            *o = g * xi;
        }
    }

    /// `λ_x^c = 2 / (1 - c‖x‖²)`.
    #[inline]
    pub fn conformal_factor(x: &[f64], c: f64) -> f64 {
        2.0 / (1.0 - c * norm_sq(x))
    }

    /// `exp_x^c(v)`, projected.
    pub fn exp_map(x: &[f64], v: &[f64], c: f64, out: &mut [f64]) {
        let vn = norm_sq(v).sqrt();
        if vn == 0.0 {
            out.copy_from_slice(x);
            return;
        }
        let lambda = conformal_factor(x, c);
        let sc = c.sqrt();
        let k = (sc * lambda * vn / 2.0).tanh() / (sc * vn);
        let w: Vec<f64> = v.iter().map(|vi| k * vi).collect();
        mobius_add(x, &w, c, out);
    }

    /// `log_x^c(y)`.
    pub fn log_map(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let mut u = vec![0.0; x.len()];
        // the gyro-difference is needed unprojected, so the sum is inlined
        let xy = dot(&neg, y);
        let x2 = norm_sq(&neg);
        let y2 = norm_sq(y);
        let a = 1.0 + 2.0 * c * xy + c * y2;
        let b = 1.0 - c * x2;
        let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
        for ((o, xi), yi) in u.iter_mut().zip(&neg).zip(y) {
            *o = (a * xi + b * yi) / den;
        }
        let un = norm_sq(&u).sqrt();
        if un == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let sc = c.sqrt();
        let lambda = conformal_factor(x, c);
        let k = 2.0 / (sc * lambda) * (sc * un).min(ARTANH_CLAMP).atanh() / un;
        for (o, ui) in out.iter_mut().zip(&u) {
            *o = k * ui;
        }
    }
}

/// Rescales `x` inside the ball when it sits on or beyond the boundary margin.
pub fn project_to_ball(x: &[f64], c: Curvature) -> Result<BallPoint> {
    check_finite(x, "projection input")?;
    let mut out = x.to_vec();
    kernel::project(&mut out, c.value());
    Ok(BallPoint::from_kernel(out))
}

/// Möbius addition `x ⊕_c y`.
pub fn mobius_add(x: &BallPoint, y: &BallPoint, c: Curvature) -> Result<BallPoint> {
    check_same_dim(x.dim(), y.dim())?;
    check_in_ball(x.coords(), c.value())?;
    check_in_ball(y.coords(), c.value())?;
    let mut out = vec![0.0; x.dim()];
    kernel::mobius_add(x.coords(), y.coords(), c.value(), &mut out);
    Ok(BallPoint::from_kernel(out))
}

/// Exponential map at `x`.
pub fn exp_map(x: &BallPoint, v: &TangentVector, c: Curvature) -> Result<BallPoint> {
    check_same_dim(x.dim(), v.dim())?;
    check_in_ball(x.coords(), c.value())?;
    let mut out = vec![0.0; x.dim()];
    kernel::exp_map(x.coords(), v.coords(), c.value(), &mut out);
    Ok(BallPoint::from_kernel(out))
}

/// Logarithmic map at `x`; zero when `x = y`.
pub fn log_map(x: &BallPoint, y: &BallPoint, c: Curvature) -> Result<TangentVector> {
    check_same_dim(x.dim(), y.dim())?;
    check_in_ball(x.coords(), c.value())?;
    check_in_ball(y.coords(), c.value())?;
    let mut out = vec![0.0; x.dim()];
    kernel::log_map(x.coords(), y.coords(), c.value(), &mut out);
    TangentVector::new(out)
}

/// Exponential map at the origin.
pub fn exp0(v: &TangentVector, c: Curvature) -> BallPoint {
    let mut out = vec![0.0; v.dim()];
    kernel::exp0(v.coords(), c.value(), &mut out);
    BallPoint::from_kernel(out)
}

/// Logarithmic map at the origin.
pub fn log0(x: &BallPoint, c: Curvature) -> Result<TangentVector> {
    check_in_ball(x.coords(), c.value())?;
    let mut out = vec![0.0; x.dim()];
    kernel::log0(x.coords(), c.value(), &mut out);
    TangentVector::new(out)
}

/// Möbius scalar multiplication `r ⊗_c x = exp_0(r log_0(x))`.
pub fn mobius_scalar(r: f64, x: &BallPoint, c: Curvature) -> Result<BallPoint> {
    if !r.is_finite() {
        return Err(Error::NonFinite("scalar"));
    }
    let v = log0(x, c)?;
    let scaled: Vec<f64> = v.coords().iter().map(|vi| r * vi).collect();
    Ok(exp0(&TangentVector(scaled), c))
}

/// Möbius matrix-vector product `exp_0(M log_0(x))`; `m` is row-major with
/// `rows` rows and `x.dim()` columns.
pub fn mobius_matvec(m: &[f64], rows: usize, x: &BallPoint, c: Curvature) -> Result<BallPoint> {
    let cols = x.dim();
    if rows == 0 || m.len() != rows * cols {
        return Err(Error::DimensionMismatch { expected: rows * cols, got: m.len() });
    }
    check_finite(m, "matrix")?;
    let v = log0(x, c)?;
    let mv: Vec<f64> = m.chunks_exact(cols).map(|row| kernel::dot(row, v.coords())).collect();
    if mv.iter().all(|&e| e == 0.0) {
        return Ok(BallPoint::origin(rows));
    }
    Ok(exp0(&TangentVector(mv), c))
}

/// Metric conformal factor `λ_x^c = 2/(1 - c‖x‖²)`.
pub fn conformal_factor(x: &BallPoint, c: Curvature) -> Result<f64> {
    check_in_ball(x.coords(), c.value())?;
    Ok(kernel::conformal_factor(x.coords(), c.value()))
}

/// Hyperbolic activation `exp_0^{c_out}(σ(log_0^{c_in}(x)))`.
pub fn hyp_activation(
    x: &BallPoint,
    c_in: Curvature,
    c_out: Curvature,
    act: Activation,
) -> Result<BallPoint> {
    let v = log0(x, c_in)?;
    let s: Vec<f64> = v.coords().iter().map(|&vi| act.apply(vi)).collect();
    Ok(exp0(&TangentVector(s), c_out))
}

/// `B(d/2, 1/2)` computed through log-gamma.
pub fn beta_coefficient(d: usize) -> Result<BetaCoefficient> {
    if d == 0 {
        return Err(Error::invalid("beta coefficient needs d >= 1"));
    }
    let value = statrs::function::beta::ln_beta(d as f64 / 2.0, 0.5).exp();
    Ok(BetaCoefficient { d, value })
}

/// β-split: partition `log_0(x)` by `dims` and map each piece back with the
/// scale `β_{d_i}/β_d`.
pub fn beta_split(x: &BallPoint, dims: &[usize], c: Curvature) -> Result<Vec<BallPoint>> {
    let total: usize = dims.iter().sum();
    check_same_dim(x.dim(), total)?;
    if dims.contains(&0) {
        return Err(Error::invalid("split dimensions must be positive"));
    }
    let v = log0(x, c)?;
    let beta_full = beta_coefficient(total)?.value;
    let mut pieces = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &d in dims {
        let scale = beta_coefficient(d)?.value / beta_full;
        let piece: Vec<f64> = v.coords()[offset..offset + d].iter().map(|vi| scale * vi).collect();
        pieces.push(exp0(&TangentVector(piece), c));
        offset += d;
    }
    Ok(pieces)
}

/// β-concatenation, the inverse of [`beta_split`].
pub fn beta_concat(xs: &[BallPoint], c: Curvature) -> Result<BallPoint> {
    if xs.is_empty() {
        return Err(Error::invalid("beta concatenation of an empty list"));
    }
    let total: usize = xs.iter().map(BallPoint::dim).sum();
    let beta_full = beta_coefficient(total)?.value;
    let mut v = Vec::with_capacity(total);
    for x in xs {
        let scale = beta_full / beta_coefficient(x.dim())?.value;
        v.extend(log0(x, c)?.coords().iter().map(|vi| scale * vi));
    }
    Ok(exp0(&TangentVector(v), c))
}
