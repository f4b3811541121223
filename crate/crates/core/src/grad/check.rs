//! Central finite-difference verification of the tape's local derivatives.
//!
//! Each registered primitive is built twice: once on a [`Tape`] and once as
//! a plain forward function written against the geometry kernels. The
//! numeric gradient differentiates the plain function, so a wrong tape
//! forward shows up as well as a wrong derivative.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::param::{Manifold, ParamStore, ParamTensor};
use super::tape::{Groups, RowMix, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{kernel, sigmoid, softplus, Activation};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Smallest gradient norm used as a relative-error denominator; below it
/// the central-difference rounding noise (about 1e-11) dominates.
pub const REL_FLOOR: f64 = 1e-6;

/// Pre-activations closer than this to the ReLU kink are not checked.
pub const KINK_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    MobiusAdd,
    ExpMap,
    LogMap,
    Exp0,
    Log0,
    Project,
    Conformal,
    Softplus,
    MobiusMatvec,
    HypActivation,
    AttentionSoftmax,
    WindowMean,
    Concatenation,
    DenseHead,
    CrossEntropy,
}

impl Primitive {
    pub const ALL: [Primitive; 15] = [
        Primitive::MobiusAdd,
        Primitive::ExpMap,
        Primitive::LogMap,
        Primitive::Exp0,
        Primitive::Log0,
        Primitive::Project,
        Primitive::Conformal,
        Primitive::Softplus,
        Primitive::MobiusMatvec,
        Primitive::HypActivation,
        Primitive::AttentionSoftmax,
        Primitive::WindowMean,
        Primitive::Concatenation,
        Primitive::DenseHead,
        Primitive::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::MobiusAdd => "mobius_add",
            Primitive::ExpMap => "exp_map",
            Primitive::LogMap => "log_map",
            Primitive::Exp0 => "exp0",
            Primitive::Log0 => "log0",
            Primitive::Project => "project_to_ball",
            Primitive::Conformal => "conformal_factor",
            Primitive::Softplus => "softplus",
            Primitive::MobiusMatvec => "mobius_matvec",
            Primitive::HypActivation => "hyp_activation",
            Primitive::AttentionSoftmax => "attention_softmax",
            Primitive::WindowMean => "window_mean",
            Primitive::Concatenation => "concatenation",
            Primitive::DenseHead => "dense_head",
            Primitive::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unregistered primitive `{s}`")))
    }
}

/// One differentiable input of a check case.
#[derive(Debug, Clone)]
struct Input {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Input {
    fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        Self { rows, cols, values }
    }
}

type TapeFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type PlainFn = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;

struct Case {
    inputs: Vec<Input>,
    tape: TapeFn,
    plain: PlainFn,
}

fn ball_point(rng: &mut ChaCha8Rng, d: usize, c: f64, max_scaled_norm: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = kernel::norm_sq(&dir).sqrt().max(1e-12);
    let r = rng.random_range(0.0..max_scaled_norm) / c.sqrt();
    dir.iter().map(|v| v * r / n).collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn raw_curvature(rng: &mut ChaCha8Rng) -> f64 {
    // softplus(raw) spans roughly 0.2 … 2.1
    rng.random_range(-1.5..2.0)
}

fn rows_apply(x: &[f64], cols: usize, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (xr, or) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        f(xr, or);
    }
    out
}

fn ball_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, c: f64, max_scaled: f64) -> Vec<f64> {
    (0..n).flat_map(|_| ball_point(rng, d, c, max_scaled)).collect()
}

fn build_case(p: Primitive, rng: &mut ChaCha8Rng) -> Option<Case> {
    let d = rng.random_range(1..6);
    let n = rng.random_range(1..4);
    let raw = raw_curvature(rng);
    let c = softplus(raw);
    let case = match p {
        Primitive::MobiusAdd => Case {
            inputs: vec![
                Input::new(n, d, ball_rows(rng, n, d, c, 0.9)),
                Input::new(1, d, ball_rows(rng, 1, d, c, 0.9)),
                Input::new(1, 1, vec![raw]),
            ],
            tape: Box::new(|t, v| {
                let c = t.softplus(v[2])?;
                t.mobius_add(v[0], v[1], c)
            }),
            plain: Box::new(move |x| {
                let c = softplus(x[2][0]);
                rows_apply(&x[0], d, |r, o| kernel::mobius_add(r, &x[1], c, o))
            }),
        },
        Primitive::ExpMap => Case {
            inputs: vec![
                Input::new(n, d, ball_rows(rng, n, d, c, 0.8)),
                Input::new(n, d, uniform(rng, n * d, -0.5, 0.5)),
                Input::new(1, 1, vec![raw]),
            ],
            tape: Box::new(|t, v| {
                let c = t.softplus(v[2])?;
                let lam = t.conformal(v[0], c)?;
                let half = t.scale_rows(v[1], lam, 0.5, false)?;
                let e = t.exp0(half, c)?;
                t.mobius_add(v[0], e, c)
            }),
            plain: Box::new(move |x| {
                let c = softplus(x[2][0]);
                let mut out = vec![0.0; x[0].len()];
                for r in 0..x[0].len() / d {
                    let s = r * d..(r + 1) * d;
                    kernel::exp_map(&x[0][s.clone()], &x[1][s.clone()], c, &mut out[s]);
                }
                out
            }),
        },
        Primitive::LogMap => Case {
            inputs: vec![
                Input::new(n, d, ball_rows(rng, n, d, c, 0.7)),
                Input::new(n, d, ball_rows(rng, n, d, c, 0.7)),
                Input::new(1, 1, vec![raw]),
            ],
            tape: Box::new(|t, v| {
                let c = t.softplus(v[2])?;
                let neg = t.scale(v[0], -1.0);
                let diff = t.mobius_add(neg, v[1], c)?;
                let l = t.log0(diff, c)?;
                let lam = t.conformal(v[0], c)?;
                t.scale_rows(l, lam, 2.0, true)
            }),
            plain: Box::new(move |x| {
                let c = softplus(x[2][0]);
                let mut out = vec![0.0; x[0].len()];
                for r in 0..x[0].len() / d {
                    let s = r * d..(r + 1) * d;
                    kernel::log_map(&x[0][s.clone()], &x[1][s.clone()], c, &mut out[s]);
                }
                out
            }),
        },
        Primitive::Exp0 => Case {
            inputs: vec![Input::new(n, d, uniform(rng, n * d, -1.5, 1.5)), Input::new(1, 1, vec![raw])],
            tape: Box::new(|t, v| {
                let c = t.softplus(v[1])?;
                t.exp0(v[0], c)
            }),
            plain: Box::new(move |x| {
                let c = softplus(x[1][0]);
                rows_apply(&x[0], d, |r, o| kernel::exp0(r, c, o))
            }),
        },
        Primitive::Log0 => Case {
            inputs: vec![Input::new(n, d, ball_rows(rng, n, d, c, 0.95)), Input::new(1, 1, vec![raw])],
            tape: Box::new(|t, v| {
                let c = t.softplus(v[1])?;
                t.log0(v[0], c)
            }),
            plain: Box::new(move |x| {
                let c = softplus(x[1][0]);
                rows_apply(&x[0], d, |r, o| kernel::log0(r, c, o))
            }),
        },
        Primitive::Project => {
            // mix of interior rows and rows beyond the boundary margin
            let x = ball_rows(rng, n, d, c, 1.6);
            let margin_ok = x.chunks(d).all(|r| (c * kernel::norm_sq(r) - (1.0 - crate::geometry::BOUNDARY_EPS)).abs() > 1e-3);
            if !margin_ok {
                return None;
            }
            Case {
                inputs: vec![Input::new(n, d, x), Input::new(1, 1, vec![raw])],
                tape: Box::new(|t, v| {
                    let c = t.softplus(v[1])?;
                    t.project(v[0], c)
                }),
                plain: Box::new(move |x| {
                    let c = softplus(x[1][0]);
                    rows_apply(&x[0], d, |r, o| {
                        o.copy_from_slice(r);
                        kernel::project(o, c);
                    })
                }),
            }
        }
        Primitive::Conformal => Case {
            inputs: vec![Input::new(n, d, ball_rows(rng, n, d, c, 0.9)), Input::new(1, 1, vec![raw])],
            tape: Box::new(|t, v| {
                let c = t.softplus(v[1])?;
                t.conformal(v[0], c)
            }),
            plain: Box::new(move |x| {
                let c = softplus(x[1][0]);
                x[0].chunks(d).map(|r| kernel::conformal_factor(r, c)).collect()
            }),
        },
        Primitive::Softplus => Case {
            inputs: vec![Input::new(1, 1, vec![rng.random_range(-4.0..4.0)])],
            tape: Box::new(|t, v| t.softplus(v[0])),
            plain: Box::new(|x| vec![(1.0 + x[0][0].exp()).ln()]),
        },
        Primitive::MobiusMatvec => {
            let m = rng.random_range(1..6);
            Case {
                inputs: vec![
                    Input::new(m, d, uniform(rng, m * d, -1.0, 1.0)),
                    Input::new(n, d, ball_rows(rng, n, d, c, 0.9)),
                    Input::new(1, 1, vec![raw]),
                ],
                tape: Box::new(|t, v| {
                    let c = t.softplus(v[2])?;
                    let l = t.log0(v[1], c)?;
                    let h = t.matmul_rows(l, v[0])?;
                    t.exp0(h, c)
                }),
                plain: Box::new(move |x| {
                    let c = crate::geometry::Curvature::new(softplus(x[2][0])).expect("positive curvature");
                    x[1].chunks(d)
                        .flat_map(|r| {
                            let p = crate::geometry::BallPoint::new(r.to_vec(), c).expect("interior point");
                            crate::geometry::mobius_matvec(&x[0], m, &p, c).expect("valid shapes").into_coords()
                        })
                        .collect()
                }),
            }
        }
        Primitive::HypActivation => {
            let raw_out = raw_curvature(rng);
            let x = ball_rows(rng, n, d, c, 0.9);
            let mut pre = vec![0.0; x.len()];
            for (xr, pr) in x.chunks(d).zip(pre.chunks_mut(d)) {
                kernel::log0(xr, c, pr);
            }
            if pre.iter().any(|v| v.abs() < KINK_MARGIN) {
                return None;
            }
            Case {
                inputs: vec![Input::new(n, d, x), Input::new(1, 1, vec![raw]), Input::new(1, 1, vec![raw_out])],
                tape: Box::new(|t, v| {
                    let c_in = t.softplus(v[1])?;
                    let c_out = t.softplus(v[2])?;
                    let l = t.log0(v[0], c_in)?;
                    let a = t.activation(l, Activation::Relu);
                    t.exp0(a, c_out)
                }),
                plain: Box::new(move |x| {
                    let c_in = crate::geometry::Curvature::new(softplus(x[1][0])).expect("positive");
                    let c_out = crate::geometry::Curvature::new(softplus(x[2][0])).expect("positive");
                    x[0].chunks(d)
                        .flat_map(|r| {
                            let p = crate::geometry::BallPoint::new(r.to_vec(), c_in).expect("interior point");
                            crate::geometry::hyp_activation(&p, c_in, c_out, Activation::Relu)
                                .expect("valid activation")
                                .into_coords()
                        })
                        .collect()
                }),
            }
        }
        Primitive::AttentionSoftmax => {
            let rows = rng.random_range(2..7);
            let mut order: Vec<u32> = (0..rows as u32).collect();
            order.shuffle(rng);
            let cut = rng.random_range(1..rows);
            let groups = Arc::new(Groups::new(vec![0, cut, rows], order).expect("valid groups"));
            let g2 = groups.clone();
            Case {
                inputs: vec![
                    Input::new(rows, d, uniform(rng, rows * d, -1.0, 1.0)),
                    Input::new(1, d, uniform(rng, d, -1.0, 1.0)),
                    // per-row bias; a shared one has an identically zero gradient
                    Input::new(rows, 1, uniform(rng, rows, -1.0, 1.0)),
                ],
                tape: Box::new(move |t, v| {
                    let s = t.score_rows(v[0], v[1], v[2])?;
                    let a = t.group_softmax(s, groups.clone())?;
                    t.group_weighted_sum(v[0], a, groups.clone())
                }),
                plain: Box::new(move |x| {
                    let mut out = Vec::new();
                    for g in 0..g2.len() {
                        let members = g2.group(g);
                        let scores: Vec<f64> = members
                            .iter()
                            .map(|&m| kernel::dot(&x[1], &x[0][m as usize * d..(m as usize + 1) * d]) + x[2][m as usize])
                            .collect();
                        let total: f64 = scores.iter().map(|s| s.exp()).sum();
                        let mut pooled = vec![0.0; d];
                        for (&m, s) in members.iter().zip(&scores) {
                            let w = s.exp() / total;
                            for k in 0..d {
                                pooled[k] += w * x[0][m as usize * d + k];
                            }
                        }
                        out.extend(pooled);
                    }
                    out
                }),
            }
        }
        Primitive::WindowMean => {
            let rows = rng.random_range(1..6);
            let mut offsets = vec![0];
            let mut index = Vec::new();
            let mut weight = Vec::new();
            for _ in 0..rows {
                let k = rng.random_range(1..=rows);
                for _ in 0..k {
                    index.push(rng.random_range(0..rows as u32));
                    weight.push(1.0 / k as f64);
                }
                offsets.push(index.len());
            }
            let mix = Arc::new(RowMix::new(offsets.clone(), index.clone(), weight.clone()).expect("valid mix"));
            Case {
                inputs: vec![Input::new(rows, d, uniform(rng, rows * d, -1.0, 1.0))],
                tape: Box::new(move |t, v| t.row_mix(v[0], mix.clone())),
                plain: Box::new(move |x| {
                    let mut out = vec![0.0; rows * d];
                    for r in 0..rows {
                        for e in offsets[r]..offsets[r + 1] {
                            for k in 0..d {
                                out[r * d + k] += weight[e] * x[0][index[e] as usize * d + k];
                            }
                        }
                    }
                    out
                }),
            }
        }
        Primitive::Concatenation => {
            let d2 = rng.random_range(1..5);
            Case {
                inputs: vec![Input::new(1, d, uniform(rng, d, -1.0, 1.0)), Input::new(1, d2, uniform(rng, d2, -1.0, 1.0))],
                tape: Box::new(|t, v| Ok(t.concat(&[v[0], v[1]]))),
                plain: Box::new(|x| x[0].iter().chain(&x[1]).copied().collect()),
            }
        }
        Primitive::DenseHead => {
            let m = rng.random_range(1..5);
            Case {
                inputs: vec![
                    Input::new(1, d, uniform(rng, d, -1.0, 1.0)),
                    Input::new(m, d, uniform(rng, m * d, -1.0, 1.0)),
                    Input::new(1, m, uniform(rng, m, -1.0, 1.0)),
                ],
                tape: Box::new(|t, v| t.linear(v[0], v[1], v[2])),
                plain: Box::new(move |x| {
                    (0..m).map(|o| kernel::dot(&x[1][o * d..(o + 1) * d], &x[0]) + x[2][o]).collect()
                }),
            }
        }
        Primitive::CrossEntropy => {
            let k = rng.random_range(1..5);
            let label = if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..k)) };
            Case {
                inputs: vec![Input::new(1, k + 1, uniform(rng, k + 1, -3.0, 3.0))],
                tape: Box::new(move |t, v| t.multi_step_loss(v[0], label)),
                plain: Box::new(move |x| {
                    let z = sigmoid(x[0][0]);
                    let loss = match label {
                        None => -(1.0 - z).ln(),
                        Some(j) => {
                            let total: f64 = x[0][1..].iter().map(|l| l.exp()).sum();
                            -z.ln() - (x[0][1 + j].exp() / total).ln()
                        }
                    };
                    vec![loss]
                }),
            }
        }
    };
    Some(case)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = kernel::norm_sq(a).sqrt();
    let nb = kernel::norm_sq(b).sqrt();
    diff / na.max(nb).max(REL_FLOOR)
}

fn run_case(case: &Case, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut store = ParamStore::new();
    let ids: Vec<_> = case
        .inputs
        .iter()
        .enumerate()
        .map(|(k, inp)| {
            ParamTensor::new(format!("in{k}"), inp.rows, inp.cols, inp.values.clone(), Manifold::Euclidean)
                .map(|p| store.add(p))
        })
        .collect::<Result<_>>()?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = ids.iter().map(|&id| tape.param(&store, id)).collect();
    let out = (case.tape)(&mut tape, &vars)?;
    let out_len = tape.value(out).len();
    let probe: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let flat = tape.concat(&[out]);
    let w = tape.constant(probe.clone(), 1, out_len)?;
    let zero = tape.constant(vec![0.0], 1, 1)?;
    let loss = tape.linear(flat, w, zero)?;
    let grads = tape.backward(loss)?;

    let values: Vec<Vec<f64>> = case.inputs.iter().map(|i| i.values.clone()).collect();
    let plain_out = (case.plain)(&values);
    let mut worst = rel_err(tape.value(out), &plain_out);
    let objective = |vals: &[Vec<f64>]| kernel::dot(&(case.plain)(vals), &probe);
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; values[k].len()]);
        let mut numeric = vec![0.0; values[k].len()];
        let mut probe_vals = values.clone();
        for e in 0..values[k].len() {
            probe_vals[k][e] = values[k][e] + FD_STEP;
            let up = objective(&probe_vals);
            probe_vals[k][e] = values[k][e] - FD_STEP;
            let down = objective(&probe_vals);
            probe_vals[k][e] = values[k][e];
            numeric[e] = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    Ok(worst)
}

/// Largest relative error between analytic and central-difference
/// gradients of `primitive` over `trials` seeded random cases. The error of
/// one input tensor is `‖a - n‖ / max(‖a‖, ‖n‖, 1e-6)`; a mismatch between
/// the tape forward and the plain forward is folded in the same way.
pub fn grad_check(primitive: Primitive, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut attempts = 0;
    while done < trials {
        attempts += 1;
        if attempts > trials * 100 + 100 {
            return Err(Error::invalid(format!("could not sample valid cases for `{}`", primitive.name())));
        }
        let Some(case) = build_case(primitive, &mut rng) else { continue };
        worst = worst.max(run_case(&case, &mut rng)?);
        done += 1;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes_finite_differences() {
        for p in Primitive::ALL {
            let err = grad_check(p, 100, 42).unwrap();
            assert!(err <= 1e-4, "{}: {err:e}", p.name());
        }
    }

    #[test]
    fn linear_primitives_are_exact() {
        for p in [Primitive::DenseHead, Primitive::Concatenation, Primitive::WindowMean] {
            assert!(grad_check(p, 50, 1).unwrap() <= 1e-8, "{}", p.name());
        }
    }

    #[test]
    fn names_round_trip() {
        for p in Primitive::ALL {
            assert_eq!(Primitive::parse(p.name()).unwrap(), p);
        }
        assert!(Primitive::parse("nope").is_err());
    }
}
