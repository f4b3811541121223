//! Timing harness for one sparse convolution layer over a grid of graph
//! sizes and stored-cell counts.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Activation, BallPoint, Curvature};
use crate::model::{conv_layer_forward, ConvLayerParams};
use crate::sparse::{Cell, SparseTensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub nodes: Vec<usize>,
    pub nnz: Vec<usize>,
    pub dim: usize,
    pub window: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self { nodes: vec![512, 1024, 2048], nnz: vec![10_000, 20_000], dim: 8, window: 3, reps: 5, seed: 0 }
    }
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::invalid(format!("bad `{key}` entry `{x}`"))))
        .collect()
}

impl BenchSpec {
    /// Parses `V=512,2048;nnz=10000,20000;D=8;f=3;reps=5;seed=0`. Omitted
    /// keys keep their defaults.
    pub fn parse(s: &str) -> Result<Self> {
        let mut spec = Self::default();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| Error::invalid(format!("grid entry `{part}` is not key=value")))?;
            let one = |v: &str| -> Result<usize> {
                v.trim().parse().map_err(|_| Error::invalid(format!("bad `{k}` value `{v}`")))
            };
            match k.trim() {
                "V" => spec.nodes = list(k, v)?,
                "nnz" => spec.nnz = list(k, v)?,
                "D" => spec.dim = one(v)?,
                "f" => spec.window = one(v)?,
                "reps" => spec.reps = one(v)?,
                "seed" => spec.seed = one(v)? as u64,
                other => return Err(Error::invalid(format!("unknown grid key `{other}`"))),
            }
        }
        if spec.nodes.is_empty() || spec.nnz.is_empty() || spec.dim == 0 || spec.reps == 0 || spec.window % 2 == 0 {
            return Err(Error::invalid("grid needs nodes, nnz, D ≥ 1, reps ≥ 1 and an odd f"));
        }
        Ok(spec)
    }
}

/// A `dim × v × v` tensor whose `nnz` cells fill all channels of
/// `ceil(nnz / dim)` distinct random locations (the last one partially).
pub fn random_tensor(dim: usize, v: usize, nnz: usize, seed: u64) -> Result<SparseTensor3> {
    let locations = nnz.div_ceil(dim);
    if locations as u128 > (v as u128) * (v as u128) {
        return Err(Error::invalid(format!("{nnz} cells do not fit a {v}×{v} grid with {dim} channels")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(locations);
    let mut cells = Vec::with_capacity(nnz);
    while seen.len() < locations {
        let (i, j) = (rng.random_range(0..v as u32), rng.random_range(0..v as u32));
        if !seen.insert((i, j)) {
            continue;
        }
        for d in 0..dim.min(nnz - cells.len()) {
            let value = rng.random_range(0.05..0.5) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            cells.push(Cell { d: d as u32, i, j, value });
        }
    }
    SparseTensor3::from_cells(dim, v, v, cells)
}

/// Layer parameters with a mild random transform.
pub fn bench_params(dim: usize, seed: u64) -> Result<ConvLayerParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = (0..dim * dim)
        .map(|k| if k % (dim + 1) == 0 { 1.0 } else { 0.0 } + rng.random_range(-0.05..0.05))
        .collect();
    let c = Curvature::new(1.0)?;
    let b = BallPoint::new(vec![0.01; dim], c)?;
    let scorer = (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect();
    Ok(ConvLayerParams { w, b, c, scorer, score_bias: 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub nodes: usize,
    pub nnz: usize,
    pub dim: usize,
    pub reps: usize,
    /// Median wall time of one forward pass.
    pub seconds: f64,
    pub output_nnz: usize,
}

pub fn time_forward(x: &SparseTensor3, p: &ConvLayerParams, window: usize, reps: usize) -> Result<(f64, usize)> {
    let mut times = Vec::with_capacity(reps);
    let mut out_nnz = 0;
    for _ in 0..reps {
        let start = Instant::now();
        let out = conv_layer_forward(x, p, p.c, window, Activation::Relu)?;
        times.push(start.elapsed().as_secs_f64());
        out_nnz = out.nnz();
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], out_nnz))
}

pub fn run(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    let p = bench_params(spec.dim, spec.seed)?;
    let mut rows = Vec::new();
    for &v in &spec.nodes {
        for &nnz in &spec.nnz {
            let x = random_tensor(spec.dim, v, nnz, spec.seed ^ ((v as u64) << 32) ^ nnz as u64)?;
            let (seconds, output_nnz) = time_forward(&x, &p, spec.window, spec.reps)?;
            rows.push(BenchRow { nodes: v, nnz: x.nnz(), dim: spec.dim, reps: spec.reps, seconds, output_nnz });
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(w: &mut W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "nodes,nnz,dim,reps,seconds,output_nnz")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{:.6e},{}", r.nodes, r.nnz, r.dim, r.reps, r.seconds, r.output_nnz)?;
    }
    Ok(())
}
