//! Graph geometry: BFS distances, Gromov four-point hyperbolicity and a
//! sampled diameter estimate. All measurements collapse edge types and
//! directions into one undirected simple graph.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::HeteroGraph;
use crate::error::{Error, Result};
use crate::sparse::sparsity_ratio;

/// Distance sentinel for unreachable nodes.
pub const UNREACHABLE: u32 = u32::MAX;

/// Largest node count accepted by exact hyperbolicity.
pub const EXACT_LIMIT: usize = 30;

/// Worker shards for sampled hyperbolicity. Fixed so results do not depend
/// on the thread count.
pub const SHARDS: u64 = 8;

/// Above this many nodes, sampled hyperbolicity runs BFS per quadruple
/// instead of materializing all-pairs distances.
const ALL_PAIRS_LIMIT: usize = 4096;

/// Hop counts from one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMap {
    pub source: usize,
    pub distances: Vec<u32>,
}

impl DistanceMap {
    pub fn get(&self, v: usize) -> Option<u32> {
        match self.distances[v] {
            UNREACHABLE => None,
            d => Some(d),
        }
    }

    /// Largest finite distance.
    pub fn eccentricity(&self) -> u32 {
        self.distances.iter().copied().filter(|&d| d != UNREACHABLE).max().unwrap_or(0)
    }
}

fn bfs(adj: &[Vec<u32>], source: usize) -> Vec<u32> {
    let mut dist = vec![UNREACHABLE; adj.len()];
    let mut queue = VecDeque::new();
    dist[source] = 0;
    queue.push_back(source as u32);
    while let Some(u) = queue.pop_front() {
        let next = dist[u as usize] + 1;
        for &w in &adj[u as usize] {
            if dist[w as usize] == UNREACHABLE {
                dist[w as usize] = next;
                queue.push_back(w);
            }
        }
    }
    dist
}

pub fn bfs_distance(g: &HeteroGraph, source: usize) -> Result<DistanceMap> {
    if source >= g.num_nodes() {
        return Err(Error::NodeOutOfRange { index: source, nodes: g.num_nodes() });
    }
    Ok(DistanceMap { source, distances: bfs(&g.undirected_neighbors(), source) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaMode {
    Exact,
    Sampled,
}

impl DeltaMode {
    pub fn name(self) -> &'static str {
        match self {
            DeltaMode::Exact => "exact",
            DeltaMode::Sampled => "sampled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperbolicity {
    pub delta: f64,
    pub mode: DeltaMode,
    /// Quadruples whose six distances were all finite.
    pub evaluated: u64,
}

/// The three pair sums `(S1, S2, S3)` of a quadruple.
pub fn four_point_sums(d: impl Fn(usize, usize) -> u32, q: [usize; 4]) -> [u32; 3] {
    let [x, y, u, v] = q;
    [d(x, y) + d(u, v), d(x, u) + d(y, v), d(x, v) + d(y, u)]
}

/// Largest minus second largest of the three sums, or `None` when any pair
/// is disconnected.
fn four_point_gap(d: &impl Fn(usize, usize) -> u32, q: [usize; 4]) -> Option<u32> {
    let [x, y, u, v] = q;
    let pairs = [(x, y), (u, v), (x, u), (y, v), (x, v), (y, u)];
    let mut ds = [0u32; 6];
    for (k, &(a, b)) in pairs.iter().enumerate() {
        ds[k] = d(a, b);
        if ds[k] == UNREACHABLE {
            return None;
        }
    }
    let mut s = [ds[0] + ds[1], ds[2] + ds[3], ds[4] + ds[5]];
    s.sort_unstable();
    Some(s[2] - s[1])
}

/// Dense all-pairs hop distances as `u16`, saturating at the sentinel.
struct AllPairs {
    n: usize,
    dist: Vec<u16>,
}

impl AllPairs {
    fn new(adj: &[Vec<u32>]) -> Self {
        let n = adj.len();
        let mut dist = vec![u16::MAX; n * n];
        dist.par_chunks_mut(n.max(1)).enumerate().for_each(|(s, row)| {
            for (slot, d) in row.iter_mut().zip(bfs(adj, s)) {
                *slot = if d == UNREACHABLE { u16::MAX } else { d.min(u16::MAX as u32 - 1) as u16 };
            }
        });
        Self { n, dist }
    }

    #[inline]
    fn get(&self, a: usize, b: usize) -> u32 {
        match self.dist[a * self.n + b] {
            u16::MAX => UNREACHABLE,
            d => d as u32,
        }
    }
}

/// Exact δ over all 4-subsets; requires `|V| ≤ 30`.
pub fn hyperbolicity_exact(g: &HeteroGraph) -> Result<Hyperbolicity> {
    let n = g.num_nodes();
    if n < 4 {
        return Err(Error::invalid("hyperbolicity needs at least 4 nodes"));
    }
    if n > EXACT_LIMIT {
        return Err(Error::invalid(format!(
            "exact hyperbolicity is limited to {EXACT_LIMIT} nodes (graph has {n}); use sampled mode"
        )));
    }
    let ap = AllPairs::new(&g.undirected_neighbors());
    let d = |a: usize, b: usize| ap.get(a, b);
    let mut best = 0u32;
    let mut evaluated = 0u64;
    for x in 0..n {
        for y in x + 1..n {
            for u in y + 1..n {
                for v in u + 1..n {
                    if let Some(h) = four_point_gap(&d, [x, y, u, v]) {
                        best = best.max(h);
                        evaluated += 1;
                    }
                }
            }
        }
    }
    Ok(Hyperbolicity { delta: best as f64 / 2.0, mode: DeltaMode::Exact, evaluated })
}

/// Lower bound on δ from `samples` uniform 4-subsets. Draws are split over
/// [`SHARDS`] independent streams; shard `k` takes draws `k, k+S, …`, so a
/// larger sample count extends every shard's prefix and the bound never
/// decreases.
pub fn hyperbolicity_sampled(g: &HeteroGraph, samples: u64, seed: u64) -> Result<Hyperbolicity> {
    let n = g.num_nodes();
    if n < 4 {
        return Err(Error::invalid("hyperbolicity needs at least 4 nodes"));
    }
    let adj = g.undirected_neighbors();
    let all_pairs = (n <= ALL_PAIRS_LIMIT).then(|| AllPairs::new(&adj));

    let shard = |k: u64| -> (u32, u64) {
        let draws = if samples > k { (samples - k).div_ceil(SHARDS) } else { 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        let mut best = 0u32;
        let mut evaluated = 0u64;
        for _ in 0..draws {
            let picked = sample(&mut rng, n, 4);
            let q = [picked.index(0), picked.index(1), picked.index(2), picked.index(3)];
            let gap = match &all_pairs {
                Some(ap) => four_point_gap(&|a, b| ap.get(a, b), q),
                None => {
                    let rows: Vec<Vec<u32>> = q[..3].iter().map(|&s| bfs(&adj, s)).collect();
                    let d = |a: usize, b: usize| {
                        let k = q.iter().position(|&x| x == a).unwrap();
                        if k < 3 {
                            rows[k][b]
                        } else {
                            let k = q.iter().position(|&x| x == b).unwrap();
                            rows[k][a]
                        }
                    };
                    four_point_gap(&d, q)
                }
            };
            if let Some(h) = gap {
                best = best.max(h);
                evaluated += 1;
            }
        }
        (best, evaluated)
    };
    let results: Vec<(u32, u64)> = (0..SHARDS).into_par_iter().map(shard).collect();
    let best = results.iter().map(|r| r.0).max().unwrap_or(0);
    let evaluated = results.iter().map(|r| r.1).sum();
    Ok(Hyperbolicity { delta: best as f64 / 2.0, mode: DeltaMode::Sampled, evaluated })
}

pub fn hyperbolicity(g: &HeteroGraph, mode: DeltaMode, samples: u64, seed: u64) -> Result<Hyperbolicity> {
    match mode {
        DeltaMode::Exact => hyperbolicity_exact(g),
        DeltaMode::Sampled => hyperbolicity_sampled(g, samples, seed),
    }
}

/// Largest BFS eccentricity over up to `samples` distinct random sources.
/// With `samples ≥ |V|` every node is a source and the result is the
/// diameter of the largest finite component.
pub fn max_shortest_path_estimate(g: &HeteroGraph, samples: usize, seed: u64) -> Result<u32> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::invalid("max shortest path of an empty graph"));
    }
    if samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let adj = g.undirected_neighbors();
    let sources: Vec<usize> = if samples >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, n, samples).into_vec()
    };
    Ok(sources
        .par_iter()
        .map(|&s| bfs(&adj, s).into_iter().filter(|&d| d != UNREACHABLE).max().unwrap_or(0))
        .max()
        .unwrap_or(0))
}

/// Layer count suggested by a shortest-path estimate.
pub fn recommended_layers(estimate: u32) -> usize {
    estimate.max(2) as usize
}

/// Record printed by the `metrics` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub edges: usize,
    pub edge_types: usize,
    pub sparsity: f64,
    /// Sparsity as a percentage truncated to two decimals.
    pub sparsity_percent: String,
    pub delta: f64,
    pub delta_mode: DeltaMode,
    pub max_sp_estimate: u32,
}

/// Sparsity, δ (exact when `|V| ≤ 30`, sampled otherwise) and the sampled
/// max shortest path of a graph.
pub fn summarize(g: &HeteroGraph, samples: u64, seed: u64) -> Result<GraphSummary> {
    let slices = g.adjacency_slices();
    let sparsity = if slices.is_empty() {
        1.0
    } else {
        sparsity_ratio(slices.as_slice())?
    };
    let delta = if g.num_nodes() < 4 {
        Hyperbolicity { delta: 0.0, mode: DeltaMode::Exact, evaluated: 0 }
    } else if g.num_nodes() <= EXACT_LIMIT {
        hyperbolicity_exact(g)?
    } else {
        hyperbolicity_sampled(g, samples, seed)?
    };
    let max_sp = if g.num_nodes() == 0 {
        0
    } else {
        max_shortest_path_estimate(g, (samples as usize).clamp(1, 1000), seed)?
    };
    Ok(GraphSummary {
        nodes: g.num_nodes(),
        edges: g.num_edges(),
        edge_types: g.num_edge_types(),
        sparsity,
        sparsity_percent: crate::sparse::format_sparsity_percent(sparsity),
        delta: delta.delta,
        delta_mode: delta.mode,
        max_sp_estimate: max_sp,
    })
}
