//! Heterogeneous graph ingestion, edge splits, negative sampling, noise
//! injection and a planted-structure synthetic generator.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::AdjacencySlice;

/// One directed, typed edge over dense node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub edge_type: usize,
    pub src: u32,
    pub dst: u32,
}

/// Graph over interned nodes with `K` named edge types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroGraph {
    node_ids: Vec<String>,
    texts: Vec<String>,
    edge_types: Vec<String>,
    edges: Vec<Vec<(u32, u32)>>,
    index: HashMap<String, u32>,
}

impl HeteroGraph {
    /// Builds a graph from parts. Edges within a type are sorted and
    /// deduplicated; the number of dropped duplicates is returned.
    pub fn from_parts(
        node_ids: Vec<String>,
        texts: Vec<String>,
        edge_types: Vec<String>,
        mut edges: Vec<Vec<(u32, u32)>>,
    ) -> Result<(Self, usize)> {
        if node_ids.len() != texts.len() {
            return Err(Error::DimensionMismatch { expected: node_ids.len(), got: texts.len() });
        }
        if edge_types.len() != edges.len() {
            return Err(Error::DimensionMismatch { expected: edge_types.len(), got: edges.len() });
        }
        if node_ids.len() > u32::MAX as usize {
            return Err(Error::invalid("too many nodes"));
        }
        let mut index = HashMap::with_capacity(node_ids.len());
        for (k, id) in node_ids.iter().enumerate() {
            if index.insert(id.clone(), k as u32).is_some() {
                return Err(Error::invalid(format!("duplicate node id `{id}`")));
            }
        }
        let n = node_ids.len();
        let mut duplicates = 0;
        for list in &mut edges {
            if let Some(&(a, b)) = list.iter().find(|&&(a, b)| a as usize >= n || b as usize >= n) {
                return Err(Error::NodeOutOfRange { index: a.max(b) as usize, nodes: n });
            }
            let before = list.len();
            list.sort_unstable();
            list.dedup();
            duplicates += before - list.len();
        }
        Ok((Self { node_ids, texts, edge_types, edges, index }, duplicates))
    }

    pub fn empty() -> Self {
        Self::from_parts(Vec::new(), Vec::new(), Vec::new(), Vec::new())
            .expect("empty graph is valid")
            .0
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_id(&self, index: usize) -> &str {
        &self.node_ids[index]
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn text(&self, index: usize) -> &str {
        &self.texts[index]
    }

    pub fn edge_types(&self) -> &[String] {
        &self.edge_types
    }

    /// Sorted edge list of one type.
    pub fn edges_of(&self, edge_type: usize) -> &[(u32, u32)] {
        &self.edges[edge_type]
    }

    /// All edges, type-major.
    pub fn all_edges(&self) -> Vec<Edge> {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(k, list)| list.iter().map(move |&(src, dst)| Edge { edge_type: k, src, dst }))
            .collect()
    }

    /// Dense index of an original node id.
    pub fn lookup(&self, id: &str) -> Result<usize> {
        self.index.get(id).map(|&k| k as usize).ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn has_edge(&self, edge_type: usize, src: usize, dst: usize) -> bool {
        self.edges[edge_type].binary_search(&(src as u32, dst as u32)).is_ok()
    }

    /// True when any edge type links the two nodes in either direction.
    pub fn connected(&self, a: usize, b: usize) -> bool {
        (0..self.edges.len()).any(|k| self.has_edge(k, a, b) || self.has_edge(k, b, a))
    }

    /// One adjacency slice per edge type.
    pub fn adjacency_slices(&self) -> Vec<AdjacencySlice> {
        self.edges
            .iter()
            .enumerate()
            .map(|(k, list)| {
                AdjacencySlice::new(k, self.num_nodes(), list.clone()).expect("edges validated at construction")
            })
            .collect()
    }

    /// Adjacency slices with some edges held out.
    pub fn adjacency_slices_without(&self, held_out: &[Edge]) -> Vec<AdjacencySlice> {
        let removed: HashSet<Edge> = held_out.iter().copied().collect();
        self.edges
            .iter()
            .enumerate()
            .map(|(k, list)| {
                let kept = list
                    .iter()
                    .copied()
                    .filter(|&(src, dst)| !removed.contains(&Edge { edge_type: k, src, dst }))
                    .collect();
                AdjacencySlice::new(k, self.num_nodes(), kept).expect("edges validated at construction")
            })
            .collect()
    }

    /// Neighbour lists of the simple undirected graph obtained by collapsing
    /// all edge types and directions; self loops dropped.
    pub fn undirected_neighbors(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for list in &self.edges {
            for &(a, b) in list {
                if a != b {
                    adj[a as usize].push(b);
                    adj[b as usize].push(a);
                }
            }
        }
        for nbrs in &mut adj {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        adj
    }

    /// Number of edges of the collapsed undirected simple graph.
    pub fn undirected_edge_count(&self) -> usize {
        self.undirected_neighbors().iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Writes `edges.tsv` and `nodes.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut nodes = String::new();
        for (id, text) in self.node_ids.iter().zip(&self.texts) {
            writeln!(nodes, "{id}\t{text}").expect("writing to a String");
        }
        let mut edges = String::new();
        for (k, list) in self.edges.iter().enumerate() {
            for &(a, b) in list {
                writeln!(edges, "{}\t{}\t{}", self.node_ids[a as usize], self.node_ids[b as usize], self.edge_types[k])
                    .expect("writing to a String");
            }
        }
        fs::write(dir.join("nodes.tsv"), nodes)?;
        fs::write(dir.join("edges.tsv"), edges)?;
        let mut types = self.edge_types.join("\n");
        types.push('\n');
        fs::write(dir.join("edge_types.txt"), types)?;
        Ok(())
    }

    /// Loads a graph previously written by [`HeteroGraph::save`]. The
    /// optional `edge_types.txt` fixes the type order, including types that
    /// currently have no edges.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let types_path = dir.join("edge_types.txt");
        let types = if types_path.exists() {
            fs::read_to_string(&types_path)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        } else {
            Vec::new()
        };
        Ok(load_graph_with_types(&dir.join("edges.tsv"), &dir.join("nodes.tsv"), types)?.graph)
    }
}

/// Result of [`load_graph`].
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: HeteroGraph,
    /// Edge lines dropped because they repeated an earlier edge.
    pub duplicate_edges: usize,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, line)| (k + 1, line.trim_end_matches('\r')))
        .filter(|(_, line)| !line.trim().is_empty() && !line.trim_start().starts_with('#'))
}

/// Parses `nodes.tsv` (`id<TAB>text`) and `edges.tsv` (`src<TAB>dst<TAB>type`).
/// Edge types are numbered in order of first appearance.
pub fn load_graph(edges_path: &Path, nodes_path: &Path) -> Result<LoadedGraph> {
    load_graph_with_types(edges_path, nodes_path, Vec::new())
}

/// Like [`load_graph`], with `known_types` numbered first.
pub fn load_graph_with_types(edges_path: &Path, nodes_path: &Path, known_types: Vec<String>) -> Result<LoadedGraph> {
    let parse_err = |path: &Path, line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };

    let nodes_text = fs::read_to_string(nodes_path)?;
    let mut node_ids = Vec::new();
    let mut texts = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in content_lines(&nodes_text) {
        let (id, text) = line.split_once('\t').unwrap_or((line, ""));
        let id = id.trim();
        if id.is_empty() {
            return Err(parse_err(nodes_path, line_no, "empty node id".into()));
        }
        if !seen.insert(id.to_string()) {
            return Err(parse_err(nodes_path, line_no, format!("duplicate node id `{id}`")));
        }
        node_ids.push(id.to_string());
        texts.push(text.to_string());
    }
    let index: HashMap<&str, u32> = node_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k as u32)).collect();

    let edges_text = fs::read_to_string(edges_path)?;
    let mut type_index: HashMap<String, usize> =
        known_types.iter().enumerate().map(|(k, t)| (t.clone(), k)).collect();
    if type_index.len() != known_types.len() {
        return Err(Error::invalid("duplicate edge type name"));
    }
    let mut edges: Vec<Vec<(u32, u32)>> = vec![Vec::new(); known_types.len()];
    let mut edge_types = known_types;
    for (line_no, line) in content_lines(&edges_text) {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(edges_path, line_no, "expected `src<TAB>dst<TAB>type`".into()));
        }
        let resolve = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| parse_err(edges_path, line_no, format!("unknown node id `{id}`")))
        };
        let (src, dst) = (resolve(fields[0])?, resolve(fields[1])?);
        let k = *type_index.entry(fields[2].to_string()).or_insert_with(|| {
            edge_types.push(fields[2].to_string());
            edges.push(Vec::new());
            edge_types.len() - 1
        });
        edges[k].push((src, dst));
    }
    let (graph, duplicate_edges) = HeteroGraph::from_parts(node_ids, texts, edge_types, edges)?;
    Ok(LoadedGraph { graph, duplicate_edges })
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        if [train, val, test].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("split ratios must be finite and non-negative"));
        }
        if (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {} instead of 1", train + val + test)));
        }
        Ok(r)
    }

    /// Parses `a:b:c` weights, normalized by their sum.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad split ratio `{s}`"))))
            .collect::<Result<_>>()?;
        if parts.len() != 3 {
            return Err(Error::invalid(format!("split ratio `{s}` needs three parts")));
        }
        let total: f64 = parts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid(format!("split ratio `{s}` has a zero total")));
        }
        Self::new(parts[0] / total, parts[1] / total, parts[2] / total)
    }

    /// `(train, val, test)` counts for `n` items: train and val are rounded,
    /// test takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// One partition of the positive edges plus matched negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<Edge>,
    pub val: Vec<Edge>,
    pub test: Vec<Edge>,
    pub val_negatives: Vec<(u32, u32)>,
    pub test_negatives: Vec<(u32, u32)>,
}

impl Fold {
    /// Positive edges of a named split (`train`, `val` or `test`).
    pub fn positives(&self, split: Split) -> &[Edge] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Matched negatives of an evaluation split (empty for training, which
    /// resamples every epoch).
    pub fn negatives(&self, split: Split) -> &[(u32, u32)] {
        match split {
            Split::Train => &[],
            Split::Val => &self.val_negatives,
            Split::Test => &self.test_negatives,
        }
    }

    /// Edges hidden from the training adjacency.
    pub fn held_out(&self) -> Vec<Edge> {
        self.val.iter().chain(&self.test).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub ratios: SplitRatios,
    pub seed: u64,
    pub negative_ratio: f64,
    pub folds: Vec<Fold>,
}

/// Shuffles the positive edges with `seed` and cuts `folds` rotations of the
/// shuffled order into train/val/test. Evaluation splits get
/// `negative_ratio` times as many sampled non-edges.
pub fn make_splits(
    g: &HeteroGraph,
    ratios: SplitRatios,
    folds: usize,
    negative_ratio: f64,
    seed: u64,
) -> Result<SplitSpec> {
    let ratios = SplitRatios::new(ratios.train, ratios.val, ratios.test)?;
    if folds == 0 {
        return Err(Error::invalid("fold count must be at least 1"));
    }
    if !(negative_ratio >= 0.0) {
        return Err(Error::invalid("negative ratio must be non-negative"));
    }
    let mut edges = g.all_edges();
    let n = edges.len();
    let (n_train, n_val, _) = ratios.counts(n);
    if n == 0 || n_train == 0 {
        return Err(Error::invalid("not enough edges for the requested split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let offset = (f * n) / folds;
        let rotated: Vec<Edge> = edges[offset..].iter().chain(&edges[..offset]).copied().collect();
        let train = rotated[..n_train].to_vec();
        let val = rotated[n_train..n_train + n_val].to_vec();
        let test = rotated[n_train + n_val..].to_vec();
        let n_val_neg = (negative_ratio * val.len() as f64).round() as usize;
        let n_test_neg = (negative_ratio * test.len() as f64).round() as usize;
        let negatives = sample_negatives(g, n_val_neg + n_test_neg, rng.random())?;
        let (val_negatives, test_negatives) = negatives.split_at(n_val_neg);
        out.push(Fold {
            train,
            val,
            test,
            val_negatives: val_negatives.to_vec(),
            test_negatives: test_negatives.to_vec(),
        });
    }
    Ok(SplitSpec { ratios, seed, negative_ratio, folds: out })
}

/// Uniform ordered pairs `(i, j)`, `i != j`, linked by no edge of any type
/// in either direction. Pairs are distinct.
pub fn sample_negatives(g: &HeteroGraph, count: usize, seed: u64) -> Result<Vec<(u32, u32)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let n = g.num_nodes();
    if n < 2 {
        return Err(Error::invalid("negative sampling needs at least two nodes"));
    }
    let linked: HashSet<(u32, u32)> = g
        .edges
        .iter()
        .flatten()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let max_attempts = 1000usize.saturating_mul(count);
    for _ in 0..max_attempts {
        let a = rng.random_range(0..n as u32);
        let b = rng.random_range(0..n as u32);
        if a == b || linked.contains(&(a.min(b), a.max(b))) || !chosen.insert((a, b)) {
            continue;
        }
        out.push((a, b));
        if out.len() == count {
            return Ok(out);
        }
    }
    Err(Error::invalid(format!(
        "found only {} of {count} non-edges in {max_attempts} attempts",
        out.len()
    )))
}

fn percent_count(pct: f64, n: usize) -> Result<usize> {
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::invalid(format!("percentage {pct} outside [0, 100]")));
    }
    Ok(((pct / 100.0 * n as f64).round() as usize).min(n))
}

/// Drops `node_drop_pct`% of nodes (with incident edges), then replaces the
/// text of `text_replace_pct`% of the survivors with the text of another
/// random surviving node.
pub fn perturb(g: &HeteroGraph, node_drop_pct: f64, text_replace_pct: f64, seed: u64) -> Result<HeteroGraph> {
    let n = g.num_nodes();
    let n_drop = percent_count(node_drop_pct, n)?;
    percent_count(text_replace_pct, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut dropped = vec![false; n];
    for &v in &order[..n_drop] {
        dropped[v] = true;
    }
    let mut remap = vec![u32::MAX; n];
    let mut node_ids = Vec::new();
    let mut texts = Vec::new();
    for v in 0..n {
        if !dropped[v] {
            remap[v] = node_ids.len() as u32;
            node_ids.push(g.node_ids[v].clone());
            texts.push(g.texts[v].clone());
        }
    }
    let edges: Vec<Vec<(u32, u32)>> = g
        .edges
        .iter()
        .map(|list| {
            list.iter()
                .filter(|&&(a, b)| !dropped[a as usize] && !dropped[b as usize])
                .map(|&(a, b)| (remap[a as usize], remap[b as usize]))
                .collect()
        })
        .collect();

    let m = node_ids.len();
    let n_replace = percent_count(text_replace_pct, m)?;
    if m > 1 && n_replace > 0 {
        let original = texts.clone();
        let mut targets: Vec<usize> = (0..m).collect();
        targets.shuffle(&mut rng);
        for &v in &targets[..n_replace] {
            let mut donor = rng.random_range(0..m - 1);
            if donor >= v {
                donor += 1;
            }
            texts[v] = original[donor].clone();
        }
    }
    Ok(HeteroGraph::from_parts(node_ids, texts, g.edge_types.clone(), edges)?.0)
}

/// Parameters of the planted two-block dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub nodes: usize,
    pub group_size: usize,
    /// Probability of an `also_buy` edge between two members of one group.
    pub p_within: f64,
    /// Probability of an `also_view` edge between members of paired groups
    /// in opposite blocks.
    pub p_cross: f64,
    /// Informative tokens per node text.
    pub tokens: usize,
    /// Uninformative tokens per node text.
    pub noise_tokens: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self { nodes: 300, group_size: 10, p_within: 0.5, p_cross: 0.12, tokens: 12, noise_tokens: 4, seed: 7 }
    }
}

/// Two blocks of contiguous node ids, each cut into contiguous groups.
/// `also_buy` edges join members of one group; `also_view` edges join
/// group `m` of block 0 with group `m` of block 1. Texts are token bags
/// drawn from block, pair and group vocabularies plus shared noise. Each
/// undirected link is stored once in a random orientation.
pub fn planted_dataset(cfg: &PlantedConfig) -> Result<HeteroGraph> {
    if cfg.nodes < 4 || !cfg.nodes.is_multiple_of(2) {
        return Err(Error::invalid("planted dataset needs an even node count of at least 4"));
    }
    if cfg.group_size == 0 || !(cfg.nodes / 2).is_multiple_of(cfg.group_size) {
        return Err(Error::invalid("group size must divide the block size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.nodes / 2;
    let block = |v: usize| v / half;
    let group = |v: usize| (v % half) / cfg.group_size;

    let node_ids: Vec<String> = (0..cfg.nodes).map(|v| format!("n{v}")).collect();
    let mut texts = Vec::with_capacity(cfg.nodes);
    for v in 0..cfg.nodes {
        let (b, m) = (block(v), group(v));
        let mut words = Vec::with_capacity(cfg.tokens + cfg.noise_tokens);
        for _ in 0..cfg.tokens {
            let w = match rng.random_range(0..3) {
                0 => format!("block{b}_{}", rng.random_range(0..4)),
                1 => format!("pair{m}_{}", rng.random_range(0..3)),
                _ => format!("group{b}x{m}_{}", rng.random_range(0..3)),
            };
            words.push(w);
        }
        for _ in 0..cfg.noise_tokens {
            words.push(format!("common{}", rng.random_range(0..40)));
        }
        texts.push(words.join(" "));
    }

    let orient = |rng: &mut ChaCha8Rng, a: usize, b: usize| {
        if rng.random_bool(0.5) {
            (a as u32, b as u32)
        } else {
            (b as u32, a as u32)
        }
    };
    let mut buy = Vec::new();
    let mut view = Vec::new();
    for a in 0..cfg.nodes {
        for b in a + 1..cfg.nodes {
            if block(a) == block(b) && group(a) == group(b) {
                if rng.random_bool(cfg.p_within) {
                    buy.push(orient(&mut rng, a, b));
                }
            } else if block(a) != block(b) && group(a) == group(b) && rng.random_bool(cfg.p_cross) {
                view.push(orient(&mut rng, a, b));
            }
        }
    }
    Ok(HeteroGraph::from_parts(
        node_ids,
        texts,
        vec!["also_buy".to_string(), "also_view".to_string()],
        vec![buy, view],
    )?
    .0)
}
