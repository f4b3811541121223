//! Semantic signals: precomputed embeddings or hashed bag-of-words, projected
//! to the channel count used for injection.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Default width of hashed text vectors.
pub const DEFAULT_HASH_DIM: usize = 256;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded 64-bit token hash (FNV-1a, finalized with splitmix64).
fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ splitmix64(seed);
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

/// Signed feature-hashing of lowercase whitespace tokens into `d_lm` slots.
pub fn hash_embed(text: &str, d_lm: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; d_lm];
    if d_lm == 0 {
        return out;
    }
    for token in text.split_whitespace() {
        let h = token_hash(&token.to_lowercase(), seed);
        let idx = (h % d_lm as u64) as usize;
        out[idx] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    out
}

/// Precomputed vectors keyed by node id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("no embedding for node `{id}`")))
    }
}

/// Reads `D_lm=<int>` followed by `id v1 … v_D_lm` rows. `#` lines and
/// blank lines are skipped; an empty file yields an empty table.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Parse { path: path.display().to_string(), line, msg };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let Some((hline, header)) = lines.next() else {
        return Ok(EmbeddingTable::default());
    };
    let dim = header
        .strip_prefix("D_lm=")
        .and_then(|v| v.trim().parse::<usize>().ok())
        .ok_or_else(|| err(hline, "expected header `D_lm=<int>`".into()))?;
    let mut vectors = HashMap::new();
    for (line, row) in lines {
        let mut fields = row.split_whitespace();
        let id = fields.next().expect("non-empty line");
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| err(line, format!("bad number `{f}`"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(err(line, format!("expected {dim} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(line, "non-finite value".into()));
        }
        if vectors.insert(id.to_string(), values).is_some() {
            return Err(err(line, format!("duplicate node id `{id}`")));
        }
    }
    Ok(EmbeddingTable { dim, vectors })
}

/// Seeded Gaussian `d × d_lm` projection matrix (row-major), entries
/// `N(0, 1/d)`. Identity when `d == d_lm` and `seed == 0`.
pub fn projection_matrix(d_lm: usize, d: usize, seed: u64) -> Vec<f64> {
    if d == d_lm && seed == 0 {
        let mut m = vec![0.0; d * d];
        (0..d).for_each(|k| m[k * d + k] = 1.0);
        return m;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d.max(1) as f64).sqrt();
    (0..d * d_lm).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect()
}

fn apply_matrix(m: &[f64], raw: &[f64], d: usize) -> Vec<f64> {
    let d_lm = raw.len();
    (0..d).map(|r| m[r * d_lm..(r + 1) * d_lm].iter().zip(raw).map(|(a, b)| a * b).sum()).collect()
}

fn normalize(mut v: Vec<f64>, gain: f64) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x *= gain / n);
    }
    v
}

/// Projects a raw vector to `d` channels, then L2-normalizes and scales by
/// `gain`. A zero vector stays zero.
pub fn project(raw: &[f64], d: usize, seed: u64, gain: f64) -> Vec<f64> {
    let m = projection_matrix(raw.len(), d, seed);
    normalize(apply_matrix(&m, raw, d), gain)
}

/// Where raw semantic vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSource {
    Hash { dim: usize, seed: u64 },
    Table(EmbeddingTable),
}

/// Resolves node texts or ids to `D`-channel semantic signals.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalProvider {
    source: SignalSource,
    d: usize,
    gain: f64,
    matrix: Vec<f64>,
}

impl SignalProvider {
    pub fn new(source: SignalSource, d: usize, projection_seed: u64, gain: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("signal dimension must be positive"));
        }
        if !gain.is_finite() || gain < 0.0 {
            return Err(Error::invalid("gain must be finite and non-negative"));
        }
        let d_lm = match &source {
            SignalSource::Hash { dim, .. } => *dim,
            SignalSource::Table(t) => t.dim(),
        };
        Ok(Self { matrix: projection_matrix(d_lm, d, projection_seed), source, d, gain })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Signal of one node given its original id and text.
    pub fn signal(&self, id: &str, text: &str) -> Result<Vec<f64>> {
        let raw = match &self.source {
            SignalSource::Hash { dim, seed } => hash_embed(text, *dim, *seed),
            SignalSource::Table(t) => t.get(id)?.to_vec(),
        };
        Ok(normalize(apply_matrix(&self.matrix, &raw, self.d), self.gain))
    }

    /// Signals for every node of a graph, in index order.
    pub fn signals_for(&self, g: &crate::data::HeteroGraph) -> Result<Vec<Vec<f64>>> {
        (0..g.num_nodes()).map(|v| self.signal(g.node_id(v), g.text(v))).collect()
    }
}
