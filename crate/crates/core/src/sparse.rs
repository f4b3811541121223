//! COO sparse 3-tensors (channel × row × col), adjacency stacking and
//! semantic-signal injection.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// One stored entry of a [`SparseTensor3`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub d: u32,
    pub i: u32,
    pub j: u32,
    pub value: f64,
}

impl Cell {
    #[inline]
    fn key(&self) -> (u32, u32, u32) {
        (self.d, self.i, self.j)
    }
}

/// Sparse `channels × rows × cols` tensor in canonical COO form: cells sorted
/// by `(d, i, j)`, no duplicate keys, no stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor3 {
    channels: usize,
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
}

fn check_index_range(n: usize, what: &str) -> Result<()> {
    if n > u32::MAX as usize {
        Err(Error::invalid(format!("{what} {n} exceeds the u32 index range")))
    } else {
        Ok(())
    }
}

impl SparseTensor3 {
    pub fn empty(channels: usize, rows: usize, cols: usize) -> Result<Self> {
        check_index_range(channels, "channel count")?;
        check_index_range(rows, "row count")?;
        check_index_range(cols, "column count")?;
        Ok(Self { channels, rows, cols, cells: Vec::new() })
    }

    /// Builds a canonical tensor from arbitrary cells. Duplicate keys are
    /// summed and zero results dropped.
    pub fn from_cells(
        channels: usize,
        rows: usize,
        cols: usize,
        mut cells: Vec<Cell>,
    ) -> Result<Self> {
        let mut t = Self::empty(channels, rows, cols)?;
        for c in &cells {
            if c.d as usize >= channels || c.i as usize >= rows || c.j as usize >= cols {
                return Err(Error::invalid(format!(
                    "cell ({}, {}, {}) outside shape ({channels}, {rows}, {cols})",
                    c.d, c.i, c.j
                )));
            }
            if !c.value.is_finite() {
                return Err(Error::NonFinite("tensor cell"));
            }
        }
        cells.sort_unstable_by_key(Cell::key);
        t.cells = merge_sorted_duplicates(cells);
        debug_assert!(t.is_canonical());
        Ok(t)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Value at `(d, i, j)`, zero when absent.
    pub fn get(&self, d: usize, i: usize, j: usize) -> f64 {
        let key = (d as u32, i as u32, j as u32);
        self.cells
            .binary_search_by(|c| c.key().cmp(&key))
            .map(|pos| self.cells[pos].value)
            .unwrap_or(0.0)
    }

    /// Sorted, duplicate-free and zero-free.
    pub fn is_canonical(&self) -> bool {
        self.cells.iter().all(|c| c.value != 0.0 && c.value.is_finite())
            && self.cells.windows(2).all(|w| w[0].key() < w[1].key())
    }

    /// Cells of channel `d` as a contiguous slice.
    pub fn channel(&self, d: usize) -> &[Cell] {
        let d = d as u32;
        let lo = self.cells.partition_point(|c| c.d < d);
        let hi = self.cells.partition_point(|c| c.d <= d);
        &self.cells[lo..hi]
    }

    /// Size in bytes of the heap storage.
    pub fn storage_bytes(&self) -> usize {
        self.cells.capacity() * std::mem::size_of::<Cell>()
    }
}

fn merge_sorted_duplicates(cells: Vec<Cell>) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::with_capacity(cells.len());
    for c in cells {
        match out.last_mut() {
            Some(last) if last.key() == c.key() => last.value += c.value,
            _ => {
                if let Some(last) = out.last() {
                    if last.value == 0.0 {
                        out.pop();
                    }
                }
                out.push(c);
            }
        }
    }
    if out.last().is_some_and(|c| c.value == 0.0) {
        out.pop();
    }
    out
}

/// Boolean adjacency matrix of one edge type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencySlice {
    edge_type: usize,
    nodes: usize,
    entries: Vec<(u32, u32)>,
}

impl AdjacencySlice {
    /// Sorts and deduplicates `entries`; every endpoint must be `< nodes`.
    pub fn new(edge_type: usize, nodes: usize, mut entries: Vec<(u32, u32)>) -> Result<Self> {
        check_index_range(nodes, "node count")?;
        if let Some(&(a, b)) = entries.iter().find(|&&(a, b)| a as usize >= nodes || b as usize >= nodes) {
            return Err(Error::NodeOutOfRange { index: a.max(b) as usize, nodes });
        }
        entries.sort_unstable();
        entries.dedup();
        Ok(Self { edge_type, nodes, entries })
    }

    pub fn edge_type(&self) -> usize {
        self.edge_type
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.entries.binary_search(&(i as u32, j as u32)).is_ok()
    }

    /// Copy without the listed entries.
    pub fn without(&self, removed: &[(u32, u32)]) -> Self {
        let entries = self
            .entries
            .iter()
            .copied()
            .filter(|e| !removed.contains(e))
            .collect();
        Self { edge_type: self.edge_type, nodes: self.nodes, entries }
    }
}

/// Anything with a well-defined zero/nonzero element count.
pub trait ElementCount {
    fn nonzero_elements(&self) -> usize;
    fn total_elements(&self) -> usize;
}

impl ElementCount for SparseTensor3 {
    fn nonzero_elements(&self) -> usize {
        self.nnz()
    }

    fn total_elements(&self) -> usize {
        self.channels * self.rows * self.cols
    }
}

impl ElementCount for AdjacencySlice {
    fn nonzero_elements(&self) -> usize {
        self.nnz()
    }

    fn total_elements(&self) -> usize {
        self.nodes * self.nodes
    }
}

impl<T: ElementCount> ElementCount for [T] {
    fn nonzero_elements(&self) -> usize {
        self.iter().map(ElementCount::nonzero_elements).sum()
    }

    fn total_elements(&self) -> usize {
        self.iter().map(ElementCount::total_elements).sum()
    }
}

/// Fraction of zero elements, `1 - nnz/total`.
pub fn sparsity_ratio<T: ElementCount + ?Sized>(t: &T) -> Result<f64> {
    let total = t.total_elements();
    if total == 0 {
        return Err(Error::invalid("sparsity of a zero-size tensor"));
    }
    Ok(1.0 - t.nonzero_elements() as f64 / total as f64)
}

/// Formats a sparsity ratio as a percentage truncated (not rounded) to two
/// decimals, the convention used for published dataset tables.
pub fn format_sparsity_percent(ratio: f64) -> String {
    // the small nudge absorbs representation error such as 99.99999999999
    let scaled = (ratio * 10_000.0 + 1e-9).floor() / 100.0;
    format!("{scaled:.2}")
}

/// Stacks `D` copies of an adjacency slice into a `(D, V, V)` tensor with
/// value 1 on every edge.
pub fn stack_adjacency(slice: &AdjacencySlice, depth: usize) -> Result<SparseTensor3> {
    if depth == 0 {
        return Err(Error::invalid("stack depth must be at least 1"));
    }
    let mut t = SparseTensor3::empty(depth, slice.nodes, slice.nodes)?;
    t.cells.reserve_exact(depth * slice.nnz());
    for d in 0..depth as u32 {
        t.cells.extend(slice.entries.iter().map(|&(i, j)| Cell { d, i, j, value: 1.0 }));
    }
    debug_assert!(t.is_canonical());
    Ok(t)
}

/// How semantic signals combine with the values already in the tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InjectionMode {
    /// `value += t[d]`; edge values survive.
    #[default]
    Add,
    /// Row `i` is overwritten with `t_i[d]`, then column `j` with `t_j[d]`.
    Assign,
}

impl InjectionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(InjectionMode::Add),
            "assign" => Ok(InjectionMode::Assign),
            other => Err(Error::invalid(format!("unknown injection mode `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InjectionMode::Add => "add",
            InjectionMode::Assign => "assign",
        }
    }
}

/// Writes the query pair's semantic signals into row `i` and column `j` of
/// every channel.
pub fn inject_semantic(
    a: &SparseTensor3,
    i: usize,
    j: usize,
    t_i: &[f64],
    t_j: &[f64],
    mode: InjectionMode,
) -> Result<SparseTensor3> {
    let (depth, rows, cols) = a.shape();
    if i >= rows {
        return Err(Error::NodeOutOfRange { index: i, nodes: rows });
    }
    if j >= cols {
        return Err(Error::NodeOutOfRange { index: j, nodes: cols });
    }
    if t_i.len() != depth {
        return Err(Error::DimensionMismatch { expected: depth, got: t_i.len() });
    }
    if t_j.len() != depth {
        return Err(Error::DimensionMismatch { expected: depth, got: t_j.len() });
    }
    if t_i.iter().chain(t_j).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("semantic signal"));
    }
    let (iu, ju) = (i as u32, j as u32);
    let mut cells = Vec::with_capacity(a.nnz() + depth * (rows + cols));
    match mode {
        InjectionMode::Add => {
            cells.extend_from_slice(&a.cells);
            for d in 0..depth {
                let du = d as u32;
                if t_i[d] != 0.0 {
                    cells.extend((0..cols as u32).map(|q| Cell { d: du, i: iu, j: q, value: t_i[d] }));
                }
                if t_j[d] != 0.0 {
                    cells.extend((0..rows as u32).map(|p| Cell { d: du, i: p, j: ju, value: t_j[d] }));
                }
            }
        }
        InjectionMode::Assign => {
            // keep everything outside row i and column j, then lay down the
            // row and the column (column wins at (i, j))
            cells.extend(a.cells.iter().copied().filter(|c| c.i != iu && c.j != ju));
            for d in 0..depth {
                let du = d as u32;
                cells.extend(
                    (0..cols as u32)
                        .filter(|&q| q != ju)
                        .map(|q| Cell { d: du, i: iu, j: q, value: t_i[d] }),
                );
                cells.extend((0..rows as u32).map(|p| Cell { d: du, i: p, j: ju, value: t_j[d] }));
            }
        }
    }
    SparseTensor3::from_cells(depth, rows, cols, cells)
}

/// Nonzero cells of channel `d` inside the `f × f` window centred on
/// `(i, j)`, in `O(f log nnz + output)`.
pub fn window_gather(t: &SparseTensor3, d: usize, i: usize, j: usize, f: usize) -> Vec<Cell> {
    let half = (f / 2) as i64;
    let channel = t.channel(d);
    let mut out = Vec::new();
    if channel.is_empty() {
        return out;
    }
    let (i, j) = (i as i64, j as i64);
    let c_lo = (j - half).max(0) as u32;
    let c_hi = j + half;
    for r in (i - half).max(0)..=(i + half) {
        if r >= t.rows as i64 {
            break;
        }
        let r = r as u32;
        let start = channel.partition_point(|c| (c.i, c.j) < (r, c_lo));
        out.extend(
            channel[start..]
                .iter()
                .take_while(|c| c.i == r && (c.j as i64) <= c_hi)
                .copied(),
        );
    }
    out
}

const TENSOR_MAGIC: &[u8; 4] = b"TESH";
const TENSOR_VERSION: u32 = 1;

/// Serializes a tensor: little-endian header (magic, version, D, rows, cols,
/// nnz) followed by `(d u32, i u64, j u64, value f64)` records.
pub fn write_tensor<W: Write>(w: &mut W, t: &SparseTensor3) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&(t.channels as u32).to_le_bytes())?;
    w.write_all(&(t.rows as u64).to_le_bytes())?;
    w.write_all(&(t.cols as u64).to_le_bytes())?;
    w.write_all(&(t.nnz() as u64).to_le_bytes())?;
    for c in &t.cells {
        w.write_all(&c.d.to_le_bytes())?;
        w.write_all(&(c.i as u64).to_le_bytes())?;
        w.write_all(&(c.j as u64).to_le_bytes())?;
        w.write_all(&c.value.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn to_index(v: u64, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} exceeds the u32 index range")))
}

/// Inverse of [`write_tensor`]; the result is validated as canonical.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<SparseTensor3> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::invalid("not a tensor file (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != TENSOR_VERSION {
        return Err(Error::invalid(format!("unsupported tensor version {version}")));
    }
    let channels = read_u32(r)? as usize;
    let rows = to_index(read_u64(r)?, "row count")? as usize;
    let cols = to_index(read_u64(r)?, "column count")? as usize;
    let nnz = read_u64(r)? as usize;
    let mut t = SparseTensor3::empty(channels, rows, cols)?;
    let mut cells = Vec::with_capacity(nnz.min(1 << 24));
    for _ in 0..nnz {
        let d = read_u32(r)?;
        let i = to_index(read_u64(r)?, "row")?;
        let j = to_index(read_u64(r)?, "column")?;
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        cells.push(Cell { d, i, j, value: f64::from_le_bytes(b) });
    }
    t.cells = cells;
    let in_bounds = t
        .cells
        .iter()
        .all(|c| (c.d as usize) < channels && (c.i as usize) < rows && (c.j as usize) < cols);
    if !in_bounds || !t.is_canonical() {
        return Err(Error::invalid("tensor file is not in canonical COO form"));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_slice(rng: &mut ChaCha8Rng, n: usize, density: f64) -> AdjacencySlice {
        let mut entries = Vec::new();
        for a in 0..n as u32 {
            for b in 0..n as u32 {
                if rng.random_bool(density) {
                    entries.push((a, b));
                }
            }
        }
        AdjacencySlice::new(0, n, entries).unwrap()
    }

    #[test]
    fn stack_single_edge() {
        let s = AdjacencySlice::new(0, 2, vec![(0, 1)]).unwrap();
        let t = stack_adjacency(&s, 3).unwrap();
        let keys: Vec<_> = t.cells().iter().map(|c| (c.d, c.i, c.j, c.value)).collect();
        assert_eq!(keys, vec![(0, 0, 1, 1.0), (1, 0, 1, 1.0), (2, 0, 1, 1.0)]);
        assert!(stack_adjacency(&s, 0).is_err());
        let empty = AdjacencySlice::new(0, 4, vec![]).unwrap();
        assert!(stack_adjacency(&empty, 3).unwrap().is_empty());
    }

    #[test]
    fn stack_count_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..20);
            let s = random_slice(&mut rng, n, 0.2);
            let depth = rng.random_range(1..9);
            let t = stack_adjacency(&s, depth).unwrap();
            // brute-force count over the dense index space
            let mut count = 0;
            for d in 0..depth {
                for a in 0..n {
                    for b in 0..n {
                        if t.get(d, a, b) != 0.0 {
                            assert!(s.contains(a, b));
                            count += 1;
                        }
                    }
                }
            }
            assert_eq!(count, depth * s.nnz());
            assert_eq!(t.nnz(), depth * s.nnz());
        }
    }

    #[test]
    fn inject_worked_example() {
        let s = AdjacencySlice::new(0, 3, vec![(0, 1)]).unwrap();
        let a = stack_adjacency(&s, 1).unwrap();
        let t = inject_semantic(&a, 0, 1, &[0.2], &[0.4], InjectionMode::Add).unwrap();
        assert!((t.get(0, 0, 1) - 1.6).abs() < 1e-12);
        assert!((t.get(0, 0, 0) - 0.2).abs() < 1e-12);
        assert!((t.get(0, 0, 2) - 0.2).abs() < 1e-12);
        assert!((t.get(0, 2, 1) - 0.4).abs() < 1e-12);
        assert!((t.get(0, 1, 1) - 0.4).abs() < 1e-12);
        assert_eq!(t.get(0, 1, 0), 0.0);
        assert_eq!(t.nnz(), 5);
    }

    #[test]
    fn inject_zero_signal_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_slice(&mut rng, 10, 0.2);
        let a = stack_adjacency(&s, 4).unwrap();
        let t = inject_semantic(&a, 2, 5, &[0.0; 4], &[0.0; 4], InjectionMode::Add).unwrap();
        assert_eq!(t, a);
    }

    #[test]
    fn inject_assign_mode() {
        let s = AdjacencySlice::new(0, 3, vec![(0, 1), (2, 2)]).unwrap();
        let a = stack_adjacency(&s, 1).unwrap();
        let t = inject_semantic(&a, 0, 1, &[0.2], &[0.4], InjectionMode::Assign).unwrap();
        assert!((t.get(0, 0, 1) - 0.4).abs() < 1e-12);
        assert!((t.get(0, 0, 2) - 0.2).abs() < 1e-12);
        assert_eq!(t.get(0, 2, 2), 1.0);
    }

    #[test]
    fn inject_rejects_bad_input() {
        let a = SparseTensor3::empty(2, 3, 3).unwrap();
        assert!(inject_semantic(&a, 3, 0, &[0.1; 2], &[0.1; 2], InjectionMode::Add).is_err());
        assert!(inject_semantic(&a, 0, 0, &[0.1; 3], &[0.1; 2], InjectionMode::Add).is_err());
    }

    #[test]
    fn inject_union_bound_and_locality() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let n = rng.random_range(2..15);
            let depth = rng.random_range(1..5);
            let s = random_slice(&mut rng, n, 0.15);
            let a = stack_adjacency(&s, depth).unwrap();
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            let ti: Vec<f64> = (0..depth).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tj: Vec<f64> = (0..depth).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = inject_semantic(&a, i, j, &ti, &tj, InjectionMode::Add).unwrap();
            assert!(t.is_canonical());
            assert!(t.nnz() <= a.nnz() + depth * (2 * n - 1));
            for c in t.cells() {
                let touched = c.i as usize == i || c.j as usize == j;
                assert!(touched || s.contains(c.i as usize, c.j as usize));
            }
        }
    }

    #[test]
    fn sparsity_values() {
        let s = AdjacencySlice::new(0, 2708, (0..5429u32).map(|k| (k % 2708, (k * 7 + k / 2708) % 2708)).collect())
            .unwrap();
        assert_eq!(s.nnz(), 5429);
        let r = sparsity_ratio(std::slice::from_ref(&s)).unwrap();
        assert!((r - (1.0 - 5429.0 / (2708.0 * 2708.0))).abs() < 1e-15);
        assert_eq!(format_sparsity_percent(r), "99.92");

        let empty = SparseTensor3::empty(2, 3, 3).unwrap();
        assert_eq!(sparsity_ratio(&empty).unwrap(), 1.0);
        let dense: Vec<Cell> = (0..8u32)
            .map(|k| Cell { d: k >> 2, i: (k >> 1) & 1, j: k & 1, value: 1.0 })
            .collect();
        let full = SparseTensor3::from_cells(2, 2, 2, dense).unwrap();
        assert_eq!(sparsity_ratio(&full).unwrap(), 0.0);
        assert!(sparsity_ratio(&SparseTensor3::empty(0, 3, 3).unwrap()).is_err());
    }

    #[test]
    fn window_gather_matches_dense_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let single = SparseTensor3::from_cells(1, 9, 9, vec![Cell { d: 0, i: 4, j: 4, value: 2.0 }]).unwrap();
        assert_eq!(window_gather(&single, 0, 4, 4, 3), single.cells().to_vec());
        assert!(window_gather(&SparseTensor3::empty(1, 9, 9).unwrap(), 0, 4, 4, 3).is_empty());

        for _ in 0..50 {
            let mut cells = Vec::new();
            for k in 0..16u32 * 16 {
                if rng.random_bool(0.2) {
                    cells.push(Cell { d: rng.random_range(0..2), i: k / 16, j: k % 16, value: 1.0 });
                }
            }
            let t = SparseTensor3::from_cells(2, 16, 16, cells).unwrap();
            let (d, i, j) = (rng.random_range(0..2), rng.random_range(0..16), rng.random_range(0..16));
            let f = [1, 3, 5][rng.random_range(0..3)];
            let h = (f / 2) as i64;
            let mut expected = Vec::new();
            for r in 0..16i64 {
                for q in 0..16i64 {
                    if (r - i as i64).abs() <= h && (q - j as i64).abs() <= h {
                        let v = t.get(d, r as usize, q as usize);
                        if v != 0.0 {
                            expected.push(Cell { d: d as u32, i: r as u32, j: q as u32, value: v });
                        }
                    }
                }
            }
            assert_eq!(window_gather(&t, d, i, j, f), expected);
        }
    }

    #[test]
    fn from_cells_canonicalizes() {
        let cells = vec![
            Cell { d: 0, i: 1, j: 1, value: 1.0 },
            Cell { d: 0, i: 0, j: 1, value: 2.0 },
            Cell { d: 0, i: 1, j: 1, value: -1.0 },
            Cell { d: 0, i: 0, j: 0, value: 0.0 },
        ];
        let t = SparseTensor3::from_cells(1, 2, 2, cells).unwrap();
        assert_eq!(t.nnz(), 1);
        assert_eq!(t.get(0, 0, 1), 2.0);
        assert!(SparseTensor3::from_cells(1, 2, 2, vec![Cell { d: 0, i: 2, j: 0, value: 1.0 }]).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_slice(&mut rng, 12, 0.1);
        let t = inject_semantic(&stack_adjacency(&s, 3).unwrap(), 1, 2, &[0.1, 0.2, 0.3], &[0.3, 0.0, -0.1], InjectionMode::Add)
            .unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"TESH");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 8 + 8 + t.nnz() * 28);
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
        buf[0] = b'X';
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }
}
