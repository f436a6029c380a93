//! Seeded uniform sampling and the divide step: column partitions and
//! row/column submatrix extraction from an observation set.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DfcError, Result};
use crate::matio::{Entry, ObservedMatrix};

/// Stream ids reserved for the divide step. Subproblem and combine streams
/// use small integers, so these sit at the top of the range.
pub const STREAM_PARTITION: u64 = u64::MAX;
pub const STREAM_ROWS: u64 = u64::MAX - 1;
pub const STREAM_COLUMNS: u64 = u64::MAX - 2;

/// A ChaCha8 stream identified by `(seed, stream)`.
///
/// ChaCha output is specified bit-for-bit, so a given pair draws the same
/// sequence on every platform. Normal variates come from `rand_distr`'s
/// ziggurat sampler on top of that stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator on another stream of the same seed.
    pub fn fork(&self, stream: u64) -> SeededRng {
        SeededRng::new(self.seed, stream)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `rows x cols` matrix of i.i.d. N(0, 1) entries, filled column by column.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, cols);
        for x in out.iter_mut() {
            *x = self.normal();
        }
        out
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `l` distinct indices from `0..n`, uniformly over size-`l` subsets, in
/// draw order.
pub fn sample_without_replacement(n: usize, l: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if l == 0 || l > n {
        return Err(DfcError::arg(format!("sample size {l} must lie in 1..={n}")));
    }
    Ok(rand::seq::index::sample(rng, n, l).into_vec())
}

/// A random split of `0..n` into `t` groups whose sizes differ by at most
/// one. Each group is sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    n: usize,
    groups: Vec<Vec<usize>>,
}

impl PartitionPlan {
    /// Builds a plan from explicit groups, checking disjointness and coverage.
    pub fn from_groups(n: usize, mut groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for g in &mut groups {
            g.sort_unstable();
            for &c in g.iter() {
                if c >= n {
                    return Err(DfcError::OutOfBounds { row: 0, col: c, m: 1, n });
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(DfcError::arg(format!("column {c} assigned twice")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(DfcError::arg("partition does not cover every column"));
        }
        Ok(PartitionPlan { n, groups })
    }

    /// Number of columns partitioned.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    /// Original column index of position `pos` inside group `g`.
    pub fn original_column(&self, g: usize, pos: usize) -> usize {
        self.groups[g][pos]
    }

    /// For each original column, its `(group, position)`.
    pub fn locations(&self) -> Vec<(usize, usize)> {
        let mut loc = vec![(0, 0); self.n];
        for (g, cols) in self.groups.iter().enumerate() {
            for (p, &c) in cols.iter().enumerate() {
                loc[c] = (g, p);
            }
        }
        loc
    }
}

/// Fisher-Yates shuffle of `0..n`, chunked into `t` blocks of size
/// `floor(n/t)` or `ceil(n/t)`.
pub fn partition_columns(n: usize, t: usize, rng: &mut SeededRng) -> Result<PartitionPlan> {
    if t == 0 || t > n {
        return Err(DfcError::arg(format!("group count {t} must lie in 1..={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let base = n / t;
    let extra = n % t;
    let mut groups = Vec::with_capacity(t);
    let mut start = 0;
    for g in 0..t {
        let len = base + usize::from(g < extra);
        let mut grp = perm[start..start + len].to_vec();
        grp.sort_unstable();
        groups.push(grp);
        start += len;
    }
    Ok(PartitionPlan { n, groups })
}

fn check_indices(idx: &[usize], bound: usize, rows: bool, other: usize) -> Result<()> {
    let mut seen = vec![false; bound];
    for &i in idx {
        if i >= bound {
            return Err(if rows {
                DfcError::OutOfBounds { row: i, col: 0, m: bound, n: other }
            } else {
                DfcError::OutOfBounds { row: 0, col: i, m: other, n: bound }
            });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(DfcError::arg(format!("index {i} repeated")));
        }
    }
    if idx.is_empty() {
        return Err(DfcError::arg("empty index list"));
    }
    Ok(())
}

/// P_Ω restricted to the columns `idx`; column `p` of the result is column
/// `idx[p]` of the input.
pub fn extract_columns(obs: &ObservedMatrix, idx: &[usize]) -> Result<ObservedMatrix> {
    check_indices(idx, obs.ncols(), false, obs.nrows())?;
    let mut entries = Vec::new();
    for (p, &j) in idx.iter().enumerate() {
        entries.extend(obs.column(j).iter().map(|e| Entry::new(e.row, p, e.value)));
    }
    ObservedMatrix::new(obs.nrows(), idx.len(), entries)
}

/// P_Ω restricted to the rows `idx`; row `p` of the result is row `idx[p]`.
pub fn extract_rows(obs: &ObservedMatrix, idx: &[usize]) -> Result<ObservedMatrix> {
    check_indices(idx, obs.nrows(), true, obs.ncols())?;
    let mut new_row = vec![usize::MAX; obs.nrows()];
    for (p, &i) in idx.iter().enumerate() {
        new_row[i] = p;
    }
    let entries = obs
        .entries()
        .iter()
        .filter(|e| new_row[e.row] != usize::MAX)
        .map(|e| Entry::new(new_row[e.row], e.col, e.value))
        .collect();
    ObservedMatrix::new(idx.len(), obs.ncols(), entries)
}
