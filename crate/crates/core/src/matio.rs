//! Matrix data model: dense matrices, sparse observation sets P_Ω(M),
//! factored low-rank estimates, plus triplet text and JSON I/O.
//!
//! Dense storage is nalgebra's column-major `DMatrix<f64>`, which is what
//! every column-sampling routine downstream wants.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DfcError, Result};

pub type DenseMatrix = DMatrix<f64>;

/// One revealed entry `(row, col, value)`, 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Entry {
    pub fn new(row: usize, col: usize, value: f64) -> Self {
        Entry { row, col, value }
    }
}

/// The revealed entries of an `m x n` matrix.
///
/// Entries are kept sorted by `(col, row)` with a column pointer array, so
/// column extraction and per-column scans are cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix {
    m: usize,
    n: usize,
    entries: Vec<Entry>,
    col_ptr: Vec<usize>,
}

impl ObservedMatrix {
    pub fn new(m: usize, n: usize, mut entries: Vec<Entry>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(DfcError::arg(format!("matrix dimensions must be positive, got {m}x{n}")));
        }
        for e in &entries {
            if e.row >= m || e.col >= n {
                return Err(DfcError::OutOfBounds { row: e.row, col: e.col, m, n });
            }
            if !e.value.is_finite() {
                return Err(DfcError::arg(format!("non-finite value at ({}, {})", e.row, e.col)));
            }
        }
        entries.sort_by_key(|e| (e.col, e.row));
        for w in entries.windows(2) {
            if w[0].row == w[1].row && w[0].col == w[1].col {
                return Err(DfcError::Duplicate { row: w[0].row, col: w[0].col });
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for e in &entries {
            col_ptr[e.col + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(ObservedMatrix { m, n, entries, col_ptr })
    }

    /// Every cell of `dense` revealed.
    pub fn from_dense(dense: &DenseMatrix) -> Result<Self> {
        let (m, n) = dense.shape();
        let mut entries = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                entries.push(Entry::new(i, j, dense[(i, j)]));
            }
        }
        Self::new(m, n, entries)
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    /// Number of revealed entries, |Ω|.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in `(col, row)` order.
    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn column(&self, j: usize) -> &[Entry] {
        &self.entries[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let c = self.column(col);
        c.binary_search_by_key(&row, |e| e.row).ok().map(|p| c[p].value)
    }

    /// Fraction of cells revealed, |Ω| / mn.
    pub fn density(&self) -> f64 {
        self.len() as f64 / (self.m as f64 * self.n as f64)
    }

    pub fn transpose(&self) -> ObservedMatrix {
        let entries = self.entries.iter().map(|e| Entry::new(e.col, e.row, e.value)).collect();
        ObservedMatrix::new(self.n, self.m, entries).expect("transpose preserves validity")
    }
}

/// Zero-filled dense form of P_Ω(M).
pub fn densify(obs: &ObservedMatrix) -> DenseMatrix {
    let mut out = DMatrix::zeros(obs.m, obs.n);
    for e in &obs.entries {
        out[(e.row, e.col)] = e.value;
    }
    out
}

/// Options for [`load_triplets_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TripletOptions {
    /// Indices in the file start at 1 (MovieLens style).
    pub one_based: bool,
}

/// Reads `i j v` lines with an optional leading `% m n` header.
pub fn load_triplets<R: BufRead>(src: R) -> Result<ObservedMatrix> {
    load_triplets_with(src, TripletOptions::default())
}

pub fn load_triplets_with<R: BufRead>(src: R, opts: TripletOptions) -> Result<ObservedMatrix> {
    let mut dims: Option<(usize, usize)> = None;
    let mut seen_data = false;
    let mut entries = Vec::new();
    for (lineno, line) in src.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('%') {
            if dims.is_none() && !seen_data {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() == 2 {
                    let m = parse_index(parts[0], lineno)?;
                    let n = parse_index(parts[1], lineno)?;
                    dims = Some((m, n));
                    continue;
                }
            }
            // any other '%' line is a comment
            continue;
        }
        seen_data = true;
        let mut parts = trimmed.split_whitespace();
        let (Some(i), Some(j), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(DfcError::Parse { line: lineno, msg: format!("expected `i j v`, got {trimmed:?}") });
        };
        let mut i = parse_index(i, lineno)?;
        let mut j = parse_index(j, lineno)?;
        if opts.one_based {
            if i == 0 || j == 0 {
                return Err(DfcError::Parse { line: lineno, msg: "index 0 in a one-based file".into() });
            }
            i -= 1;
            j -= 1;
        }
        let v: f64 = v.parse().map_err(|_| DfcError::Parse { line: lineno, msg: format!("bad value {v:?}") })?;
        if !v.is_finite() {
            return Err(DfcError::Parse { line: lineno, msg: format!("non-finite value {v}") });
        }
        if let Some((m, n)) = dims {
            if i >= m || j >= n {
                return Err(DfcError::OutOfBounds { row: i, col: j, m, n });
            }
        }
        entries.push(Entry::new(i, j, v));
    }
    let (m, n) = match dims {
        Some(d) => d,
        None => {
            if entries.is_empty() {
                return Err(DfcError::arg("no header and no entries; dimensions unknown"));
            }
            let m = entries.iter().map(|e| e.row).max().unwrap_or(0) + 1;
            let n = entries.iter().map(|e| e.col).max().unwrap_or(0) + 1;
            (m, n)
        }
    };
    ObservedMatrix::new(m, n, entries)
}

fn parse_index(s: &str, line: usize) -> Result<usize> {
    s.parse().map_err(|_| DfcError::Parse { line, msg: format!("bad index {s:?}") })
}

/// Writes the header and one `i j v` line per entry (0-based). Values use
/// the shortest representation that parses back to the same `f64`.
pub fn save_triplets<W: Write>(obs: &ObservedMatrix, out: W) -> Result<()> {
    save_triplets_with(obs, out, TripletOptions::default())
}

pub fn save_triplets_with<W: Write>(obs: &ObservedMatrix, mut out: W, opts: TripletOptions) -> Result<()> {
    let base = usize::from(opts.one_based);
    writeln!(out, "% {} {}", obs.m, obs.n)?;
    for e in &obs.entries {
        writeln!(out, "{} {} {}", e.row + base, e.col + base, e.value)?;
    }
    Ok(())
}

/// A rank-`k` matrix held as `left * right^T` with `left: m x k`,
/// `right: n x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankEstimate {
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl LowRankEstimate {
    pub fn new(left: DMatrix<f64>, right: DMatrix<f64>) -> Result<Self> {
        if left.ncols() != right.ncols() {
            return Err(DfcError::shape(format!(
                "factor widths differ: left has {}, right has {}",
                left.ncols(),
                right.ncols()
            )));
        }
        let (m, n) = (left.nrows(), right.nrows());
        if m == 0 || n == 0 {
            return Err(DfcError::arg("estimate dimensions must be positive"));
        }
        if left.ncols() > m.min(n) {
            return Err(DfcError::shape(format!("rank bound {} exceeds min({m}, {n})", left.ncols())));
        }
        if left.iter().chain(right.iter()).any(|x| !x.is_finite()) {
            return Err(DfcError::arg("non-finite factor entry"));
        }
        Ok(LowRankEstimate { left, right })
    }

    pub fn zero(m: usize, n: usize) -> Self {
        LowRankEstimate { left: DMatrix::zeros(m, 0), right: DMatrix::zeros(n, 0) }
    }

    /// Exact factored form of a dense matrix using the identity on its
    /// smaller side. No decomposition is performed.
    pub fn from_dense(dense: &DenseMatrix) -> Self {
        let (m, n) = dense.shape();
        if n <= m {
            LowRankEstimate { left: dense.clone(), right: DMatrix::identity(n, n) }
        } else {
            LowRankEstimate { left: DMatrix::identity(m, m), right: dense.transpose() }
        }
    }

    /// Builds `U diag(s) V^T` as a factored estimate.
    pub fn from_svd(svd: &SvdFactors) -> Self {
        let mut left = svd.u.clone();
        for (c, s) in svd.s.iter().enumerate() {
            left.column_mut(c).scale_mut(*s);
        }
        LowRankEstimate { left, right: svd.v.clone() }
    }

    pub(crate) fn from_parts_unchecked(left: DMatrix<f64>, right: DMatrix<f64>) -> Self {
        debug_assert_eq!(left.ncols(), right.ncols());
        LowRankEstimate { left, right }
    }

    pub fn nrows(&self) -> usize {
        self.left.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.right.nrows()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    /// Number of factor columns (an upper bound on the rank).
    pub fn k(&self) -> usize {
        self.left.ncols()
    }

    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.left, self.right)
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.left.row(i).dot(&self.right.row(j))
    }

    pub fn transpose(&self) -> Self {
        LowRankEstimate { left: self.right.clone(), right: self.left.clone() }
    }

    pub fn scaled(&self, c: f64) -> Self {
        LowRankEstimate { left: &self.left * c, right: self.right.clone() }
    }

    /// Frobenius norm from the factor Gram matrices, without materializing.
    pub fn frobenius_norm(&self) -> f64 {
        if self.k() == 0 {
            return 0.0;
        }
        let ga = self.left.tr_mul(&self.left);
        let gb = self.right.tr_mul(&self.right);
        ga.component_mul(&gb).sum().max(0.0).sqrt()
    }

    /// Subset of columns, relabeled `0..idx.len()`.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        LowRankEstimate { left: self.left.clone(), right: self.right.select_rows(idx) }
    }

    /// Subset of rows, relabeled `0..idx.len()`.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        LowRankEstimate { left: self.left.select_rows(idx), right: self.right.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&LowRankJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: LowRankJson = serde_json::from_str(s)?;
        raw.try_into()
    }
}

/// `left * right^T`, dense.
pub fn materialize(est: &LowRankEstimate) -> DenseMatrix {
    if est.k() == 0 {
        return DMatrix::zeros(est.nrows(), est.ncols());
    }
    &est.left * est.right.transpose()
}

/// Checkpoint layout: dimensions, rank and row-major factor arrays.
#[derive(Debug, Serialize, Deserialize)]
pub struct LowRankJson {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
}

fn rows_of(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    mat.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(DfcError::shape(format!("{what} factor must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl From<&LowRankEstimate> for LowRankJson {
    fn from(est: &LowRankEstimate) -> Self {
        LowRankJson { m: est.nrows(), n: est.ncols(), k: est.k(), left: rows_of(&est.left), right: rows_of(&est.right) }
    }
}

impl TryFrom<LowRankJson> for LowRankEstimate {
    type Error = DfcError;

    fn try_from(raw: LowRankJson) -> Result<Self> {
        let left = from_rows(&raw.left, raw.m, raw.k, "left")?;
        let right = from_rows(&raw.right, raw.n, raw.k, "right")?;
        LowRankEstimate::new(left, right)
    }
}

/// Compact SVD `U diag(s) V^T` with `s` sorted descending.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        materialize(&LowRankEstimate::from_svd(self))
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.s.len());
        self.u = self.u.columns(0, k).into_owned();
        self.v = self.v.columns(0, k).into_owned();
        self.s = self.s.rows(0, k).into_owned();
        self
    }
}
