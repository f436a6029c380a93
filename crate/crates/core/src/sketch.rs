//! Randomized low-rank reconstruction kernels used by the combine step.
//!
//! Every kernel consumes factored estimates and returns a factored
//! estimate; no `m x n` product is formed.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DfcError, Result};
use crate::linalg::{self, SubspaceOpts};
use crate::matio::{DenseMatrix, LowRankEstimate, SvdFactors};
use crate::sampling::{PartitionPlan, SeededRng};

/// Random projection parameters: target rank `k`, oversampling `p` and
/// power-iteration count `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RpParams {
    pub k: usize,
    pub p: usize,
    pub q: usize,
}

impl RpParams {
    pub fn new(k: usize, p: usize, q: usize) -> Result<Self> {
        if k == 0 {
            return Err(DfcError::arg("random projection rank must be at least 1"));
        }
        Ok(RpParams { k, p, q })
    }
}

impl Default for RpParams {
    fn default() -> Self {
        RpParams { k: 1, p: 5, q: 2 }
    }
}

/// Singular values at or below `rel_cutoff * max(m, n) * s_1` count as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankTolerance {
    pub rel_cutoff: f64,
}

impl RankTolerance {
    pub fn new(rel_cutoff: f64) -> Result<Self> {
        if !(rel_cutoff > 0.0 && rel_cutoff < 1.0) {
            return Err(DfcError::arg(format!("rank cutoff {rel_cutoff} must lie in (0, 1)")));
        }
        Ok(RankTolerance { rel_cutoff })
    }

    /// Absolute cutoff for an `m x n` matrix with leading singular value `s1`.
    pub fn cutoff(&self, s1: f64, m: usize, n: usize) -> f64 {
        self.rel_cutoff * m.max(n) as f64 * s1
    }

    pub fn rank(&self, s: &nalgebra::DVector<f64>, m: usize, n: usize) -> usize {
        if s.is_empty() {
            return 0;
        }
        linalg::rank_above(s, self.cutoff(s[0], m, n))
    }
}

impl Default for RankTolerance {
    fn default() -> Self {
        RankTolerance { rel_cutoff: 1e-12 }
    }
}

/// Leading `k` singular triplets of `a`.
pub fn truncated_svd(a: &DenseMatrix, k: usize) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    let p = m.min(n);
    if k == 0 || k > p {
        return Err(DfcError::arg(format!("rank {k} must lie in 1..={p}")));
    }
    if p <= 64 || 4 * k >= p {
        return Ok(linalg::thin_svd(a).truncate(k));
    }
    let opts = SubspaceOpts { oversample: 10, max_iter: 200, tol: 1e-12, floor: 0.0, stop_above: None };
    let mut rng = SeededRng::new(0x5eed, 0);
    let (f, converged) = linalg::subspace_svd(a, k, None, opts, &mut rng);
    if converged {
        Ok(f)
    } else {
        Ok(linalg::thin_svd(a).truncate(k))
    }
}

/// Compact SVD of a factored estimate with numerically zero triplets
/// dropped.
pub fn compact_svd(est: &LowRankEstimate, tol: RankTolerance) -> SvdFactors {
    let f = linalg::factored_svd(est.left(), est.right());
    if f.rank() == 0 {
        return f;
    }
    let cutoff = tol.cutoff(f.s[0], est.nrows(), est.ncols());
    linalg::drop_below(f, cutoff)
}

/// Moore-Penrose pseudo-inverse with small singular values zeroed.
pub fn pinv(a: &DenseMatrix, tol: RankTolerance) -> DenseMatrix {
    let (m, n) = a.shape();
    let f = linalg::thin_svd(a);
    if f.rank() == 0 || f.s[0] == 0.0 {
        return DMatrix::zeros(n, m);
    }
    let f = linalg::drop_below(f.clone(), tol.cutoff(f.s[0], m, n));
    let mut v = f.v.clone();
    for (c, s) in f.s.iter().enumerate() {
        v.column_mut(c).unscale_mut(*s);
    }
    v * f.u.transpose()
}

fn check_blocks(blocks: &[LowRankEstimate], plan: &PartitionPlan) -> Result<usize> {
    if blocks.is_empty() || blocks.len() != plan.t() {
        return Err(DfcError::shape(format!("{} blocks for a {}-group plan", blocks.len(), plan.t())));
    }
    let m = blocks[0].nrows();
    for (i, b) in blocks.iter().enumerate() {
        if b.nrows() != m {
            return Err(DfcError::shape(format!("block {i} has {} rows, expected {m}", b.nrows())));
        }
        if b.ncols() != plan.group(i).len() {
            return Err(DfcError::shape(format!(
                "block {i} has {} columns but its group has {}",
                b.ncols(),
                plan.group(i).len()
            )));
        }
    }
    Ok(m)
}

/// `Q Q^T [C_1 ... C_t]` for orthonormal `q`, columns restored to their
/// original order.
fn project_blocks(q: &DMatrix<f64>, blocks: &[LowRankEstimate], plan: &PartitionPlan) -> LowRankEstimate {
    let mut right = DMatrix::zeros(plan.n(), q.ncols());
    for (b, cols) in blocks.iter().zip(plan.groups()) {
        if b.k() == 0 {
            continue;
        }
        let inner = b.right() * b.left().tr_mul(q);
        for (p, &c) in cols.iter().enumerate() {
            right.row_mut(c).copy_from(&inner.row(p));
        }
    }
    LowRankEstimate::from_parts_unchecked(q.clone(), right)
}

/// `[C_1 ... C_t] G` for `G` indexed by original column.
fn apply_blocks(blocks: &[LowRankEstimate], plan: &PartitionPlan, g: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(m, g.ncols());
    for (b, cols) in blocks.iter().zip(plan.groups()) {
        if b.k() == 0 {
            continue;
        }
        let g_blk = g.select_rows(cols);
        y += b.left() * b.right().tr_mul(&g_blk);
    }
    y
}

/// `[C_1 ... C_t]^T Q`, rows in original column order.
fn apply_blocks_t(blocks: &[LowRankEstimate], plan: &PartitionPlan, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(plan.n(), q.ncols());
    for (b, cols) in blocks.iter().zip(plan.groups()) {
        if b.k() == 0 {
            continue;
        }
        let inner = b.right() * b.left().tr_mul(q);
        for (p, &c) in cols.iter().enumerate() {
            z.row_mut(c).copy_from(&inner.row(p));
        }
    }
    z
}

/// Column projection: projects the concatenated blocks onto the column
/// space of `basis`.
pub fn column_project(
    basis: &LowRankEstimate,
    blocks: &[LowRankEstimate],
    plan: &PartitionPlan,
) -> Result<LowRankEstimate> {
    let m = check_blocks(blocks, plan)?;
    if basis.nrows() != m {
        return Err(DfcError::shape(format!("basis has {} rows, blocks have {m}", basis.nrows())));
    }
    let u = compact_svd(basis, RankTolerance::default()).u;
    Ok(project_blocks(&u, blocks, plan))
}

/// Random projection onto the top-`k` left singular vectors of
/// `(M M^T)^q M G`, with `M = [C_1 ... C_t]` and `G` an `n x (k+p)`
/// Gaussian matrix. Each multiplication is followed by a QR
/// re-orthonormalization.
pub fn random_project(
    blocks: &[LowRankEstimate],
    plan: &PartitionPlan,
    params: RpParams,
    rng: &mut SeededRng,
) -> Result<LowRankEstimate> {
    let m = check_blocks(blocks, plan)?;
    let n = plan.n();
    let width = params.k + params.p;
    if params.k == 0 || width > m.min(n) {
        return Err(DfcError::arg(format!("k + p = {width} must lie in 1..={} for a {m}x{n} matrix", m.min(n))));
    }
    let g = rng.gaussian_matrix(n, width);
    let mut y = apply_blocks(blocks, plan, &g, m);
    for _ in 0..params.q {
        let q = linalg::orthonormalize(&y);
        let z = linalg::orthonormalize(&apply_blocks_t(blocks, plan, &q));
        y = apply_blocks(blocks, plan, &z, m);
    }
    let top = linalg::thin_svd(&y);
    if top.rank() == 0 || top.s[0] == 0.0 {
        return Ok(LowRankEstimate::zero(m, n));
    }
    let cutoff = RankTolerance::default().cutoff(top.s[0], m, width);
    let keep = params.k.min(linalg::rank_above(&top.s, cutoff));
    let q = top.u.columns(0, keep).into_owned();
    Ok(project_blocks(&q, blocks, plan))
}

/// Generalized Nyström reconstruction `C W^+ R`.
///
/// `c_hat` holds the sampled columns (`m x l`, column `p` is column
/// `col_idx[p]` of M) and `r_hat` the sampled rows (`d x n`, row `p` is row
/// `row_idx[p]`). `W` is `c_hat` restricted to `row_idx`. The result has
/// rank `rank(W)`, which is reported through [`LowRankEstimate::k`].
pub fn gen_nystrom(
    c_hat: &LowRankEstimate,
    r_hat: &LowRankEstimate,
    row_idx: &[usize],
    col_idx: &[usize],
    tol: RankTolerance,
) -> Result<LowRankEstimate> {
    let (m, l) = c_hat.shape();
    let (d, n) = r_hat.shape();
    if row_idx.len() != d || col_idx.len() != l {
        return Err(DfcError::shape(format!(
            "C is {m}x{l} and R is {d}x{n}, but {} row and {} column indices were given",
            row_idx.len(),
            col_idx.len()
        )));
    }
    if let Some(&i) = row_idx.iter().find(|&&i| i >= m) {
        return Err(DfcError::OutOfBounds { row: i, col: 0, m, n });
    }
    if let Some(&j) = col_idx.iter().find(|&&j| j >= n) {
        return Err(DfcError::OutOfBounds { row: 0, col: j, m, n });
    }
    if c_hat.k() == 0 || r_hat.k() == 0 {
        return Ok(LowRankEstimate::zero(m, n));
    }
    let w_left = c_hat.left().select_rows(row_idx);
    let w = &w_left * c_hat.right().transpose();
    let svd = linalg::thin_svd(&w);
    if svd.rank() == 0 || svd.s[0] == 0.0 {
        return Ok(LowRankEstimate::zero(m, n));
    }
    let svd = linalg::drop_below(svd.clone(), tol.cutoff(svd.s[0], d, l));
    // C V_W S^+  and  (U_W^T R)^T
    let mut v_scaled = svd.v.clone();
    for (c, s) in svd.s.iter().enumerate() {
        v_scaled.column_mut(c).unscale_mut(*s);
    }
    let left = c_hat.left() * c_hat.right().tr_mul(&v_scaled);
    let right = r_hat.right() * r_hat.left().tr_mul(&svd.u);
    Ok(LowRankEstimate::from_parts_unchecked(left, right))
}

/// Plain average of estimates, kept factored by stacking.
///
/// With `recompress_to = Some(r)` the average is cut to its best rank-`r`
/// approximation. Without it, the stack is only compressed (losslessly, up
/// to the default rank tolerance) when its width would exceed `min(m, n)`.
pub fn average_estimates(ests: &[LowRankEstimate], recompress_to: Option<usize>) -> Result<LowRankEstimate> {
    let first = ests.first().ok_or_else(|| DfcError::arg("cannot average an empty list"))?;
    let (m, n) = first.shape();
    if let Some((i, _)) = ests.iter().enumerate().find(|(_, e)| e.shape() != (m, n)) {
        return Err(DfcError::shape(format!("estimate {i} has shape {:?}, expected {m}x{n}", ests[i].shape())));
    }
    let total: usize = ests.iter().map(LowRankEstimate::k).sum();
    let scale = 1.0 / ests.len() as f64;
    let mut left = DMatrix::zeros(m, total);
    let mut right = DMatrix::zeros(n, total);
    let mut at = 0;
    for e in ests {
        let k = e.k();
        left.columns_mut(at, k).copy_from(&(e.left() * scale));
        right.columns_mut(at, k).copy_from(e.right());
        at += k;
    }
    if recompress_to.is_none() && total <= m.min(n) {
        return Ok(LowRankEstimate::from_parts_unchecked(left, right));
    }
    let f = linalg::factored_svd(&left, &right);
    if f.rank() == 0 || f.s[0] == 0.0 {
        return Ok(LowRankEstimate::zero(m, n));
    }
    let cutoff = RankTolerance::default().cutoff(f.s[0], m, n);
    let mut f = linalg::drop_below(f, cutoff);
    if let Some(r) = recompress_to {
        f = f.truncate(r);
    }
    Ok(LowRankEstimate::from_svd(&f))
}
