//! Dense kernels shared by the sketch, solver and diagnostics modules.

use nalgebra::{DMatrix, DVector};

use crate::matio::SvdFactors;
use crate::sampling::SeededRng;

/// Thin SVD of a dense matrix, singular values sorted descending.
pub(crate) fn thin_svd(a: &DMatrix<f64>) -> SvdFactors {
    let (m, n) = a.shape();
    let p = m.min(n);
    if p == 0 {
        return SvdFactors { u: DMatrix::zeros(m, 0), s: DVector::zeros(0), v: DMatrix::zeros(n, 0) };
    }
    // nalgebra's bidiagonal SVD loses accuracy on exactly rank-deficient
    // input (e.g. a 5x5 matrix of ones); faer's is used instead.
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let Ok(svd) = fa.thin_svd() else {
        return SvdFactors { u: DMatrix::zeros(m, 0), s: DVector::zeros(0), v: DMatrix::zeros(n, 0) };
    };
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
    SvdFactors {
        u: DMatrix::from_fn(m, p, |i, c| u[(i, order[c])]),
        s: DVector::from_iterator(p, order.iter().map(|&i| s[i].max(0.0))),
        v: DMatrix::from_fn(n, p, |i, c| v[(i, order[c])]),
    }
}

/// Drops trailing triplets with `s <= cutoff`.
pub(crate) fn drop_below(svd: SvdFactors, cutoff: f64) -> SvdFactors {
    let keep = svd.s.iter().take_while(|&&s| s > cutoff).count();
    svd.truncate(keep)
}

/// Orthonormal basis (Householder QR) for the range of `a`, `a.ncols()`
/// columns. Assumes `a.nrows() >= a.ncols()`.
pub(crate) fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    a.clone().qr().q()
}

/// Compact SVD of `left * right^T` computed from the factors alone:
/// QR of each side, then an SVD of the small core `R_l R_r^T`.
pub(crate) fn factored_svd(left: &DMatrix<f64>, right: &DMatrix<f64>) -> SvdFactors {
    let (m, n, k) = (left.nrows(), right.nrows(), left.ncols());
    if k == 0 {
        return SvdFactors { u: DMatrix::zeros(m, 0), s: DVector::zeros(0), v: DMatrix::zeros(n, 0) };
    }
    if k > m || k > n {
        // wide factors: the core would be larger than the matrix itself
        return thin_svd(&(left * right.transpose()));
    }
    let ql = left.clone().qr();
    let qr = right.clone().qr();
    let core = ql.r() * qr.r().transpose();
    let small = thin_svd(&core);
    SvdFactors { u: ql.q() * small.u, s: small.s, v: qr.q() * small.v }
}

/// A matrix known only through products with blocks of vectors.
pub(crate) trait LinOp {
    fn shape(&self) -> (usize, usize);
    /// `A X`
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    /// `A^T X`
    fn apply_t(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    fn to_dense(&self) -> DMatrix<f64>;
}

impl LinOp for DMatrix<f64> {
    fn shape(&self) -> (usize, usize) {
        DMatrix::shape(self)
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self * x
    }

    fn apply_t(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.tr_mul(x)
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

/// `left * right^T + S` with `S` given as coordinate triplets.
pub(crate) struct LowRankSparse<'a> {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub rows: &'a [usize],
    pub cols: &'a [usize],
    pub vals: Vec<f64>,
}

impl LinOp for LowRankSparse<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.left.nrows(), self.right.nrows())
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let xt = x.transpose();
        let mut st = DMatrix::zeros(x.ncols(), self.left.nrows());
        for ((&i, &j), &v) in self.rows.iter().zip(self.cols).zip(&self.vals) {
            st.column_mut(i).axpy(v, &xt.column(j), 1.0);
        }
        &self.left * self.right.tr_mul(x) + st.transpose()
    }

    fn apply_t(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let xt = x.transpose();
        let mut st = DMatrix::zeros(x.ncols(), self.right.nrows());
        for ((&i, &j), &v) in self.rows.iter().zip(self.cols).zip(&self.vals) {
            st.column_mut(j).axpy(v, &xt.column(i), 1.0);
        }
        &self.right * self.left.tr_mul(x) + st.transpose()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut out = &self.left * self.right.transpose();
        for ((&i, &j), &v) in self.rows.iter().zip(self.cols).zip(&self.vals) {
            out[(i, j)] += v;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SubspaceOpts {
    pub oversample: usize,
    pub max_iter: usize,
    /// Converged when `|A v_i - s_i u_i| <= tol * s_1` for every tracked triplet.
    pub tol: f64,
    /// Only triplets with `s_i > floor` are tracked for convergence.
    pub floor: f64,
    /// Return early once the `k`-th Ritz value exceeds this. Ritz values
    /// bound the true singular values from below, so the caller knows the
    /// block is too narrow.
    pub stop_above: Option<f64>,
}

/// Top-`k` singular triplets by block subspace iteration with
/// re-orthonormalization at every step.
///
/// `start` seeds the right subspace (warm start); missing columns are drawn
/// from `rng`. Returns `(factors, converged)`.
pub(crate) fn subspace_svd<A: LinOp + ?Sized>(
    a: &A,
    k: usize,
    start: Option<&DMatrix<f64>>,
    opts: SubspaceOpts,
    rng: &mut SeededRng,
) -> (SvdFactors, bool) {
    let (m, n) = a.shape();
    let b = (k + opts.oversample).min(m.min(n));
    let k = k.min(b);
    let mut v = DMatrix::zeros(n, b);
    let warm = start.map_or(0, |s| s.ncols().min(b));
    if let Some(s) = start {
        v.columns_mut(0, warm).copy_from(&s.columns(0, warm));
    }
    if warm < b {
        v.columns_mut(warm, b - warm).copy_from(&rng.gaussian_matrix(n, b - warm));
    }
    let mut av = a.apply(&v);
    let mut best = None;
    for _ in 0..opts.max_iter.max(1) {
        let q = orthonormalize(&av);
        let z = a.apply_t(&q);
        let small = thin_svd(&z);
        let u = &q * &small.v;
        let s = small.s;
        v = small.u;
        av = a.apply(&v);
        let s1 = s[0];
        let mut converged = true;
        if s1 > 0.0 {
            for i in 0..k {
                if s[i] <= opts.floor {
                    break;
                }
                let res = (av.column(i) - u.column(i) * s[i]).norm();
                if res > opts.tol * s1 {
                    converged = false;
                    break;
                }
            }
        }
        let narrow = opts.stop_above.is_some_and(|c| s[k - 1] > c);
        let f = SvdFactors { u, s, v: v.clone() };
        if narrow {
            return (f.truncate(k), false);
        }
        if converged {
            return (f.truncate(k), true);
        }
        best = Some(f);
    }
    (best.expect("at least one iteration").truncate(k), false)
}

/// Numerical rank: count of singular values above `cutoff`.
pub(crate) fn rank_above(s: &DVector<f64>, cutoff: f64) -> usize {
    s.iter().filter(|&&x| x > cutoff).count()
}
