//! Coherence and spikiness statistics.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DfcError, Result};
use crate::linalg;
use crate::matio::{materialize, DenseMatrix, LowRankEstimate};
use crate::sketch::{compact_svd, RankTolerance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherenceProfile {
    pub r: usize,
    pub mu0_u: f64,
    pub mu0_v: f64,
    pub mu1: f64,
    pub alpha: f64,
}

impl CoherenceProfile {
    /// `max(mu0(U), mu0(V))`.
    pub fn mu0(&self) -> f64 {
        self.mu0_u.max(self.mu0_v)
    }

    /// Rank `r`, `mu0 <= mu` and `mu1 <= sqrt(mu)`.
    pub fn is_coherent(&self, mu: f64, r: usize) -> bool {
        self.r == r && self.mu0() <= mu && self.mu1 <= mu.sqrt()
    }
}

/// `(n / r) max_i |V_(i)|^2` for `V` with orthonormal columns.
pub fn mu0(v: &DMatrix<f64>) -> Result<f64> {
    let (n, r) = v.shape();
    if r == 0 || n == 0 {
        return Err(DfcError::Precondition("coherence of an empty basis".into()));
    }
    let gram_err = (v.tr_mul(v) - DMatrix::<f64>::identity(r, r)).norm();
    if gram_err > 1e-8 * r as f64 {
        return Err(DfcError::Precondition(format!("columns are not orthonormal (|V^T V - I|_F = {gram_err:e})")));
    }
    let max_row = v.row_iter().map(|row| row.norm_squared()).fold(0.0, f64::max);
    Ok(n as f64 / r as f64 * max_row)
}

fn mu1_from(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let (m, n, r) = (u.nrows(), v.nrows(), u.ncols());
    let uv = u * v.transpose();
    let max = uv.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    (m as f64 * n as f64 / r as f64).sqrt() * max
}

/// `sqrt(mn / r) max_ij |(U V^T)_ij|` from the compact SVD.
pub fn mu1(l: &LowRankEstimate) -> Result<f64> {
    let f = dense_compact_svd(&materialize(l), RankTolerance::default())?;
    Ok(mu1_from(&f.u, &f.v))
}

/// `sqrt(mn) |A|_max / |A|_F`.
pub fn spikiness(a: &DenseMatrix) -> Result<f64> {
    let fro = a.norm();
    if fro == 0.0 {
        return Err(DfcError::Undefined("spikiness"));
    }
    let max = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    Ok((a.nrows() as f64 * a.ncols() as f64).sqrt() * max / fro)
}

fn dense_compact_svd(a: &DenseMatrix, tol: RankTolerance) -> Result<crate::matio::SvdFactors> {
    let f = linalg::thin_svd(a);
    if f.rank() == 0 || f.s[0] == 0.0 {
        return Err(DfcError::Undefined("coherence"));
    }
    let cutoff = tol.cutoff(f.s[0], a.nrows(), a.ncols());
    Ok(linalg::drop_below(f, cutoff))
}

/// All statistics at the numerical rank of `l`.
pub fn coherence_profile(l: &LowRankEstimate, tol: RankTolerance) -> Result<CoherenceProfile> {
    let dense = materialize(l);
    let f = dense_compact_svd(&dense, tol)?;
    Ok(CoherenceProfile {
        r: f.rank(),
        mu0_u: mu0(&f.u)?,
        mu0_v: mu0(&f.v)?,
        mu1: mu1_from(&f.u, &f.v),
        alpha: spikiness(&dense)?,
    })
}

/// Profile computed from the factors only, for estimates too large to
/// materialize cheaply. Spikiness still scans every entry.
pub fn coherence_profile_factored(l: &LowRankEstimate, tol: RankTolerance) -> Result<CoherenceProfile> {
    let f = compact_svd(l, tol);
    if f.rank() == 0 {
        return Err(DfcError::Undefined("coherence"));
    }
    let dense = materialize(l);
    Ok(CoherenceProfile {
        r: f.rank(),
        mu0_u: mu0(&f.u)?,
        mu0_v: mu0(&f.v)?,
        mu1: mu1_from(&f.u, &f.v),
        alpha: spikiness(&dense)?,
    })
}
