//! Synthetic instances: a random rank-`r` product with unit-variance
//! entries, uniform observation or outlier supports, Gaussian noise.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{DfcError, Result};
use crate::matio::{materialize, DenseMatrix, Entry, LowRankEstimate, ObservedMatrix};
use crate::sampling::{sample_without_replacement, SeededRng};
use crate::solvers::OutlierEstimate;

/// Noisy matrix-completion instance.
#[derive(Debug, Clone)]
pub struct McInstance {
    pub l0: LowRankEstimate,
    pub obs: ObservedMatrix,
    pub sigma: f64,
    pub s: usize,
}

/// Noisy robust-factorization instance, `M = L0 + S0 + Z0`.
#[derive(Debug, Clone)]
pub struct RmfInstance {
    pub l0: LowRankEstimate,
    pub s0: OutlierEstimate,
    pub m: DenseMatrix,
    pub s: usize,
}

/// `A B^T` with `A: m x r`, `B: n x r` i.i.d. normal with standard deviation
/// `r^(-1/4)`, so every product entry has unit variance.
pub fn gen_low_rank(m: usize, n: usize, r: usize, rng: &mut SeededRng) -> Result<LowRankEstimate> {
    if m == 0 || n == 0 || r == 0 || r > m.min(n) {
        return Err(DfcError::arg(format!("rank {r} must lie in 1..={} for a {m}x{n} matrix", m.min(n))));
    }
    let std = (r as f64).powf(-0.25);
    let a = rng.gaussian_matrix(m, r) * std;
    let b = rng.gaussian_matrix(n, r) * std;
    LowRankEstimate::new(a, b)
}

/// `s` distinct cells of an `m x n` grid, as `(row, col)` in draw order.
fn sample_cells(m: usize, n: usize, s: usize, rng: &mut SeededRng) -> Result<Vec<(usize, usize)>> {
    let cells = m.checked_mul(n).ok_or_else(|| DfcError::arg("matrix too large"))?;
    if s > cells {
        return Err(DfcError::arg(format!("cannot pick {s} of {cells} cells")));
    }
    if s == 0 {
        return Ok(vec![]);
    }
    Ok(sample_without_replacement(cells, s, rng)?.into_iter().map(|c| (c % m, c / m)).collect())
}

pub fn gen_mc_instance(m: usize, n: usize, r: usize, s: usize, sigma: f64, rng: &mut SeededRng) -> Result<McInstance> {
    if s == 0 {
        return Err(DfcError::arg("at least one entry must be revealed"));
    }
    if !(sigma >= 0.0) {
        return Err(DfcError::arg("noise level must be non-negative"));
    }
    let l0 = gen_low_rank(m, n, r, rng)?;
    let cells = sample_cells(m, n, s, rng)?;
    let entries = cells
        .into_iter()
        .map(|(i, j)| {
            let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
            Entry::new(i, j, l0.entry(i, j) + noise)
        })
        .collect();
    Ok(McInstance { l0, obs: ObservedMatrix::new(m, n, entries)?, sigma, s })
}

pub fn gen_rmf_instance(
    m: usize,
    n: usize,
    r: usize,
    s: usize,
    sigma: f64,
    rng: &mut SeededRng,
) -> Result<RmfInstance> {
    if !(sigma >= 0.0) {
        return Err(DfcError::arg("noise level must be non-negative"));
    }
    let l0 = gen_low_rank(m, n, r, rng)?;
    let cells = sample_cells(m, n, s, rng)?;
    let mut outliers = DMatrix::zeros(m, n);
    let mut entries = Vec::with_capacity(s);
    for (i, j) in cells {
        let v: f64 = rng.random_range(0.0..1.0);
        outliers[(i, j)] = v;
        entries.push(Entry::new(i, j, v));
    }
    entries.sort_by_key(|e| (e.col, e.row));
    let mut full = materialize(&l0) + outliers;
    if sigma > 0.0 {
        for x in full.iter_mut() {
            *x += sigma * rng.normal();
        }
    }
    Ok(RmfInstance { l0, s0: OutlierEstimate { m, n, entries }, m: full, s })
}
