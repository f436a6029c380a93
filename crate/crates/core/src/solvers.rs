//! Base factorization algorithms for the F step.
//!
//! Both solvers are accelerated proximal gradient methods on penalized
//! objectives, with Nesterov extrapolation and continuation on the penalty
//! weight `mu`:
//!
//! * [`apg_mc`]: `mu |L|_* + 1/2 |P_Ω(L - M)|_F^2`
//! * [`apg_rmf`]: `mu |L|_* + lambda mu |S|_1 + 1/2 |M - L - S|_F^2`
//!
//! Default knobs follow the published APG codes: `mu_0 = 0.99 |P_Ω(M)|_2`,
//! decay `0.7`, floor `1e-4 mu_0`, relative tolerance `1e-4`, 500 iterations.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{DfcError, Result};
use crate::linalg::{self, LinOp, LowRankSparse, SubspaceOpts};
use crate::matio::{densify, DenseMatrix, Entry, LowRankEstimate, ObservedMatrix, SvdFactors};
use crate::sampling::SeededRng;

/// Fixed stream for the random start vectors of the partial SVDs; solver
/// runs are deterministic functions of their input.
const SOLVER_SEED: u64 = 0x00A9_C0DE;

/// Knobs for both APG solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApgConfig {
    pub max_iters: usize,
    /// Stop once `|X_{k+1} - X_k|_F / |X_{k+1}|_F < rel_tol` at the floor weight.
    pub rel_tol: f64,
    /// Initial weight; `None` means `0.99 |P_Ω(M)|_2`.
    pub mu_init: Option<f64>,
    /// Terminal weight; `None` derives it from `mu_floor_ratio` and `noise_std`.
    pub mu_floor: Option<f64>,
    pub mu_floor_ratio: f64,
    pub mu_decay: f64,
    /// Backtracking on the Lipschitz estimate (matrix completion only).
    pub line_search: bool,
    /// Entrywise noise level. When set, the floor is raised to the expected
    /// spectral norm of the observed noise, `sigma (sqrt(m) + sqrt(n)) sqrt(|Ω|/mn)`.
    pub noise_std: Option<f64>,
}

impl Default for ApgConfig {
    fn default() -> Self {
        ApgConfig {
            max_iters: 500,
            rel_tol: 1e-4,
            mu_init: None,
            mu_floor: None,
            mu_floor_ratio: 1e-4,
            mu_decay: 0.7,
            line_search: false,
            noise_std: None,
        }
    }
}

impl ApgConfig {
    /// Settings for exactly low-rank, noise-free data: the penalty is driven
    /// close to zero so the shrinkage bias vanishes.
    pub fn noiseless() -> Self {
        ApgConfig { mu_floor_ratio: 1e-10, rel_tol: 1e-10, ..Default::default() }
    }

    /// Robust factorization defaults: slower continuation (0.9). With the
    /// matrix-completion decay of 0.7 the weight reaches its floor before
    /// the low-rank/sparse split settles, and the split then barely moves.
    pub fn rmf() -> Self {
        ApgConfig { mu_decay: 0.9, ..Default::default() }
    }

    /// [`rmf`](Self::rmf) with the noiseless floor and tolerance.
    pub fn rmf_noiseless() -> Self {
        ApgConfig { mu_decay: 0.9, ..Self::noiseless() }
    }

    pub fn with_noise_std(mut self, sigma: f64) -> Self {
        self.noise_std = Some(sigma);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(DfcError::arg("max_iters must be at least 1"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(DfcError::arg("rel_tol must lie in (0, 1)"));
        }
        if !(self.mu_decay > 0.0 && self.mu_decay < 1.0) {
            return Err(DfcError::arg("mu_decay must lie in (0, 1)"));
        }
        if !(self.mu_floor_ratio > 0.0 && self.mu_floor_ratio <= 1.0) {
            return Err(DfcError::arg("mu_floor_ratio must lie in (0, 1]"));
        }
        if let (Some(init), Some(floor)) = (self.mu_init, self.mu_floor) {
            if floor > init {
                return Err(DfcError::arg("mu_floor must not exceed mu_init"));
            }
        }
        if self.mu_init.is_some_and(|x| !(x >= 0.0)) || self.mu_floor.is_some_and(|x| !(x > 0.0)) {
            return Err(DfcError::arg("mu_init must be non-negative and mu_floor positive"));
        }
        if self.noise_std.is_some_and(|s| !(s >= 0.0)) {
            return Err(DfcError::arg("noise_std must be non-negative"));
        }
        Ok(())
    }

    fn floor_for(&self, mu0: f64, m: usize, n: usize, density: f64) -> f64 {
        let floor = match self.mu_floor {
            Some(f) => f,
            None => {
                let base = self.mu_floor_ratio * mu0;
                match self.noise_std {
                    Some(sigma) => {
                        let noise = sigma * ((m as f64).sqrt() + (n as f64).sqrt()) * density.sqrt();
                        base.max(noise)
                    }
                    None => base,
                }
            }
        };
        floor.min(mu0)
    }
}

/// Outcome of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub objective: f64,
    pub residual: f64,
    pub rank: usize,
    pub wall_ms: f64,
    pub converged: bool,
    pub mu_final: f64,
}

/// Sparse outlier matrix `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierEstimate {
    pub m: usize,
    pub n: usize,
    pub entries: Vec<Entry>,
}

impl OutlierEstimate {
    pub fn from_dense(s: &DenseMatrix) -> Self {
        let (m, n) = s.shape();
        let mut entries = Vec::new();
        for j in 0..n {
            for i in 0..m {
                let v = s[(i, j)];
                if v != 0.0 {
                    entries.push(Entry::new(i, j, v));
                }
            }
        }
        OutlierEstimate { m, n, entries }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DMatrix::zeros(self.m, self.n);
        for e in &self.entries {
            out[(e.row, e.col)] = e.value;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn shrink(svd: SvdFactors, tau: f64) -> SvdFactors {
    let keep = svd.s.iter().take_while(|&&s| s > tau).count();
    let mut f = svd.truncate(keep);
    f.s.apply(|s| *s -= tau);
    f
}

/// Singular value thresholding: the proximal map of `tau |.|_*`.
pub fn svt(a: &DenseMatrix, tau: f64) -> LowRankEstimate {
    let f = shrink(linalg::thin_svd(a), tau.max(0.0));
    LowRankEstimate::from_svd(&f)
}

/// Entrywise `sign(a) max(|a| - tau, 0)`.
pub fn soft_threshold(a: &DenseMatrix, tau: f64) -> DenseMatrix {
    a.map(|x| x.signum() * (x.abs() - tau).max(0.0))
}

/// `svt` on a partial SVD: start at `rank_hint + 5` triplets and widen by
/// half until the smallest computed singular value is at or below `tau`.
fn svt_partial<A: LinOp + ?Sized>(
    a: &A,
    tau: f64,
    rank_hint: usize,
    warm: Option<&DMatrix<f64>>,
    rng: &mut SeededRng,
) -> SvdFactors {
    let (m, n) = a.shape();
    let p = m.min(n);
    let mut want = (rank_hint + 5).min(p);
    let mut start = warm.cloned();
    loop {
        if p <= 40 || 3 * want >= p {
            return shrink(linalg::thin_svd(&a.to_dense()), tau);
        }
        // a few warm-started steps per call; the subspace keeps refining
        // across outer iterations
        let opts = SubspaceOpts { oversample: 5, max_iter: 5, tol: 1e-9, floor: tau, stop_above: Some(tau) };
        let (f, _) = linalg::subspace_svd(a, want, start.as_ref(), opts, rng);
        if f.s[want - 1] <= tau {
            return shrink(f, tau);
        }
        start = Some(f.v);
        want = (want + (want / 2).max(5)).min(p);
    }
}

fn spectral_norm<A: LinOp + ?Sized>(a: &A, rng: &mut SeededRng) -> f64 {
    let (m, n) = a.shape();
    if m.min(n) <= 40 {
        return linalg::thin_svd(&a.to_dense()).s.get(0).copied().unwrap_or(0.0);
    }
    let opts = SubspaceOpts { oversample: 5, max_iter: 100, tol: 1e-8, floor: 0.0, stop_above: None };
    linalg::subspace_svd(a, 1, None, opts, rng).0.s[0]
}

/// Current iterate `U diag(s) V^T`, kept factored.
#[derive(Clone)]
struct Iterate {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

impl Iterate {
    fn zero(m: usize, n: usize) -> Self {
        Iterate { u: DMatrix::zeros(m, 0), s: DVector::zeros(0), v: DMatrix::zeros(n, 0) }
    }

    fn from_svd(f: SvdFactors) -> Self {
        Iterate { u: f.u, s: f.s, v: f.v }
    }

    fn rank(&self) -> usize {
        self.s.len()
    }

    fn nuclear(&self) -> f64 {
        self.s.sum()
    }

    fn norm_sq(&self) -> f64 {
        self.s.norm_squared()
    }

    /// `U diag(s)`
    fn scaled_u(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for k in 0..self.rank() {
            us.column_mut(k).scale_mut(self.s[k]);
        }
        us
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        (0..self.rank()).map(|c| self.u[(i, c)] * self.s[c] * self.v[(j, c)]).sum()
    }

    /// `<self, other>_F` from the factors.
    fn inner(&self, other: &Iterate) -> f64 {
        if self.rank() == 0 || other.rank() == 0 {
            return 0.0;
        }
        let uu = self.u.tr_mul(&other.u);
        let vv = self.v.tr_mul(&other.v);
        let mut acc = 0.0;
        for a in 0..self.rank() {
            for b in 0..other.rank() {
                acc += self.s[a] * other.s[b] * uu[(a, b)] * vv[(a, b)];
            }
        }
        acc
    }

    fn dist_sq(&self, other: &Iterate) -> f64 {
        (self.norm_sq() + other.norm_sq() - 2.0 * self.inner(other)).max(0.0)
    }

    fn into_estimate(self) -> LowRankEstimate {
        LowRankEstimate::from_svd(&SvdFactors { u: self.u, s: self.s, v: self.v })
    }
}

/// `(1 + beta) X - beta X_prev` as a pair of factors `(left, right)`.
fn extrapolate(x: &Iterate, prev: &Iterate, beta: f64, m: usize, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = x.rank() + prev.rank();
    let mut left = DMatrix::zeros(m, k);
    let mut right = DMatrix::zeros(n, k);
    for c in 0..x.rank() {
        left.set_column(c, &(x.u.column(c) * ((1.0 + beta) * x.s[c])));
        right.set_column(c, &x.v.column(c));
    }
    for c in 0..prev.rank() {
        left.set_column(x.rank() + c, &(prev.u.column(c) * (-beta * prev.s[c])));
        right.set_column(x.rank() + c, &prev.v.column(c));
    }
    (left, right)
}

/// `<l1 r1^T, l2 r2^T>_F` from the factors.
fn factored_inner(l1: &DMatrix<f64>, r1: &DMatrix<f64>, l2: &DMatrix<f64>, r2: &DMatrix<f64>) -> f64 {
    if l1.ncols() == 0 || l2.ncols() == 0 {
        return 0.0;
    }
    l1.tr_mul(l2).component_mul(&r1.tr_mul(r2)).sum()
}

fn next_momentum(t: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
}

/// `1/2 |P_Ω(X - M)|_F^2` for a factored iterate.
fn mc_misfit(x: &Iterate, obs: &ObservedMatrix) -> f64 {
    0.5 * obs.entries().iter().map(|e| (x.entry(e.row, e.col) - e.value).powi(2)).sum::<f64>()
}

/// Nuclear-norm regularized least squares over the observed entries.
pub fn apg_mc(obs: &ObservedMatrix, cfg: &ApgConfig) -> Result<(LowRankEstimate, SolveReport)> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(DfcError::arg("no observed entries"));
    }
    let start = Instant::now();
    let (m, n) = obs.shape();
    let mut rng = SeededRng::new(SOLVER_SEED, 0);
    let rows: Vec<usize> = obs.entries().iter().map(|e| e.row).collect();
    let cols: Vec<usize> = obs.entries().iter().map(|e| e.col).collect();
    let values: Vec<f64> = obs.entries().iter().map(|e| e.value).collect();
    let zero_obj = 0.5 * values.iter().map(|v| v * v).sum::<f64>();
    let mu0 = cfg.mu_init.unwrap_or_else(|| {
        let b = LowRankSparse {
            left: DMatrix::zeros(m, 0),
            right: DMatrix::zeros(n, 0),
            rows: &rows,
            cols: &cols,
            vals: values.clone(),
        };
        0.99 * spectral_norm(&b, &mut rng)
    });
    if mu0 == 0.0 {
        let report = SolveReport {
            iterations: 0,
            objective: 0.0,
            residual: 0.0,
            rank: 0,
            wall_ms: ms_since(start),
            converged: true,
            mu_final: 0.0,
        };
        return Ok((LowRankEstimate::zero(m, n), report));
    }
    let floor = cfg.floor_for(mu0, m, n, obs.density());

    let mut x = Iterate::zero(m, n);
    let mut x_prev = Iterate::zero(m, n);
    let (mut t, mut t_prev) = (1.0, 1.0);
    let mut mu = mu0;
    let mut lip: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let beta = (t_prev - 1.0) / t;
        // Y is kept factored; only its observed entries are formed
        let (left, right) = extrapolate(&x, &x_prev, beta, m, n);
        let (lt, rt) = (left.transpose(), right.transpose());
        let y_obs: Vec<f64> = rows.iter().zip(&cols).map(|(&i, &j)| lt.column(i).dot(&rt.column(j))).collect();
        // gradient of the smooth term at Y is P_Ω(Y - M)
        let grad: Vec<f64> = y_obs.iter().zip(&values).map(|(y, v)| y - v).collect();
        let mut step = if cfg.line_search { (0.8 * lip).max(1e-3) } else { 1.0 };
        let x_new = loop {
            let g = LowRankSparse {
                left: left.clone(),
                right: right.clone(),
                rows: &rows,
                cols: &cols,
                vals: grad.iter().map(|d| -d / step).collect(),
            };
            let cand = Iterate::from_svd(svt_partial(&g, mu / step, x.rank(), Some(&x.v), &mut rng));
            if !cfg.line_search || step >= 1.0 {
                break cand;
            }
            // sufficient decrease: f(X) <= f(Y) + <grad, X - Y> + step/2 |X - Y|^2
            let f_y = 0.5 * grad.iter().map(|d| d * d).sum::<f64>();
            let f_x = mc_misfit(&cand, obs);
            let mut lin = 0.0;
            for (((&i, &j), d), y) in rows.iter().zip(&cols).zip(&grad).zip(&y_obs) {
                lin += d * (cand.entry(i, j) - y);
            }
            let us = cand.scaled_u();
            let diff_sq = (cand.norm_sq() + factored_inner(&left, &right, &left, &right)
                - 2.0 * factored_inner(&us, &cand.v, &left, &right))
            .max(0.0);
            if f_x <= f_y + lin + 0.5 * step * diff_sq + 1e-12 * f_y.max(1.0) {
                break cand;
            }
            step = (step / 0.8).min(1.0);
        };
        lip = step;

        let change = x_new.dist_sq(&x).sqrt();
        let scale = x_new.norm_sq().sqrt().max(x.norm_sq().sqrt());
        let rel = if scale > 0.0 { change / scale } else { 0.0 };
        x_prev = std::mem::replace(&mut x, x_new);
        t_prev = t;
        t = next_momentum(t);
        let at_floor = mu <= floor;
        mu = (mu * cfg.mu_decay).max(floor);
        if at_floor && rel < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    let mut objective = floor * x.nuclear() + mc_misfit(&x, obs);
    if objective > zero_obj {
        x = Iterate::zero(m, n);
        objective = zero_obj;
    }
    let residual = (2.0 * mc_misfit(&x, obs)).sqrt();
    let report = SolveReport {
        iterations,
        objective,
        residual,
        rank: x.rank(),
        wall_ms: ms_since(start),
        converged,
        mu_final: floor,
    };
    Ok((x.into_estimate(), report))
}

/// Default outlier weight `1 / sqrt(max(m, n))`.
pub fn default_lambda(m: usize, n: usize) -> f64 {
    1.0 / (m.max(n) as f64).sqrt()
}

/// Low-rank plus sparse decomposition of a fully observed matrix.
///
/// The reported objective is `|L|_* + lambda |S|_1 + |M - L - S|_F^2 / (2 mu)`
/// at the floor weight.
pub fn apg_rmf(
    mfull: &DenseMatrix,
    lambda: f64,
    cfg: &ApgConfig,
) -> Result<(LowRankEstimate, OutlierEstimate, SolveReport)> {
    cfg.validate()?;
    if !(lambda > 0.0) {
        return Err(DfcError::arg("lambda must be positive"));
    }
    let start = Instant::now();
    let (m, n) = mfull.shape();
    let mut rng = SeededRng::new(SOLVER_SEED, 0);
    let mu0 = cfg.mu_init.unwrap_or_else(|| 0.99 * spectral_norm(mfull, &mut rng));
    if mu0 == 0.0 {
        let report = SolveReport {
            iterations: 0,
            objective: 0.0,
            residual: mfull.norm(),
            rank: 0,
            wall_ms: ms_since(start),
            converged: true,
            mu_final: 0.0,
        };
        let s = OutlierEstimate { m, n, entries: vec![] };
        return Ok((LowRankEstimate::zero(m, n), s, report));
    }
    let floor = cfg.floor_for(mu0, m, n, 1.0);

    let mut l = Iterate::zero(m, n);
    let mut l_prev = Iterate::zero(m, n);
    let mut s: DenseMatrix = DMatrix::zeros(m, n);
    let mut s_prev: DenseMatrix = DMatrix::zeros(m, n);
    let (mut t, mut t_prev) = (1.0, 1.0);
    let mut mu = mu0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let beta = (t_prev - 1.0) / t;
        let (left, right) = extrapolate(&l, &l_prev, beta, m, n);
        let yl = left * right.transpose();
        let ys = &s * (1.0 + beta) - &s_prev * beta;
        // joint gradient has Lipschitz constant 2
        let half_r = (&yl + &ys - mfull) * 0.5;
        let gl = &yl - &half_r;
        let gs = &ys - &half_r;
        let l_new = Iterate::from_svd(svt_partial(&gl, mu / 2.0, l.rank(), Some(&l.v), &mut rng));
        let s_new = soft_threshold(&gs, lambda * mu / 2.0);

        let change = (l_new.dist_sq(&l) + (&s_new - &s).norm_squared()).sqrt();
        let scale = (l_new.norm_sq() + s_new.norm_squared()).sqrt().max((l.norm_sq() + s.norm_squared()).sqrt());
        let rel = if scale > 0.0 { change / scale } else { 0.0 };
        l_prev = std::mem::replace(&mut l, l_new);
        s_prev = std::mem::replace(&mut s, s_new);
        t_prev = t;
        t = next_momentum(t);
        let at_floor = mu <= floor;
        mu = (mu * cfg.mu_decay).max(floor);
        if at_floor && rel < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    let rmf_objective = |l: &Iterate, s: &DenseMatrix| -> (f64, f64) {
        let mut r = mfull - s;
        if l.rank() > 0 {
            let mut us = l.u.clone();
            for k in 0..l.rank() {
                us.column_mut(k).scale_mut(l.s[k]);
            }
            r -= us * l.v.transpose();
        }
        let resid = r.norm();
        let l1: f64 = s.iter().map(|x| x.abs()).sum();
        (l.nuclear() + lambda * l1 + resid * resid / (2.0 * floor), resid)
    };
    let (mut objective, mut residual) = rmf_objective(&l, &s);
    let zero_obj = mfull.norm_squared() / (2.0 * floor);
    if objective > zero_obj {
        l = Iterate::zero(m, n);
        s = DMatrix::zeros(m, n);
        objective = zero_obj;
        residual = mfull.norm();
    }
    let report = SolveReport {
        iterations,
        objective,
        residual,
        rank: l.rank(),
        wall_ms: ms_since(start),
        converged,
        mu_final: floor,
    };
    Ok((l.into_estimate(), OutlierEstimate::from_dense(&s), report))
}

pub(crate) fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// A base algorithm for the F step.
pub trait BaseSolver: Sync {
    fn factor(&self, block: &ObservedMatrix) -> Result<(LowRankEstimate, SolveReport)>;
}

/// [`apg_mc`] as a base solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct McSolver {
    pub cfg: ApgConfig,
}

impl BaseSolver for McSolver {
    fn factor(&self, block: &ObservedMatrix) -> Result<(LowRankEstimate, SolveReport)> {
        if block.is_empty() {
            // a starved block carries no information
            let report = SolveReport {
                iterations: 0,
                objective: 0.0,
                residual: 0.0,
                rank: 0,
                wall_ms: 0.0,
                converged: true,
                mu_final: 0.0,
            };
            return Ok((LowRankEstimate::zero(block.nrows(), block.ncols()), report));
        }
        apg_mc(block, &self.cfg)
    }
}

/// [`apg_rmf`] as a base solver; the block is densified (unobserved cells
/// read as zero) and the outlier part is discarded.
#[derive(Debug, Clone, Copy, Default)]
pub struct RmfSolver {
    pub cfg: ApgConfig,
    /// `None` uses [`default_lambda`] of the block's own shape.
    pub lambda: Option<f64>,
}

impl BaseSolver for RmfSolver {
    fn factor(&self, block: &ObservedMatrix) -> Result<(LowRankEstimate, SolveReport)> {
        let (m, n) = block.shape();
        let lambda = self.lambda.unwrap_or_else(|| default_lambda(m, n));
        let (l, _, report) = apg_rmf(&densify(block), lambda, &self.cfg)?;
        Ok((l, report))
    }
}
