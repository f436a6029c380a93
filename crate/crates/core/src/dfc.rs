//! Divide-Factor-Combine orchestration.
//!
//! Each run has three phases:
//!
//! * **divide**: split the observed matrix into column blocks (projection
//!   and random-projection variants) or sample a column and a row
//!   submatrix (Nyström variant);
//! * **factor**: run the base solver on every submatrix, concurrently, on
//!   up to `workers` threads;
//! * **combine**: merge the factored block estimates with column
//!   projection, random projection or the generalized Nyström method.
//!
//! Random draws are keyed by `(seed, stream)` where the stream identifies
//! the purpose (partition, row sample, ensemble member), never the thread,
//! so results are identical for any worker count.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DfcError, Result};
use crate::matio::{LowRankEstimate, ObservedMatrix};
use crate::parallel::map_tasks;
use crate::sampling::{
    extract_columns, extract_rows, partition_columns, sample_without_replacement, PartitionPlan, SeededRng,
    STREAM_COLUMNS, STREAM_PARTITION, STREAM_ROWS,
};
use crate::sketch::{average_estimates, column_project, gen_nystrom, random_project, RankTolerance, RpParams};
use crate::solvers::{ms_since, ApgConfig, BaseSolver, McSolver, RmfSolver, SolveReport};

/// Streams for the Gaussian test matrices of the random-projection combine
/// step start here; ensemble member `e` uses `STREAM_PROJECTION + e`.
pub const STREAM_PROJECTION: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Proj,
    Rp,
    Nys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Task {
    /// Noisy matrix completion.
    Mc,
    /// Noisy robust matrix factorization.
    Rmf,
}

#[derive(Debug, Clone, Copy)]
pub struct DfcConfig {
    pub variant: Variant,
    pub ensemble: bool,
    /// Column groups (projection variants, and the Nyström ensemble).
    pub t: usize,
    /// Sampled columns (Nyström).
    pub l: usize,
    /// Sampled rows (Nyström).
    pub d: usize,
    /// `k` is ignored; the combine step picks it from the block ranks.
    pub rp: RpParams,
    pub seed: u64,
    pub solver_cfg: ApgConfig,
    pub task: Task,
    pub workers: usize,
    pub tol: RankTolerance,
}

impl DfcConfig {
    pub fn new(variant: Variant, task: Task) -> Self {
        DfcConfig {
            variant,
            ensemble: false,
            t: 1,
            l: 1,
            d: 1,
            rp: RpParams::default(),
            seed: 0,
            solver_cfg: match task {
                Task::Mc => ApgConfig::default(),
                Task::Rmf => ApgConfig::rmf(),
            },
            task,
            workers: 1,
            tol: RankTolerance::default(),
        }
    }

    /// The task's default base solver with this config's APG settings.
    pub fn base_solver(&self) -> Box<dyn BaseSolver> {
        match self.task {
            Task::Mc => Box::new(McSolver { cfg: self.solver_cfg }),
            Task::Rmf => Box::new(RmfSolver { cfg: self.solver_cfg, lambda: None }),
        }
    }

    fn validate(&self, want: Variant, m: usize, n: usize) -> Result<()> {
        if self.variant != want {
            return Err(DfcError::arg(format!("config is for {:?}, not {want:?}", self.variant)));
        }
        let needs_t = want != Variant::Nys || self.ensemble;
        if needs_t && (self.t == 0 || self.t > n) {
            return Err(DfcError::arg(format!("t = {} must lie in 1..={n}", self.t)));
        }
        if want == Variant::Nys {
            if !self.ensemble && (self.l == 0 || self.l > n) {
                return Err(DfcError::arg(format!("l = {} must lie in 1..={n}", self.l)));
            }
            if self.d == 0 || self.d > m {
                return Err(DfcError::arg(format!("d = {} must lie in 1..={m}", self.d)));
            }
        }
        Ok(())
    }
}

/// Timings and per-subproblem outcomes of one DFC run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DfcReport {
    pub subproblems: Vec<SolveReport>,
    pub ms_divide: f64,
    pub ms_factor: f64,
    pub ms_combine: f64,
    pub ms_total: f64,
    /// Target rank used by the random-projection combine step.
    pub chosen_k: Option<usize>,
    /// `k + p` had to be reduced to fit the matrix.
    pub k_clamped: bool,
    /// Numerical rank of the Nyström core `W` (smallest over the ensemble).
    pub w_rank: Option<usize>,
    /// `rank(W)` fell below the ranks of the column and row estimates.
    pub rank_deficient: bool,
    pub output_rank: usize,
}

impl DfcReport {
    /// Critical-path time if every subproblem had its own core.
    pub fn ms_parallel(&self) -> f64 {
        let slowest = self.subproblems.iter().map(|r| r.wall_ms).fold(0.0, f64::max);
        self.ms_divide + slowest + self.ms_combine
    }
}

/// Lower median of the ranks, floored at 1.
pub fn median_rank(ranks: &[usize]) -> Result<usize> {
    if ranks.is_empty() {
        return Err(DfcError::arg("median of an empty rank list"));
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    Ok(sorted[(sorted.len() - 1) / 2].max(1))
}

fn factor_all(
    subs: &[ObservedMatrix],
    solver: &dyn BaseSolver,
    workers: usize,
) -> Result<(Vec<LowRankEstimate>, Vec<SolveReport>)> {
    let results = map_tasks(subs.len(), workers, |i| solver.factor(&subs[i]));
    let mut ests = Vec::with_capacity(subs.len());
    let mut reports = Vec::with_capacity(subs.len());
    for (block, r) in results.into_iter().enumerate() {
        let (e, rep) = r.map_err(|e| DfcError::Block { block, source: Box::new(e) })?;
        ests.push(e);
        reports.push(rep);
    }
    Ok((ests, reports))
}

fn divide_columns(obs: &ObservedMatrix, t: usize, seed: u64) -> Result<(PartitionPlan, Vec<ObservedMatrix>)> {
    let plan = partition_columns(obs.ncols(), t, &mut SeededRng::new(seed, STREAM_PARTITION))?;
    let subs = plan.groups().iter().map(|g| extract_columns(obs, g)).collect::<Result<Vec<_>>>()?;
    Ok((plan, subs))
}

/// Column-projection DFC. The base is block 0 of the random partition, or
/// every block in turn (averaged) for the ensemble.
pub fn dfc_proj(
    obs: &ObservedMatrix,
    cfg: &DfcConfig,
    solver: &dyn BaseSolver,
) -> Result<(LowRankEstimate, DfcReport)> {
    cfg.validate(Variant::Proj, obs.nrows(), obs.ncols())?;
    let total = Instant::now();
    let mut report = DfcReport::default();

    let clock = Instant::now();
    let (plan, subs) = divide_columns(obs, cfg.t, cfg.seed)?;
    report.ms_divide = ms_since(clock);

    let clock = Instant::now();
    let (blocks, reports) = factor_all(&subs, solver, cfg.workers)?;
    report.ms_factor = ms_since(clock);
    report.subproblems = reports;

    let clock = Instant::now();
    let est = if cfg.ensemble {
        let projections = map_tasks(blocks.len(), cfg.workers, |i| column_project(&blocks[i], &blocks, &plan));
        let projections = projections.into_iter().collect::<Result<Vec<_>>>()?;
        let ranks: Vec<usize> = blocks.iter().map(LowRankEstimate::k).collect();
        average_estimates(&projections, Some(median_rank(&ranks)?))?
    } else {
        column_project(&blocks[0], &blocks, &plan)?
    };
    report.ms_combine = ms_since(clock);
    report.output_rank = est.k();
    report.ms_total = ms_since(total);
    Ok((est, report))
}

/// Fits `k + p` inside `min(m, n)`, shrinking `k` first.
fn clamp_rp(k: usize, p: usize, limit: usize) -> (RpParams, bool) {
    if k + p <= limit {
        return (RpParams { k, p, q: 0 }, false);
    }
    if limit > p {
        (RpParams { k: limit - p, p, q: 0 }, true)
    } else {
        (RpParams { k: 1, p: limit.saturating_sub(1), q: 0 }, true)
    }
}

/// Random-projection DFC with `k` set to the median block rank.
pub fn dfc_rp(obs: &ObservedMatrix, cfg: &DfcConfig, solver: &dyn BaseSolver) -> Result<(LowRankEstimate, DfcReport)> {
    cfg.validate(Variant::Rp, obs.nrows(), obs.ncols())?;
    let total = Instant::now();
    let mut report = DfcReport::default();

    let clock = Instant::now();
    let (plan, subs) = divide_columns(obs, cfg.t, cfg.seed)?;
    report.ms_divide = ms_since(clock);

    let clock = Instant::now();
    let (blocks, reports) = factor_all(&subs, solver, cfg.workers)?;
    report.ms_factor = ms_since(clock);
    report.subproblems = reports;

    let clock = Instant::now();
    let ranks: Vec<usize> = blocks.iter().map(LowRankEstimate::k).collect();
    let k = median_rank(&ranks)?;
    let (mut params, clamped) = clamp_rp(k, cfg.rp.p, obs.nrows().min(obs.ncols()));
    params.q = cfg.rp.q;
    report.chosen_k = Some(params.k);
    report.k_clamped = clamped;
    let draws = if cfg.ensemble { cfg.t } else { 1 };
    let projections = map_tasks(draws, cfg.workers, |e| {
        let mut rng = SeededRng::new(cfg.seed, STREAM_PROJECTION + e as u64);
        random_project(&blocks, &plan, params, &mut rng)
    });
    let mut projections = projections.into_iter().collect::<Result<Vec<_>>>()?;
    let est = if projections.len() == 1 {
        projections.pop().expect("one projection")
    } else {
        average_estimates(&projections, Some(params.k))?
    };
    report.ms_combine = ms_since(clock);
    report.output_rank = est.k();
    report.ms_total = ms_since(total);
    Ok((est, report))
}

/// Generalized-Nyström DFC: `l` random columns and `d` independent random
/// rows. The ensemble instead partitions the columns into `t` groups and
/// pairs each group with the same row estimate.
pub fn dfc_nys(obs: &ObservedMatrix, cfg: &DfcConfig, solver: &dyn BaseSolver) -> Result<(LowRankEstimate, DfcReport)> {
    let (m, n) = obs.shape();
    cfg.validate(Variant::Nys, m, n)?;
    let total = Instant::now();
    let mut report = DfcReport::default();

    let clock = Instant::now();
    let mut row_idx = sample_without_replacement(m, cfg.d, &mut SeededRng::new(cfg.seed, STREAM_ROWS))?;
    row_idx.sort_unstable();
    let col_groups: Vec<Vec<usize>> = if cfg.ensemble {
        partition_columns(n, cfg.t, &mut SeededRng::new(cfg.seed, STREAM_PARTITION))?.groups().to_vec()
    } else {
        let mut cols = sample_without_replacement(n, cfg.l, &mut SeededRng::new(cfg.seed, STREAM_COLUMNS))?;
        cols.sort_unstable();
        vec![cols]
    };
    let mut subs = col_groups.iter().map(|g| extract_columns(obs, g)).collect::<Result<Vec<_>>>()?;
    subs.push(extract_rows(obs, &row_idx)?);
    report.ms_divide = ms_since(clock);

    let clock = Instant::now();
    let (mut ests, reports) = factor_all(&subs, solver, cfg.workers)?;
    report.ms_factor = ms_since(clock);
    report.subproblems = reports;
    let r_hat = ests.pop().expect("row estimate");
    let c_hats = ests;

    let clock = Instant::now();
    let parts =
        map_tasks(c_hats.len(), cfg.workers, |i| gen_nystrom(&c_hats[i], &r_hat, &row_idx, &col_groups[i], cfg.tol));
    let mut parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let w_rank = parts.iter().map(LowRankEstimate::k).min().unwrap_or(0);
    let min_block_rank = c_hats.iter().map(LowRankEstimate::k).min().unwrap_or(0).min(r_hat.k());
    report.w_rank = Some(w_rank);
    report.rank_deficient = w_rank < min_block_rank;
    let est = if parts.len() == 1 {
        parts.pop().expect("one part")
    } else {
        let ranks: Vec<usize> = c_hats.iter().map(LowRankEstimate::k).collect();
        average_estimates(&parts, Some(median_rank(&ranks)?))?
    };
    report.ms_combine = ms_since(clock);
    report.output_rank = est.k();
    report.ms_total = ms_since(total);
    Ok((est, report))
}

/// Block estimates placed side by side, no combine step. Used as the
/// baseline that shows what the combine step buys.
pub fn dfc_part(
    obs: &ObservedMatrix,
    cfg: &DfcConfig,
    solver: &dyn BaseSolver,
) -> Result<(LowRankEstimate, DfcReport)> {
    let (m, n) = obs.shape();
    if cfg.t == 0 || cfg.t > n {
        return Err(DfcError::arg(format!("t = {} must lie in 1..={n}", cfg.t)));
    }
    let total = Instant::now();
    let mut report = DfcReport::default();

    let clock = Instant::now();
    let (plan, subs) = divide_columns(obs, cfg.t, cfg.seed)?;
    report.ms_divide = ms_since(clock);

    let clock = Instant::now();
    let (blocks, reports) = factor_all(&subs, solver, cfg.workers)?;
    report.ms_factor = ms_since(clock);
    report.subproblems = reports;

    let clock = Instant::now();
    let width: usize = blocks.iter().map(LowRankEstimate::k).sum();
    let mut left = DMatrix::zeros(m, width);
    let mut right = DMatrix::zeros(n, width);
    let mut at = 0;
    for (b, cols) in blocks.iter().zip(plan.groups()) {
        let k = b.k();
        left.columns_mut(at, k).copy_from(b.left());
        for (p, &c) in cols.iter().enumerate() {
            right.view_mut((c, at), (1, k)).copy_from(&b.right().row(p));
        }
        at += k;
    }
    let est = if width <= m.min(n) {
        LowRankEstimate::new(left, right)?
    } else {
        average_estimates(&[LowRankEstimate::from_parts_unchecked(left, right)], Some(m.min(n)))?
    };
    report.ms_combine = ms_since(clock);
    report.output_rank = est.k();
    report.ms_total = ms_since(total);
    Ok((est, report))
}

/// Dispatches on `cfg.variant`.
pub fn run_dfc(obs: &ObservedMatrix, cfg: &DfcConfig, solver: &dyn BaseSolver) -> Result<(LowRankEstimate, DfcReport)> {
    match cfg.variant {
        Variant::Proj => dfc_proj(obs, cfg, solver),
        Variant::Rp => dfc_rp(obs, cfg, solver),
        Variant::Nys => dfc_nys(obs, cfg, solver),
    }
}

/// The constant `c = 48000 / ln(1 / 0.45)` of the sampling bounds.
pub fn sampling_constant() -> f64 {
    48000.0 / (1.0f64 / 0.45).ln()
}

/// Row-count rule that needs `mu_0` of the column estimate, known only
/// after the factor step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RowRule {
    pub c: f64,
    pub l: usize,
    pub beta: f64,
    pub eps: f64,
    pub m: usize,
    pub n: usize,
}

impl RowRule {
    /// Unclamped `c l mu0 (2 beta - 1) ln^2(4 nbar) nbar / (n eps^2)`.
    pub fn raw(&self, mu0_c_hat: f64) -> f64 {
        let nbar = self.m.max(self.n) as f64;
        let log = (4.0 * nbar).ln();
        self.c * self.l as f64 * mu0_c_hat * (2.0 * self.beta - 1.0) * log * log * nbar
            / (self.n as f64 * self.eps * self.eps)
    }

    /// Ceiling of [`raw`](Self::raw), clamped to `1..=m`.
    pub fn d_for(&self, mu0_c_hat: f64) -> usize {
        clamp_ceil(self.raw(mu0_c_hat), self.m)
    }
}

/// Advisory sampling sizes for the matrix-completion guarantee.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplingRecommendation {
    pub c: f64,
    /// `c mu^2 r^2 (m+n) n beta ln^2(m+n) / (s eps^2)` before rounding.
    pub l_raw: f64,
    /// Ceiling of `l_raw`, clamped to `1..=n`.
    pub l: usize,
    pub d_rule: RowRule,
    /// `242 r ln(14 nbar^(2 beta - 2)) / eps^2`.
    pub p: f64,
}

fn clamp_ceil(x: f64, hi: usize) -> usize {
    if !x.is_finite() || x >= hi as f64 {
        hi
    } else {
        (x.ceil() as usize).clamp(1, hi)
    }
}

pub fn recommend_sampling(
    m: usize,
    n: usize,
    r: usize,
    mu: f64,
    s: usize,
    eps: f64,
    beta: f64,
) -> Result<SamplingRecommendation> {
    if m == 0 || n == 0 || r == 0 || s == 0 || !(mu > 0.0) {
        return Err(DfcError::arg("m, n, r, mu and s must all be positive"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(DfcError::arg(format!("eps = {eps} must lie in (0, 1]")));
    }
    if !(beta > 1.0) || !beta.is_finite() {
        return Err(DfcError::arg(format!("beta = {beta} must exceed 1")));
    }
    let c = sampling_constant();
    let (mf, nf, rf) = (m as f64, n as f64, r as f64);
    let log_mn = (mf + nf).ln();
    let l_raw = c * mu * mu * rf * rf * (mf + nf) * nf * beta * log_mn * log_mn / (s as f64 * eps * eps);
    let l = clamp_ceil(l_raw, n);
    let nbar = mf.max(nf);
    let p = 242.0 * rf * (14.0f64.ln() + (2.0 * beta - 2.0) * nbar.ln()) / (eps * eps);
    Ok(SamplingRecommendation { c, l_raw, l, d_rule: RowRule { c, l, beta, eps, m, n }, p })
}
