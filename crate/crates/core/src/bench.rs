//! Experiment harness: RMSE, method runs over seeds, CSV/JSON output.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dfc::{dfc_part, run_dfc, DfcConfig, DfcReport, Task, Variant};
use crate::error::{DfcError, Result};
use crate::matio::{densify, load_triplets_with, LowRankEstimate, ObservedMatrix, TripletOptions};
use crate::sampling::{sample_without_replacement, SeededRng};
use crate::simgen::{gen_mc_instance, gen_rmf_instance};
use crate::sketch::RpParams;
use crate::solvers::{apg_mc, apg_rmf, default_lambda, ms_since, ApgConfig};

/// Stream used to split loaded ratings into train and test entries.
pub const STREAM_HOLDOUT: u64 = u64::MAX - 3;

pub const CSV_HEADER: &str = "method,seed,rmse,ms_divide,ms_factor,ms_combine,ms_total,rank";

/// Root mean square difference over every cell, or over `mask` when given.
pub fn rmse(truth: &LowRankEstimate, est: &LowRankEstimate, mask: Option<&[(usize, usize)]>) -> Result<f64> {
    if truth.shape() != est.shape() {
        return Err(DfcError::shape(format!("truth is {:?} but estimate is {:?}", truth.shape(), est.shape())));
    }
    let (m, n) = truth.shape();
    match mask {
        Some(cells) => {
            if cells.is_empty() {
                return Err(DfcError::arg("empty RMSE mask"));
            }
            let mut acc = 0.0;
            for &(i, j) in cells {
                if i >= m || j >= n {
                    return Err(DfcError::OutOfBounds { row: i, col: j, m, n });
                }
                acc += (truth.entry(i, j) - est.entry(i, j)).powi(2);
            }
            Ok((acc / cells.len() as f64).sqrt())
        }
        None => {
            let (kt, ke) = (truth.k(), est.k());
            if kt + ke == 0 {
                return Ok(0.0);
            }
            let mut left = DMatrix::zeros(m, kt + ke);
            let mut right = DMatrix::zeros(n, kt + ke);
            left.columns_mut(0, kt).copy_from(truth.left());
            left.columns_mut(kt, ke).copy_from(&(-est.left()));
            right.columns_mut(0, kt).copy_from(truth.right());
            right.columns_mut(kt, ke).copy_from(est.right());
            let diff = left * right.transpose();
            Ok((diff.norm_squared() / (m as f64 * n as f64)).sqrt())
        }
    }
}

/// RMSE against held-out observed entries.
pub fn rmse_observed(test: &ObservedMatrix, est: &LowRankEstimate) -> Result<f64> {
    if test.shape() != est.shape() {
        return Err(DfcError::shape("test set and estimate differ in shape"));
    }
    if test.is_empty() {
        return Err(DfcError::arg("empty test set"));
    }
    let acc: f64 = test.entries().iter().map(|e| (e.value - est.entry(e.row, e.col)).powi(2)).sum();
    Ok((acc / test.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum MethodKind {
    Base,
    Part,
    DfcProj,
    DfcRp,
    DfcNys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Method {
    pub kind: MethodKind,
    pub ensemble: bool,
}

impl Method {
    pub const fn new(kind: MethodKind, ensemble: bool) -> Self {
        Method { kind, ensemble }
    }

    pub fn label(&self) -> String {
        let base = match self.kind {
            MethodKind::Base => "base",
            MethodKind::Part => "part",
            MethodKind::DfcProj => "dfc-proj",
            MethodKind::DfcRp => "dfc-rp",
            MethodKind::DfcNys => "dfc-nys",
        };
        if self.ensemble && matches!(self.kind, MethodKind::DfcProj | MethodKind::DfcRp | MethodKind::DfcNys) {
            format!("{base}-ens")
        } else {
            base.to_string()
        }
    }

    /// Parses labels such as `base`, `part`, `dfc-proj`, `dfc-nys-ens`.
    pub fn parse(s: &str) -> Result<Self> {
        let (stem, ensemble) = match s.strip_suffix("-ens") {
            Some(stem) => (stem, true),
            None => (s, false),
        };
        let kind = match stem {
            "base" => MethodKind::Base,
            "part" => MethodKind::Part,
            "dfc-proj" | "proj" => MethodKind::DfcProj,
            "dfc-rp" | "rp" => MethodKind::DfcRp,
            "dfc-nys" | "nys" => MethodKind::DfcNys,
            _ => return Err(DfcError::arg(format!("unknown method {s:?}"))),
        };
        if ensemble && matches!(kind, MethodKind::Base | MethodKind::Part) {
            return Err(DfcError::arg(format!("{stem} has no ensemble variant")));
        }
        Ok(Method { kind, ensemble })
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum InstanceSource {
    /// Synthetic instance regenerated for every seed. `frac` is the revealed
    /// fraction (MC) or the outlier fraction (RMF).
    Generated { m: usize, n: usize, r: usize, frac: f64, sigma: f64 },
    /// Triplet file. With `truth` (an estimate JSON) RMSE is taken over all
    /// cells; otherwise a seeded `holdout` fraction of the entries is
    /// withheld for testing (MC only).
    File { path: PathBuf, one_based: bool, truth: Option<PathBuf>, holdout: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentPlan {
    pub task: Task,
    pub source: InstanceSource,
    pub methods: Vec<Method>,
    /// Column fraction: `l/n` for Nyström, `1/t` for the partition methods.
    pub col_frac: f64,
    /// Row fraction `d/m` for Nyström.
    pub row_frac: f64,
    /// Explicit group count; overrides `col_frac` for the partition methods.
    pub t: Option<usize>,
    pub workers: usize,
    pub seeds: Vec<u64>,
    pub rp: RpParams,
    /// `None` picks per instance: noise-aware defaults when the noise level
    /// is known and positive, the noiseless preset when it is zero.
    pub solver_cfg: Option<ApgConfig>,
    pub output: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn new(task: Task, source: InstanceSource, methods: Vec<Method>) -> Self {
        ExperimentPlan {
            task,
            source,
            methods,
            col_frac: 0.1,
            row_frac: 0.1,
            t: None,
            workers: 1,
            seeds: vec![0],
            rp: RpParams::default(),
            solver_cfg: None,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("column fraction", self.col_frac), ("row fraction", self.row_frac)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(DfcError::arg(format!("{name} {f} must lie in (0, 1]")));
            }
        }
        if self.seeds.is_empty() {
            return Err(DfcError::arg("at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(DfcError::arg("at least one method is required"));
        }
        if self.t == Some(0) {
            return Err(DfcError::arg("t must be positive"));
        }
        match &self.source {
            InstanceSource::Generated { frac, sigma, .. } => {
                if !(*frac > 0.0 && *frac <= 1.0) || !(*sigma >= 0.0) {
                    return Err(DfcError::arg("instance fraction must lie in (0, 1] and sigma be >= 0"));
                }
            }
            InstanceSource::File { truth, holdout, .. } => {
                if truth.is_none() && !(*holdout > 0.0 && *holdout < 1.0) {
                    return Err(DfcError::arg("without a truth file, holdout must lie in (0, 1)"));
                }
                if truth.is_none() && self.task == Task::Rmf {
                    return Err(DfcError::arg("RMF experiments on files need a truth file"));
                }
            }
        }
        Ok(())
    }

    fn group_count(&self, n: usize) -> usize {
        self.t.unwrap_or_else(|| (1.0 / self.col_frac).round() as usize).clamp(1, n)
    }
}

/// One method on one seed.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub method: String,
    pub seed: u64,
    pub rmse: f64,
    pub ms_divide: f64,
    pub ms_factor: f64,
    pub ms_combine: f64,
    pub ms_total: f64,
    pub rank: usize,
    pub report: Option<DfcReport>,
}

/// Mean and standard deviation over seeds for one method.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub seeds: usize,
    pub mean: [f64; 6],
    pub std: [f64; 6],
    pub mean_rank: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub plan: ExperimentPlan,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

/// What a method is scored against.
enum Truth {
    Factors(LowRankEstimate),
    Holdout(ObservedMatrix),
}

struct Prepared {
    /// Training input: revealed entries (MC) or the full matrix as entries (RMF).
    input: ObservedMatrix,
    truth: Truth,
    sigma: Option<f64>,
}

fn prepare(plan: &ExperimentPlan, seed: u64) -> Result<Prepared> {
    match &plan.source {
        InstanceSource::Generated { m, n, r, frac, sigma } => {
            let mut rng = SeededRng::new(seed, 0);
            let cells = m * n;
            let s = ((frac * cells as f64).round() as usize).clamp(1, cells);
            match plan.task {
                Task::Mc => {
                    let inst = gen_mc_instance(*m, *n, *r, s, *sigma, &mut rng)?;
                    Ok(Prepared { input: inst.obs, truth: Truth::Factors(inst.l0), sigma: Some(*sigma) })
                }
                Task::Rmf => {
                    let inst = gen_rmf_instance(*m, *n, *r, s, *sigma, &mut rng)?;
                    let input = ObservedMatrix::from_dense(&inst.m)?;
                    Ok(Prepared { input, truth: Truth::Factors(inst.l0), sigma: Some(*sigma) })
                }
            }
        }
        InstanceSource::File { path, one_based, truth, holdout } => {
            let file = File::open(path)?;
            let obs = load_triplets_with(BufReader::new(file), TripletOptions { one_based: *one_based })?;
            if let Some(tp) = truth {
                let est = LowRankEstimate::from_json(&std::fs::read_to_string(tp)?)?;
                if est.shape() != obs.shape() {
                    return Err(DfcError::shape("truth file does not match the triplet dimensions"));
                }
                return Ok(Prepared { input: obs, truth: Truth::Factors(est), sigma: None });
            }
            let n_test = ((holdout * obs.len() as f64).round() as usize).clamp(1, obs.len().saturating_sub(1).max(1));
            let mut is_test = vec![false; obs.len()];
            for i in sample_without_replacement(obs.len(), n_test, &mut SeededRng::new(seed, STREAM_HOLDOUT))? {
                is_test[i] = true;
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (e, t) in obs.entries().iter().zip(is_test) {
                if t {
                    test.push(*e);
                } else {
                    train.push(*e);
                }
            }
            let (m, n) = obs.shape();
            Ok(Prepared {
                input: ObservedMatrix::new(m, n, train)?,
                truth: Truth::Holdout(ObservedMatrix::new(m, n, test)?),
                sigma: None,
            })
        }
    }
}

fn solver_cfg_for(plan: &ExperimentPlan, sigma: Option<f64>) -> ApgConfig {
    if let Some(cfg) = plan.solver_cfg {
        return cfg;
    }
    let (base, exact) = match plan.task {
        Task::Mc => (ApgConfig::default(), ApgConfig::noiseless()),
        Task::Rmf => (ApgConfig::rmf(), ApgConfig::rmf_noiseless()),
    };
    match sigma {
        Some(s) if s > 0.0 => base.with_noise_std(s),
        Some(_) => exact,
        None => base,
    }
}

fn run_method(
    plan: &ExperimentPlan,
    method: Method,
    seed: u64,
    prep: &Prepared,
) -> Result<(LowRankEstimate, [f64; 4], Option<DfcReport>)> {
    let (m, n) = prep.input.shape();
    let solver_cfg = solver_cfg_for(plan, prep.sigma);
    if method.kind == MethodKind::Base {
        let clock = Instant::now();
        let est = match plan.task {
            Task::Mc => apg_mc(&prep.input, &solver_cfg)?.0,
            Task::Rmf => apg_rmf(&densify(&prep.input), default_lambda(m, n), &solver_cfg)?.0,
        };
        let ms = ms_since(clock);
        return Ok((est, [0.0, ms, 0.0, ms], None));
    }
    let variant = match method.kind {
        MethodKind::DfcRp => Variant::Rp,
        MethodKind::DfcNys => Variant::Nys,
        _ => Variant::Proj,
    };
    let mut cfg = DfcConfig::new(variant, plan.task);
    cfg.ensemble = method.ensemble;
    cfg.t = plan.group_count(n);
    cfg.l = ((plan.col_frac * n as f64).ceil() as usize).clamp(1, n);
    cfg.d = ((plan.row_frac * m as f64).ceil() as usize).clamp(1, m);
    cfg.rp = plan.rp;
    cfg.seed = seed;
    cfg.solver_cfg = solver_cfg;
    cfg.workers = plan.workers;
    let solver = cfg.base_solver();
    let (est, rep) = if method.kind == MethodKind::Part {
        dfc_part(&prep.input, &cfg, solver.as_ref())?
    } else {
        run_dfc(&prep.input, &cfg, solver.as_ref())?
    };
    let times = [rep.ms_divide, rep.ms_factor, rep.ms_combine, rep.ms_total];
    Ok((est, times, Some(rep)))
}

/// Runs every method on every seed. Rows come back sorted by
/// `(method label, seed)` with a summary per method.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let mut rows = Vec::new();
    for &seed in &plan.seeds {
        let prep = prepare(plan, seed)?;
        for &method in &plan.methods {
            let (est, t, report) =
                run_method(plan, method, seed, &prep).map_err(|e| context(e, &method.label(), seed))?;
            let err = match &prep.truth {
                Truth::Factors(l0) => rmse(l0, &est, None)?,
                Truth::Holdout(test) => rmse_observed(test, &est)?,
            };
            rows.push(ResultRow {
                method: method.label(),
                seed,
                rmse: err,
                ms_divide: t[0],
                ms_factor: t[1],
                ms_combine: t[2],
                ms_total: t[3],
                rank: est.k(),
                report,
            });
        }
    }
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.seed.cmp(&b.seed)));
    let summary = summarize(&rows);
    Ok(ExperimentResult { plan: plan.clone(), rows, summary })
}

fn context(e: DfcError, method: &str, seed: u64) -> DfcError {
    DfcError::Argument(format!("{method} (seed {seed}): {e}"))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Arithmetic mean and sample standard deviation per method.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut labels: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    labels.dedup();
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.method == label).collect();
            let cols: [Vec<f64>; 6] = [
                group.iter().map(|r| r.rmse).collect(),
                group.iter().map(|r| r.ms_divide).collect(),
                group.iter().map(|r| r.ms_factor).collect(),
                group.iter().map(|r| r.ms_combine).collect(),
                group.iter().map(|r| r.ms_total).collect(),
                group.iter().map(|r| r.rank as f64).collect(),
            ];
            let mut mean = [0.0; 6];
            let mut std = [0.0; 6];
            for (c, col) in cols.iter().enumerate() {
                (mean[c], std[c]) = mean_std(col);
            }
            SummaryRow { method: label.to_string(), seeds: group.len(), mean, std, mean_rank: mean[5] }
        })
        .collect()
}

impl ExperimentResult {
    /// Per-seed rows, then `mean` and `std` rows per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3},{:.3},{}",
                r.method, r.seed, r.rmse, r.ms_divide, r.ms_factor, r.ms_combine, r.ms_total, r.rank
            );
        }
        for s in &self.summary {
            for (tag, v) in [("mean", &s.mean), ("std", &s.std)] {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.3},{:.3},{:.3},{:.3},{}",
                    s.method, tag, v[0], v[1], v[2], v[3], v[4], v[5]
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary_for(&self, label: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == label)
    }
}
