use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dfc_core::bench::{run_experiment, ExperimentPlan, InstanceSource, Method, MethodKind};
use dfc_core::dfc::{dfc_part, recommend_sampling};
use dfc_core::diagnostics::coherence_profile;
use dfc_core::matio::{densify, load_triplets_with, save_triplets_with, TripletOptions};
use dfc_core::simgen::{gen_mc_instance, gen_rmf_instance};
use dfc_core::sketch::{RankTolerance, RpParams};
use dfc_core::solvers::{apg_mc, apg_rmf, default_lambda};
use dfc_core::{run_dfc, ApgConfig, DfcConfig, LowRankEstimate, ObservedMatrix, SeededRng, Task, Variant};

#[derive(Parser)]
#[command(name = "dfc", version, about = "Divide-factor-combine matrix completion and robust factorization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic instance: triplets plus a `.truth.json` sidecar.
    Gen(GenArgs),
    /// Run the base APG solver on a triplet file.
    Solve(SolveArgs),
    /// Run one DFC variant on a triplet file.
    Dfc(DfcArgs),
    /// Coherence profile of an estimate JSON or a triplet file.
    Diag(DiagArgs),
    /// Run methods over seeds and write CSV plus a JSON mirror.
    Bench(BenchArgs),
    /// Print the advisory sampling sizes (never applied automatically).
    Recommend(RecommendArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Mc,
    Rmf,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Mc => Task::Mc,
            TaskArg::Rmf => Task::Rmf,
        }
    }
}

#[derive(Args)]
struct InstanceArgs {
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    r: usize,
    /// Revealed fraction (mc) or outlier fraction (rmf).
    #[arg(long, default_value_t = 0.25)]
    frac: f64,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "mc")]
    task: TaskArg,
    #[command(flatten)]
    inst: InstanceArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Triplet output; the truth goes to `<out>.truth.json`.
    #[arg(long)]
    out: PathBuf,
    /// Write 1-based indices.
    #[arg(long)]
    one_based: bool,
}

#[derive(Args)]
struct InputArgs {
    /// Triplet file (`i j v` per line, optional `% m n` header).
    input: PathBuf,
    #[arg(long)]
    one_based: bool,
    /// Known noise level; sets the terminal penalty weight.
    #[arg(long)]
    sigma: Option<f64>,
    /// Treat the data as exactly low rank (tight floor and tolerance).
    #[arg(long, conflicts_with = "sigma")]
    noiseless: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum, default_value = "mc")]
    task: TaskArg,
    #[command(flatten)]
    input: InputArgs,
    /// Estimate JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    /// Column groups; overrides --l-frac for the partition variants.
    #[arg(long)]
    t: Option<usize>,
    /// Column fraction: l/n for Nystrom, 1/t for partition variants.
    #[arg(long, default_value_t = 0.1)]
    l_frac: f64,
    /// Row fraction d/m for Nystrom.
    #[arg(long, default_value_t = 0.1)]
    d_frac: f64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Random projection oversampling.
    #[arg(long, default_value_t = 5)]
    p: usize,
    /// Random projection power iterations.
    #[arg(long, default_value_t = 2)]
    q: usize,
}

#[derive(Args)]
struct DfcArgs {
    #[arg(long, value_enum, default_value = "mc")]
    task: TaskArg,
    /// proj, rp, nys, part, optionally with `-ens` (e.g. dfc-proj-ens).
    #[arg(long, default_value = "dfc-proj")]
    method: String,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimate JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagArgs {
    /// Estimate JSON (`.json`) or triplet file.
    input: PathBuf,
    #[arg(long)]
    one_based: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "mc")]
    task: TaskArg,
    /// Comma-separated method labels.
    #[arg(long, default_value = "base,dfc-proj-ens,dfc-rp")]
    method: String,
    #[command(flatten)]
    inst: InstanceArgs,
    /// Triplet file instead of a generated instance.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Estimate JSON to score a file instance against.
    #[arg(long, requires = "input")]
    truth: Option<PathBuf>,
    /// Known noise level of a file instance; generated instances use --sigma.
    #[arg(long, requires = "input")]
    noise: Option<f64>,
    /// Held-out fraction when no truth is given.
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long)]
    one_based: bool,
    #[command(flatten)]
    split: SplitArgs,
    /// Seeds: a list (`0,3,7`), a range (`0..10`) or a single seed.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Alias for a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// CSV output; the JSON mirror goes next to it. Prints CSV when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    r: usize,
    /// Coherence bound mu.
    #[arg(long)]
    mu: f64,
    /// Number of revealed entries.
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Solve(a) => solve(a),
        Cmd::Dfc(a) => dfc(a),
        Cmd::Diag(a) => diag(a),
        Cmd::Bench(a) => bench(a),
        Cmd::Recommend(a) => recommend(a),
    }
}

fn cell_count(m: usize, n: usize, frac: f64) -> Result<usize> {
    if !(frac > 0.0 && frac <= 1.0) {
        bail!("--frac {frac} must lie in (0, 1]");
    }
    let cells = m * n;
    Ok(((frac * cells as f64).round() as usize).clamp(1, cells))
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_triplets(obs: &ObservedMatrix, path: &Path, one_based: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    save_triplets_with(obs, &mut w, TripletOptions { one_based })?;
    w.flush()?;
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let InstanceArgs { m, n, r, frac, sigma } = a.inst;
    let s = cell_count(m, n, frac)?;
    let mut rng = SeededRng::new(a.seed, 0);
    let (obs, truth) = match a.task {
        TaskArg::Mc => {
            let inst = gen_mc_instance(m, n, r, s, sigma, &mut rng)?;
            (inst.obs, inst.l0)
        }
        TaskArg::Rmf => {
            let inst = gen_rmf_instance(m, n, r, s, sigma, &mut rng)?;
            (ObservedMatrix::from_dense(&inst.m)?, inst.l0)
        }
    };
    write_triplets(&obs, &a.out, a.one_based)?;
    let truth_path = sidecar(&a.out, ".truth.json");
    std::fs::write(&truth_path, truth.to_json()?).with_context(|| format!("writing {}", truth_path.display()))?;
    eprintln!("wrote {} entries to {} and the truth to {}", obs.len(), a.out.display(), truth_path.display());
    Ok(())
}

fn load_input(path: &Path, one_based: bool) -> Result<ObservedMatrix> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_triplets_with(BufReader::new(file), TripletOptions { one_based })
        .with_context(|| format!("reading {}", path.display()))
}

fn solver_cfg(task: Task, sigma: Option<f64>, noiseless: bool) -> Result<ApgConfig> {
    let (base, exact) = match task {
        Task::Mc => (ApgConfig::default(), ApgConfig::noiseless()),
        Task::Rmf => (ApgConfig::rmf(), ApgConfig::rmf_noiseless()),
    };
    let cfg = match sigma {
        _ if noiseless => exact,
        Some(s) if s > 0.0 => base.with_noise_std(s),
        Some(s) if s == 0.0 => exact,
        Some(s) => bail!("--sigma {s} must be non-negative"),
        None => base,
    };
    Ok(cfg)
}

fn write_estimate(est: &LowRankEstimate, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        std::fs::write(path, est.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn solve(a: SolveArgs) -> Result<()> {
    let task = Task::from(a.task);
    let obs = load_input(&a.input.input, a.input.one_based)?;
    let cfg = solver_cfg(task, a.input.sigma, a.input.noiseless)?;
    let (est, report) = match task {
        Task::Mc => apg_mc(&obs, &cfg)?,
        Task::Rmf => {
            let (m, n) = obs.shape();
            let (l, _, rep) = apg_rmf(&densify(&obs), default_lambda(m, n), &cfg)?;
            (l, rep)
        }
    };
    write_estimate(&est, a.out.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn check_frac(name: &str, f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        bail!("{name} {f} must lie in (0, 1]");
    }
    Ok(())
}

fn dfc(a: DfcArgs) -> Result<()> {
    let task = Task::from(a.task);
    let method = Method::parse(&a.method)?;
    let obs = load_input(&a.input.input, a.input.one_based)?;
    let (m, n) = obs.shape();
    let split = &a.split;
    check_frac("--l-frac", split.l_frac)?;
    check_frac("--d-frac", split.d_frac)?;
    let variant = match method.kind {
        MethodKind::Base => bail!("`base` is not a DFC method; use `dfc solve`"),
        MethodKind::DfcRp => Variant::Rp,
        MethodKind::DfcNys => Variant::Nys,
        MethodKind::DfcProj | MethodKind::Part => Variant::Proj,
    };
    let mut cfg = DfcConfig::new(variant, task);
    cfg.ensemble = method.ensemble;
    cfg.t = split.t.unwrap_or_else(|| (1.0 / split.l_frac).round() as usize).clamp(1, n);
    cfg.l = ((split.l_frac * n as f64).ceil() as usize).clamp(1, n);
    cfg.d = ((split.d_frac * m as f64).ceil() as usize).clamp(1, m);
    cfg.rp = RpParams::new(1, split.p, split.q)?;
    cfg.seed = a.seed;
    cfg.workers = split.workers;
    cfg.solver_cfg = solver_cfg(task, a.input.sigma, a.input.noiseless)?;
    let solver = cfg.base_solver();
    let (est, report) = if method.kind == MethodKind::Part {
        dfc_part(&obs, &cfg, solver.as_ref())?
    } else {
        run_dfc(&obs, &cfg, solver.as_ref())?
    };
    write_estimate(&est, a.out.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn diag(a: DiagArgs) -> Result<()> {
    let est = if a.input.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        LowRankEstimate::from_json(&text)?
    } else {
        LowRankEstimate::from_dense(&densify(&load_input(&a.input, a.one_based)?))
    };
    let profile = coherence_profile(&est, RankTolerance::default())?;
    println!("{}", serde_json::to_string_pretty(&profile)?);
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi): (u64, u64) = (lo.trim().parse()?, hi.trim().parse()?);
        if lo >= hi {
            bail!("empty seed range {s}");
        }
        return Ok((lo..hi).collect());
    }
    s.split(',').map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed `{x}`"))).collect()
}

fn bench(a: BenchArgs) -> Result<()> {
    let methods = a.method.split(',').map(|m| Method::parse(m.trim())).collect::<Result<Vec<_>, _>>()?;
    let source = match &a.input {
        Some(path) => InstanceSource::File {
            path: path.clone(),
            one_based: a.one_based,
            truth: a.truth.clone(),
            holdout: a.holdout,
        },
        None => {
            let InstanceArgs { m, n, r, frac, sigma } = a.inst;
            InstanceSource::Generated { m, n, r, frac, sigma }
        }
    };
    let mut plan = ExperimentPlan::new(a.task.into(), source, methods);
    plan.col_frac = a.split.l_frac;
    plan.row_frac = a.split.d_frac;
    plan.t = a.split.t;
    plan.workers = a.split.workers;
    plan.seeds = match a.seed {
        Some(s) => vec![s],
        None => parse_seeds(&a.seeds)?,
    };
    plan.rp = RpParams::new(1, a.split.p, a.split.q)?;
    plan.output = a.out.clone();
    if let Some(sigma) = a.noise {
        plan.solver_cfg = Some(solver_cfg(plan.task, Some(sigma), false)?);
    }
    let res = run_experiment(&plan)?;
    let csv = res.to_csv();
    match &a.out {
        Some(path) => {
            std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            let json_path = path.with_extension("json");
            std::fs::write(&json_path, res.to_json()?).with_context(|| format!("writing {}", json_path.display()))?;
            eprintln!("wrote {} and {}", path.display(), json_path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn recommend(a: RecommendArgs) -> Result<()> {
    let rec = recommend_sampling(a.m, a.n, a.r, a.mu, a.s, a.eps, a.beta)?;
    println!("{}", serde_json::to_string_pretty(&rec)?);
    eprintln!("advisory only: the constant makes these sizes very conservative at small scale");
    Ok(())
}
