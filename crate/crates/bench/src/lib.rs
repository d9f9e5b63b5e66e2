//! Benchmark runs: configuration, execution on the rskel solvers, and CSV /
//! JSON reporting.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rskel::driver::LevelStats;
use rskel::parallel::{parallel_compatible_order, WorkerCounters, WorkerReport};
use rskel::solve::{relative_residual, LinearMap};
use rskel::{
    apply_inverse, dense_matvec, factorize_with_order, gmres, make_grid, parallel_factorize, partition_domain, pcg,
    Communicator, FactorOptions, Factorization, KernelKind, KernelMatrix, KernelSpec, ParallelOptions, QuadTree,
    Scalar,
};
use serde::Serialize;
use thiserror::Error;

/// Environment variable that overrides the default output directory.
pub const OUTPUT_DIR_ENV: &str = "RSKEL_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "rskel-output";
pub const CSV_FILE: &str = "runs.csv";
pub const CSV_HEADER: [&str; 11] = [
    "kernel",
    "n_side",
    "N",
    "eps",
    "p",
    "t_fact",
    "t_solve",
    "relres",
    "n_it",
    "msgs_total",
    "words_total",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] rskel::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Factor once and apply the inverse to one right-hand side.
    Factorize,
    /// Factor, then run PCG (Laplace) or GMRES (Helmholtz) to `--tol`.
    Solve,
    /// One factorize run per tolerance in `--eps`.
    Sweep,
    /// Factor and print the average skeleton size per level.
    Ranks,
    /// Factor with `--p` workers and dump the per-worker counters.
    Comm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Laplace,
    Helmholtz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Rhs {
    /// Standard-uniform entries in [0, 1).
    Random,
    /// Rightward plane wave scattered by the Gaussian bump (Helmholtz only).
    Planewave,
}

#[derive(Clone, Debug, PartialEq, Serialize, Args)]
pub struct RunConfig {
    #[arg(long, value_enum, default_value = "laplace")]
    pub kernel: KernelArg,
    /// Points per side of the uniform grid; N = n_side^2.
    #[arg(long, default_value_t = 64)]
    pub n_side: usize,
    /// Compression tolerance; a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',', default_value = "1e-6")]
    pub eps: Vec<f64>,
    /// Worker count (1, 4, 16, ...).
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    /// Maximum points per leaf box.
    #[arg(long, default_value_t = 64)]
    pub leaf_target: usize,
    /// Proxy points per box; defaults to the kernel's rule.
    #[arg(long)]
    pub n_proxy: Option<usize>,
    /// Helmholtz wavenumber.
    #[arg(long, default_value_t = 25.0)]
    pub kappa: f64,
    #[arg(long, value_enum, default_value = "random")]
    pub rhs: Rhs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; falls back to $RSKEL_OUTPUT_DIR, then ./rskel-output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Iterative solver tolerance for `solve`.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub maxit: usize,
    /// GMRES restart length.
    #[arg(long, default_value_t = 20)]
    pub restart: usize,
    /// Run `solve` without the factorization as preconditioner.
    #[arg(long)]
    pub no_precond: bool,
    /// With `--p 1`, eliminate boxes in the order a run with this many
    /// workers uses, so the result matches that run bit for bit.
    #[arg(long, default_value_t = 1)]
    pub order_p: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kernel: KernelArg::Laplace,
            n_side: 64,
            eps: vec![1e-6],
            p: 1,
            leaf_target: 64,
            n_proxy: None,
            kappa: 25.0,
            rhs: Rhs::Random,
            seed: 0,
            output: None,
            tol: 1e-12,
            maxit: 1000,
            restart: 20,
            no_precond: false,
            order_p: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub command: Command,
    pub config: RunConfig,
    pub kernel: KernelArg,
    pub n_side: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub eps: f64,
    pub p: usize,
    pub t_fact: f64,
    pub t_solve: f64,
    /// Largest per-worker compute and non-compute time (parallel runs).
    pub t_comp: Option<f64>,
    pub t_other: Option<f64>,
    pub relres: f64,
    pub n_it: usize,
    pub converged: bool,
    pub ranks: Vec<LevelStats>,
    pub peak_store_scalars: usize,
    pub factor_scalars: usize,
    pub msgs_total: usize,
    pub words_total: usize,
    /// `{worker_id: {messages, words}}`.
    pub counters: BTreeMap<usize, WorkerCounters>,
    pub workers: BTreeMap<usize, WorkerReport>,
}

/// Files written by [`write_outputs`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outputs {
    pub csv: PathBuf,
    pub json: PathBuf,
}

fn config_err(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

fn build_tree(cfg: &RunConfig) -> Result<QuadTree> {
    Ok(QuadTree::build(make_grid(cfg.n_side)?, cfg.leaf_target)?)
}

/// Checks every constraint of the requested run before any work is done.
pub fn validate(command: Command, cfg: &RunConfig) -> Result<()> {
    if cfg.n_side < 2 || !cfg.n_side.is_power_of_two() {
        return Err(config_err(format!(
            "--n-side {} must be a power of two >= 2",
            cfg.n_side
        )));
    }
    if cfg.leaf_target == 0 {
        return Err(config_err("--leaf-target must be at least 1"));
    }
    if cfg.eps.is_empty() {
        return Err(config_err("--eps needs at least one value"));
    }
    if let Some(e) = cfg.eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(config_err(format!("--eps {e} must lie in (0, 1)")));
    }
    if command != Command::Sweep && cfg.eps.len() != 1 {
        return Err(config_err("only `sweep` accepts several --eps values"));
    }
    if cfg.kernel == KernelArg::Helmholtz && !(cfg.kappa > 0.0 && cfg.kappa.is_finite()) {
        return Err(config_err(format!(
            "--kappa {} must be positive for helmholtz",
            cfg.kappa
        )));
    }
    if cfg.kernel == KernelArg::Laplace && cfg.rhs == Rhs::Planewave {
        return Err(config_err("--rhs planewave requires --kernel helmholtz"));
    }
    if cfg.n_proxy.is_some_and(|n| n < 4) {
        return Err(config_err("--n-proxy must be at least 4"));
    }
    if !(cfg.tol > 0.0 && cfg.tol < 1.0) || cfg.maxit == 0 || cfg.restart == 0 {
        return Err(config_err(
            "--tol must lie in (0, 1); --maxit and --restart must be positive",
        ));
    }
    let tree = build_tree(cfg)?;
    partition_domain(&tree, cfg.p).map_err(|e| config_err(e.to_string()))?;
    if cfg.order_p != 1 && cfg.p != 1 {
        return Err(config_err("--order-p only applies to sequential runs (--p 1)"));
    }
    partition_domain(&tree, cfg.order_p).map_err(|e| config_err(format!("--order-p: {e}")))?;
    Ok(())
}

fn spec(cfg: &RunConfig) -> Result<KernelSpec> {
    let kind = match cfg.kernel {
        KernelArg::Laplace => KernelKind::Laplace2D,
        KernelArg::Helmholtz => KernelKind::Helmholtz2D,
    };
    Ok(KernelSpec::for_grid(kind, cfg.n_side, cfg.kappa)?)
}

fn rhs<T: Scalar>(cfg: &RunConfig, spec: &KernelSpec, km: &KernelMatrix<T>) -> Vec<T> {
    match cfg.rhs {
        Rhs::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..km.n()).map(|_| T::from_f64(rng.gen())).collect()
        }
        Rhs::Planewave => spec.plane_wave_rhs(km.points()).into_iter().map(T::from_c64).collect(),
    }
}

struct Factored<T> {
    f: Factorization<T>,
    t_fact: f64,
    counters: BTreeMap<usize, WorkerCounters>,
    workers: BTreeMap<usize, WorkerReport>,
}

fn factor<T: Scalar>(cfg: &RunConfig, tree: &QuadTree, km: &KernelMatrix<T>, eps: f64) -> Result<Factored<T>> {
    let mut opts = FactorOptions::new(eps);
    opts.n_proxy = cfg.n_proxy;
    let t = Instant::now();
    if cfg.p == 1 {
        let order = parallel_compatible_order(tree, cfg.order_p)?;
        let f = factorize_with_order(tree, km, &opts, &|l| order[&l].clone())?;
        return Ok(Factored {
            f,
            t_fact: t.elapsed().as_secs_f64(),
            counters: BTreeMap::new(),
            workers: BTreeMap::new(),
        });
    }
    let comm = Communicator::channels(cfg.p);
    let popts = ParallelOptions {
        factor: opts,
        ..ParallelOptions::new(eps, cfg.p)
    };
    let run = parallel_factorize(tree, km, &popts, &comm)?;
    Ok(Factored {
        f: run.factorization,
        t_fact: t.elapsed().as_secs_f64(),
        counters: comm.counters(),
        workers: run.report.workers,
    })
}

fn one_run<T: Scalar>(
    command: Command,
    cfg: &RunConfig,
    eps: f64,
    tree: &QuadTree,
    km: &KernelMatrix<T>,
    b: &[T],
) -> Result<RunReport> {
    let factored = if command == Command::Solve && cfg.no_precond {
        None
    } else {
        Some(factor(cfg, tree, km, eps)?)
    };
    let t = Instant::now();
    let (x, n_it, converged) = if command == Command::Solve {
        let mut matvec = |x: &[T]| dense_matvec(km, x);
        let mut precond = factored.as_ref().map(|fd| move |r: &[T]| apply_inverse(&fd.f, r));
        let pre = precond.as_mut().map(|p| p as &mut LinearMap<'_, T>);
        let r = if T::IS_COMPLEX {
            gmres(&mut matvec, pre, b, cfg.tol, cfg.restart, cfg.maxit)?
        } else {
            pcg(&mut matvec, pre, b, cfg.tol, cfg.maxit)?
        };
        (r.x, r.n_it, r.converged)
    } else {
        let f = &factored.as_ref().expect("factored").f;
        (apply_inverse(f, b)?, 0, true)
    };
    let t_solve = t.elapsed().as_secs_f64();
    let relres = relative_residual(km, &x, b)?;

    let mut config = cfg.clone();
    config.eps = vec![eps];
    let (ranks, peak, fscal, t_fact, counters, workers) = match factored {
        Some(fd) => (
            fd.f.stats.levels.clone(),
            fd.f.stats.peak_store_scalars,
            fd.f.stats.factor_scalars,
            fd.t_fact,
            fd.counters,
            fd.workers,
        ),
        None => (Vec::new(), 0, 0, 0.0, BTreeMap::new(), BTreeMap::new()),
    };
    let max_of = |g: fn(&WorkerReport) -> f64| workers.values().map(g).reduce(f64::max);
    Ok(RunReport {
        command,
        kernel: cfg.kernel,
        n_side: cfg.n_side,
        n: km.n(),
        eps,
        p: cfg.p,
        t_fact,
        t_solve,
        t_comp: max_of(|w| w.t_comp),
        t_other: max_of(|w| w.t_other),
        relres,
        n_it,
        converged,
        ranks,
        peak_store_scalars: peak,
        factor_scalars: fscal,
        msgs_total: counters.values().map(|c| c.messages).sum(),
        words_total: counters.values().map(|c| c.words).sum(),
        counters,
        workers,
        config,
    })
}

fn run_typed<T: Scalar>(command: Command, cfg: &RunConfig) -> Result<Vec<RunReport>> {
    let spec = spec(cfg)?;
    let tree = build_tree(cfg)?;
    let km: KernelMatrix<T> = KernelMatrix::new(Arc::new(spec.clone()), tree.points())?;
    let b = rhs(cfg, &spec, &km);
    cfg.eps
        .iter()
        .map(|&eps| one_run(command, cfg, eps, &tree, &km, &b))
        .collect()
}

/// Validates `cfg` and executes `command`; `sweep` yields one report per
/// tolerance, every other command exactly one.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Vec<RunReport>> {
    validate(command, cfg)?;
    match cfg.kernel {
        KernelArg::Laplace => run_typed::<f64>(command, cfg),
        KernelArg::Helmholtz => run_typed::<Complex64>(command, cfg),
    }
}

/// Output directory: `--output`, then `$RSKEL_OUTPUT_DIR`, then the default.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn kernel_name(k: KernelArg) -> &'static str {
    match k {
        KernelArg::Laplace => "laplace",
        KernelArg::Helmholtz => "helmholtz",
    }
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Factorize => "factorize",
        Command::Solve => "solve",
        Command::Sweep => "sweep",
        Command::Ranks => "ranks",
        Command::Comm => "comm",
    }
}

/// Appends one CSV row per report (writing the header into a new file) and
/// writes all reports as pretty JSON.
pub fn write_outputs(command: Command, cfg: &RunConfig, reports: &[RunReport]) -> Result<Outputs> {
    let dir = output_dir(cfg);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let csv_path = dir.join(CSV_FILE);
    let fresh = fs::metadata(&csv_path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)
        .map_err(io_err(&csv_path))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER)?;
    }
    for r in reports {
        w.write_record([
            kernel_name(r.kernel).to_string(),
            r.n_side.to_string(),
            r.n.to_string(),
            format!("{:e}", r.eps),
            r.p.to_string(),
            format!("{:.6}", r.t_fact),
            format!("{:.6}", r.t_solve),
            format!("{:e}", r.relres),
            r.n_it.to_string(),
            r.msgs_total.to_string(),
            r.words_total.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&csv_path))?;

    let json_path = dir.join(format!(
        "{}-{}-n{}-p{}.json",
        command_name(command),
        kernel_name(cfg.kernel),
        cfg.n_side,
        cfg.p
    ));
    let text = serde_json::to_string_pretty(reports)?;
    fs::write(&json_path, text + "\n").map_err(io_err(&json_path))?;
    Ok(Outputs {
        csv: csv_path,
        json: json_path,
    })
}

/// Short human-readable summary of one report.
pub fn summary(r: &RunReport) -> String {
    let mut s = format!(
        "{} N={} eps={:e} p={}: t_fact={:.3}s t_solve={:.3}s relres={:.3e}",
        kernel_name(r.kernel),
        r.n,
        r.eps,
        r.p,
        r.t_fact,
        r.t_solve,
        r.relres
    );
    if r.command == Command::Solve {
        s += &format!(" n_it={}{}", r.n_it, if r.converged { "" } else { " (not converged)" });
    }
    if r.p > 1 {
        s += &format!(" msgs={} words={}", r.msgs_total, r.words_total);
    }
    if r.command == Command::Ranks {
        for l in &r.ranks {
            s += &format!(
                "\n  level {}: {} boxes, avg rank {:.2} (max {}) of {:.2}",
                l.level, l.boxes, l.avg_rank, l.max_rank, l.avg_active
            );
        }
    }
    s
}
