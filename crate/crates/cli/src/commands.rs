//! Subcommands. Each one resolves the effective [`RunConfig`], writes its
//! outputs through a single [`OutputWriter`] and finishes with a run record.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use shapes_core::free_target::{additive_split_solve, solve_free_target, FreeTargetResult, WindowAudit};
use shapes_core::grid::{GridShape, Region};
use shapes_core::optimizer::{ansatz, energy, multi_start, AnsatzKind, OptimizerError};
use shapes_core::perimeter::perimeter;
use shapes_core::verification::{Expected, PropertyReport};

use crate::checks::run_check;
use crate::config::{parse_ansatz, CheckName, CommandKind, RunConfig, SCHEMA_VERSION};
use crate::output::{timestamp, OutputWriter, RunRecord};
use crate::{gs1, CliError, EXIT_CHECK_FAILED, EXIT_INTERRUPTED, EXIT_OK};

#[derive(Parser, Debug)]
#[command(name = "shapes", version, about = "Free-target transport distances and shape energies on grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Free-target distance of a shape: result.json, witness.gs1, plan.csv
    Wp(WpArgs),
    /// Perimeter plus weighted free-target distance of a shape
    Energy(EnergyArgs),
    /// Multi-start annealing at fixed volume
    Optimize(OptimizeArgs),
    /// Run verification checks; exit 1 if any fails
    Verify(VerifyArgs),
    /// Emit a deterministic starting shape
    Ansatz(AnsatzArgs),
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// JSON run config; flags below override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ParamArgs {
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Target cell count
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub pad_factor: Option<f64>,
}

#[derive(Args, Debug)]
pub struct WpArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input shape (GS1)
    #[arg(long)]
    pub shape: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub pad_factor: Option<f64>,
    /// Solve well-separated clusters independently
    #[arg(long)]
    pub split: bool,
}

#[derive(Args, Debug)]
pub struct EnergyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub shape: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub pad_factor: Option<f64>,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Single starting shape (GS1) instead of the ansatz starts
    #[arg(long)]
    pub shape: Option<PathBuf>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated starts: ball, cylinder:<ratio>, droplets:<m>, segments:<k>
    #[arg(long, value_delimiter = ',', value_parser = parse_ansatz)]
    pub starts: Option<Vec<AnsatzKind>>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub recompute_every: Option<usize>,
    #[arg(long)]
    pub surrogate_constant: Option<f64>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated subset of: scaling, microdroplet, continuity, additivity, upper_bound, nucleation
    #[arg(long, value_delimiter = ',')]
    pub checks: Option<Vec<String>>,
    /// Smaller instances
    #[arg(long)]
    pub quick: bool,
    /// Tolerance override `<check>=<value>`; repeatable
    #[arg(long = "tolerance")]
    pub tolerance: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct AnsatzArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    /// ball, cylinder:<ratio>, droplets:<m> or segments:<k>
    #[arg(long, value_parser = parse_ansatz)]
    pub kind: Option<AnsatzKind>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl CommonArgs {
    fn base(&self) -> Result<RunConfig, CliError> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.out_dir, self.out.clone());
    }
}

impl ParamArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.params;
        set(&mut p.p, self.p);
        set(&mut p.lambda, self.lambda);
        set(&mut p.target_cells, self.cells);
        set(&mut p.dim, self.dim);
        set(&mut p.spacing, self.spacing);
        set(&mut p.pad_factor, self.pad_factor);
    }
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Wp(_) => CommandKind::Wp,
            Command::Energy(_) => CommandKind::Energy,
            Command::Optimize(_) => CommandKind::Optimize,
            Command::Verify(_) => CommandKind::Verify,
            Command::Ansatz(_) => CommandKind::Ansatz,
        }
    }

    /// Effective config: defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match self {
            Command::Wp(a) => {
                let mut c = a.common.base()?;
                a.common.apply(&mut c);
                set(&mut c.shape, a.shape.clone().map(Some));
                set(&mut c.params.p, a.p);
                set(&mut c.params.pad_factor, a.pad_factor);
                c.split |= a.split;
                c
            }
            Command::Energy(a) => {
                let mut c = a.common.base()?;
                a.common.apply(&mut c);
                set(&mut c.shape, a.shape.clone().map(Some));
                set(&mut c.params.p, a.p);
                set(&mut c.params.lambda, a.lambda);
                set(&mut c.params.pad_factor, a.pad_factor);
                c
            }
            Command::Optimize(a) => {
                let mut c = a.common.base()?;
                a.common.apply(&mut c);
                a.params.apply(&mut c);
                set(&mut c.shape, a.shape.clone().map(Some));
                set(&mut c.seeds, a.seeds.clone());
                set(&mut c.starts, a.starts.clone());
                set(&mut c.schedule.steps, a.steps);
                set(&mut c.schedule.t0, a.t0);
                set(&mut c.schedule.alpha, a.alpha);
                set(&mut c.params.recompute_every, a.recompute_every);
                set(&mut c.params.surrogate_constant, a.surrogate_constant);
                c
            }
            Command::Verify(a) => {
                let mut c = a.common.base()?;
                a.common.apply(&mut c);
                if let Some(names) = &a.checks {
                    c.checks = names.iter().map(|s| CheckName::parse(s.trim())).collect::<Result<_, _>>()?;
                }
                c.quick |= a.quick;
                for t in &a.tolerance {
                    let (name, val) = t
                        .split_once('=')
                        .ok_or_else(|| CliError::Usage(format!("--tolerance expects <check>=<value>, got {t:?}")))?;
                    let check = CheckName::parse(name.trim())?;
                    let v: f64 = val
                        .trim()
                        .parse()
                        .map_err(|_| CliError::Usage(format!("bad tolerance value {val:?}")))?;
                    c.tolerance_overrides.insert(check.as_str().to_string(), v);
                }
                set(&mut c.seed, a.seed);
                c
            }
            Command::Ansatz(a) => {
                let mut c = a.common.base()?;
                a.common.apply(&mut c);
                a.params.apply(&mut c);
                set(&mut c.ansatz, a.kind);
                c
            }
        };
        cfg.check_command(self.kind())?;
        cfg.command = Some(self.kind());
        Ok(cfg)
    }
}

/// Runs a parsed command line and returns the process exit code. Errors are
/// reported on stderr.
pub fn run(cli: &Cli, threads: usize, stop: &AtomicBool) -> i32 {
    match run_inner(cli, threads, stop) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("shapes: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(cli: &Cli, threads: usize, stop: &AtomicBool) -> Result<i32, CliError> {
    let started = Utc::now();
    let cfg = cli.command.resolve()?;
    let mut w = OutputWriter::create(&cfg.out_dir)?;
    let code = match cli.command.kind() {
        CommandKind::Wp => cmd_wp(&cfg, &mut w)?,
        CommandKind::Energy => cmd_energy(&cfg, &mut w)?,
        CommandKind::Optimize => cmd_optimize(&cfg, &mut w, stop)?,
        CommandKind::Verify => cmd_verify(&cfg, &mut w)?,
        CommandKind::Ansatz => cmd_ansatz(&cfg, &mut w)?,
    };
    let record = RunRecord {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        command: format!("{:?}", cli.command.kind()).to_lowercase(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        started: timestamp(started),
        finished: timestamp(Utc::now()),
        threads,
        exit_code: code,
        interrupted: code == EXIT_INTERRUPTED,
        outputs: Vec::new(),
    };
    w.finish(record)?;
    Ok(code)
}

fn load_shape(path: Option<&Path>) -> Result<GridShape, CliError> {
    let path = path.ok_or_else(|| CliError::Usage("no input shape (use --shape or \"shape\" in the config)".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read shape {}: {e}", path.display())))?;
    gs1::parse(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn check_p(p: f64) -> Result<(), CliError> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("p must be at least 1 (got {p})")))
    }
}

fn solver<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Solver(e.to_string())
}

/// Usage errors for bad parameters, solver errors for everything else.
fn optimizer_err(e: OptimizerError) -> CliError {
    match e {
        OptimizerError::FreeTarget(f) => CliError::Solver(f.to_string()),
        other => CliError::Usage(other.to_string()),
    }
}

#[derive(Serialize)]
struct WpSummary<'a> {
    wp: f64,
    wp_pow_p: f64,
    p: f64,
    cells: usize,
    volume: f64,
    split: bool,
    window: &'a Region,
    audit: &'a WindowAudit,
    witness_file: &'static str,
    plan_file: &'static str,
}

/// `src` and `dst` index the sorted cell lines of the input and witness files.
fn plan_csv(r: &FreeTargetResult) -> String {
    let mut out = String::from("src,dst,mass,dist\n");
    for e in &r.plan.entries {
        out.push_str(&format!("{},{},{:?},{:?}\n", e.source, e.sink, e.mass, e.distance));
    }
    out
}

fn cmd_wp(cfg: &RunConfig, w: &mut OutputWriter) -> Result<i32, CliError> {
    let e = load_shape(cfg.shape.as_deref())?;
    let p = cfg.params.p;
    check_p(p)?;
    let r = if cfg.split && !e.is_empty() {
        additive_split_solve(&e, p, cfg.params.pad_factor)
    } else {
        solve_free_target(&e, p, cfg.params.pad_factor)
    }
    .map_err(solver)?;
    w.write("witness.gs1", gs1::write(&r.witness).as_bytes())?;
    w.write("plan.csv", plan_csv(&r).as_bytes())?;
    w.write_json(
        "result.json",
        &WpSummary {
            wp: r.wp,
            wp_pow_p: r.wp_pow_p,
            p,
            cells: e.len(),
            volume: e.volume(),
            split: cfg.split,
            window: &r.window,
            audit: &r.audit,
            witness_file: "witness.gs1",
            plan_file: "plan.csv",
        },
    )?;
    println!("wp = {:?} (wp^p = {:?}, {} cells)", r.wp, r.wp_pow_p, e.len());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EnergySummary {
    total: f64,
    perimeter: f64,
    wp: f64,
    lambda: f64,
    p: f64,
    cells: usize,
    exact: bool,
}

fn cmd_energy(cfg: &RunConfig, w: &mut OutputWriter) -> Result<i32, CliError> {
    let e = load_shape(cfg.shape.as_deref())?;
    let mut pc = cfg.params.clone();
    pc.target_cells = e.len();
    let params = pc.energy_params(e.grid().clone())?;
    let rep = energy(&e, &params).map_err(optimizer_err)?;
    w.write("witness.gs1", gs1::write(&rep.witness_f).as_bytes())?;
    w.write_json(
        "energy.json",
        &EnergySummary {
            total: rep.total,
            perimeter: rep.perimeter,
            wp: rep.wp,
            lambda: params.lambda,
            p: params.p,
            cells: e.len(),
            exact: rep.exact,
        },
    )?;
    println!("energy = {:?} (perimeter {:?}, wp {:?})", rep.total, rep.perimeter, rep.wp);
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ChainSummary {
    start: usize,
    seed: u64,
    best_total: f64,
    moves_tried: usize,
    moves_accepted: usize,
    exact_solves: usize,
    surrogate_violations: usize,
    max_surrogate_ratio: f64,
    interrupted: bool,
}

#[derive(Serialize)]
struct OptimizeSummary {
    best: EnergySummary,
    best_start: usize,
    best_seed: u64,
    interrupted: bool,
    chains: Vec<ChainSummary>,
}

fn cmd_optimize(cfg: &RunConfig, w: &mut OutputWriter, stop: &AtomicBool) -> Result<i32, CliError> {
    let schedule = cfg.schedule.schedule()?;
    let (starts, params) = match &cfg.shape {
        Some(path) => {
            let e = load_shape(Some(path))?;
            let mut pc = cfg.params.clone();
            pc.target_cells = e.len();
            let params = pc.energy_params(e.grid().clone())?;
            (vec![e], params)
        }
        None => {
            let params = cfg.params.energy_params(cfg.params.grid()?)?;
            if cfg.starts.is_empty() {
                return Err(CliError::Usage("no starting shapes configured".into()));
            }
            let starts = cfg
                .starts
                .iter()
                .map(|k| ansatz(*k, &params).map_err(optimizer_err))
                .collect::<Result<Vec<_>, _>>()?;
            (starts, params)
        }
    };
    let (runs, best) = multi_start(&starts, &params, &schedule, &cfg.seeds, Some(stop)).map_err(optimizer_err)?;
    let n_seeds = cfg.seeds.len();
    let b = &runs[best];

    let mut trace = String::from("start,seed,step,temperature,accepted,total,exact,best_total\n");
    for (j, r) in runs.iter().enumerate() {
        for t in &r.trace {
            trace.push_str(&format!(
                "{},{},{},{:?},{},{:?},{},{:?}\n",
                j / n_seeds,
                r.seed,
                t.step,
                t.temperature,
                t.accepted as u8,
                t.total,
                t.exact as u8,
                t.best_total
            ));
        }
    }
    let interrupted = runs.iter().any(|r| r.interrupted);
    w.write("trace.csv", trace.as_bytes())?;
    w.write("best.gs1", gs1::write(&b.best_shape).as_bytes())?;
    w.write("witness.gs1", gs1::write(&b.best_report.witness_f).as_bytes())?;
    w.write_json(
        "report.json",
        &OptimizeSummary {
            best: EnergySummary {
                total: b.best_report.total,
                perimeter: b.best_report.perimeter,
                wp: b.best_report.wp,
                lambda: params.lambda,
                p: params.p,
                cells: b.best_shape.len(),
                exact: b.best_report.exact,
            },
            best_start: best / n_seeds,
            best_seed: b.seed,
            interrupted,
            chains: runs
                .iter()
                .enumerate()
                .map(|(j, r)| ChainSummary {
                    start: j / n_seeds,
                    seed: r.seed,
                    best_total: r.best_report.total,
                    moves_tried: r.moves_tried,
                    moves_accepted: r.moves_accepted,
                    exact_solves: r.exact_solves,
                    surrogate_violations: r.surrogate_violations,
                    max_surrogate_ratio: r.max_surrogate_ratio,
                    interrupted: r.interrupted,
                })
                .collect(),
        },
    )?;
    println!(
        "best energy = {:?} (start {}, seed {}){}",
        b.best_report.total,
        best / n_seeds,
        b.seed,
        if interrupted { " [interrupted]" } else { "" }
    );
    Ok(if interrupted || stop.load(Ordering::SeqCst) {
        EXIT_INTERRUPTED
    } else {
        EXIT_OK
    })
}

#[derive(Serialize)]
struct CheckSummary {
    name: &'static str,
    pass: bool,
    csv: String,
    reports: Vec<PropertyReport>,
}

#[derive(Serialize)]
struct VerifySummary {
    pass: bool,
    quick: bool,
    seed: u64,
    checks: Vec<CheckSummary>,
}

/// Re-judges a report under a replacement tolerance. Interval expectations
/// carry their bounds in `expected` and are left alone.
fn override_tolerance(r: PropertyReport, tol: f64) -> PropertyReport {
    match r.expected {
        Expected::Value { .. } => PropertyReport::new(&r.name, r.samples, r.statistic, r.expected, tol, r.artifacts),
        Expected::Interval { .. } => r,
    }
}

fn check_table(reports: &[PropertyReport]) -> String {
    let mut out = String::from("report,samples,statistic,expected,tolerance,pass\n");
    for r in reports {
        let exp = match r.expected {
            Expected::Value { value } => format!("{value:?}"),
            Expected::Interval { lo, hi } => format!("[{lo:?};{hi:?}]"),
        };
        out.push_str(&format!(
            "{},{},{:?},{},{:?},{}\n",
            r.name, r.samples, r.statistic, exp, r.tolerance, r.pass as u8
        ));
    }
    out
}

fn cmd_verify(cfg: &RunConfig, w: &mut OutputWriter) -> Result<i32, CliError> {
    for (name, tol) in &cfg.tolerance_overrides {
        CheckName::parse(name)?;
        if !(tol.is_finite() && *tol >= 0.0) {
            return Err(CliError::Usage(format!("tolerance for {name} must be nonnegative")));
        }
    }
    if cfg.checks.is_empty() {
        return Err(CliError::Usage("no checks selected".into()));
    }
    let results: Vec<Vec<PropertyReport>> = cfg
        .checks
        .par_iter()
        .map(|&c| run_check(c, cfg.quick, cfg.seed).map_err(solver))
        .collect::<Result<_, _>>()?;

    let mut checks = Vec::new();
    for (&c, reports) in cfg.checks.iter().zip(results) {
        let reports: Vec<PropertyReport> = match cfg.tolerance_overrides.get(c.as_str()) {
            Some(&tol) => reports.into_iter().map(|r| override_tolerance(r, tol)).collect(),
            None => reports,
        };
        let csv = format!("{}.csv", c.as_str());
        w.write(&csv, check_table(&reports).as_bytes())?;
        for r in &reports {
            w.write(&format!("{}/{}.csv", c.as_str(), r.name), r.artifacts.to_csv().as_bytes())?;
        }
        let pass = reports.iter().all(|r| r.pass);
        for r in &reports {
            println!("{}", r.summary_line());
        }
        println!("check {} {}", c.as_str(), if pass { "PASS" } else { "FAIL" });
        checks.push(CheckSummary {
            name: c.as_str(),
            pass,
            csv,
            reports,
        });
    }
    let pass = checks.iter().all(|c| c.pass);
    w.write_json(
        "summary.json",
        &VerifySummary {
            pass,
            quick: cfg.quick,
            seed: cfg.seed,
            checks,
        },
    )?;
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[derive(Serialize)]
struct AnsatzSummary {
    ansatz: AnsatzKind,
    cells: usize,
    volume: f64,
    perimeter: f64,
    shape_file: &'static str,
}

fn cmd_ansatz(cfg: &RunConfig, w: &mut OutputWriter) -> Result<i32, CliError> {
    let params = cfg.params.energy_params(cfg.params.grid()?)?;
    let s = ansatz(cfg.ansatz, &params).map_err(optimizer_err)?;
    w.write("shape.gs1", gs1::write(&s).as_bytes())?;
    w.write_json(
        "ansatz.json",
        &AnsatzSummary {
            ansatz: cfg.ansatz,
            cells: s.len(),
            volume: s.volume(),
            perimeter: perimeter(&s).value,
            shape_file: "shape.gs1",
        },
    )?;
    Ok(EXIT_OK)
}
