use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use pcss::analysis::{check_isolation, check_schedule, gfb_sufficient_test, metrics_json, tardiness};
use pcss::workload::{generate, load_spec, parse_rational, to_spec, ExecRange, GenParams};
use pcss::{EngineError, Policy, Rational, RunConfig, StealPolicy, TaskSet, Trace};

#[derive(Parser)]
#[command(name = "pcss", version, about = "Capacity sharing and stealing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a task set and write its trace and metrics.
    Run(RunArgs),
    /// Check a trace for isolation, EDF, deque, and work-conservation violations.
    Check(CheckArgs),
    /// Run a seeded batch over a utilization and parallelism grid.
    Sweep(SweepArgs),
    /// Parse and validate task-set files.
    Validate(ValidateArgs),
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct Source {
    /// Task-set file.
    #[arg(long, value_name = "FILE", group = "source")]
    taskset: Option<PathBuf>,
    /// Generator parameters, e.g. `n=4,U=3/2,par=0..3,periods=10..100`.
    #[arg(long, value_name = "PARAMS", group = "source")]
    gen: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 1)]
    cores: u16,
    /// Simulated ticks; defaults to 100 times the longest period.
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "pcss", value_parser = parse_policy)]
    policy: Policy,
    #[arg(long, default_value = "on", value_parser = parse_steal)]
    steal: StealPolicy,
    /// Actual execution time range as a percentage of the job template.
    #[arg(long, default_value = "50..100", value_parser = parse_exec)]
    exec: ExecRange,
    /// Record READY/SETTLE audit records and check the schedule.
    #[arg(long)]
    audit: bool,
    /// Trace output file (`-` for stdout).
    #[arg(long, value_name = "OUT")]
    trace: Option<PathBuf>,
    /// Metrics JSON output file (`-` for stdout).
    #[arg(long, value_name = "OUT")]
    metrics: Option<PathBuf>,
    /// Write the simulated task set in file format.
    #[arg(long, value_name = "OUT")]
    save_taskset: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Trace file produced by `run --trace`.
    trace: PathBuf,
    /// Task set the trace was produced from; enables the isolation checks.
    #[arg(long, value_name = "FILE")]
    taskset: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Base generator parameters; `U`, `par`, `m`, and `seed` are set per point.
    #[arg(long, default_value = "n=8,periods=10..100")]
    gen: String,
    #[arg(long, default_value_t = 4)]
    cores: u16,
    /// Total utilizations, comma separated, each `p/q` or an integer.
    #[arg(long, default_value = "1,2,3", value_delimiter = ',', value_parser = parse_rational)]
    utils: Vec<Rational>,
    /// pjob ranges per job, comma separated, e.g. `0..0,1..3`.
    #[arg(long, default_value = "0..0,1..3", value_delimiter = ',', value_parser = parse_range)]
    par: Vec<(u32, u32)>,
    /// Steal policies to compare, comma separated.
    #[arg(long, default_value = "off,on", value_delimiter = ',', value_parser = parse_steal)]
    steal: Vec<StealPolicy>,
    /// Number of seeds per grid point.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Horizon in multiples of the longest period.
    #[arg(long, default_value_t = 100)]
    periods: u64,
    /// CSV output file (`-` for stdout).
    #[arg(long, default_value = "-")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse()
}

fn parse_steal(s: &str) -> Result<StealPolicy, String> {
    s.parse()
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let bad = || format!("expected `a..b` or `a`, got `{s}`");
    match s.split_once("..") {
        Some((a, b)) => Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)),
        None => s.parse().map(|x| (x, x)).map_err(|_| bad()),
    }
}

fn parse_exec(s: &str) -> Result<ExecRange, String> {
    let (lo_pct, hi_pct) = parse_range(s)?;
    Ok(ExecRange { lo_pct, hi_pct })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if path.as_os_str() == "-" {
        print!("{text}");
        Ok(())
    } else {
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

fn load_taskset(path: &Path) -> Result<TaskSet> {
    load_spec(&read(path)?).with_context(|| format!("invalid task set {}", path.display()))
}

/// Generator parameters with the core count and seed filled in from the
/// command line unless the string sets them.
fn gen_params(text: &str, cores: u16, seed: u64) -> Result<GenParams> {
    let mut p: GenParams = text.parse()?;
    let has = |key: &str| text.split(',').any(|kv| kv.trim().starts_with(key));
    if !has("m=") {
        p.cores = cores;
    }
    if !has("seed=") {
        p.seed = seed;
    }
    Ok(p)
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    let set = match (&a.source.taskset, &a.source.gen) {
        (Some(path), _) => load_taskset(path)?,
        (None, Some(text)) => generate(&gen_params(text, a.cores, a.seed)?)?,
        (None, None) => unreachable!("clap requires a source"),
    };
    if let Some(path) = &a.save_taskset {
        write(path, &to_spec(&set))?;
    }
    let cfg = RunConfig {
        cores: a.cores,
        horizon: a.horizon.unwrap_or(100 * set.max_period()),
        seed: a.seed,
        policy: a.policy,
        steal: a.steal,
        exec: a.exec,
        audit: a.audit,
    };
    let trace = match pcss::run(&set, &cfg) {
        Ok(t) => t,
        Err(EngineError::Invariant { time, message, trace }) => {
            if let Some(path) = &a.trace {
                write(path, &trace.to_text())?;
            }
            bail!("simulation stopped at t={time}: {message}");
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = &a.trace {
        write(path, &trace.to_text())?;
    }

    let iso = check_isolation(&trace, &set);
    let sched = a.audit.then(|| check_schedule(&trace));
    let clean = iso.is_clean() && sched.as_ref().is_none_or(|s| s.is_clean());
    if let Some(path) = &a.metrics {
        let checks = serde_json::json!({
            "isolation": iso,
            "schedule": sched,
            "gfb_schedulable": gfb_sufficient_test(&set, a.cores),
        });
        let mut text = serde_json::to_string_pretty(&metrics_json(&trace, checks))?;
        text.push('\n');
        write(path, &text)?;
    }
    let misses: u64 = tardiness(&trace).iter().map(|t| t.misses).sum();
    eprintln!(
        "{} tasks, U={}, m={}, horizon={}: {} events, {} deadline misses, {} isolation violations{}",
        set.len(),
        set.total_utilization(),
        cfg.cores,
        cfg.horizon,
        trace.events,
        misses,
        iso.violations.len(),
        sched
            .as_ref()
            .map(|s| format!(", {} schedule violations", s.violations.len()))
            .unwrap_or_default(),
    );
    report_violations(
        &iso.violations,
        sched.as_ref().map(|s| &s.violations[..]).unwrap_or(&[]),
    );
    Ok(clean)
}

fn report_violations<A: Serialize, B: Serialize>(iso: &[A], sched: &[B]) {
    const SHOWN: usize = 20;
    for v in iso.iter().take(SHOWN) {
        eprintln!("isolation: {}", serde_json::to_string(v).unwrap_or_default());
    }
    for v in sched.iter().take(SHOWN) {
        eprintln!("schedule: {}", serde_json::to_string(v).unwrap_or_default());
    }
}

fn cmd_check(a: CheckArgs) -> Result<bool> {
    let trace = Trace::parse(&read(&a.trace)?).with_context(|| format!("invalid trace {}", a.trace.display()))?;
    let sched = check_schedule(&trace);
    let iso = match &a.taskset {
        Some(path) => Some(check_isolation(&trace, &load_taskset(path)?)),
        None => None,
    };
    println!(
        "schedule: {} violations ({} decision instants, {} deque operations checked{})",
        sched.violations.len(),
        sched.settles_checked,
        sched.deque_ops_checked,
        if trace.meta.audit {
            ""
        } else {
            "; no audit records, EDF order not checked"
        },
    );
    if let Some(iso) = &iso {
        println!(
            "isolation: {} violations ({} reservation windows checked)",
            iso.violations.len(),
            iso.windows_checked
        );
    }
    let iso_v = iso.as_ref().map(|r| &r.violations[..]).unwrap_or(&[]);
    report_violations(iso_v, &sched.violations);
    Ok(sched.is_clean() && iso_v.is_empty())
}

#[derive(Serialize)]
struct SweepRow {
    utilization: String,
    par_min: u32,
    par_max: u32,
    steal: &'static str,
    seed: u64,
    cores: u16,
    tasks: usize,
    gfb_schedulable: bool,
    horizon: u64,
    events: u64,
    busy_ticks: u64,
    jobs_finished: u64,
    deadline_misses: u64,
    isolated_misses: u64,
    max_tardiness: u64,
    isolation_violations: usize,
}

fn sweep_point(
    base: &GenParams,
    a: &SweepArgs,
    u: Rational,
    par: (u32, u32),
    steal: StealPolicy,
    seed: u64,
) -> Result<Option<SweepRow>> {
    let params = GenParams {
        total_utilization: u,
        pjobs: par,
        cores: a.cores,
        seed,
        ..base.clone()
    };
    let set = match generate(&params) {
        Ok(s) => s,
        Err(pcss::WorkloadError::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let cfg = RunConfig {
        cores: a.cores,
        horizon: a.periods * set.max_period(),
        seed,
        steal,
        ..RunConfig::default()
    };
    let trace = pcss::run(&set, &cfg).with_context(|| format!("U={u} par={par:?} seed={seed}"))?;
    let tasks = tardiness(&trace);
    let isolated = |id| set.get(id).is_some_and(|t| t.isolated);
    Ok(Some(SweepRow {
        utilization: u.to_string(),
        par_min: par.0,
        par_max: par.1,
        steal: steal.as_str(),
        seed,
        cores: a.cores,
        tasks: set.len(),
        gfb_schedulable: gfb_sufficient_test(&set, a.cores),
        horizon: cfg.horizon,
        events: trace.events,
        busy_ticks: trace.runs().map(|r| r.length()).sum(),
        jobs_finished: tasks.iter().map(|t| t.finished).sum(),
        deadline_misses: tasks.iter().map(|t| t.misses).sum(),
        isolated_misses: tasks.iter().filter(|t| isolated(t.task)).map(|t| t.misses).sum(),
        max_tardiness: tasks.iter().map(|t| t.max).max().unwrap_or(0),
        isolation_violations: check_isolation(&trace, &set).violations.len(),
    }))
}

fn cmd_sweep(a: SweepArgs) -> Result<bool> {
    let base: GenParams = a.gen.parse()?;
    let mut points = Vec::new();
    for &u in &a.utils {
        for &par in &a.par {
            for seed in a.first_seed..a.first_seed + a.seeds {
                for &steal in &a.steal {
                    points.push((u, par, steal, seed));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
    let rows: Vec<Option<SweepRow>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(u, par, steal, seed)| sweep_point(&base, &a, u, par, steal, seed))
            .collect::<Result<_>>()
    })?;
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut skipped = 0;
    let mut violations = 0;
    for row in rows {
        match row {
            Some(r) => {
                violations += r.isolation_violations;
                out.serialize(r)?;
            }
            None => skipped += 1,
        }
    }
    let bytes = out.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    write(&a.out, std::str::from_utf8(&bytes)?)?;
    eprintln!(
        "{} runs, {skipped} infeasible points skipped, {violations} isolation violations",
        points.len() - skipped
    );
    Ok(violations == 0)
}

fn cmd_validate(a: ValidateArgs) -> Result<bool> {
    let mut ok = true;
    for path in &a.files {
        match load_spec(&read(path)?) {
            Ok(set) => println!(
                "{}: ok, {} tasks, U={}, max period {}",
                path.display(),
                set.len(),
                set.total_utilization(),
                set.max_period()
            ),
            Err(e) => {
                println!("{}: {e}", path.display());
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
