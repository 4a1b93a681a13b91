//! Task-set files, seeded task-set generation, and per-run realization of
//! arrival times and execution times.

use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{ModelError, WorkloadError};
use crate::model::{
    ArrivalKind, ArrivalModel, Duration, JobTemplate, Rational, Segment, ServerId, TaskSet, TaskSpec, TimePoint,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSet {
    #[serde(default = "one")]
    version: u32,
    #[serde(default)]
    tasks: Vec<FileTask>,
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTask {
    id: u32,
    #[serde(rename = "Q")]
    q: u64,
    #[serde(rename = "T")]
    t: u64,
    #[serde(default = "yes")]
    isolated: bool,
    #[serde(default)]
    arrival: Option<FileArrival>,
    segments: Vec<Segment>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileArrival {
    kind: ArrivalKind,
    min_gap: Option<u64>,
    #[serde(default)]
    offset: u64,
}

/// Parse and validate a task-set file (TOML, see `docs/taskset-format.md`).
pub fn load_spec(text: &str) -> Result<TaskSet, WorkloadError> {
    let file: FileSet = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
            .unwrap_or(0);
        WorkloadError::Parse {
            line,
            message: e.message().to_string(),
        }
    })?;
    if file.version != 1 {
        return Err(WorkloadError::Parse {
            line: 1,
            message: format!("unsupported task-set version {}", file.version),
        });
    }
    let mut problems = Vec::new();
    let mut tasks = Vec::new();
    for (i, ft) in file.tasks.into_iter().enumerate() {
        let arrival = match ft.arrival {
            Some(a) => ArrivalModel {
                kind: a.kind,
                min_gap: a.min_gap.unwrap_or(ft.t),
                offset: a.offset,
            },
            None => ArrivalModel {
                kind: ArrivalKind::Periodic,
                min_gap: ft.t,
                offset: 0,
            },
        };
        let task = TaskSpec {
            id: ServerId(ft.id),
            budget: ft.q,
            period: ft.t,
            isolated: ft.isolated,
            arrival,
            body: JobTemplate { segments: ft.segments },
        };
        for (field, msg) in task.violations() {
            problems.push(format!("tasks[{i}].{field}: {msg}"));
        }
        tasks.push(task);
    }
    if !problems.is_empty() {
        return Err(ModelError::Invalid(problems).into());
    }
    Ok(TaskSet::new(tasks)?)
}

/// Render a task set in the file format accepted by [`load_spec`].
pub fn to_spec(set: &TaskSet) -> String {
    let mut out = String::from("version = 1\n");
    for t in set.tasks() {
        out.push_str(&format!(
            "\n[[tasks]]\nid = {}\nQ = {}\nT = {}\nisolated = {}\narrival = {{ kind = \"{}\", min_gap = {}, offset = {} }}\n",
            t.id,
            t.budget,
            t.period,
            t.isolated,
            match t.arrival.kind {
                ArrivalKind::Periodic => "periodic",
                ArrivalKind::Sporadic => "sporadic",
            },
            t.arrival.min_gap,
            t.arrival.offset
        ));
        for s in &t.body.segments {
            let spawn: Vec<String> = s.spawn.iter().map(u64::to_string).collect();
            out.push_str(&format!(
                "[[tasks.segments]]\ncost = {}\nspawn = [{}]\n",
                s.cost,
                spawn.join(", ")
            ));
        }
    }
    out
}

/// Parse `p/q` or an integer into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let bad = || format!("`{s}` is not a rational of the form p/q");
    match s.split_once('/') {
        Some((p, q)) => {
            let p: i64 = p.trim().parse().map_err(|_| bad())?;
            let q: i64 = q.trim().parse().map_err(|_| bad())?;
            if q == 0 {
                return Err(bad());
            }
            Ok(Rational::new(p, q))
        }
        None => s.trim().parse().map(Rational::from_integer).map_err(|_| bad()),
    }
}

/// Parameters for random task-set generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenParams {
    pub n_tasks: usize,
    pub total_utilization: Rational,
    pub cores: u16,
    /// Inclusive range for the number of pjobs each job spawns.
    pub pjobs: (u32, u32),
    /// Inclusive range periods are drawn from, log-uniformly.
    pub periods: (Duration, Duration),
    /// Percentage of tasks with isolated servers.
    pub isolated_pct: u32,
    /// Percentage of tasks with sporadic arrivals.
    pub sporadic_pct: u32,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            n_tasks: 4,
            total_utilization: Rational::new(1, 2),
            cores: 1,
            pjobs: (0, 3),
            periods: (10, 1000),
            isolated_pct: 50,
            sporadic_pct: 50,
            seed: 0,
        }
    }
}

fn parse_range<T: FromStr>(v: &str) -> Option<(T, T)> {
    match v.split_once("..") {
        Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
        None => {
            let x: T = v.parse().ok()?;
            let y: T = v.parse().ok()?;
            Some((x, y))
        }
    }
}

impl FromStr for GenParams {
    type Err = WorkloadError;

    /// `n=8,U=3/2,par=0..3,periods=10..1000,iso=50,sporadic=50,seed=1`;
    /// omitted keys keep their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = GenParams::default();
        for kv in s.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let bad = || WorkloadError::BadParams(format!("bad generator field `{kv}`"));
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            match k {
                "n" => p.n_tasks = v.parse().map_err(|_| bad())?,
                "U" | "u" => p.total_utilization = parse_rational(v).map_err(WorkloadError::BadParams)?,
                "m" => p.cores = v.parse().map_err(|_| bad())?,
                "par" => p.pjobs = parse_range(v).ok_or_else(bad)?,
                "periods" => p.periods = parse_range(v).ok_or_else(bad)?,
                "iso" => p.isolated_pct = v.parse().map_err(|_| bad())?,
                "sporadic" => p.sporadic_pct = v.parse().map_err(|_| bad())?,
                "seed" => p.seed = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        Ok(p)
    }
}

/// Mix a seed with stream tags so independent draws never share a stream.
fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        x = splitmix(x ^ t.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    }
    ChaCha8Rng::seed_from_u64(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const HYPERPERIOD: u64 = 3600;

fn period_candidates(lo: Duration, hi: Duration) -> Vec<Duration> {
    let divisors: Vec<u64> = (lo..=hi.min(HYPERPERIOD))
        .filter(|d| HYPERPERIOD.is_multiple_of(*d))
        .collect();
    if divisors.is_empty() {
        (lo..=hi).collect()
    } else {
        divisors
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, candidates: &[Duration]) -> Duration {
    let lo = (candidates[0] as f64).ln();
    let hi = (*candidates.last().unwrap() as f64).ln();
    let x = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    *candidates
        .iter()
        .min_by(|a, b| {
            let da = ((**a as f64).ln() - x).abs();
            let db = ((**b as f64).ln() - x).abs();
            da.total_cmp(&db)
        })
        .unwrap()
}

/// UUniFast split of `total` into `n` shares, discarding splits with a
/// share above 1.
fn uunifast(rng: &mut ChaCha8Rng, total: f64, n: usize) -> Option<Vec<f64>> {
    for _ in 0..1000 {
        let mut shares = Vec::with_capacity(n);
        let mut sum = total;
        for i in 1..n {
            let next = sum * rng.gen::<f64>().powf(1.0 / (n - i) as f64);
            shares.push(sum - next);
            sum = next;
        }
        shares.push(sum);
        if shares.iter().all(|&u| u <= 1.0) {
            return Some(shares);
        }
    }
    None
}

fn random_template(rng: &mut ChaCha8Rng, budget: Duration, pjobs: (u32, u32)) -> JobTemplate {
    let want = if pjobs.1 > pjobs.0 {
        rng.gen_range(pjobs.0..=pjobs.1)
    } else {
        pjobs.0
    } as u64;
    let k = want.min(budget.saturating_sub(1));
    if k == 0 {
        return JobTemplate::sequential(budget);
    }
    // k cut points in 1..budget give k+1 positive parts
    let mut cuts: Vec<u64> = sample(rng, (budget - 1) as usize, k as usize)
        .into_iter()
        .map(|c| c as u64 + 1)
        .collect();
    cuts.sort_unstable();
    let mut parts = Vec::with_capacity(k as usize + 1);
    let mut prev = 0;
    for c in cuts.into_iter().chain([budget]) {
        parts.push(c - prev);
        prev = c;
    }
    let head = parts[0];
    let spawn = parts[1..].to_vec();
    if head >= 2 && rng.gen_bool(0.5) {
        let tail = rng.gen_range(1..head);
        JobTemplate {
            segments: vec![
                Segment {
                    cost: head - tail,
                    spawn,
                },
                Segment {
                    cost: tail,
                    spawn: vec![],
                },
            ],
        }
    } else {
        JobTemplate {
            segments: vec![Segment { cost: head, spawn }],
        }
    }
}

/// Largest per-task budget adjustment used to hit the exact total.
const MAX_NUDGE: i64 = 3;

/// Pick `delta[i]` in `lo[i]..=hi[i]` with `sum(delta[i] * w[i]) == target`,
/// minimizing `sum(|delta[i]|)`.
fn nudge(w: &[i64], lo: &[i64], hi: &[i64], target: i64) -> Option<Vec<i64>> {
    let span: i64 = w.iter().map(|x| x * MAX_NUDGE).sum();
    if target.abs() > span || span > 200_000 {
        return None;
    }
    let width = (2 * span + 1) as usize;
    let at = |s: i64| (s + span) as usize;
    let mut cost = vec![u32::MAX; width];
    cost[at(0)] = 0;
    let mut choice: Vec<Vec<i8>> = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let mut next = vec![u32::MAX; width];
        let mut pick = vec![0i8; width];
        for (idx, &c) in cost.iter().enumerate() {
            if c == u32::MAX {
                continue;
            }
            let s = idx as i64 - span;
            for d in lo[i]..=hi[i] {
                let t = s + d * w[i];
                if t.abs() > span {
                    continue;
                }
                let nc = c + d.unsigned_abs() as u32;
                if nc < next[at(t)] {
                    next[at(t)] = nc;
                    pick[at(t)] = d as i8;
                }
            }
        }
        cost = next;
        choice.push(pick);
    }
    if cost[at(target)] == u32::MAX {
        return None;
    }
    let mut out = vec![0; w.len()];
    let mut s = target;
    for i in (0..w.len()).rev() {
        let d = choice[i][at(s)] as i64;
        out[i] = d;
        s -= d * w[i];
    }
    Some(out)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Seeded task-set generation with utilizations summing exactly to the
/// requested total.
///
/// Periods are drawn log-uniformly inside the configured range, preferring
/// divisors of 3600 so that hyperperiods stay small. Budgets start at
/// `round(u * T)` for UUniFast shares `u` and are then nudged by at most a
/// few ticks each so that the sum is exact.
pub fn generate(params: &GenParams) -> Result<TaskSet, WorkloadError> {
    let n = params.n_tasks;
    let total = params.total_utilization;
    let zero = Rational::from_integer(0);
    if n == 0 {
        return Err(WorkloadError::Infeasible("n_tasks must be at least 1".into()));
    }
    if total <= zero || total > Rational::from_integer(params.cores as i64) {
        return Err(WorkloadError::Infeasible(format!(
            "total utilization {total} outside (0, m={}]",
            params.cores
        )));
    }
    if total > Rational::from_integer(n as i64) {
        return Err(WorkloadError::Infeasible(format!(
            "{n} tasks cannot reach utilization {total} with each at most 1"
        )));
    }
    let (lo, hi) = params.periods;
    if lo == 0 || lo > hi {
        return Err(WorkloadError::Infeasible(format!("bad period range {lo}..{hi}")));
    }
    if params.pjobs.0 > params.pjobs.1 {
        return Err(WorkloadError::Infeasible("bad parallelism range".into()));
    }
    let candidates = period_candidates(lo, hi);
    let mut rng = stream(params.seed, &[0x6e6e]);
    let total_f = *total.numer() as f64 / *total.denom() as f64;
    let den = *total.denom() as u64;

    for _attempt in 0..1000 {
        let Some(shares) = uunifast(&mut rng, total_f, n) else {
            continue;
        };
        let periods: Vec<u64> = (0..n).map(|_| log_uniform(&mut rng, &candidates)).collect();
        let lcm = periods.iter().try_fold(1u64, |acc, &t| {
            let l = acc / gcd(acc, t) * t;
            (l <= 1_000_000).then_some(l)
        });
        let Some(lcm) = lcm else { continue };
        if lcm % den != 0 {
            continue;
        }
        let w: Vec<i64> = periods.iter().map(|&t| (lcm / t) as i64).collect();
        let base: Vec<i64> = shares
            .iter()
            .zip(&periods)
            .map(|(&u, &t)| ((u * t as f64).round() as i64).clamp(1, t as i64))
            .collect();
        let want = *total.numer() * (lcm / den) as i64;
        let have: i64 = base.iter().zip(&w).map(|(q, w)| q * w).sum();
        let dlo: Vec<i64> = base.iter().map(|q| (1 - q).max(-MAX_NUDGE)).collect();
        let dhi: Vec<i64> = base
            .iter()
            .zip(&periods)
            .map(|(q, &t)| (t as i64 - q).min(MAX_NUDGE))
            .collect();
        let Some(delta) = nudge(&w, &dlo, &dhi, want - have) else {
            continue;
        };
        let reservations: Vec<(Duration, Duration)> = base
            .iter()
            .zip(&delta)
            .zip(&periods)
            .map(|((q, d), &t)| ((q + d) as u64, t))
            .collect();

        let mut tasks = Vec::with_capacity(n);
        for (i, (q, t)) in reservations.into_iter().enumerate() {
            let sporadic = rng.gen_range(0..100) < params.sporadic_pct;
            tasks.push(TaskSpec {
                id: ServerId(i as u32 + 1),
                budget: q,
                period: t,
                isolated: rng.gen_range(0..100) < params.isolated_pct,
                arrival: ArrivalModel {
                    kind: if sporadic {
                        ArrivalKind::Sporadic
                    } else {
                        ArrivalKind::Periodic
                    },
                    min_gap: t,
                    offset: 0,
                },
                body: random_template(&mut rng, q, params.pjobs),
            });
        }
        return Ok(TaskSet::new(tasks)?);
    }
    Err(WorkloadError::Infeasible(format!(
        "could not split utilization {total} over {n} tasks with periods {lo}..{hi}"
    )))
}

/// Arrival times of a task in `[0, horizon)`.
pub fn arrivals(task: &TaskSpec, horizon: TimePoint, seed: u64) -> Vec<TimePoint> {
    let gap = task.arrival.min_gap.max(1);
    let mut rng = stream(seed, &[0xa1, task.id.0 as u64]);
    let mut out = Vec::new();
    let mut t = task.arrival.offset;
    while t < horizon {
        out.push(t);
        t += match task.arrival.kind {
            ArrivalKind::Periodic => gap,
            ArrivalKind::Sporadic => gap + rng.gen_range(0..=gap),
        };
    }
    out
}

/// Range of actual execution time per job, as a percentage of the template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecRange {
    pub lo_pct: u32,
    pub hi_pct: u32,
}

impl ExecRange {
    pub const FULL: ExecRange = ExecRange {
        lo_pct: 100,
        hi_pct: 100,
    };
}

impl Default for ExecRange {
    fn default() -> Self {
        ExecRange {
            lo_pct: 50,
            hi_pct: 100,
        }
    }
}

/// One job instance to be fed to the engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobInstance {
    pub task: ServerId,
    pub index: u32,
    pub arrival: TimePoint,
    pub body: JobTemplate,
}

/// Draw arrival and execution times for every job of the set.
pub fn realize(set: &TaskSet, horizon: TimePoint, seed: u64, exec: ExecRange) -> Vec<JobInstance> {
    let mut out = Vec::new();
    for task in set.tasks() {
        let mut rng = stream(seed, &[0xe7, task.id.0 as u64]);
        let total = task.body.total_cost();
        for (j, a) in arrivals(task, horizon, seed).into_iter().enumerate() {
            let pct = if exec.hi_pct > exec.lo_pct {
                rng.gen_range(exec.lo_pct..=exec.hi_pct)
            } else {
                exec.lo_pct
            } as u64;
            let e = (total * pct).div_ceil(100).clamp(1, total);
            out.push(JobInstance {
                task: task.id,
                index: j as u32,
                arrival: a,
                body: task.body.truncated(e),
            });
        }
    }
    out.sort_by_key(|j| (j.arrival, j.task, j.index));
    out
}
