//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line per criterion, and exits non-zero if any fails.

mod support;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use pcss::analysis::{
    check_isolation, check_schedule, gfb_sufficient_test, oracle_cbs_uniproc, speedup, tardiness, CONSISTENCY,
    DEQUE_BOTTOM, DEQUE_TOP, EDF_ORDER, PLACEMENT, WORK_CONSERVATION,
};
use pcss::model::ServerId;
use pcss::workload::{generate, realize, ExecRange, GenParams};
use pcss::{run, run_jobs, Policy, Rational, RunConfig, StealPolicy, TaskSet};
use support::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Draw `count` task sets, skipping seeds the generator rejects.
fn sets(count: usize, params: impl Fn(u64) -> GenParams) -> Vec<(u64, TaskSet)> {
    sets_where(count, params, |_, _| true)
}

fn sets_where(
    count: usize,
    params: impl Fn(u64) -> GenParams,
    keep: impl Fn(&GenParams, &TaskSet) -> bool,
) -> Vec<(u64, TaskSet)> {
    let mut out = Vec::with_capacity(count);
    let mut seed = 0;
    while out.len() < count && seed < 100 * count as u64 {
        let p = params(seed);
        if let Ok(set) = generate(&p) {
            if keep(&p, &set) {
                out.push((seed, set));
            }
        }
        seed += 1;
    }
    out
}

fn campaign_params(seed: u64) -> GenParams {
    let m = [1u16, 2, 4, 8][(seed % 4) as usize];
    GenParams {
        n_tasks: m as usize + 1 + (seed / 4 % (m as u64 + 2)) as usize,
        total_utilization: Rational::new(m as i64 * (2 + (seed % 6) as i64), 8),
        cores: m,
        pjobs: (0, 4),
        periods: (10, 100),
        isolated_pct: 50,
        sporadic_pct: 50,
        seed,
    }
}

fn campaign_steal(seed: u64) -> StealPolicy {
    match seed % 5 {
        0 => StealPolicy::Off,
        1 => StealPolicy::QueueEmptyOnly,
        _ => StealPolicy::DeadlineCompare,
    }
}

#[derive(Default)]
struct Campaign {
    sets: usize,
    isolation_violations: usize,
    edf: usize,
    deque: usize,
    placement: usize,
    consistency: usize,
    work_conservation: usize,
    settles: usize,
    deque_ops: usize,
    first_problem: Option<String>,
}

/// Engine plus isolation check on the 500 campaign sets, timed.
fn isolation_campaign() -> (usize, [usize; 4], usize, Duration) {
    let start = Instant::now();
    let (mut runs, mut by_cores, mut violations) = (0, [0; 4], 0);
    for (seed, set) in sets(500, campaign_params) {
        let m = campaign_params(seed).cores;
        let cfg = RunConfig {
            cores: m,
            horizon: 100 * set.max_period(),
            seed,
            steal: campaign_steal(seed),
            ..RunConfig::default()
        };
        let Ok(trace) = run(&set, &cfg) else { continue };
        runs += 1;
        by_cores[m.trailing_zeros() as usize] += 1;
        violations += check_isolation(&trace, &set).violations.len();
    }
    (runs, by_cores, violations, start.elapsed())
}

/// The same campaign with audit records, replayed by both checkers.
fn run_campaign() -> Campaign {
    let mut c = Campaign::default();
    for (seed, set) in sets(500, campaign_params) {
        let m = campaign_params(seed).cores;
        let cfg = RunConfig {
            cores: m,
            horizon: 100 * set.max_period(),
            seed,
            steal: campaign_steal(seed),
            audit: true,
            ..RunConfig::default()
        };
        let trace = match run(&set, &cfg) {
            Ok(t) => t,
            Err(e) => {
                c.first_problem.get_or_insert(format!("seed {seed}: {e}"));
                c.consistency += 1;
                continue;
            }
        };
        c.sets += 1;
        let iso = check_isolation(&trace, &set);
        c.isolation_violations += iso.violations.len();
        if let Some(v) = iso.violations.first() {
            c.first_problem.get_or_insert(format!("seed {seed}: {v:?}"));
        }
        let sched = check_schedule(&trace);
        c.edf += sched.count(EDF_ORDER);
        c.deque += sched.count(DEQUE_BOTTOM) + sched.count(DEQUE_TOP);
        c.placement += sched.count(PLACEMENT);
        c.consistency += sched.count(CONSISTENCY);
        c.work_conservation += sched.count(WORK_CONSERVATION);
        c.settles += sched.settles_checked;
        c.deque_ops += sched.deque_ops_checked;
        if let Some(v) = sched.violations.first() {
            c.first_problem.get_or_insert(format!("seed {seed}: {v:?}"));
        }
    }
    c
}

fn criterion_1(c: &Campaign) -> Outcome {
    let (runs, by_cores, violations, elapsed) = isolation_campaign();
    let pass = runs == 500
        && violations == 0
        && elapsed < Duration::from_secs(60)
        && c.sets == 500
        && c.isolation_violations == 0;
    outcome(
        pass,
        format!(
            "{runs} sets (m=1/2/4/8: {by_cores:?}), {violations} isolation violations in {:.1}s; \
             {} more in the audited rerun",
            elapsed.as_secs_f64(),
            c.isolation_violations
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut mismatches = Vec::new();
    let cases = sets(100, |seed| GenParams {
        n_tasks: 2 + (seed % 7) as usize,
        total_utilization: Rational::new(1 + (seed % 8) as i64, 8),
        cores: 1,
        pjobs: (0, 0),
        periods: (4, 100),
        isolated_pct: 100,
        sporadic_pct: 50,
        seed,
    });
    for (seed, set) in &cases {
        let horizon = 100 * set.max_period();
        let oracle = oracle_cbs_uniproc(set, &realize(set, horizon, *seed, ExecRange::FULL), horizon);
        for policy in [Policy::Pcss, Policy::Cbs] {
            let cfg = RunConfig {
                horizon,
                seed: *seed,
                policy,
                exec: ExecRange::FULL,
                ..RunConfig::default()
            };
            let engine = run(set, &cfg).expect("engine run");
            if engine.schedule_text() != oracle.schedule_text() {
                mismatches.push((*seed, policy.as_str()));
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{} sets compared byte-for-byte under pcss and cbs, mismatches {:?}",
            cases.len(),
            mismatches
        ),
    )
}

fn criterion_3(c: &Campaign) -> Outcome {
    let pass = c.edf == 0 && c.deque == 0 && c.placement == 0 && c.consistency == 0 && c.settles > 0;
    let mut detail = format!(
        "{} decision instants, {} deque operations; edf={} deque={} placement={} consistency={}",
        c.settles, c.deque_ops, c.edf, c.deque, c.placement, c.consistency
    );
    if let (false, Some(p)) = (pass, &c.first_problem) {
        detail.push_str(&format!("; first: {p}"));
    }
    outcome(pass, detail)
}

fn criterion_4() -> Outcome {
    let mut failed = Vec::new();
    let all = fixtures();
    for f in &all {
        let cfg = RunConfig {
            horizon: f.horizon,
            ..RunConfig::default()
        };
        let trace = run_jobs(&f.set, f.jobs.clone(), &cfg).expect("fixture run");
        if rows(&trace.schedule()) != f.expected || css_oracle(&f.set, &f.jobs, f.horizon) != f.expected {
            failed.push(f.name);
        }
    }
    outcome(
        failed.is_empty(),
        format!("{} fixtures, failing {:?}", all.len(), failed),
    )
}

fn misses_of_isolated(set: &TaskSet, cfg: &RunConfig) -> Vec<(ServerId, u64)> {
    let trace = run(set, cfg).expect("engine run");
    let stats = tardiness(&trace);
    set.tasks()
        .iter()
        .filter(|t| t.isolated)
        .map(|t| (t.id, stats.iter().find(|s| s.task == t.id).map_or(0, |s| s.misses)))
        .collect()
}

fn criterion_5() -> Outcome {
    let (set, jobs) = fork_join_case();
    let horizon = 20;
    let go = |cores, steal| {
        let cfg = RunConfig {
            cores,
            horizon,
            steal,
            ..RunConfig::default()
        };
        run_jobs(&set, jobs.clone(), &cfg).expect("engine run")
    };
    let parallel = go(4, StealPolicy::DeadlineCompare);
    let no_steal = go(4, StealPolicy::Off);
    let single = go(1, StealPolicy::DeadlineCompare);
    let response = |t: &pcss::Trace| {
        tardiness(t)
            .iter()
            .find(|s| s.task == ServerId(1))
            .map(|s| s.mean_response.clone())
    };
    let crafted = response(&parallel).as_deref() == Some("5")
        && response(&no_steal).as_deref() == Some("13")
        && response(&single).as_deref() == Some("13")
        && speedup(&parallel, &no_steal, ServerId(1)).ok() == Some(Rational::new(13, 5));

    let mut regressions = Vec::new();
    let cases = sets_where(
        200,
        |seed| {
            let m = [2u16, 4][(seed % 2) as usize];
            GenParams {
                n_tasks: m as usize + 2 + (seed % 4) as usize,
                total_utilization: Rational::new(m as i64 * (3 + (seed % 5) as i64), 16),
                cores: m,
                pjobs: (1, 4),
                periods: (10, 100),
                isolated_pct: 50,
                sporadic_pct: 50,
                seed,
            }
        },
        |p, set| gfb_sufficient_test(set, p.cores),
    );
    let mut isolated_tasks = 0;
    for (seed, set) in &cases {
        let cores = [2u16, 4][(seed % 2) as usize];
        let base = RunConfig {
            cores,
            horizon: 100 * set.max_period(),
            seed: *seed,
            ..RunConfig::default()
        };
        let with = misses_of_isolated(
            set,
            &RunConfig {
                steal: StealPolicy::DeadlineCompare,
                ..base
            },
        );
        let without = misses_of_isolated(
            set,
            &RunConfig {
                steal: StealPolicy::Off,
                ..base
            },
        );
        isolated_tasks += with.len();
        for ((task, on), (_, off)) in with.into_iter().zip(without) {
            if on > off {
                regressions.push((*seed, task.0, off, on));
            }
        }
    }
    outcome(
        crafted && regressions.is_empty() && cases.len() == 200,
        format!(
            "fork-join response 5 with stealing vs 13 without, speedup {}; {} GFB-schedulable sets, {} isolated tasks, miss regressions {:?}",
            speedup(&parallel, &no_steal, ServerId(1)).map_or("n/a".into(), |r| r.to_string()),
            cases.len(),
            isolated_tasks,
            regressions
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut diverged = Vec::new();
    for seed in 0..12u64 {
        let params = campaign_params(seed);
        let set = generate(&params).expect("generator");
        let cfg = RunConfig {
            cores: params.cores,
            horizon: 50 * set.max_period(),
            seed,
            steal: campaign_steal(seed),
            ..RunConfig::default()
        };
        let a = run(&set, &cfg).expect("run").to_text();
        let again = generate(&params).expect("generator");
        let b = run(&again, &cfg).expect("run").to_text();
        if a != b {
            diverged.push(seed);
        }
    }

    let params = GenParams {
        n_tasks: 16,
        total_utilization: Rational::from_integer(3),
        cores: 4,
        pjobs: (0, 4),
        periods: (10, 100),
        isolated_pct: 50,
        sporadic_pct: 50,
        seed: 7,
    };
    let set = generate(&params).expect("generator");
    let cfg = RunConfig {
        cores: 4,
        horizon: 500_000,
        seed: 7,
        ..RunConfig::default()
    };
    let start = Instant::now();
    let trace = run(&set, &cfg).expect("run");
    let elapsed = start.elapsed();
    let pass = diverged.is_empty() && trace.events >= 1_000_000 && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "12 configurations reproduced byte-for-byte (diverged {:?}); {} events in {:.2}s",
            diverged,
            trace.events,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7(c: &Campaign) -> Outcome {
    outcome(
        c.work_conservation == 0 && c.settles > 0,
        format!(
            "{} work-conservation violations over {} decision instants",
            c.work_conservation, c.settles
        ),
    )
}

fn main() -> ExitCode {
    let campaign = run_campaign();
    let results = [
        ("isolation under random campaigns", criterion_1(&campaign)),
        ("single-core equivalence with reference CBS", criterion_2()),
        ("global EDF order and deque discipline", criterion_3(&campaign)),
        ("hand-derived reclaim and steal schedules", criterion_4()),
        (
            "stealing speeds up parallel jobs without hurting isolated tasks",
            criterion_5(),
        ),
        ("determinism and throughput", criterion_6()),
        ("work conservation", criterion_7(&campaign)),
    ];
    let mut all = true;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "criterion {} {}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
        all &= o.pass;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
