//! Test-only helpers, including a naive per-tick uniprocessor simulator of
//! the capacity sharing and stealing rules used to double-check the
//! hand-derived fixtures. It is written independently of the engine.

#![allow(dead_code)]

use std::collections::VecDeque;

use pcss::model::{ArrivalKind, ArrivalModel, JobTemplate, ServerId, SourceKind, TaskSet, TaskSpec, UnitId, WorkerId};
use pcss::trace::{RecordKind, TraceRecord};
use pcss::workload::JobInstance;

pub fn task(id: u32, q: u64, t: u64, isolated: bool) -> TaskSpec {
    TaskSpec {
        id: ServerId(id),
        budget: q,
        period: t,
        isolated,
        arrival: ArrivalModel {
            kind: ArrivalKind::Periodic,
            min_gap: t,
            offset: 0,
        },
        body: JobTemplate::sequential(q),
    }
}

pub fn job(task: u32, index: u32, arrival: u64, cost: u64) -> JobInstance {
    JobInstance {
        task: ServerId(task),
        index,
        arrival,
        body: JobTemplate::sequential(cost),
    }
}

/// Compact schedule row: (start, end, unit, source kind, source server, deadline).
pub type Row = (u64, u64, String, SourceKind, u32, u64);

pub fn rows(schedule: &[TraceRecord]) -> Vec<Row> {
    schedule
        .iter()
        .map(|r| {
            let (k, s) = r.source.unwrap();
            (r.start, r.end, r.unit.unwrap().to_string(), k, s.0, r.deadline.unwrap())
        })
        .collect()
}

pub fn row(start: u64, end: u64, unit: &str, kind: SourceKind, src: u32, d: u64) -> Row {
    (start, end, unit.to_string(), kind, src, d)
}

struct S {
    id: ServerId,
    q: u64,
    t: u64,
    iso: bool,
    d: u64,
    c: u64,
    r: u64,
    active: bool,
    jobs: VecDeque<(UnitId, u64)>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Run {
    server: usize,
    unit: UnitId,
    kind: SourceKind,
    src: usize,
    eff: u64,
}

fn pick(ss: &[S], i: usize, now: u64, busy: Option<(SourceKind, usize)>) -> Option<(SourceKind, usize, u64)> {
    let me = &ss[i];
    let taken = |k: SourceKind, j: usize| match busy {
        Some((bk, bj)) => {
            let pool = |k| if k == SourceKind::Residual { 1 } else { 0 };
            bj == j && pool(bk) == pool(k)
        }
        None => false,
    };
    let res = (0..ss.len())
        .filter(|&j| ss[j].r > 0 && now < ss[j].d && ss[j].d >= me.d && !taken(SourceKind::Residual, j))
        .min_by_key(|&j| (ss[j].d, ss[j].id));
    if let Some(j) = res {
        return Some((SourceKind::Residual, j, ss[j].d));
    }
    if me.c > 0 && !taken(SourceKind::Own, i) {
        return Some((SourceKind::Own, i, me.d));
    }
    (0..ss.len())
        .filter(|&j| {
            j != i
                && !ss[j].iso
                && !ss[j].active
                && ss[j].c > 0
                && now < ss[j].d
                && ss[j].d <= me.d
                && !taken(SourceKind::Stolen, j)
        })
        .min_by_key(|&j| (ss[j].d, ss[j].id))
        .map(|j| (SourceKind::Stolen, j, me.d))
}

fn valid(ss: &[S], r: &Run, now: u64) -> bool {
    let me = &ss[r.server];
    let x = &ss[r.src];
    match r.kind {
        SourceKind::Own => me.c > 0 && r.eff == me.d,
        SourceKind::Residual => x.r > 0 && now < x.d && x.d >= me.d && r.eff == x.d,
        SourceKind::Stolen => !x.iso && !x.active && x.c > 0 && now < x.d && x.d <= me.d && r.eff == me.d,
    }
}

/// Per-tick uniprocessor CSS schedule of sequential jobs, as merged RUN rows.
pub fn css_oracle(set: &TaskSet, jobs: &[JobInstance], horizon: u64) -> Vec<Row> {
    let mut ss: Vec<S> = set
        .tasks()
        .iter()
        .map(|t| S {
            id: t.id,
            q: t.budget,
            t: t.period,
            iso: t.isolated,
            d: if t.isolated { 0 } else { t.period },
            c: if t.isolated { 0 } else { t.budget },
            r: 0,
            active: false,
            jobs: VecDeque::new(),
        })
        .collect();
    let mut arrivals: Vec<&JobInstance> = jobs.iter().collect();
    arrivals.sort_by_key(|j| (j.arrival, j.task, j.index));
    let mut next = 0;
    let mut cur: Option<Run> = None;
    let mut out: Vec<Row> = Vec::new();

    for now in 0..horizon {
        for s in ss.iter_mut() {
            if now == s.d && (s.active || s.r > 0 || !s.iso) {
                let pending = !s.jobs.is_empty();
                if pending || !s.iso {
                    s.c = s.q;
                    s.d += s.t;
                    s.r = 0;
                    s.active = pending;
                } else {
                    s.r = 0;
                    s.active = false;
                }
            }
        }
        while next < arrivals.len() && arrivals[next].arrival == now {
            let j = arrivals[next];
            next += 1;
            let i = ss.iter().position(|s| s.id == j.task).unwrap();
            let s = &mut ss[i];
            let was_pending = !s.jobs.is_empty();
            s.active = true;
            if !was_pending && (now >= s.d || s.c as u128 * s.t as u128 >= (s.d - now) as u128 * s.q as u128) {
                s.d = now + s.t;
                s.c = s.q;
                s.r = 0;
            }
            s.jobs.push_back((UnitId::job(j.task, j.index), j.body.total_cost()));
        }

        if let Some(r) = cur {
            if !valid(&ss, &r, now) {
                cur = pick(&ss, r.server, now, None).map(|(kind, src, eff)| Run { kind, src, eff, ..r });
            }
        }
        // A preempted job may now be the best choice for the freed slot, so
        // iterate until the running job is no longer beaten.
        for _ in 0..=ss.len() {
            let busy = cur.map(|r| (r.kind, r.src));
            let best = (0..ss.len())
                .filter(|&i| !ss[i].jobs.is_empty() && cur.is_none_or(|r| r.server != i))
                .filter_map(|i| {
                    pick(&ss, i, now, busy).map(|(kind, src, eff)| Run {
                        server: i,
                        unit: ss[i].jobs[0].0,
                        kind,
                        src,
                        eff,
                    })
                })
                .min_by_key(|r| (r.eff, ss[r.server].d, ss[r.server].id));
            match (cur, best) {
                (None, Some(b)) => cur = Some(b),
                (Some(c), Some(b)) if b.eff < c.eff => cur = Some(b),
                _ => break,
            }
        }

        let Some(r) = cur else { continue };
        match r.kind {
            SourceKind::Residual => ss[r.src].r -= 1,
            _ => ss[r.src].c -= 1,
        }
        let unit = r.unit.to_string();
        match out.last_mut() {
            Some(last)
                if last.1 == now && last.2 == unit && (last.3, last.4, last.5) == (r.kind, ss[r.src].id.0, r.eff) =>
            {
                last.1 = now + 1
            }
            _ => out.push((now, now + 1, unit, r.kind, ss[r.src].id.0, r.eff)),
        }
        let s = &mut ss[r.server];
        s.jobs[0].1 -= 1;
        if s.jobs[0].1 == 0 {
            s.jobs.pop_front();
            if s.jobs.is_empty() {
                if s.iso && s.c > 0 {
                    s.r = s.c;
                    s.c = 0;
                } else {
                    s.active = false;
                }
            }
            cur = None;
        }
    }
    out
}

pub fn worker(i: u16) -> Option<WorkerId> {
    Some(WorkerId(i))
}

pub fn kinds_at(records: &[TraceRecord], t: u64) -> Vec<RecordKind> {
    records
        .iter()
        .filter(|r| r.start == t && r.end == t)
        .map(|r| r.kind)
        .collect()
}

/// One isolated task (Q=13, T=20) whose single job runs 1 tick and then
/// forks three 4-tick pjobs, next to two idle non-isolated servers
/// (Q=4, T=10) whose capacity can be stolen.
pub fn fork_join_case() -> (TaskSet, Vec<JobInstance>) {
    use pcss::model::Segment;
    let mut target = task(1, 13, 20, true);
    target.body = JobTemplate {
        segments: vec![Segment {
            cost: 1,
            spawn: vec![4, 4, 4],
        }],
    };
    let set = TaskSet::new(vec![target.clone(), task(2, 4, 10, false), task(3, 4, 10, false)]).unwrap();
    let jobs = vec![JobInstance {
        task: ServerId(1),
        index: 0,
        arrival: 0,
        body: target.body,
    }];
    (set, jobs)
}

pub struct Fixture {
    pub name: &'static str,
    pub set: TaskSet,
    pub jobs: Vec<JobInstance>,
    pub horizon: u64,
    pub expected: Vec<Row>,
}

/// Hand-derived single-core schedules, one per capacity rule.
pub fn fixtures() -> Vec<Fixture> {
    use SourceKind::*;
    let set = |ts: Vec<TaskSpec>| TaskSet::new(ts).unwrap();
    vec![
        Fixture {
            name: "early completion releases residual",
            set: set(vec![task(1, 4, 10, true), task(2, 4, 8, true)]),
            jobs: vec![job(1, 0, 0, 2), job(2, 0, 1, 6)],
            horizon: 12,
            expected: vec![
                row(0, 1, "J1.0", Own, 1, 10),
                row(1, 5, "J2.0", Own, 2, 9),
                row(5, 6, "J1.0", Own, 1, 10),
                row(6, 8, "J2.0", Residual, 1, 10),
            ],
        },
        Fixture {
            name: "residuals chain by deadline",
            set: set(vec![task(1, 3, 20, true), task(2, 3, 19, true), task(3, 1, 10, true)]),
            jobs: vec![job(1, 0, 0, 1), job(2, 0, 0, 1), job(3, 0, 2, 5)],
            horizon: 25,
            expected: vec![
                row(0, 1, "J2.0", Own, 2, 19),
                row(1, 2, "J1.0", Own, 1, 20),
                row(2, 4, "J3.0", Residual, 2, 19),
                row(4, 6, "J3.0", Residual, 1, 20),
                row(6, 7, "J3.0", Own, 3, 12),
            ],
        },
        Fixture {
            name: "exhausted server waits for replenishment",
            set: set(vec![task(1, 2, 10, true), task(2, 3, 40, true), task(3, 4, 30, true)]),
            jobs: vec![job(1, 0, 0, 5), job(2, 0, 0, 3), job(3, 0, 13, 1)],
            horizon: 30,
            expected: vec![
                row(0, 2, "J1.0", Own, 1, 10),
                row(2, 5, "J2.0", Own, 2, 40),
                row(10, 12, "J1.0", Own, 1, 20),
                row(13, 14, "J3.0", Own, 3, 43),
                row(14, 15, "J1.0", Residual, 3, 43),
            ],
        },
        Fixture {
            name: "stealing chains across inactive servers",
            set: set(vec![task(1, 2, 10, true), task(2, 2, 8, false), task(3, 2, 9, false)]),
            jobs: vec![job(1, 0, 0, 7)],
            horizon: 20,
            expected: vec![
                row(0, 2, "J1.0", Own, 1, 10),
                row(2, 4, "J1.0", Stolen, 2, 10),
                row(4, 6, "J1.0", Stolen, 3, 10),
                row(10, 11, "J1.0", Own, 1, 20),
            ],
        },
        Fixture {
            name: "residual discarded at donor deadline",
            set: set(vec![task(1, 4, 10, true), task(3, 1, 2, true)]),
            jobs: vec![job(1, 0, 0, 1), job(3, 0, 8, 3)],
            horizon: 20,
            expected: vec![
                row(0, 1, "J1.0", Own, 1, 10),
                row(8, 10, "J3.0", Residual, 1, 10),
                row(10, 11, "J3.0", Own, 3, 12),
            ],
        },
    ]
}
