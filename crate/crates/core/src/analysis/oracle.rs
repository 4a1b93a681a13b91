//! Naive per-tick reference simulator of plain CBS with hard reservations
//! on one processor. Shares no code with the event-driven engine beyond
//! the input types and the trace format.

use std::collections::VecDeque;

use crate::engine::{Policy, StealPolicy};
use crate::model::{ServerId, SourceKind, TaskSet, TimePoint, UnitId, WorkerId};
use crate::trace::{RecordKind, Trace, TraceMeta, TraceRecord};
use crate::workload::JobInstance;

struct OJob {
    unit: UnitId,
    left: u64,
    deadline: TimePoint,
}

struct OServer {
    id: ServerId,
    q: u64,
    t: u64,
    d: TimePoint,
    c: u64,
    jobs: VecDeque<OJob>,
}

/// Per-tick CBS schedule of `jobs` (each treated as one sequential piece of
/// work of its total cost) over `[0, horizon)`.
///
/// Each tick: replenish servers whose deadline is now and that have
/// pending work; admit arrivals with the CBS test; keep the running job
/// unless another server has a strictly earlier deadline; otherwise pick
/// the earliest deadline, lowest server id.
pub fn oracle_cbs_uniproc(set: &TaskSet, jobs: &[JobInstance], horizon: TimePoint) -> Trace {
    let mut trace = Trace::new(TraceMeta {
        cores: 1,
        horizon,
        policy: Policy::Cbs,
        steal: StealPolicy::Off,
        audit: false,
    });
    let mut servers: Vec<OServer> = set
        .tasks()
        .iter()
        .map(|t| OServer {
            id: t.id,
            q: t.budget,
            t: t.period,
            d: 0,
            c: 0,
            jobs: VecDeque::new(),
        })
        .collect();
    let mut pending: Vec<&JobInstance> = jobs.iter().collect();
    pending.sort_by_key(|j| (j.arrival, j.task, j.index));
    let mut next = 0;
    let mut current: Option<(usize, UnitId)> = None;

    for now in 0..horizon {
        for s in servers.iter_mut() {
            if now == s.d && !s.jobs.is_empty() {
                s.c = s.q;
                s.d += s.t;
            }
        }
        while next < pending.len() && pending[next].arrival == now {
            let j = pending[next];
            next += 1;
            let s = servers
                .iter_mut()
                .find(|s| s.id == j.task)
                .expect("job of unknown task");
            let unit = UnitId::job(j.task, j.index);
            let mut r = TraceRecord::instant(now, RecordKind::Arrival);
            r.unit = Some(unit);
            r.server = Some(j.task);
            r.deadline = Some(now + s.t);
            trace.records.push(r);
            if s.jobs.is_empty() && (now >= s.d || s.c as u128 * s.t as u128 >= (s.d - now) as u128 * s.q as u128) {
                s.d = now + s.t;
                s.c = s.q;
            }
            s.jobs.push_back(OJob {
                unit,
                left: j.body.total_cost(),
                deadline: now + s.t,
            });
        }

        let best = servers
            .iter()
            .enumerate()
            .filter(|(_, s)| s.c > 0 && !s.jobs.is_empty())
            .min_by_key(|(_, s)| (s.d, s.id))
            .map(|(i, _)| i);
        let keep = current.filter(|&(i, u)| {
            let s = &servers[i];
            s.c > 0 && s.jobs.front().map(|j| j.unit) == Some(u) && best.is_none_or(|b| servers[b].d >= s.d)
        });
        current = keep.or_else(|| best.map(|i| (i, servers[i].jobs[0].unit)));

        let Some((i, unit)) = current else { continue };
        let s = &mut servers[i];
        let rec = TraceRecord {
            start: now,
            end: now + 1,
            worker: Some(WorkerId(0)),
            kind: RecordKind::Run,
            unit: Some(unit),
            server: Some(s.id),
            source: Some((SourceKind::Own, s.id)),
            deadline: Some(s.d),
        };
        match trace.records.last_mut() {
            Some(last)
                if last.kind == RecordKind::Run
                    && last.end == now
                    && (last.unit, last.deadline) == (rec.unit, rec.deadline) =>
            {
                last.end = now + 1
            }
            _ => trace.records.push(rec),
        }
        s.c -= 1;
        let job = s.jobs.front_mut().expect("running job");
        job.left -= 1;
        if job.left == 0 {
            let job = s.jobs.pop_front().unwrap();
            let mut r = TraceRecord::instant(now + 1, RecordKind::Finish);
            r.unit = Some(job.unit);
            r.server = Some(s.id);
            r.deadline = Some(job.deadline);
            trace.records.push(r);
            current = None;
        } else if s.c == 0 {
            current = None;
        }
    }
    trace
}
