use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use crate::dispatch::StealPolicy;
use crate::model::{TimePoint, UnitId};
use crate::trace::{RecordKind, Trace, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleViolation {
    pub at: TimePoint,
    pub rule: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScheduleReport {
    pub violations: Vec<ScheduleViolation>,
    /// Decision instants at which EDF order and work conservation were checked.
    pub settles_checked: usize,
    pub deque_ops_checked: usize,
}

impl ScheduleReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, rule: &str) -> usize {
        self.violations.iter().filter(|v| v.rule == rule).count()
    }
}

pub const EDF_ORDER: &str = "edf-order";
pub const WORK_CONSERVATION: &str = "work-conservation";
pub const DEQUE_BOTTOM: &str = "owner-removes-bottom";
pub const DEQUE_TOP: &str = "thief-removes-top";
pub const PLACEMENT: &str = "placement";
pub const CONSISTENCY: &str = "consistency";

struct Replay {
    queue: BTreeSet<UnitId>,
    deques: Vec<VecDeque<UnitId>>,
    waiting: Vec<BTreeSet<UnitId>>,
    running: Vec<Option<(UnitId, TimePoint)>>,
    ready: Vec<(UnitId, TimePoint)>,
    steal: StealPolicy,
    report: ScheduleReport,
}

impl Replay {
    fn flag(&mut self, at: TimePoint, rule: &'static str, detail: String) {
        self.report.violations.push(ScheduleViolation { at, rule, detail });
    }

    fn worker(&mut self, r: &TraceRecord) -> Option<usize> {
        match r.worker.map(|w| w.0 as usize) {
            Some(w) if w < self.deques.len() => Some(w),
            other => {
                self.flag(
                    r.start,
                    CONSISTENCY,
                    format!("{:?} record with bad worker {other:?}", r.kind),
                );
                None
            }
        }
    }

    fn start_running(&mut self, r: &TraceRecord, w: usize, u: UnitId) {
        if let Some((cur, _)) = self.running[w] {
            self.flag(r.start, CONSISTENCY, format!("worker {w} took {u} while running {cur}"));
        }
        self.running[w] = Some((u, r.deadline.unwrap_or(TimePoint::MAX)));
    }

    fn apply(&mut self, r: &TraceRecord) {
        let Some(u) = r.unit else {
            if r.kind == RecordKind::Settle {
                self.settle(r.start);
            }
            return;
        };
        let t = r.start;
        match r.kind {
            RecordKind::Enqueue => {
                if u.is_pjob() {
                    self.flag(t, PLACEMENT, format!("pjob {u} entered the global queue"));
                } else if !self.queue.insert(u) {
                    self.flag(t, CONSISTENCY, format!("{u} queued twice"));
                }
            }
            RecordKind::Dispatch => {
                let Some(w) = self.worker(r) else { return };
                if !self.queue.remove(&u) {
                    self.flag(t, CONSISTENCY, format!("{u} dispatched but not queued"));
                }
                self.start_running(r, w, u);
            }
            RecordKind::Pop => {
                let Some(w) = self.worker(r) else { return };
                self.report.deque_ops_checked += 1;
                if self.deques[w].back() == Some(&u) {
                    self.deques[w].pop_back();
                } else {
                    self.flag(
                        t,
                        DEQUE_BOTTOM,
                        format!("worker {w} popped {u} which is not its bottom"),
                    );
                    self.remove_anywhere(u);
                }
                self.start_running(r, w, u);
            }
            RecordKind::Steal => {
                let Some(w) = self.worker(r) else { return };
                self.report.deque_ops_checked += 1;
                let victim = (0..self.deques.len()).find(|&v| v != w && self.deques[v].front() == Some(&u));
                match victim {
                    Some(v) => {
                        self.deques[v].pop_front();
                    }
                    None => {
                        self.flag(
                            t,
                            DEQUE_TOP,
                            format!("worker {w} stole {u} from below another deque's top"),
                        );
                        self.remove_anywhere(u);
                    }
                }
                self.start_running(r, w, u);
            }
            RecordKind::Push => {
                let Some(w) = self.worker(r) else { return };
                if !u.is_pjob() {
                    self.flag(t, PLACEMENT, format!("job {u} pushed onto a deque"));
                }
                self.deques[w].push_back(u);
            }
            RecordKind::Switch => {
                let Some(w) = self.worker(r) else { return };
                match &mut self.running[w] {
                    Some((cur, d)) if *cur == u => *d = r.deadline.unwrap_or(TimePoint::MAX),
                    _ => self.flag(t, CONSISTENCY, format!("switch of {u} not running on {w}")),
                }
            }
            RecordKind::Preempt | RecordKind::Park | RecordKind::Done => {
                let Some(w) = self.worker(r) else { return };
                match self.running[w] {
                    Some((cur, _)) if cur == u => self.running[w] = None,
                    _ => self.flag(t, CONSISTENCY, format!("{:?} of {u} not running on {w}", r.kind)),
                }
                if r.kind == RecordKind::Park && u.is_pjob() {
                    self.waiting[w].insert(u);
                }
            }
            RecordKind::Wait => {
                let Some(w) = self.worker(r) else { return };
                let d = &mut self.deques[w];
                if d.back() == Some(&u) {
                    d.pop_back();
                } else if d.front() == Some(&u) {
                    d.pop_front();
                } else {
                    self.flag(
                        t,
                        CONSISTENCY,
                        format!("worker {w} set aside {u} from inside its deque"),
                    );
                    self.remove_anywhere(u);
                }
                self.waiting[w].insert(u);
            }
            RecordKind::Resume => {
                let Some(w) = self.worker(r) else { return };
                if !self.waiting[w].remove(&u) {
                    self.flag(t, CONSISTENCY, format!("worker {w} resumed {u} which was not waiting"));
                }
                self.deques[w].push_back(u);
            }
            RecordKind::Run => {
                let Some(w) = self.worker(r) else { return };
                if self.running[w].map(|x| x.0) != Some(u) || self.running[w].map(|x| x.1) != r.deadline {
                    self.flag(
                        t,
                        CONSISTENCY,
                        format!("RUN of {u} on {w} disagrees with replayed state"),
                    );
                }
            }
            RecordKind::Ready => self.ready.push((u, r.deadline.unwrap_or(TimePoint::MAX))),
            _ => {}
        }
    }

    fn remove_anywhere(&mut self, u: UnitId) {
        for d in &mut self.deques {
            d.retain(|x| *x != u);
        }
    }

    fn settle(&mut self, t: TimePoint) {
        self.report.settles_checked += 1;
        let ready = std::mem::take(&mut self.ready);
        for &(u, _) in &ready {
            let placed = if u.is_pjob() {
                self.deques
                    .iter()
                    .any(|d| d.front() == Some(&u) || d.back() == Some(&u))
            } else {
                self.queue.contains(&u)
            };
            if !placed {
                self.flag(
                    t,
                    CONSISTENCY,
                    format!("ready unit {u} is not waiting at an accessible position"),
                );
            }
        }
        let jobs_ready = ready.iter().any(|(u, _)| !u.is_pjob());
        for w in 0..self.deques.len() {
            let accessible = ready.iter().filter(|(u, _)| {
                if !u.is_pjob() {
                    return true;
                }
                if self.deques[w].back() == Some(u) {
                    return true;
                }
                let may_steal = match self.steal {
                    StealPolicy::Off => false,
                    StealPolicy::QueueEmptyOnly => !jobs_ready,
                    StealPolicy::DeadlineCompare => true,
                };
                may_steal && (0..self.deques.len()).any(|v| v != w && self.deques[v].front() == Some(u))
            });
            let best = accessible.min_by_key(|x| x.1);
            match (self.running[w], best) {
                (Some((cur, d)), Some(&(u, du))) if du < d => self.flag(
                    t,
                    EDF_ORDER,
                    format!("worker {w} runs {cur} (d={d}) while {u} (d={du}) waits"),
                ),
                (None, Some(&(u, _))) => {
                    self.flag(t, WORK_CONSERVATION, format!("worker {w} idle while {u} is eligible"))
                }
                _ => {}
            }
        }
    }
}

/// Replay dispatch decisions from the trace and check deque discipline,
/// job/pjob placement, and, for audited traces, EDF order and work
/// conservation at every decision instant.
///
/// EDF order is checked per worker against the units that worker could
/// take: every eligible global-queue job, the bottom of its own deque, and
/// (when the steal policy allows) the tops of other deques.
pub fn check_schedule(trace: &Trace) -> ScheduleReport {
    let m = trace.meta.cores as usize;
    let mut replay = Replay {
        queue: BTreeSet::new(),
        deques: vec![VecDeque::new(); m],
        waiting: vec![BTreeSet::new(); m],
        running: vec![None; m],
        ready: Vec::new(),
        steal: trace.meta.steal,
        report: ScheduleReport::default(),
    };
    for r in &trace.records {
        replay.apply(r);
    }
    replay.report
}
