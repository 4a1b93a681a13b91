//! Work placement: a global EDF queue for jobs, per-worker deques for
//! pjobs, and the deadline-aware steal rule.

use std::fmt;
use std::str::FromStr;

use crate::model::{CapacitySource, ServerId, TimePoint, UnitId, WorkerId, WorkerState};

/// When an idle worker may take pjobs from other workers' deques.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StealPolicy {
    /// Never steal; pjobs run only on the worker that spawned them.
    Off,
    /// Steal only when the global queue holds no eligible job.
    QueueEmptyOnly,
    /// Steal whenever a deque top beats the best eligible global job.
    DeadlineCompare,
}

impl StealPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            StealPolicy::Off => "off",
            StealPolicy::QueueEmptyOnly => "queue-empty-only",
            StealPolicy::DeadlineCompare => "deadline-compare",
        }
    }
}

impl fmt::Display for StealPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StealPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(StealPolicy::Off),
            "queue-empty-only" => Ok(StealPolicy::QueueEmptyOnly),
            "deadline-compare" | "on" => Ok(StealPolicy::DeadlineCompare),
            other => Err(format!("unknown steal policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct QueueEntry {
    deadline: TimePoint,
    server: ServerId,
    job: UnitId,
}

/// Released jobs ordered by nondecreasing server deadline, ties by server id.
#[derive(Debug, Clone, Default)]
pub struct GlobalQueue {
    entries: Vec<QueueEntry>,
}

impl GlobalQueue {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, job: UnitId) -> bool {
        self.entries.iter().any(|e| e.job == job)
    }

    pub fn enqueue(&mut self, job: UnitId, server: ServerId, deadline: TimePoint) -> Result<(), String> {
        if job.is_pjob() {
            return Err(format!("pjob {job} cannot enter the global queue"));
        }
        if self.contains(job) {
            return Err(format!("job {job} already queued"));
        }
        let e = QueueEntry { deadline, server, job };
        let pos = self
            .entries
            .partition_point(|x| (x.deadline, x.server) <= (deadline, server));
        self.entries.insert(pos, e);
        Ok(())
    }

    pub fn remove(&mut self, job: UnitId) -> bool {
        match self.entries.iter().position(|e| e.job == job) {
            Some(i) => {
                self.entries.remove(i);
                true
            }
            None => false,
        }
    }

    /// Re-sort after a server's deadline moved.
    pub fn rekey(&mut self, server: ServerId, deadline: TimePoint) {
        let mut changed = false;
        for e in self.entries.iter_mut().filter(|e| e.server == server) {
            changed |= e.deadline != deadline;
            e.deadline = deadline;
        }
        if changed {
            self.entries.sort_by_key(|e| (e.deadline, e.server));
        }
    }

    /// Jobs in queue order, with their server.
    pub fn iter(&self) -> impl Iterator<Item = (UnitId, ServerId)> + '_ {
        self.entries.iter().map(|e| (e.job, e.server))
    }
}

/// Push freshly spawned pjobs onto the bottom of the worker's deque, in
/// order; the last one pushed is the first the owner pops.
pub fn spawn_pjobs(worker: &mut WorkerState, pjobs: impl IntoIterator<Item = UnitId>) {
    worker.deque.extend(pjobs);
}

/// Where a candidate unit would be taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Bottom of the worker's own deque.
    Local,
    Global,
    /// Top of the given worker's deque.
    Steal(WorkerId),
}

impl Origin {
    fn rank(self) -> u8 {
        match self {
            Origin::Local => 0,
            Origin::Global => 1,
            Origin::Steal(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub unit: UnitId,
    pub source: CapacitySource,
    pub origin: Origin,
}

impl Candidate {
    fn key(&self) -> (TimePoint, u8) {
        (self.source.deadline, self.origin.rank())
    }
}

/// Best unit `worker` could start now, or `None` if it must idle.
///
/// Candidates are the bottom of its own deque, eligible jobs in the global
/// queue, and (policy permitting) the tops of other workers' deques. The
/// earliest effective deadline wins; ties prefer local, then global, then
/// the lowest-numbered victim. `source_of` yields the capacity a unit of
/// the given server would be charged right now, `None` if ineligible.
pub fn next_work(
    worker: WorkerId,
    workers: &[WorkerState],
    queue: &GlobalQueue,
    policy: StealPolicy,
    mut source_of: impl FnMut(ServerId) -> Option<CapacitySource>,
) -> Option<Candidate> {
    let local = workers[worker.0 as usize].bottom().and_then(|u| {
        source_of(u.task).map(|source| Candidate {
            unit: u,
            source,
            origin: Origin::Local,
        })
    });

    let mut global: Option<Candidate> = None;
    for (job, server) in queue.iter() {
        if let Some(source) = source_of(server) {
            let c = Candidate {
                unit: job,
                source,
                origin: Origin::Global,
            };
            if global.is_none_or(|g| c.source.deadline < g.source.deadline) {
                global = Some(c);
            }
        }
    }

    let may_steal = match policy {
        StealPolicy::Off => false,
        StealPolicy::QueueEmptyOnly => global.is_none(),
        StealPolicy::DeadlineCompare => true,
    };
    let mut steal: Option<Candidate> = None;
    if may_steal {
        for w in workers.iter().filter(|w| w.id != worker) {
            let Some(u) = w.top() else { continue };
            if let Some(source) = source_of(u.task) {
                let c = Candidate {
                    unit: u,
                    source,
                    origin: Origin::Steal(w.id),
                };
                if steal.is_none_or(|s| c.source.deadline < s.source.deadline) {
                    steal = Some(c);
                }
            }
        }
    }

    [local, global, steal].into_iter().flatten().min_by_key(Candidate::key)
}

/// Global-EDF preemption: among busy workers, latest running deadline
/// first, find one that can reach a strictly earlier-deadline candidate.
pub fn preempt_check(
    workers: &[WorkerState],
    queue: &GlobalQueue,
    policy: StealPolicy,
    mut source_of: impl FnMut(ServerId) -> Option<CapacitySource>,
) -> Option<(WorkerId, Candidate)> {
    let mut busy: Vec<(TimePoint, WorkerId)> = workers
        .iter()
        .filter_map(|w| w.current.map(|a| (a.source.deadline, w.id)))
        .collect();
    busy.sort_by(|a, b| b.cmp(a));
    for (running, w) in busy {
        if let Some(c) = next_work(w, workers, queue, policy, &mut source_of) {
            if c.source.deadline < running {
                return Some((w, c));
            }
        }
    }
    None
}
