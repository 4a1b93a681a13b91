//! Deterministic discrete-event core.
//!
//! Time advances from one decision instant to the next; all running units
//! are charged for the elapsed interval at once. Decision instants are
//! arrivals, replenishments, residual expiries, and the points where a
//! running unit finishes, reaches a spawn point, or drains its source.
//!
//! Simultaneous events are handled in the fixed order completion, spawn,
//! exhaustion, replenishment, residual expiry, arrival (then by server id),
//! so capacity state is settled before new demand is admitted.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

pub use crate::dispatch::StealPolicy;
use crate::dispatch::{self, Candidate, GlobalQueue, Origin};
use crate::error::EngineError;
use crate::model::{
    has_pending_work, Assignment, CapacitySource, Duration, Job, PJob, ServedJobs, ServerId, Slot, TaskSet, TimePoint,
    UnitId, WorkerId, WorkerState,
};
use crate::server::{ArrivalOutcome, ReplenishOutcome, Rules, Servers};
use crate::trace::{RecordKind, Trace, TraceMeta, TraceRecord};
use crate::workload::{realize, ExecRange, JobInstance};

/// Server algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Plain CBS with hard reservations; uniprocessor only.
    Cbs,
    /// Uniprocessor capacity sharing and stealing.
    Css,
    /// Capacity sharing and stealing on `m` processors.
    Pcss,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Cbs => "cbs",
            Policy::Css => "css",
            Policy::Pcss => "pcss",
        }
    }

    pub fn rules(self) -> Rules {
        match self {
            Policy::Cbs => Rules::CBS,
            Policy::Css | Policy::Pcss => Rules::CSS,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cbs" => Ok(Policy::Cbs),
            "css" => Ok(Policy::Css),
            "pcss" => Ok(Policy::Pcss),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub cores: u16,
    pub horizon: TimePoint,
    pub seed: u64,
    pub policy: Policy,
    pub steal: StealPolicy,
    pub exec: ExecRange,
    /// Emit READY/SETTLE records describing the waiting set after every
    /// dispatch decision, for offline EDF and work-conservation checks.
    pub audit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cores: 1,
            horizon: 1000,
            seed: 0,
            policy: Policy::Pcss,
            steal: StealPolicy::DeadlineCompare,
            exec: ExecRange::default(),
            audit: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.cores == 0 {
            return Err(EngineError::Config("at least one core is required".into()));
        }
        if self.horizon == 0 {
            return Err(EngineError::Config("horizon must be positive".into()));
        }
        if self.policy != Policy::Pcss && self.cores != 1 {
            return Err(EngineError::Config(format!(
                "policy {} is uniprocessor-only (got {} cores)",
                self.policy, self.cores
            )));
        }
        if self.exec.lo_pct == 0 || self.exec.lo_pct > self.exec.hi_pct || self.exec.hi_pct > 100 {
            return Err(EngineError::Config(format!(
                "bad execution range {}..{}%",
                self.exec.lo_pct, self.exec.hi_pct
            )));
        }
        Ok(())
    }

    fn meta(&self) -> TraceMeta {
        TraceMeta {
            cores: self.cores,
            horizon: self.horizon,
            policy: self.policy,
            steal: self.steal,
            audit: self.audit,
        }
    }
}

/// Kinds of simultaneous events, in processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Completion,
    Spawn,
    Exhaustion,
    Replenish,
    ResidualExpiry,
    Arrival,
}

/// Simulate `set` over `[0, horizon)`.
pub fn run(set: &TaskSet, cfg: &RunConfig) -> Result<Trace, EngineError> {
    cfg.validate()?;
    let jobs = realize(set, cfg.horizon, cfg.seed, cfg.exec);
    run_jobs(set, jobs, cfg)
}

/// Simulate an explicit list of job instances.
pub fn run_jobs(set: &TaskSet, jobs: Vec<JobInstance>, cfg: &RunConfig) -> Result<Trace, EngineError> {
    cfg.validate()?;
    let mut sim = Simulator::new(set, jobs, cfg);
    match sim.run_to_end() {
        Ok(()) => Ok(sim.trace),
        Err(message) => Err(EngineError::Invariant {
            time: sim.now,
            message,
            trace: Box::new(sim.trace),
        }),
    }
}

/// Earliest instant at which some running unit hits a boundary: finishes
/// its current piece of work or drains its capacity source. Capped by
/// `next_event`.
pub fn next_exhaustion_time(
    running: impl IntoIterator<Item = (Duration, Duration)>,
    t: TimePoint,
    next_event: TimePoint,
) -> TimePoint {
    running
        .into_iter()
        .map(|(work, source)| t + work.min(source))
        .fold(next_event, TimePoint::min)
}

type Res<T> = Result<T, String>;

struct Simulator<'a> {
    set: &'a TaskSet,
    cfg: RunConfig,
    servers: Servers,
    served: Vec<ServedJobs>,
    pjobs: HashMap<UnitId, PJob>,
    workers: Vec<WorkerState>,
    queue: GlobalQueue,
    arrivals: Vec<JobInstance>,
    next_arrival: usize,
    timers: BinaryHeap<Reverse<(TimePoint, EventKind, ServerId)>>,
    scheduled_h: Vec<Option<TimePoint>>,
    was_idle: Vec<bool>,
    now: TimePoint,
    trace: Trace,
}

impl<'a> Simulator<'a> {
    fn new(set: &'a TaskSet, mut arrivals: Vec<JobInstance>, cfg: &RunConfig) -> Self {
        arrivals.sort_by_key(|j| (j.arrival, j.task, j.index));
        let servers = Servers::new(set.tasks(), cfg.policy.rules());
        let n = set.len();
        let mut sim = Simulator {
            set,
            cfg: *cfg,
            servers,
            served: vec![ServedJobs::default(); n],
            pjobs: HashMap::new(),
            workers: (0..cfg.cores).map(|i| WorkerState::new(WorkerId(i))).collect(),
            queue: GlobalQueue::default(),
            arrivals,
            next_arrival: 0,
            timers: BinaryHeap::new(),
            scheduled_h: vec![None; n],
            was_idle: vec![true; cfg.cores as usize],
            now: 0,
            trace: Trace::new(cfg.meta()),
        };
        for t in set.tasks() {
            sim.ensure_replenish(t.id);
        }
        sim
    }

    fn rec(&mut self, kind: RecordKind) -> &mut TraceRecord {
        self.trace.records.push(TraceRecord::instant(self.now, kind));
        self.trace.records.last_mut().unwrap()
    }

    fn unit_rec(&mut self, kind: RecordKind, worker: Option<WorkerId>, unit: UnitId, src: Option<CapacitySource>) {
        let r = self.rec(kind);
        r.worker = worker;
        r.unit = Some(unit);
        r.server = Some(unit.task);
        r.source = src.map(|s| (s.kind, s.server));
        r.deadline = src.map(|s| s.deadline);
    }

    fn idx(&self, id: ServerId) -> usize {
        self.servers.index(id)
    }

    fn pending(&self, id: ServerId) -> bool {
        has_pending_work(&self.served[self.idx(id)], self.now)
    }

    fn head_job(&mut self, unit: UnitId) -> Res<&mut Job> {
        let i = self.idx(unit.task);
        match self.served[i].head_mut() {
            Some(j) if j.id == unit.parent() => Ok(j),
            _ => Err(format!(
                "{unit} does not belong to the head job of server {}",
                unit.task
            )),
        }
    }

    fn job_deadline(&self, job: &Job) -> TimePoint {
        job.arrival + self.set.get(job.id.task).map_or(0, |t| t.period)
    }

    fn ensure_replenish(&mut self, id: ServerId) {
        let i = self.idx(id);
        let s = self.servers.get(id);
        let wanted = s.active || s.residual > 0 || self.servers.is_periodic(id);
        let h = s.replenish_at;
        if wanted && self.scheduled_h[i] != Some(h) && h >= self.now {
            self.timers.push(Reverse((h, EventKind::Replenish, id)));
            self.scheduled_h[i] = Some(h);
        }
    }

    fn work_left(&self, unit: UnitId) -> Duration {
        if unit.is_pjob() {
            self.pjobs.get(&unit).map_or(0, |p| p.remaining)
        } else {
            self.served[self.idx(unit.task)]
                .head()
                .filter(|j| j.id == unit)
                .map_or(0, |j| j.segment_left)
        }
    }

    fn slot_busy(workers: &[WorkerState], slot: Slot) -> bool {
        workers
            .iter()
            .any(|w| w.current.is_some_and(|a| a.source.slot() == slot))
    }

    fn source_for(&self, server: ServerId) -> Option<CapacitySource> {
        let workers = &self.workers;
        self.servers
            .select_capacity_source(server, self.now, |s| Self::slot_busy(workers, s))
    }

    fn run_to_end(&mut self) -> Res<()> {
        if self.set.is_empty() {
            return Ok(());
        }
        loop {
            let next_timer = self.timers.peek().map_or(TimePoint::MAX, |Reverse(e)| e.0);
            let next_arr = self
                .arrivals
                .get(self.next_arrival)
                .map_or(TimePoint::MAX, |j| j.arrival);
            let next_event = next_timer.min(next_arr).min(self.cfg.horizon);
            let running: Vec<(Duration, Duration)> = self
                .workers
                .iter()
                .filter_map(|w| w.current)
                .map(|a| (self.work_left(a.unit), self.servers.available(&a.source)))
                .collect();
            let next = next_exhaustion_time(running, self.now, next_event);
            if next < self.now {
                return Err(format!("event at {next} is in the past"));
            }
            self.advance(next)?;
            if self.now >= self.cfg.horizon {
                // completions landing exactly on the horizon still count
                self.unit_boundaries()?;
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    /// Charge every running unit for `[now, to)`.
    fn advance(&mut self, to: TimePoint) -> Res<()> {
        let delta = to - self.now;
        if delta == 0 {
            return Ok(());
        }
        for w in 0..self.workers.len() {
            let Some(a) = self.workers[w].current else { continue };
            self.servers.charge(&a.source, delta)?;
            if a.unit.is_pjob() {
                let p = self
                    .pjobs
                    .get_mut(&a.unit)
                    .ok_or_else(|| format!("unknown pjob {}", a.unit))?;
                p.remaining = p
                    .remaining
                    .checked_sub(delta)
                    .ok_or_else(|| format!("pjob {} overran", a.unit))?;
            } else {
                let j = self.head_job(a.unit)?;
                j.segment_left = j
                    .segment_left
                    .checked_sub(delta)
                    .ok_or_else(|| format!("job {} overran", a.unit))?;
            }
            let j = self.head_job(a.unit)?;
            j.executed += delta;
            j.remaining -= delta;
            self.trace.records.push(TraceRecord {
                start: self.now,
                end: to,
                worker: Some(WorkerId(w as u16)),
                kind: RecordKind::Run,
                unit: Some(a.unit),
                server: Some(a.unit.task),
                source: Some((a.source.kind, a.source.server)),
                deadline: Some(a.source.deadline),
            });
        }
        self.now = to;
        Ok(())
    }

    /// Process everything due at `now`, then re-dispatch.
    fn step(&mut self) -> Res<()> {
        self.unit_boundaries()?;
        self.timer_events()?;
        self.arrivals_now()?;
        self.settle()?;
        self.servers.check_invariants()
    }

    fn unit_boundaries(&mut self) -> Res<()> {
        let mut due: Vec<(EventKind, ServerId, usize)> = Vec::new();
        for (w, worker) in self.workers.iter().enumerate() {
            let Some(a) = worker.current else { continue };
            if self.work_left(a.unit) == 0 {
                let kind = if a.unit.is_pjob() {
                    EventKind::Completion
                } else {
                    EventKind::Spawn
                };
                due.push((kind, a.unit.task, w));
            }
        }
        due.sort();
        for (kind, _, w) in due {
            self.trace.events += 1;
            let a = self.workers[w].current.expect("due unit is running");
            match kind {
                EventKind::Completion => self.pjob_done(w, a)?,
                _ => self.job_boundary(w, a)?,
            }
        }
        Ok(())
    }

    fn stop_unit(&mut self, w: usize) {
        if let Some(a) = self.workers[w].current.take() {
            self.servers.set_link(a.unit.task, None);
        }
    }

    fn pjob_done(&mut self, w: usize, a: Assignment) -> Res<()> {
        self.unit_rec(RecordKind::Done, Some(WorkerId(w as u16)), a.unit, Some(a.source));
        self.stop_unit(w);
        self.pjobs.remove(&a.unit);
        let job = self.head_job(a.unit)?;
        job.pending_pjobs -= 1;
        if job.sequential_done && job.pending_pjobs == 0 {
            self.finish_job(a.unit.task)?;
        }
        Ok(())
    }

    /// The job's sequential thread reached the end of its current segment:
    /// spawn, move on, and possibly end the sequential thread.
    fn job_boundary(&mut self, w: usize, a: Assignment) -> Res<()> {
        let worker = WorkerId(w as u16);
        loop {
            let now = self.now;
            let job = self.head_job(a.unit)?;
            if job.segment_left > 0 {
                return Ok(());
            }
            let costs = job.body.segments[job.segment].spawn.clone();
            let first = job.spawned;
            job.spawned += costs.len() as u32;
            job.pending_pjobs += costs.len() as u32;
            job.segment += 1;
            let more = job.segment < job.body.segments.len();
            if more {
                job.segment_left = job.body.segments[job.segment].cost;
            } else {
                job.sequential_done = true;
            }
            let (task, index) = (job.id.task, job.id.job);
            let mut new_units = Vec::with_capacity(costs.len());
            for (k, cost) in costs.into_iter().enumerate() {
                let id = UnitId::pjob(task, index, first + k as u32);
                self.pjobs.insert(
                    id,
                    PJob {
                        id,
                        cost,
                        remaining: cost,
                        spawn_time: now,
                        home: worker,
                    },
                );
                new_units.push(id);
            }
            dispatch::spawn_pjobs(&mut self.workers[w], new_units.iter().copied());
            for id in new_units {
                self.unit_rec(RecordKind::Push, Some(worker), id, None);
            }
            if !more {
                self.unit_rec(RecordKind::Done, Some(worker), a.unit, Some(a.source));
                self.stop_unit(w);
                let job = self.head_job(a.unit)?;
                if job.pending_pjobs == 0 {
                    self.finish_job(a.unit.task)?;
                }
                return Ok(());
            }
        }
    }

    fn finish_job(&mut self, id: ServerId) -> Res<()> {
        let i = self.idx(id);
        let now = self.now;
        let mut job = self.served[i]
            .queue
            .pop_front()
            .ok_or_else(|| format!("server {id} finished a job it does not have"))?;
        job.finish = Some(now);
        if job.remaining != 0 {
            return Err(format!("job {} finished with {} ticks left", job.id, job.remaining));
        }
        let d = self.job_deadline(&job);
        let r = self.rec(RecordKind::Finish);
        r.unit = Some(job.id);
        r.server = Some(id);
        r.deadline = Some(d);

        let has_next = !self.served[i].queue.is_empty();
        if has_next {
            self.release_head(id)?;
        }
        let pending = self.pending(id);
        match self.servers.on_job_completion(id, pending) {
            Some(_) => {
                let d = self.servers.get(id).deadline;
                let r = self.rec(RecordKind::Residual);
                r.server = Some(id);
                r.source = Some((crate::model::SourceKind::Residual, id));
                r.deadline = Some(d);
                self.timers.push(Reverse((d, EventKind::ResidualExpiry, id)));
            }
            None if !self.servers.get(id).active => {
                self.rec(RecordKind::Deactivate).server = Some(id);
            }
            None => {}
        }
        self.ensure_replenish(id);
        Ok(())
    }

    fn release_head(&mut self, id: ServerId) -> Res<()> {
        let i = self.idx(id);
        let now = self.now;
        let d = self.servers.get(id).deadline;
        let job = self.served[i]
            .head_mut()
            .ok_or_else(|| format!("server {id} has no job to release"))?;
        job.release = Some(now);
        let unit = job.id;
        self.queue.enqueue(unit, id, d)?;
        let r = self.rec(RecordKind::Enqueue);
        r.unit = Some(unit);
        r.server = Some(id);
        r.deadline = Some(d);
        Ok(())
    }

    fn timer_events(&mut self) -> Res<()> {
        while let Some(&Reverse((t, kind, id))) = self.timers.peek() {
            if t > self.now {
                break;
            }
            self.timers.pop();
            if t < self.now {
                continue;
            }
            self.trace.events += 1;
            let pending = self.pending(id);
            match kind {
                EventKind::Replenish => {
                    let i = self.idx(id);
                    if self.scheduled_h[i] == Some(t) {
                        self.scheduled_h[i] = None;
                    }
                    match self.servers.replenish(id, t, pending) {
                        ReplenishOutcome::Recharged => {
                            let d = self.servers.get(id).deadline;
                            let r = self.rec(RecordKind::Replenish);
                            r.server = Some(id);
                            r.deadline = Some(d);
                            self.queue.rekey(id, d);
                        }
                        ReplenishOutcome::Deactivated => {
                            self.rec(RecordKind::Deactivate).server = Some(id);
                        }
                        ReplenishOutcome::Ignored => {}
                    }
                    self.ensure_replenish(id);
                }
                EventKind::ResidualExpiry => {
                    if self.servers.expire_residual(id, t, pending) > 0 {
                        self.rec(RecordKind::Expire).server = Some(id);
                    }
                }
                _ => unreachable!("only timers live in the heap"),
            }
        }
        Ok(())
    }

    fn arrivals_now(&mut self) -> Res<()> {
        while let Some(inst) = self.arrivals.get(self.next_arrival) {
            if inst.arrival > self.now {
                break;
            }
            let inst = inst.clone();
            self.next_arrival += 1;
            self.trace.events += 1;
            let id = inst.task;
            let i = self.idx(id);
            let unit = UnitId::job(id, inst.index);
            let job = Job::new(unit, inst.arrival, inst.body);
            let d = self.job_deadline(&job);
            let r = self.rec(RecordKind::Arrival);
            r.unit = Some(unit);
            r.server = Some(id);
            r.deadline = Some(d);
            let pending_before = !self.served[i].queue.is_empty();
            self.served[i].queue.push_back(job);
            if self.servers.on_job_arrival(id, self.now, pending_before) != ArrivalOutcome::Queued {
                self.release_head(id)?;
            }
            self.ensure_replenish(id);
        }
        Ok(())
    }

    /// Put a displaced unit back where it came from: jobs to the global
    /// queue, pjobs to the bottom of the deque of worker `w` that ran them.
    fn return_unit(&mut self, w: usize, unit: UnitId) -> Res<()> {
        if unit.is_pjob() {
            self.workers[w].deque.push_back(unit);
            self.unit_rec(RecordKind::Push, Some(WorkerId(w as u16)), unit, None);
        } else {
            let d = self.servers.get(unit.task).deadline;
            self.queue.enqueue(unit, unit.task, d)?;
            let r = self.rec(RecordKind::Enqueue);
            r.unit = Some(unit);
            r.server = Some(unit.task);
            r.deadline = Some(d);
        }
        Ok(())
    }

    /// Remove the candidate from its origin and emit the matching record.
    fn take(&mut self, w: usize, c: Candidate) -> Res<()> {
        let worker = WorkerId(w as u16);
        let (kind, got) = match c.origin {
            Origin::Local => (RecordKind::Pop, self.workers[w].deque.pop_back()),
            Origin::Steal(v) => (RecordKind::Steal, self.workers[v.0 as usize].deque.pop_front()),
            Origin::Global => (RecordKind::Dispatch, self.queue.remove(c.unit).then_some(c.unit)),
        };
        if got != Some(c.unit) {
            return Err(format!("{} not found at its origin {:?}", c.unit, c.origin));
        }
        self.unit_rec(kind, Some(worker), c.unit, Some(c.source));
        Ok(())
    }

    fn assign(&mut self, w: usize, c: Candidate) {
        self.workers[w].current = Some(Assignment {
            unit: c.unit,
            source: c.source,
        });
        self.servers.set_link(c.unit.task, Some(c.source));
    }

    fn settle(&mut self) -> Res<()> {
        // sources that stopped being valid: reselect or park
        for w in 0..self.workers.len() {
            let Some(a) = self.workers[w].current else { continue };
            if self.servers.still_valid(a.unit.task, &a.source, self.now) {
                continue;
            }
            self.trace.events += 1;
            self.workers[w].current = None;
            let worker = Some(WorkerId(w as u16));
            match self.source_for(a.unit.task) {
                Some(src) => {
                    self.workers[w].current = Some(Assignment {
                        unit: a.unit,
                        source: src,
                    });
                    self.servers.set_link(a.unit.task, Some(src));
                    self.unit_rec(RecordKind::Switch, worker, a.unit, Some(src));
                }
                None => {
                    let pending = self.pending(a.unit.task);
                    self.servers.on_capacity_exhausted(a.unit.task, pending);
                    self.servers.set_link(a.unit.task, None);
                    self.unit_rec(RecordKind::Park, worker, a.unit, Some(a.source));
                    if a.unit.is_pjob() {
                        self.workers[w].waiting.push(a.unit);
                    } else {
                        self.return_unit(w, a.unit)?;
                    }
                }
            }
        }

        let limit = 64 * (self.workers.len() + self.set.len() + self.pjobs.len() + 4);
        let mut rounds = 0;
        loop {
            rounds += 1;
            if rounds > limit {
                return Err("dispatch did not converge".into());
            }
            let mut changed = false;
            self.tidy_deques();
            for w in 0..self.workers.len() {
                if !self.workers[w].is_idle() {
                    continue;
                }
                if changed {
                    // an assignment may have claimed a slot some deque end needed
                    break;
                }
                let cand = {
                    let mut memo: HashMap<ServerId, Option<CapacitySource>> = HashMap::new();
                    dispatch::next_work(WorkerId(w as u16), &self.workers, &self.queue, self.cfg.steal, |s| {
                        *memo.entry(s).or_insert_with(|| self.source_for(s))
                    })
                };
                if let Some(c) = cand {
                    self.take(w, c)?;
                    self.assign(w, c);
                    changed = true;
                }
            }
            let pre = {
                let mut memo: HashMap<ServerId, Option<CapacitySource>> = HashMap::new();
                dispatch::preempt_check(&self.workers, &self.queue, self.cfg.steal, |s| {
                    *memo.entry(s).or_insert_with(|| self.source_for(s))
                })
            };
            if let Some((v, c)) = pre {
                let w = v.0 as usize;
                let old = self.workers[w].current.expect("preempted worker is busy");
                self.unit_rec(RecordKind::Preempt, Some(v), old.unit, Some(old.source));
                self.stop_unit(w);
                self.take(w, c)?;
                self.return_unit(w, old.unit)?;
                self.assign(w, c);
                changed = true;
            }
            if !changed {
                break;
            }
        }

        for w in 0..self.workers.len() {
            let idle = self.workers[w].is_idle();
            if idle && !self.was_idle[w] {
                self.rec(RecordKind::Idle).worker = Some(WorkerId(w as u16));
            }
            self.was_idle[w] = idle;
        }
        if self.cfg.audit {
            self.audit_waiting();
        }
        Ok(())
    }

    /// Move waiting pjobs whose server can run again back to the bottom of
    /// their deque, then move ineligible pjobs off both deque ends so they
    /// cannot block eligible work behind them.
    fn tidy_deques(&mut self) {
        let mut memo: HashMap<ServerId, bool> = HashMap::new();
        for w in 0..self.workers.len() {
            let worker = Some(WorkerId(w as u16));
            if !self.workers[w].waiting.is_empty() {
                let waiting = std::mem::take(&mut self.workers[w].waiting);
                for u in waiting {
                    let ok = *memo.entry(u.task).or_insert_with(|| self.source_for(u.task).is_some());
                    if ok {
                        self.workers[w].deque.push_back(u);
                        self.unit_rec(RecordKind::Resume, worker, u, None);
                    } else {
                        self.workers[w].waiting.push(u);
                    }
                }
            }
            for bottom in [true, false] {
                loop {
                    let end = if bottom {
                        self.workers[w].bottom()
                    } else {
                        self.workers[w].top()
                    };
                    let Some(u) = end else { break };
                    let ok = *memo.entry(u.task).or_insert_with(|| self.source_for(u.task).is_some());
                    if ok {
                        break;
                    }
                    let d = &mut self.workers[w].deque;
                    if bottom {
                        d.pop_back()
                    } else {
                        d.pop_front()
                    };
                    self.workers[w].waiting.push(u);
                    self.unit_rec(RecordKind::Wait, worker, u, None);
                }
            }
        }
    }

    fn audit_waiting(&mut self) {
        let mut waiting: Vec<UnitId> = self.queue.iter().map(|(j, _)| j).collect();
        for w in &self.workers {
            waiting.extend(w.top());
            if w.deque.len() > 1 {
                waiting.extend(w.bottom());
            }
        }
        let mut memo: HashMap<ServerId, Option<CapacitySource>> = HashMap::new();
        for u in waiting {
            let src = *memo.entry(u.task).or_insert_with(|| self.source_for(u.task));
            if let Some(src) = src {
                self.unit_rec(RecordKind::Ready, None, u, Some(src));
            }
        }
        self.rec(RecordKind::Settle);
    }
}
