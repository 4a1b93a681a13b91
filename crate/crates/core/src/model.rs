//! Domain types shared by every part of the simulator.
//!
//! Time is an integer tick count and utilizations are exact rationals, so
//! capacity accounting can be compared with `==` instead of a tolerance.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// An instant, in ticks since the start of the run.
pub type TimePoint = u64;
/// A non-negative length of time, in ticks.
pub type Duration = u64;
/// Exact rational number used for utilizations.
pub type Rational = Ratio<i64>;

/// Identifies a task and, one-to-one, the server that serves it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServerId(pub u32);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of a simulated processor (worker thread), `0..m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorkerId(pub u16);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifies a schedulable unit: a job, or one of the pjobs it spawned.
///
/// Rendered as `J<task>.<job>` or `P<task>.<job>.<pjob>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitId {
    pub task: ServerId,
    pub job: u32,
    /// `None` for the job itself, `Some(k)` for its k-th spawned pjob.
    pub pjob: Option<u32>,
}

impl UnitId {
    pub fn job(task: ServerId, job: u32) -> Self {
        UnitId { task, job, pjob: None }
    }

    pub fn pjob(task: ServerId, job: u32, k: u32) -> Self {
        UnitId {
            task,
            job,
            pjob: Some(k),
        }
    }

    pub fn is_pjob(&self) -> bool {
        self.pjob.is_some()
    }

    /// The id of the job this unit belongs to.
    pub fn parent(&self) -> UnitId {
        UnitId::job(self.task, self.job)
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pjob {
            None => write!(f, "J{}.{}", self.task, self.job),
            Some(k) => write!(f, "P{}.{}.{}", self.task, self.job, k),
        }
    }
}

impl std::str::FromStr for UnitId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed unit id `{s}`");
        let (tag, rest) = s.split_at_checked(1).ok_or_else(bad)?;
        let parts: Vec<u32> = rest
            .split('.')
            .map(|p| p.parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        match (tag, parts.as_slice()) {
            ("J", [t, j]) => Ok(UnitId::job(ServerId(*t), *j)),
            ("P", [t, j, k]) => Ok(UnitId::pjob(ServerId(*t), *j, *k)),
            _ => Err(bad()),
        }
    }
}

/// How a task's jobs arrive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    Periodic,
    Sporadic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalModel {
    pub kind: ArrivalKind,
    /// Period (periodic) or minimum inter-arrival time (sporadic).
    pub min_gap: Duration,
    /// Time of the first arrival.
    #[serde(default)]
    pub offset: TimePoint,
}

/// One step of a job: run `cost` ticks sequentially, then spawn `spawn`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub cost: Duration,
    #[serde(default)]
    pub spawn: Vec<Duration>,
}

/// Static parallel structure of every job a task releases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobTemplate {
    pub segments: Vec<Segment>,
}

impl JobTemplate {
    pub fn sequential(cost: Duration) -> Self {
        JobTemplate {
            segments: vec![Segment { cost, spawn: vec![] }],
        }
    }

    pub fn total_cost(&self) -> Duration {
        self.segments
            .iter()
            .map(|s| s.cost + s.spawn.iter().sum::<Duration>())
            .sum()
    }

    pub fn pjob_count(&self) -> usize {
        self.segments.iter().map(|s| s.spawn.len()).sum()
    }

    /// Cut the template down to exactly `budget` ticks of work, walking
    /// segments in order (sequential part first, then each spawned pjob).
    /// The item straddling the cut is shortened; later items are dropped.
    pub fn truncated(&self, budget: Duration) -> JobTemplate {
        let mut left = budget;
        let mut segments = Vec::new();
        for seg in &self.segments {
            if left == 0 {
                break;
            }
            let cost = seg.cost.min(left);
            left -= cost;
            let mut spawn = Vec::new();
            for &p in &seg.spawn {
                if left == 0 {
                    break;
                }
                let c = p.min(left);
                left -= c;
                spawn.push(c);
            }
            segments.push(Segment { cost, spawn });
        }
        if segments.is_empty() {
            segments.push(Segment { cost: 0, spawn: vec![] });
        }
        JobTemplate { segments }
    }
}

/// A sporadic task together with its reservation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: ServerId,
    pub budget: Duration,
    pub period: Duration,
    pub isolated: bool,
    pub arrival: ArrivalModel,
    pub body: JobTemplate,
}

impl TaskSpec {
    pub fn utilization(&self) -> Rational {
        Rational::new(self.budget as i64, self.period as i64)
    }

    /// Every violated invariant of this task, as `(field, message)` pairs.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let id = self.id;
        if self.period == 0 {
            out.push(("T".into(), format!("task {id}: T must be positive")));
        }
        if self.budget == 0 {
            out.push(("Q".into(), format!("task {id}: Q must be positive")));
        } else if self.budget > self.period {
            out.push((
                "Q".into(),
                format!("task {id}: Q={} exceeds T={}", self.budget, self.period),
            ));
        }
        if self.arrival.min_gap == 0 {
            out.push(("arrival.min_gap".into(), format!("task {id}: min_gap must be positive")));
        }
        if self.body.segments.is_empty() {
            out.push(("segments".into(), format!("task {id}: at least one segment required")));
        }
        for (i, seg) in self.body.segments.iter().enumerate() {
            for (k, &c) in seg.spawn.iter().enumerate() {
                if c == 0 {
                    out.push((
                        format!("segments[{i}].spawn[{k}]"),
                        format!("task {id}: pjob cost must be positive"),
                    ));
                }
            }
        }
        if !self.body.segments.is_empty() && self.body.total_cost() == 0 {
            out.push(("segments".into(), format!("task {id}: job has no work")));
        }
        out
    }
}

/// A validated set of tasks, sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskSet {
    tasks: Vec<TaskSpec>,
}

impl TaskSet {
    pub fn new(mut tasks: Vec<TaskSpec>) -> Result<Self, ModelError> {
        let mut problems: Vec<String> = tasks
            .iter()
            .flat_map(|t| t.violations().into_iter().map(|(_, m)| m))
            .collect();
        tasks.sort_by_key(|t| t.id);
        for w in tasks.windows(2) {
            if w[0].id == w[1].id {
                problems.push(format!("duplicate task id {}", w[0].id));
            }
        }
        if problems.is_empty() {
            Ok(TaskSet { tasks })
        } else {
            Err(ModelError::Invalid(problems))
        }
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: ServerId) -> Option<&TaskSpec> {
        self.tasks
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.tasks[i])
    }

    pub fn total_utilization(&self) -> Rational {
        self.tasks.iter().map(TaskSpec::utilization).sum()
    }

    pub fn max_utilization(&self) -> Rational {
        self.tasks
            .iter()
            .map(TaskSpec::utilization)
            .max()
            .unwrap_or_else(|| Rational::from_integer(0))
    }

    pub fn max_period(&self) -> Duration {
        self.tasks.iter().map(|t| t.period).max().unwrap_or(0)
    }
}

/// `Q / T` as an exact rational.
pub fn utilization(budget: Duration, period: Duration) -> Result<Rational, ModelError> {
    if period == 0 || budget == 0 || budget > period {
        return Err(ModelError::BadReservation { budget, period });
    }
    Ok(Rational::new(budget as i64, period as i64))
}

/// A released (or queued) instance of a task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub id: UnitId,
    pub arrival: TimePoint,
    /// Set when the job reaches the head of its server's queue.
    pub release: Option<TimePoint>,
    /// Actual work of this instance (template truncated to its execution time).
    pub body: JobTemplate,
    /// Index of the segment whose sequential part is executing.
    pub segment: usize,
    /// Sequential ticks left in the current segment.
    pub segment_left: Duration,
    pub executed: Duration,
    pub remaining: Duration,
    pub finish: Option<TimePoint>,
    pub pending_pjobs: u32,
    /// Number of pjobs spawned so far; used to number new pjobs.
    pub spawned: u32,
    /// True once the sequential thread passed its last segment.
    pub sequential_done: bool,
}

impl Job {
    pub fn new(id: UnitId, arrival: TimePoint, body: JobTemplate) -> Self {
        let remaining = body.total_cost();
        let segment_left = body.segments.first().map_or(0, |s| s.cost);
        Job {
            id,
            arrival,
            release: None,
            body,
            segment: 0,
            segment_left,
            executed: 0,
            remaining,
            finish: None,
            pending_pjobs: 0,
            spawned: 0,
            sequential_done: false,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finish.is_some()
    }

    /// Unfinished and released by `t`.
    pub fn is_pending_at(&self, t: TimePoint) -> bool {
        self.release.is_some_and(|s| s <= t) && self.finish.is_none_or(|f| t < f)
    }
}

/// A piece of parallel work spawned by a job, charged to the job's server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PJob {
    pub id: UnitId,
    pub cost: Duration,
    pub remaining: Duration,
    pub spawn_time: TimePoint,
    /// Worker whose deque received the pjob at spawn time.
    pub home: WorkerId,
}

impl PJob {
    pub fn parent(&self) -> UnitId {
        self.id.parent()
    }

    pub fn server(&self) -> ServerId {
        self.id.task
    }
}

/// Where the capacity being consumed comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceKind {
    Own,
    Residual,
    Stolen,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Own => "Own",
            SourceKind::Residual => "Residual",
            SourceKind::Stolen => "Stolen",
        }
    }
}

impl std::str::FromStr for SourceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Own" => Ok(SourceKind::Own),
            "Residual" => Ok(SourceKind::Residual),
            "Stolen" => Ok(SourceKind::Stolen),
            other => Err(format!("unknown source kind `{other}`")),
        }
    }
}

/// The capacity a running unit is charged against and the deadline it
/// competes with while doing so.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacitySource {
    pub kind: SourceKind,
    pub server: ServerId,
    pub deadline: TimePoint,
}

impl CapacitySource {
    /// Which budget pool this source drains. Own and Stolen both draw the
    /// source server's `c`; Residual draws its `r`.
    pub fn slot(&self) -> Slot {
        match self.kind {
            SourceKind::Own | SourceKind::Stolen => Slot::Capacity(self.server),
            SourceKind::Residual => Slot::Residual(self.server),
        }
    }
}

/// A budget pool that at most one worker may drain at any instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Capacity(ServerId),
    Residual(ServerId),
}

/// State of a capacity-sharing server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerState {
    pub id: ServerId,
    pub budget: Duration,
    pub period: Duration,
    pub deadline: TimePoint,
    pub capacity: Duration,
    pub residual: Duration,
    pub replenish_at: TimePoint,
    pub isolated: bool,
    pub active: bool,
    /// Source currently charged on behalf of this server's running units,
    /// most recent selection first.
    pub charging_link: Option<CapacitySource>,
}

impl ServerState {
    /// Isolated servers start empty with a deadline in the past. Non-isolated
    /// servers hold a periodic reservation from time zero.
    pub fn new(task: &TaskSpec) -> Self {
        let (deadline, capacity) = if task.isolated {
            (0, 0)
        } else {
            (task.period, task.budget)
        };
        ServerState {
            id: task.id,
            budget: task.budget,
            period: task.period,
            deadline,
            capacity,
            residual: 0,
            replenish_at: deadline,
            isolated: task.isolated,
            active: false,
            charging_link: None,
        }
    }

    pub fn utilization(&self) -> Rational {
        Rational::new(self.budget as i64, self.period as i64)
    }

    /// Model invariants: `c <= Q`, `r > 0 => c == 0`, `h == d`.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.capacity > self.budget {
            return Err(format!(
                "server {}: capacity {} exceeds budget {}",
                self.id, self.capacity, self.budget
            ));
        }
        if self.residual > 0 && self.capacity > 0 {
            return Err(format!(
                "server {}: residual {} with nonzero capacity {}",
                self.id, self.residual, self.capacity
            ));
        }
        if self.replenish_at != self.deadline {
            return Err(format!(
                "server {}: replenishment {} differs from deadline {}",
                self.id, self.replenish_at, self.deadline
            ));
        }
        Ok(())
    }
}

/// Jobs served by one server, FIFO. Only the head is ever released.
#[derive(Debug, Clone, Default)]
pub struct ServedJobs {
    pub queue: std::collections::VecDeque<Job>,
}

impl ServedJobs {
    pub fn head(&self) -> Option<&Job> {
        self.queue.front()
    }

    pub fn head_mut(&mut self) -> Option<&mut Job> {
        self.queue.front_mut()
    }
}

/// True iff some served job is released by `t` and not yet finished,
/// counting its unfinished pjobs.
pub fn has_pending_work(jobs: &ServedJobs, t: TimePoint) -> bool {
    jobs.queue.iter().any(|j| j.is_pending_at(t))
}

/// What a worker is currently executing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub unit: UnitId,
    pub source: CapacitySource,
}

/// A simulated processor: current assignment plus its pjob deque.
///
/// The deque's front is the top (thief end) and its back the bottom
/// (owner end). Pjobs with no capacity source are held in `waiting`, out of
/// reach of both ends, until their server can run again.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: WorkerId,
    pub current: Option<Assignment>,
    pub deque: std::collections::VecDeque<UnitId>,
    pub waiting: Vec<UnitId>,
}

impl WorkerState {
    pub fn new(id: WorkerId) -> Self {
        WorkerState {
            id,
            current: None,
            deque: Default::default(),
            waiting: Vec::new(),
        }
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none()
    }

    pub fn top(&self) -> Option<UnitId> {
        self.deque.front().copied()
    }

    pub fn bottom(&self) -> Option<UnitId> {
        self.deque.back().copied()
    }
}
