//! Trace records and their line-oriented text format.
//!
//! ```text
//! #pcss-trace v1 m=2 horizon=100 policy=pcss steal=deadline-compare audit=0
//! t_start,t_end,worker,kind,unit_id,server_id,source_kind,source_server_id,effective_deadline
//! 0,0,-,ARRIVAL,J1.0,1,-,-,10
//! 0,3,0,RUN,J1.0,1,Own,1,10
//! ```
//!
//! Inapplicable columns hold `-`. Records are ordered by emission, which is
//! nondecreasing in `t_start` for instant records and in `t_end` for `RUN`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::engine::{Policy, StealPolicy};
use crate::error::TraceError;
use crate::model::{ServerId, SourceKind, TimePoint, UnitId, WorkerId};

pub const TRACE_MAGIC: &str = "#pcss-trace";
pub const TRACE_VERSION: u32 = 1;
pub const TRACE_COLUMNS: &str =
    "t_start,t_end,worker,kind,unit_id,server_id,source_kind,source_server_id,effective_deadline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    /// Job arrival; deadline column is the job's absolute deadline `a + T`.
    Arrival,
    /// Job placed in the global queue (release, or return after preemption).
    Enqueue,
    /// Worker took a job from the global queue.
    Dispatch,
    /// Worker took the bottom pjob of its own deque.
    Pop,
    /// Worker took the top pjob of another worker's deque.
    Steal,
    /// Pjob pushed onto the bottom of `worker`'s deque.
    Push,
    /// Execution interval charged to the given source.
    Run,
    /// Running unit changed capacity source without leaving its worker.
    Switch,
    /// Running unit displaced by an earlier-deadline unit.
    Preempt,
    /// Running unit lost every capacity source and stopped; a pjob moves to
    /// its worker's waiting set.
    Park,
    /// Ineligible pjob moved from an end of `worker`'s deque to its waiting set.
    Wait,
    /// Waiting pjob became eligible and was pushed back onto the deque bottom.
    Resume,
    /// Unit completed its own work.
    Done,
    /// Job finished (sequential part and all pjobs); deadline column is `a + T`.
    Finish,
    /// Rule A release; deadline column is the residual's expiry.
    Residual,
    /// Budget recharge; deadline column is the new server deadline.
    Replenish,
    /// Unused residual discarded.
    Expire,
    /// Server became inactive.
    Deactivate,
    /// Worker has nothing eligible to run.
    Idle,
    /// Audit: waiting unit that is eligible right now, with the source it would get.
    Ready,
    /// Audit: dispatching settled; the preceding READY records describe the waiting set.
    Settle,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        use RecordKind::*;
        match self {
            Arrival => "ARRIVAL",
            Enqueue => "ENQUEUE",
            Dispatch => "DISPATCH",
            Pop => "POP",
            Steal => "STEAL",
            Push => "PUSH",
            Run => "RUN",
            Switch => "SWITCH",
            Preempt => "PREEMPT",
            Park => "PARK",
            Wait => "WAIT",
            Resume => "RESUME",
            Done => "DONE",
            Finish => "FINISH",
            Residual => "RESIDUAL",
            Replenish => "REPLENISH",
            Expire => "EXPIRE",
            Deactivate => "DEACTIVATE",
            Idle => "IDLE",
            Ready => "READY",
            Settle => "SETTLE",
        }
    }

    const ALL: [RecordKind; 21] = {
        use RecordKind::*;
        [
            Arrival, Enqueue, Dispatch, Pop, Steal, Push, Run, Switch, Preempt, Park, Wait, Resume, Done, Finish,
            Residual, Replenish, Expire, Deactivate, Idle, Ready, Settle,
        ]
    };
}

impl FromStr for RecordKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RecordKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown record kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub start: TimePoint,
    pub end: TimePoint,
    pub worker: Option<WorkerId>,
    pub kind: RecordKind,
    pub unit: Option<UnitId>,
    pub server: Option<ServerId>,
    pub source: Option<(SourceKind, ServerId)>,
    pub deadline: Option<TimePoint>,
}

impl TraceRecord {
    pub fn instant(t: TimePoint, kind: RecordKind) -> Self {
        TraceRecord {
            start: t,
            end: t,
            worker: None,
            kind,
            unit: None,
            server: None,
            source: None,
            deadline: None,
        }
    }

    pub fn length(&self) -> u64 {
        self.end - self.start
    }
}

fn opt<T: fmt::Display>(out: &mut String, v: Option<T>) {
    match v {
        Some(v) => {
            let _ = write!(out, "{v}");
        }
        None => out.push('-'),
    }
}

impl TraceRecord {
    pub fn write_line(&self, out: &mut String) {
        let _ = write!(out, "{},{},", self.start, self.end);
        opt(out, self.worker);
        out.push(',');
        out.push_str(self.kind.as_str());
        out.push(',');
        opt(out, self.unit);
        out.push(',');
        opt(out, self.server);
        out.push(',');
        opt(out, self.source.map(|s| s.0.as_str()));
        out.push(',');
        opt(out, self.source.map(|s| s.1));
        out.push(',');
        opt(out, self.deadline);
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(format!("expected 9 fields, found {}", f.len()));
        }
        fn field<T: FromStr>(s: &str, name: &str) -> Result<Option<T>, String> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| format!("bad {name} `{s}`"))
            }
        }
        let req = |s: &str, name: &str| -> Result<u64, String> {
            field::<u64>(s, name)?.ok_or_else(|| format!("missing {name}"))
        };
        let source_kind: Option<SourceKind> = if f[6] == "-" { None } else { Some(f[6].parse()?) };
        let source_server: Option<u32> = field(f[7], "source_server_id")?;
        let source = match (source_kind, source_server) {
            (Some(k), Some(s)) => Some((k, ServerId(s))),
            (None, None) => None,
            _ => return Err("source kind and server must both be present".into()),
        };
        let unit = if f[4] == "-" {
            None
        } else {
            Some(f[4].parse::<UnitId>()?)
        };
        let rec = TraceRecord {
            start: req(f[0], "t_start")?,
            end: req(f[1], "t_end")?,
            worker: field::<u16>(f[2], "worker")?.map(WorkerId),
            kind: f[3].parse()?,
            unit,
            server: field::<u32>(f[5], "server_id")?.map(ServerId),
            source,
            deadline: field(f[8], "effective_deadline")?,
        };
        if rec.end < rec.start {
            return Err("t_end before t_start".into());
        }
        Ok(rec)
    }
}

/// Run parameters carried in the trace header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceMeta {
    pub cores: u16,
    pub horizon: TimePoint,
    pub policy: Policy,
    pub steal: StealPolicy,
    pub audit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
    /// Number of engine events processed to produce this trace.
    pub events: u64,
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Self {
        Trace {
            meta,
            records: Vec::new(),
            events: 0,
        }
    }

    pub fn header(&self) -> String {
        let m = &self.meta;
        format!(
            "{TRACE_MAGIC} v{TRACE_VERSION} m={} horizon={} policy={} steal={} audit={}",
            m.cores,
            m.horizon,
            m.policy.as_str(),
            m.steal.as_str(),
            u8::from(m.audit)
        )
    }

    /// Canonical serialization; identical runs produce identical bytes.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 2));
        out.push_str(&self.header());
        out.push('\n');
        out.push_str(TRACE_COLUMNS);
        out.push('\n');
        for r in &self.records {
            r.write_line(&mut out);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let bad = |line: usize, message: String| TraceError::Malformed { line, message };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty trace".into()))?;
        let meta = parse_header(header).map_err(|m| bad(1, m))?;
        match lines.next() {
            Some((_, cols)) if cols.trim() == TRACE_COLUMNS => {}
            _ => return Err(bad(2, "missing column header".into())),
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            records.push(TraceRecord::parse_line(line.trim()).map_err(|m| bad(i + 1, m))?);
        }
        Ok(Trace {
            meta,
            records,
            events: 0,
        })
    }

    pub fn runs(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.kind == RecordKind::Run)
    }

    /// The execution schedule alone: `RUN` records with adjacent intervals of
    /// the same unit, worker, and source merged, sorted by worker then time.
    pub fn schedule(&self) -> Vec<TraceRecord> {
        let mut runs: Vec<TraceRecord> = self.runs().filter(|r| r.length() > 0).copied().collect();
        runs.sort_by_key(|r| (r.worker, r.start));
        let mut out: Vec<TraceRecord> = Vec::with_capacity(runs.len());
        for r in runs {
            if let Some(last) = out.last_mut() {
                if last.end == r.start
                    && last.worker == r.worker
                    && last.unit == r.unit
                    && last.source == r.source
                    && last.deadline == r.deadline
                {
                    last.end = r.end;
                    continue;
                }
            }
            out.push(r);
        }
        out
    }

    /// Text form of [`Trace::schedule`], used for byte-level comparisons.
    pub fn schedule_text(&self) -> String {
        let mut out = String::new();
        for r in self.schedule() {
            r.write_line(&mut out);
            out.push('\n');
        }
        out
    }
}

fn parse_header(line: &str) -> Result<TraceMeta, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(TRACE_MAGIC) {
        return Err("not a pcss trace".into());
    }
    match parts.next() {
        Some(v) if v == format!("v{TRACE_VERSION}") => {}
        other => return Err(format!("unsupported trace version {other:?}")),
    }
    let mut meta = TraceMeta {
        cores: 1,
        horizon: 0,
        policy: Policy::Pcss,
        steal: StealPolicy::DeadlineCompare,
        audit: false,
    };
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad header field `{kv}`"))?;
        let bad = || format!("bad header value `{kv}`");
        match k {
            "m" => meta.cores = v.parse().map_err(|_| bad())?,
            "horizon" => meta.horizon = v.parse().map_err(|_| bad())?,
            "policy" => meta.policy = v.parse()?,
            "steal" => meta.steal = v.parse()?,
            "audit" => meta.audit = v == "1",
            _ => return Err(format!("unknown header field `{k}`")),
        }
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> TraceMeta {
        TraceMeta {
            cores: 2,
            horizon: 50,
            policy: Policy::Pcss,
            steal: StealPolicy::QueueEmptyOnly,
            audit: true,
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Trace::parse("").is_err());
        assert!(Trace::parse("#pcss-trace v9 m=1\n").is_err());
        let text = format!("{}\n{TRACE_COLUMNS}\n1,2,3\n", Trace::new(meta()).header());
        let err = Trace::parse(&text).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 3, .. }), "{err}");
    }

    #[test]
    fn schedule_merges_contiguous_runs() {
        let mut t = Trace::new(meta());
        let mut r = TraceRecord::instant(0, RecordKind::Run);
        r.worker = Some(WorkerId(0));
        r.unit = Some(UnitId::job(ServerId(1), 0));
        r.source = Some((SourceKind::Own, ServerId(1)));
        r.deadline = Some(10);
        t.records.push(TraceRecord { end: 2, ..r });
        t.records.push(TraceRecord { start: 2, end: 5, ..r });
        t.records.push(TraceRecord { start: 6, end: 7, ..r });
        let s = t.schedule();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].start, s[0].end), (0, 5));
    }

    fn arb_record() -> impl Strategy<Value = TraceRecord> {
        (
            0u64..1000,
            0u64..50,
            proptest::option::of(0u16..8),
            0usize..RecordKind::ALL.len(),
            proptest::option::of((1u32..9, 0u32..100, proptest::option::of(0u32..5))),
            proptest::option::of(1u32..9),
            proptest::option::of((0usize..3, 1u32..9)),
            proptest::option::of(0u64..5000),
        )
            .prop_map(|(s, len, w, k, u, srv, src, d)| TraceRecord {
                start: s,
                end: s + len,
                worker: w.map(WorkerId),
                kind: RecordKind::ALL[k],
                unit: u.map(|(t, j, p)| UnitId {
                    task: ServerId(t),
                    job: j,
                    pjob: p,
                }),
                server: srv.map(ServerId),
                source: src.map(|(k, s)| {
                    (
                        [SourceKind::Own, SourceKind::Residual, SourceKind::Stolen][k],
                        ServerId(s),
                    )
                }),
                deadline: d,
            })
    }

    proptest! {
        #[test]
        fn text_round_trip(records in proptest::collection::vec(arb_record(), 0..40)) {
            let mut t = Trace::new(meta());
            t.records = records;
            let parsed = Trace::parse(&t.to_text()).unwrap();
            prop_assert_eq!(parsed.meta, t.meta);
            prop_assert_eq!(parsed.records, t.records);
        }
    }
}
