use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::TraceError;
use crate::model::{Rational, ServerId, TimePoint, UnitId};
use crate::trace::{RecordKind, Trace};

pub const METRICS_FORMAT: &str = "pcss-metrics/1";

/// Tardiness summary of one task. Each job's tardiness is
/// `max(0, f - (a + T))`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskTardiness {
    pub task: ServerId,
    pub finished: u64,
    pub min: u64,
    pub max: u64,
    /// Exact mean as `p/q`.
    pub mean: String,
    pub misses: u64,
    pub mean_response: String,
}

fn finishes(trace: &Trace) -> BTreeMap<UnitId, (TimePoint, TimePoint, TimePoint)> {
    let mut arrivals: BTreeMap<UnitId, TimePoint> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for r in &trace.records {
        match (r.kind, r.unit, r.deadline) {
            (RecordKind::Arrival, Some(u), _) => {
                arrivals.insert(u, r.start);
            }
            (RecordKind::Finish, Some(u), Some(d)) => {
                let a = arrivals.get(&u).copied().unwrap_or(r.start);
                out.insert(u, (a, r.start, d));
            }
            _ => {}
        }
    }
    out
}

/// Per-task tardiness statistics over the finished jobs of a trace.
pub fn tardiness(trace: &Trace) -> Vec<TaskTardiness> {
    let mut per: BTreeMap<ServerId, Vec<(u64, u64)>> = BTreeMap::new();
    for (u, (a, f, d)) in finishes(trace) {
        per.entry(u.task).or_default().push((f.saturating_sub(d), f - a));
    }
    per.into_iter()
        .map(|(task, v)| {
            let n = v.len() as i64;
            let sum: u64 = v.iter().map(|x| x.0).sum();
            let resp: u64 = v.iter().map(|x| x.1).sum();
            TaskTardiness {
                task,
                finished: n as u64,
                min: v.iter().map(|x| x.0).min().unwrap_or(0),
                max: v.iter().map(|x| x.0).max().unwrap_or(0),
                mean: Rational::new(sum as i64, n).to_string(),
                misses: v.iter().filter(|x| x.0 > 0).count() as u64,
                mean_response: Rational::new(resp as i64, n).to_string(),
            }
        })
        .collect()
}

fn arrival_set(trace: &Trace) -> Vec<(UnitId, TimePoint)> {
    trace
        .records
        .iter()
        .filter(|r| r.kind == RecordKind::Arrival)
        .filter_map(|r| r.unit.map(|u| (u, r.start)))
        .collect()
}

/// Mean response time of `task` in the sequential trace divided by its mean
/// response time in the parallel trace.
pub fn speedup(parallel: &Trace, sequential: &Trace, task: ServerId) -> Result<Rational, TraceError> {
    if arrival_set(parallel) != arrival_set(sequential) {
        return Err(TraceError::Mismatch("traces have different job arrivals".into()));
    }
    let mean = |t: &Trace| -> Result<Rational, TraceError> {
        let f = finishes(t);
        let resp: Vec<u64> = f
            .iter()
            .filter(|(u, _)| u.task == task)
            .map(|(_, (a, f, _))| f - a)
            .collect();
        if resp.is_empty() {
            return Err(TraceError::Mismatch(format!("task {task} finished no job")));
        }
        Ok(Rational::new(resp.iter().sum::<u64>() as i64, resp.len() as i64))
    };
    let (p, s) = (mean(parallel)?, mean(sequential)?);
    if p == Rational::from_integer(0) {
        return Err(TraceError::Mismatch("zero response time".into()));
    }
    Ok(s / p)
}

/// Structured key-value metrics document for a run.
pub fn metrics_json(trace: &Trace, extra: serde_json::Value) -> serde_json::Value {
    let tasks = tardiness(trace);
    let misses: u64 = tasks.iter().map(|t| t.misses).sum();
    let busy: u64 = trace.runs().map(|r| r.length()).sum();
    serde_json::json!({
        "format": METRICS_FORMAT,
        "cores": trace.meta.cores,
        "horizon": trace.meta.horizon,
        "policy": trace.meta.policy.as_str(),
        "steal": trace.meta.steal.as_str(),
        "events": trace.events,
        "busy_ticks": busy,
        "deadline_misses": misses,
        "tasks": tasks,
        "checks": extra,
    })
}
