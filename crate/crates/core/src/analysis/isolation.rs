use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::{ServerId, SourceKind, TaskSet, TimePoint};
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IsolationViolation {
    /// More than `Q` ticks of own capacity charged within one server period.
    OverBudget {
        server: ServerId,
        deadline: TimePoint,
        charged: u64,
        budget: u64,
        at: TimePoint,
    },
    /// An isolated server's capacity was stolen.
    IsolatedStolen {
        server: ServerId,
        victim: ServerId,
        at: TimePoint,
    },
    /// A residual was consumed at or after its deadline.
    StaleResidual {
        server: ServerId,
        source: ServerId,
        deadline: TimePoint,
        at: TimePoint,
    },
    /// The trace names a server outside the task set.
    UnknownServer { server: ServerId, at: TimePoint },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IsolationReport {
    pub violations: Vec<IsolationViolation>,
    pub windows_checked: usize,
}

impl IsolationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Temporal-isolation checks over the execution records of a trace.
///
/// Own-capacity charges are grouped by `(server, deadline)`: each deadline
/// value identifies one reservation window, in which at most `Q` ticks may
/// be consumed.
pub fn check_isolation(trace: &Trace, set: &TaskSet) -> IsolationReport {
    let mut report = IsolationReport::default();
    let mut windows: BTreeMap<(ServerId, TimePoint), (u64, TimePoint)> = BTreeMap::new();
    for r in trace.runs() {
        let (Some(server), Some((kind, src)), Some(d)) = (r.server, r.source, r.deadline) else {
            continue;
        };
        let Some(src_task) = set.get(src) else {
            report.violations.push(IsolationViolation::UnknownServer {
                server: src,
                at: r.start,
            });
            continue;
        };
        match kind {
            SourceKind::Own => {
                let w = windows.entry((server, d)).or_insert((0, r.start));
                w.0 += r.length();
                w.1 = r.end;
            }
            SourceKind::Stolen => {
                if src_task.isolated {
                    report.violations.push(IsolationViolation::IsolatedStolen {
                        server,
                        victim: src,
                        at: r.start,
                    });
                }
            }
            SourceKind::Residual => {
                if r.end > d {
                    report.violations.push(IsolationViolation::StaleResidual {
                        server,
                        source: src,
                        deadline: d,
                        at: r.start,
                    });
                }
            }
        }
    }
    report.windows_checked = windows.len();
    for ((server, deadline), (charged, at)) in windows {
        let budget = set.get(server).map_or(0, |t| t.budget);
        if charged > budget {
            report.violations.push(IsolationViolation::OverBudget {
                server,
                deadline,
                charged,
                budget,
                at,
            });
        }
    }
    report
}
