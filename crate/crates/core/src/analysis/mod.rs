//! Metrics, invariant checkers, and independent oracles over traces.
//!
//! Everything here is a pure function of a [`Trace`](crate::trace::Trace)
//! (plus the task set where reservation parameters are needed), so the
//! checkers can validate the engine without sharing its state.

mod isolation;
mod metrics;
mod oracle;
mod schedule;

pub use isolation::{check_isolation, IsolationReport, IsolationViolation};
pub use metrics::{metrics_json, speedup, tardiness, TaskTardiness, METRICS_FORMAT};
pub use oracle::oracle_cbs_uniproc;
pub use schedule::{
    check_schedule, ScheduleReport, ScheduleViolation, CONSISTENCY, DEQUE_BOTTOM, DEQUE_TOP, EDF_ORDER, PLACEMENT,
    WORK_CONSERVATION,
};

use crate::model::{Rational, TaskSet};

/// Global-EDF sufficient utilization test for implicit-deadline sets:
/// `U <= m - (m - 1) * U_max`.
pub fn gfb_sufficient_test(set: &TaskSet, cores: u16) -> bool {
    let m = Rational::from_integer(cores as i64);
    let one = Rational::from_integer(1);
    set.total_utilization() <= m - (m - one) * set.max_utilization()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrivalKind, ArrivalModel, JobTemplate, ServerId, TaskSpec};

    fn set(us: &[(u64, u64)]) -> TaskSet {
        TaskSet::new(
            us.iter()
                .enumerate()
                .map(|(i, &(q, t))| TaskSpec {
                    id: ServerId(i as u32 + 1),
                    budget: q,
                    period: t,
                    isolated: true,
                    arrival: ArrivalModel {
                        kind: ArrivalKind::Periodic,
                        min_gap: t,
                        offset: 0,
                    },
                    body: JobTemplate::sequential(q),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn gfb_examples() {
        assert!(gfb_sufficient_test(&set(&[(1, 2), (1, 2), (1, 2)]), 2));
        assert!(gfb_sufficient_test(&set(&[(1, 2), (1, 2)]), 1));
        assert!(!gfb_sufficient_test(&set(&[(1, 2), (1, 2), (1, 10)]), 1));
        assert!(!gfb_sufficient_test(&set(&[(1, 1), (1, 1)]), 2));
    }
}
