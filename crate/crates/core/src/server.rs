//! Server lifecycle: CBS deadline/budget management plus capacity release,
//! reclaiming, consumption, and stealing.
//!
//! Selection prefers, in order: a reclaimable residual (Rule B), the
//! server's own capacity (Rule C), and capacity stolen from an inactive
//! non-isolated server (Rule D). On `m` processors each budget pool is
//! drained by at most one worker at a time, so a job whose pjobs run on `k`
//! workers needs `k` distinct sources.

use crate::model::{CapacitySource, Duration, ServerId, ServerState, Slot, SourceKind, TaskSpec, TimePoint};

/// Which capacity-sharing rules are in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rules {
    /// Rule A release and Rule B reclaiming.
    pub reclaim: bool,
    /// Rule D stealing, and periodic reservations for non-isolated servers.
    pub steal: bool,
}

impl Rules {
    pub const CBS: Rules = Rules {
        reclaim: false,
        steal: false,
    };
    pub const CSS: Rules = Rules {
        reclaim: true,
        steal: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalOutcome {
    /// CBS test passed: `d = t + T`, `c = Q`.
    Fresh,
    /// Idle server kept its current `(d, c)`.
    Kept,
    /// Server already had pending work; the job waits behind it.
    Queued,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplenishOutcome {
    Recharged,
    Deactivated,
    /// Stale or inapplicable event.
    Ignored,
}

/// The servers of a run, stored in id order.
#[derive(Debug, Clone)]
pub struct Servers {
    list: Vec<ServerState>,
    rules: Rules,
}

impl Servers {
    pub fn new<'a>(tasks: impl IntoIterator<Item = &'a TaskSpec>, rules: Rules) -> Self {
        let mut list: Vec<ServerState> = tasks
            .into_iter()
            .map(|t| {
                let mut s = ServerState::new(t);
                if !rules.steal && !t.isolated {
                    // plain CBS: no periodic reservation to steal from
                    s.deadline = 0;
                    s.replenish_at = 0;
                    s.capacity = 0;
                }
                s
            })
            .collect();
        list.sort_by_key(|s| s.id);
        Servers { list, rules }
    }

    pub fn rules(&self) -> Rules {
        self.rules
    }

    pub fn iter(&self) -> impl Iterator<Item = &ServerState> {
        self.list.iter()
    }

    pub fn index(&self, id: ServerId) -> usize {
        self.list
            .binary_search_by_key(&id, |s| s.id)
            .unwrap_or_else(|_| panic!("unknown server {id}"))
    }

    pub fn get(&self, id: ServerId) -> &ServerState {
        &self.list[self.index(id)]
    }

    pub fn get_mut(&mut self, id: ServerId) -> &mut ServerState {
        let i = self.index(id);
        &mut self.list[i]
    }

    /// True for non-isolated servers whose reservation is recharged every
    /// period whether or not they have work.
    pub fn is_periodic(&self, id: ServerId) -> bool {
        self.rules.steal && !self.get(id).isolated
    }

    /// CBS arrival rule. `pending` tells whether the server already had
    /// pending work before this job arrived.
    pub fn on_job_arrival(&mut self, id: ServerId, t: TimePoint, pending: bool) -> ArrivalOutcome {
        let s = self.get_mut(id);
        s.active = true;
        if pending {
            return ArrivalOutcome::Queued;
        }
        // c >= (d - t) * Q / T, cross-multiplied
        let fresh = t >= s.deadline
            || (s.capacity as u128) * (s.period as u128) >= ((s.deadline - t) as u128) * (s.budget as u128);
        if fresh {
            s.deadline = t + s.period;
            s.replenish_at = s.deadline;
            s.capacity = s.budget;
            s.residual = 0;
            ArrivalOutcome::Fresh
        } else {
            ArrivalOutcome::Kept
        }
    }

    /// Rule A. Called when a served job finished; returns the amount
    /// released as residual capacity, if any.
    pub fn on_job_completion(&mut self, id: ServerId, pending: bool) -> Option<Duration> {
        let rules = self.rules;
        let s = self.get_mut(id);
        if pending {
            return None;
        }
        if rules.reclaim && s.isolated && s.capacity > 0 {
            s.residual = s.capacity;
            s.capacity = 0;
            return Some(s.residual);
        }
        s.active = false;
        None
    }

    /// Rule C tail: own capacity ran out. With pending work the server stays
    /// active with its deadline unchanged and waits for its replenishment
    /// time; returns whether it is still active.
    pub fn on_capacity_exhausted(&mut self, id: ServerId, pending: bool) -> bool {
        let s = self.get_mut(id);
        if !pending && s.residual == 0 {
            s.active = false;
        }
        s.active
    }

    /// Recharge at the replenishment time `h`.
    pub fn replenish(&mut self, id: ServerId, t: TimePoint, pending: bool) -> ReplenishOutcome {
        let periodic = self.is_periodic(id);
        let s = self.get_mut(id);
        if s.replenish_at != t {
            return ReplenishOutcome::Ignored;
        }
        if pending || periodic {
            s.capacity = s.budget;
            s.deadline += s.period;
            s.replenish_at = s.deadline;
            s.residual = 0;
            s.active = pending;
            ReplenishOutcome::Recharged
        } else if s.active || s.residual > 0 {
            s.residual = 0;
            s.active = false;
            ReplenishOutcome::Deactivated
        } else {
            ReplenishOutcome::Ignored
        }
    }

    /// Drop a residual whose deadline has passed. Returns the discarded amount.
    pub fn expire_residual(&mut self, id: ServerId, t: TimePoint, pending: bool) -> Duration {
        let s = self.get_mut(id);
        if s.residual == 0 || t < s.deadline {
            return 0;
        }
        let r = std::mem::take(&mut s.residual);
        if !pending {
            s.active = false;
        }
        r
    }

    /// Amount left in the pool a source drains.
    pub fn available(&self, src: &CapacitySource) -> Duration {
        let s = self.get(src.server);
        match src.kind {
            SourceKind::Own | SourceKind::Stolen => s.capacity,
            SourceKind::Residual => s.residual,
        }
    }

    /// Decrement the source's pool by exactly `delta`.
    pub fn charge(&mut self, src: &CapacitySource, delta: Duration) -> Result<(), String> {
        let s = self.get_mut(src.server);
        let pool = match src.kind {
            SourceKind::Own | SourceKind::Stolen => &mut s.capacity,
            SourceKind::Residual => &mut s.residual,
        };
        *pool = pool.checked_sub(delta).ok_or_else(|| {
            format!(
                "over-charge of {delta} on {} capacity of server {} holding {}",
                src.kind.as_str(),
                src.server,
                *pool
            )
        })?;
        Ok(())
    }

    fn residual_ok(&self, x: &ServerState, consumer: &ServerState, t: TimePoint) -> bool {
        self.rules.reclaim && x.residual > 0 && t < x.deadline && x.deadline >= consumer.deadline
    }

    fn steal_ok(&self, y: &ServerState, consumer: &ServerState, t: TimePoint) -> bool {
        self.rules.steal
            && y.id != consumer.id
            && !y.isolated
            && !y.active
            && y.capacity > 0
            && t < y.deadline
            && y.deadline <= consumer.deadline
    }

    /// Whether a previously selected source may keep being charged.
    pub fn still_valid(&self, consumer: ServerId, src: &CapacitySource, t: TimePoint) -> bool {
        let c = self.get(consumer);
        let x = self.get(src.server);
        match src.kind {
            SourceKind::Own => c.capacity > 0 && src.deadline == c.deadline,
            SourceKind::Residual => self.residual_ok(x, c, t) && src.deadline == x.deadline,
            SourceKind::Stolen => self.steal_ok(x, c, t) && src.deadline == c.deadline,
        }
    }

    /// Rules B, C, D priority chain for a runnable unit of `consumer`.
    /// `busy` reports pools already being drained by some worker.
    pub fn select_capacity_source(
        &self,
        consumer: ServerId,
        t: TimePoint,
        busy: impl Fn(Slot) -> bool,
    ) -> Option<CapacitySource> {
        let c = self.get(consumer);
        let residual = self
            .list
            .iter()
            .filter(|x| self.residual_ok(x, c, t) && !busy(Slot::Residual(x.id)))
            .min_by_key(|x| (x.deadline, x.id));
        if let Some(x) = residual {
            return Some(CapacitySource {
                kind: SourceKind::Residual,
                server: x.id,
                deadline: x.deadline,
            });
        }
        if c.capacity > 0 && !busy(Slot::Capacity(c.id)) {
            return Some(CapacitySource {
                kind: SourceKind::Own,
                server: c.id,
                deadline: c.deadline,
            });
        }
        self.list
            .iter()
            .filter(|y| self.steal_ok(y, c, t) && !busy(Slot::Capacity(y.id)))
            .min_by_key(|y| (y.deadline, y.id))
            .map(|y| CapacitySource {
                kind: SourceKind::Stolen,
                server: y.id,
                deadline: c.deadline,
            })
    }

    pub fn set_link(&mut self, consumer: ServerId, src: Option<CapacitySource>) {
        self.get_mut(consumer).charging_link = src;
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.list.iter().try_for_each(ServerState::check_invariants)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrivalKind, ArrivalModel, JobTemplate};

    fn task(id: u32, q: u64, t: u64, isolated: bool) -> TaskSpec {
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

    fn servers(tasks: &[TaskSpec]) -> Servers {
        Servers::new(tasks, Rules::CSS)
    }

    const FREE: fn(Slot) -> bool = |_| false;

    #[test]
    fn arrival_after_deadline_gets_fresh_reservation() {
        let mut s = servers(&[task(1, 2, 10, true)]);
        let st = s.get_mut(ServerId(1));
        st.deadline = 8;
        st.replenish_at = 8;
        assert_eq!(s.on_job_arrival(ServerId(1), 9, false), ArrivalOutcome::Fresh);
        let st = s.get(ServerId(1));
        assert_eq!((st.deadline, st.capacity, st.replenish_at), (19, 2, 19));
        assert!(st.active);
    }

    #[test]
    fn arrival_cbs_test_by_hand() {
        // c = 2 >= (15 - 9) * 1/5 = 6/5
        let mut s = servers(&[task(1, 2, 10, true)]);
        let st = s.get_mut(ServerId(1));
        st.deadline = 15;
        st.replenish_at = 15;
        st.capacity = 2;
        assert_eq!(s.on_job_arrival(ServerId(1), 9, false), ArrivalOutcome::Fresh);
        assert_eq!(s.get(ServerId(1)).deadline, 19);

        // c = 1 < (15 - 9) * 1/5 is false (1 < 6/5): keep
        let st = s.get_mut(ServerId(1));
        st.deadline = 15;
        st.replenish_at = 15;
        st.capacity = 1;
        assert_eq!(s.on_job_arrival(ServerId(1), 9, false), ArrivalOutcome::Kept);
        assert_eq!((s.get(ServerId(1)).deadline, s.get(ServerId(1)).capacity), (15, 1));
    }

    #[test]
    fn busy_server_queues_arrival() {
        let mut s = servers(&[task(1, 2, 10, true)]);
        s.on_job_arrival(ServerId(1), 0, false);
        let before = s.get(ServerId(1)).clone();
        assert_eq!(s.on_job_arrival(ServerId(1), 3, true), ArrivalOutcome::Queued);
        assert_eq!(s.get(ServerId(1)), &before);
    }

    #[test]
    fn rule_a_release() {
        let mut s = servers(&[task(1, 5, 20, true)]);
        let st = s.get_mut(ServerId(1));
        st.capacity = 3;
        st.deadline = 20;
        st.replenish_at = 20;
        st.active = true;
        assert_eq!(s.on_job_completion(ServerId(1), false), Some(3));
        let st = s.get(ServerId(1));
        assert_eq!((st.residual, st.capacity, st.active), (3, 0, true));
        st.check_invariants().unwrap();
    }

    #[test]
    fn rule_a_guarded_by_pending_work() {
        let mut s = servers(&[task(1, 5, 20, true)]);
        s.get_mut(ServerId(1)).capacity = 3;
        assert_eq!(s.on_job_completion(ServerId(1), true), None);
        assert_eq!(s.get(ServerId(1)).capacity, 3);
    }

    #[test]
    fn rule_a_nothing_to_release() {
        let mut s = servers(&[task(1, 5, 20, true)]);
        s.get_mut(ServerId(1)).active = true;
        assert_eq!(s.on_job_completion(ServerId(1), false), None);
        assert_eq!(s.get(ServerId(1)).residual, 0);
        assert!(!s.get(ServerId(1)).active);
    }

    #[test]
    fn non_isolated_completion_keeps_capacity() {
        let mut s = servers(&[task(1, 5, 20, false)]);
        s.get_mut(ServerId(1)).active = true;
        s.get_mut(ServerId(1)).capacity = 3;
        assert_eq!(s.on_job_completion(ServerId(1), false), None);
        let st = s.get(ServerId(1));
        assert_eq!((st.capacity, st.residual, st.active), (3, 0, false));
    }

    #[test]
    fn selects_own_capacity_alone() {
        let mut s = servers(&[task(1, 2, 20, true)]);
        s.get_mut(ServerId(1)).capacity = 2;
        s.get_mut(ServerId(1)).deadline = 20;
        s.get_mut(ServerId(1)).replenish_at = 20;
        let src = s.select_capacity_source(ServerId(1), 0, FREE).unwrap();
        assert_eq!((src.kind, src.deadline), (SourceKind::Own, 20));
    }

    fn set(s: &mut Servers, id: u32, d: u64, c: u64, r: u64, active: bool) {
        let st = s.get_mut(ServerId(id));
        st.deadline = d;
        st.replenish_at = d;
        st.capacity = c;
        st.residual = r;
        st.active = active;
    }

    #[test]
    fn residual_preferred_over_own() {
        let mut s = servers(&[task(1, 2, 20, true), task(2, 5, 25, true)]);
        set(&mut s, 1, 20, 2, 0, true);
        set(&mut s, 2, 25, 0, 1, true);
        let src = s.select_capacity_source(ServerId(1), 10, FREE).unwrap();
        assert_eq!(src.kind, SourceKind::Residual);
        assert_eq!((src.server, src.deadline), (ServerId(2), 25));
    }

    #[test]
    fn residual_with_earlier_deadline_is_not_eligible() {
        let mut s = servers(&[task(1, 2, 20, true), task(2, 5, 25, true)]);
        set(&mut s, 1, 20, 2, 0, true);
        set(&mut s, 2, 15, 0, 1, true);
        let src = s.select_capacity_source(ServerId(1), 10, FREE).unwrap();
        assert_eq!(src.kind, SourceKind::Own);
    }

    #[test]
    fn steal_from_inactive_non_isolated() {
        let mut s = servers(&[task(1, 2, 20, true), task(2, 4, 15, false)]);
        set(&mut s, 1, 20, 0, 0, true);
        set(&mut s, 2, 15, 4, 0, false);
        let src = s.select_capacity_source(ServerId(1), 10, FREE).unwrap();
        assert_eq!(src.kind, SourceKind::Stolen);
        assert_eq!((src.server, src.deadline), (ServerId(2), 20));
    }

    #[test]
    fn never_steals_from_isolated_or_active_or_later() {
        let mut s = servers(&[task(1, 2, 20, true), task(2, 4, 15, true), task(3, 4, 15, false)]);
        set(&mut s, 1, 20, 0, 0, true);
        set(&mut s, 2, 15, 4, 0, false);
        set(&mut s, 3, 15, 4, 0, true);
        assert_eq!(s.select_capacity_source(ServerId(1), 10, FREE), None);
        set(&mut s, 3, 25, 4, 0, false);
        assert_eq!(s.select_capacity_source(ServerId(1), 10, FREE), None);
    }

    #[test]
    fn busy_slots_force_next_source() {
        let mut s = servers(&[task(1, 2, 20, true), task(2, 4, 15, false), task(3, 4, 18, false)]);
        set(&mut s, 1, 20, 2, 0, true);
        set(&mut s, 2, 15, 4, 0, false);
        set(&mut s, 3, 18, 4, 0, false);
        let busy = |sl: Slot| matches!(sl, Slot::Capacity(ServerId(1)) | Slot::Capacity(ServerId(2)));
        let src = s.select_capacity_source(ServerId(1), 0, busy).unwrap();
        assert_eq!((src.kind, src.server), (SourceKind::Stolen, ServerId(3)));
    }

    #[test]
    fn charge_and_overcharge() {
        let mut s = servers(&[task(1, 5, 20, true)]);
        set(&mut s, 1, 20, 5, 0, true);
        let own = s.select_capacity_source(ServerId(1), 0, FREE).unwrap();
        s.charge(&own, 2).unwrap();
        assert_eq!(s.get(ServerId(1)).capacity, 3);
        assert!(s.charge(&own, 4).is_err());

        set(&mut s, 1, 20, 0, 3, true);
        let res = CapacitySource {
            kind: SourceKind::Residual,
            server: ServerId(1),
            deadline: 20,
        };
        s.charge(&res, 3).unwrap();
        assert_eq!(s.available(&res), 0);
        assert!(!s.still_valid(ServerId(1), &res, 5));
    }

    #[test]
    fn exhausted_server_stays_active_with_pending_work() {
        let mut s = servers(&[task(1, 2, 10, true)]);
        set(&mut s, 1, 20, 0, 0, true);
        assert!(s.on_capacity_exhausted(ServerId(1), true));
        assert_eq!(s.get(ServerId(1)).deadline, 20);
        assert!(!s.on_capacity_exhausted(ServerId(1), false));
    }

    #[test]
    fn replenish_recharges_without_carry_over() {
        let mut s = servers(&[task(1, 2, 10, true)]);
        set(&mut s, 1, 20, 0, 0, true);
        assert_eq!(s.replenish(ServerId(1), 20, true), ReplenishOutcome::Recharged);
        let st = s.get(ServerId(1));
        assert_eq!((st.capacity, st.deadline, st.replenish_at), (2, 30, 30));

        set(&mut s, 1, 30, 1, 0, true);
        s.replenish(ServerId(1), 30, true);
        assert_eq!(s.get(ServerId(1)).capacity, 2);
    }

    #[test]
    fn replenish_without_work_deactivates() {
        let mut s = servers(&[task(1, 2, 10, true)]);
        set(&mut s, 1, 20, 0, 2, true);
        assert_eq!(s.replenish(ServerId(1), 20, false), ReplenishOutcome::Deactivated);
        let st = s.get(ServerId(1));
        assert_eq!((st.residual, st.active), (0, false));
        assert_eq!(s.replenish(ServerId(1), 21, false), ReplenishOutcome::Ignored);
    }

    #[test]
    fn non_isolated_reservation_is_periodic() {
        let mut s = servers(&[task(1, 2, 10, false)]);
        assert_eq!(s.get(ServerId(1)).capacity, 2);
        assert_eq!(s.replenish(ServerId(1), 10, false), ReplenishOutcome::Recharged);
        let st = s.get(ServerId(1));
        assert_eq!((st.deadline, st.capacity, st.active), (20, 2, false));
    }

    #[test]
    fn cbs_rules_disable_reclaim_and_steal() {
        let mut s = Servers::new(&[task(1, 2, 20, true), task(2, 4, 15, false)], Rules::CBS);
        assert_eq!(s.get(ServerId(2)).capacity, 0);
        set(&mut s, 1, 20, 2, 0, true);
        s.get_mut(ServerId(1)).capacity = 2;
        assert_eq!(s.on_job_completion(ServerId(1), false), None);
        assert_eq!(s.get(ServerId(1)).capacity, 2);
    }
}
