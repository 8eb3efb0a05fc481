//! The scheduling-policy catalog.
//!
//! A policy maps a system snapshot to a batch of assign/preempt directives.
//! The SERPT family orders requests by remaining chunks (alpha); the SEDPT
//! family orders by remaining chunks minus assigned threads (alpha - delta),
//! which excludes work that non-preemptive threads will finish anyway.
//! The -R variants assign redundant chunks freely, -NR caps a request's
//! threads at its remaining count, and -WCR fills leftover threads with
//! redundant chunks that get preempted when a new request arrives.

use std::cell::RefCell;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{ChunkChoice, Directive, SystemSnapshot, Trigger};
use crate::workload::Request;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("unknown policy id {0:?}")]
    UnknownId(String),
    #[error("wrong workload for {policy}: {reason}")]
    WrongWorkload { policy: String, reason: String },
    #[error("{0} is a bound construction, not a dispatchable policy")]
    BoundOnly(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyId {
    FcfsR,
    FcfsWcr,
    SerptRPreemptive,
    SerptRNonpreemptive,
    SedptRNonpreemptive,
    SedptNrNonpreemptive,
    SedptWcrPreemptive,
    LowerBoundVirtual,
    ScriptQ1,
    ScriptQ2,
    /// Comparator for the ordering spot checks: preempts everything at
    /// every event and restarts on fresh chunks.
    AdversaryForcedSwitch,
    /// Comparator: assigns idle threads to uniformly random requests.
    AdversaryRandomAssign,
}

impl PolicyId {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyId::FcfsR => "FCFS_R",
            PolicyId::FcfsWcr => "FCFS_WCR",
            PolicyId::SerptRPreemptive => "SERPT_R_preemptive",
            PolicyId::SerptRNonpreemptive => "SERPT_R_nonpreemptive",
            PolicyId::SedptRNonpreemptive => "SEDPT_R_nonpreemptive",
            PolicyId::SedptNrNonpreemptive => "SEDPT_NR_nonpreemptive",
            PolicyId::SedptWcrPreemptive => "SEDPT_WCR_preemptive",
            PolicyId::LowerBoundVirtual => "LOWER_BOUND_VIRTUAL",
            PolicyId::ScriptQ1 => "SCRIPT_Q1",
            PolicyId::ScriptQ2 => "SCRIPT_Q2",
            PolicyId::AdversaryForcedSwitch => "ADVERSARY_FORCED_SWITCH",
            PolicyId::AdversaryRandomAssign => "ADVERSARY_RANDOM_ASSIGN",
        }
    }

    pub fn parse(s: &str) -> Result<PolicyId, PolicyError> {
        Ok(match s {
            "FCFS_R" => PolicyId::FcfsR,
            "FCFS_WCR" => PolicyId::FcfsWcr,
            "SERPT_R_preemptive" => PolicyId::SerptRPreemptive,
            "SERPT_R_nonpreemptive" => PolicyId::SerptRNonpreemptive,
            "SEDPT_R_nonpreemptive" => PolicyId::SedptRNonpreemptive,
            "SEDPT_NR_nonpreemptive" => PolicyId::SedptNrNonpreemptive,
            "SEDPT_WCR_preemptive" => PolicyId::SedptWcrPreemptive,
            "LOWER_BOUND_VIRTUAL" => PolicyId::LowerBoundVirtual,
            "SCRIPT_Q1" => PolicyId::ScriptQ1,
            "SCRIPT_Q2" => PolicyId::ScriptQ2,
            "ADVERSARY_FORCED_SWITCH" => PolicyId::AdversaryForcedSwitch,
            "ADVERSARY_RANDOM_ASSIGN" => PolicyId::AdversaryRandomAssign,
            other => return Err(PolicyError::UnknownId(other.into())),
        })
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Selects one discipline plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub id: PolicyId,
    /// Arrival offset expected by SCRIPT_Q2.
    pub epsilon: Option<f64>,
}

impl PolicySpec {
    pub fn new(id: PolicyId) -> Self {
        PolicySpec { id, epsilon: None }
    }

    pub fn script_q2(epsilon: f64) -> Self {
        PolicySpec {
            id: PolicyId::ScriptQ2,
            epsilon: Some(epsilon),
        }
    }

    /// True for the virtual-chunk construction of the delay lower bound,
    /// which is not a feasible policy and bypasses the directive engine.
    pub fn is_bound_only(&self) -> bool {
        self.id == PolicyId::LowerBoundVirtual
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id.as_str())
    }
}

impl Serialize for PolicySpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.epsilon {
            None => s.serialize_str(self.id.as_str()),
            Some(eps) => {
                use serde::ser::SerializeMap;
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry("id", self.id.as_str())?;
                m.serialize_entry("epsilon", &eps)?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for PolicySpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Id(String),
            Full { id: String, epsilon: Option<f64> },
        }
        let (id, epsilon) = match Repr::deserialize(d)? {
            Repr::Id(id) => (id, None),
            Repr::Full { id, epsilon } => (id, epsilon),
        };
        let id = PolicyId::parse(&id).map_err(|e| D::Error::custom(e.to_string()))?;
        Ok(PolicySpec { id, epsilon })
    }
}

/// A scheduling discipline. `decide` must be a pure function of the
/// snapshot and trigger so that identical runs replay identically.
pub trait Policy: Send {
    fn name(&self) -> &'static str;
    fn preemptive(&self) -> bool;
    fn work_conserving(&self) -> bool;
    fn validate_workload(&self, _workload: &[Request], _l_threads: usize) -> Result<(), PolicyError> {
        Ok(())
    }
    fn decide(&self, snap: &SystemSnapshot, trigger: Trigger) -> Vec<Directive>;
}

pub fn make_policy(spec: &PolicySpec) -> Result<Box<dyn Policy>, PolicyError> {
    Ok(match spec.id {
        PolicyId::FcfsR => Box::new(GreedyOrdered {
            name: "FCFS_R",
            order: OrderKey::Arrival,
        }),
        PolicyId::SerptRNonpreemptive => Box::new(GreedyOrdered {
            name: "SERPT_R_nonpreemptive",
            order: OrderKey::Alpha,
        }),
        PolicyId::SerptRPreemptive => Box::new(SerptRPreemptive),
        PolicyId::SedptRNonpreemptive => Box::new(SedptFill {
            name: "SEDPT_R_nonpreemptive",
            cap_at_alpha: false,
        }),
        PolicyId::SedptNrNonpreemptive => Box::new(SedptFill {
            name: "SEDPT_NR_nonpreemptive",
            cap_at_alpha: true,
        }),
        PolicyId::SedptWcrPreemptive => Box::new(WorkConservingRedundant {
            name: "SEDPT_WCR_preemptive",
            order: OrderKey::Differential,
        }),
        PolicyId::FcfsWcr => Box::new(WorkConservingRedundant {
            name: "FCFS_WCR",
            order: OrderKey::Arrival,
        }),
        PolicyId::ScriptQ1 => Box::new(ScriptQ1),
        PolicyId::ScriptQ2 => Box::new(ScriptQ2 {
            epsilon: spec.epsilon,
        }),
        PolicyId::AdversaryForcedSwitch => Box::new(ForcedSwitchAdversary),
        PolicyId::AdversaryRandomAssign => Box::new(RandomAssignAdversary::new(0x5e1ec7)),
        PolicyId::LowerBoundVirtual => {
            return Err(PolicyError::BoundOnly("LOWER_BOUND_VIRTUAL".into()))
        }
    })
}

// ---------------------------------------------------------------------------
// Assignment planner shared by all policies.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChunkPreference {
    /// Resume the most-served paused chunk before starting fresh ones.
    PausedFirst,
    /// Start fresh chunks first; resume least-served paused last.
    FreshFirst,
}

#[derive(Debug, Clone)]
struct PlanRequest {
    id: usize,
    arrival: f64,
    alpha: i64,
    delta: i64,
    fresh: u32,
    /// (chunk, elapsed), kept sorted by elapsed descending.
    paused: Vec<(u32, f64)>,
}

impl PlanRequest {
    fn assignable(&self) -> u32 {
        self.fresh + self.paused.len() as u32
    }

    fn capacity(&self) -> i64 {
        self.assignable() as i64 + self.delta
    }
}

struct Planner<'a> {
    snap: &'a SystemSnapshot,
    requests: Vec<PlanRequest>,
    idle: Vec<usize>,
    directives: Vec<Directive>,
}

impl<'a> Planner<'a> {
    fn new(snap: &'a SystemSnapshot) -> Self {
        let requests = snap
            .requests
            .iter()
            .map(|r| {
                let mut paused = r.paused.clone();
                paused.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                PlanRequest {
                    id: r.id,
                    arrival: r.arrival,
                    alpha: r.alpha as i64,
                    delta: r.delta as i64,
                    fresh: r.fresh,
                    paused,
                }
            })
            .collect();
        let idle = snap
            .threads
            .iter()
            .filter(|t| t.serving.is_none())
            .map(|t| t.id)
            .collect();
        Planner {
            snap,
            requests,
            idle,
            directives: Vec::new(),
        }
    }

    fn take_idle(&mut self) -> Option<usize> {
        if self.idle.is_empty() {
            None
        } else {
            Some(self.idle.remove(0))
        }
    }

    fn local(&mut self, request_id: usize) -> &mut PlanRequest {
        let idx = self
            .requests
            .iter()
            .position(|r| r.id == request_id)
            .expect("request missing from plan");
        &mut self.requests[idx]
    }

    fn preempt(&mut self, thread: usize) {
        let attempt = self.snap.threads[thread]
            .serving
            .clone()
            .expect("preempting idle thread");
        let elapsed = attempt.elapsed(self.snap.now);
        let r = self.local(attempt.request);
        r.delta -= 1;
        r.paused.push((attempt.chunk, elapsed));
        r.paused.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        self.directives.push(Directive::Preempt { thread });
        self.idle.push(thread);
        self.idle.sort_unstable();
    }

    /// Assigns one idle thread to `request_id`; returns false when either
    /// side is exhausted.
    fn assign_one(&mut self, request_id: usize, pref: ChunkPreference) -> bool {
        let Some(thread) = self.take_idle() else {
            return false;
        };
        let r = self.local(request_id);
        let chunk = match pref {
            ChunkPreference::PausedFirst => {
                if !r.paused.is_empty() {
                    ChunkChoice::Resume(r.paused.remove(0).0)
                } else if r.fresh > 0 {
                    r.fresh -= 1;
                    ChunkChoice::Fresh
                } else {
                    self.idle.insert(0, thread);
                    return false;
                }
            }
            ChunkPreference::FreshFirst => {
                if r.fresh > 0 {
                    r.fresh -= 1;
                    ChunkChoice::Fresh
                } else if !r.paused.is_empty() {
                    ChunkChoice::Resume(r.paused.pop().unwrap().0)
                } else {
                    self.idle.insert(0, thread);
                    return false;
                }
            }
        };
        r.delta += 1;
        self.directives.push(Directive::Assign {
            thread,
            request: request_id,
            chunk,
        });
        true
    }

    /// Static-priority fill: walk requests in `order`, giving each thread
    /// after thread until its assignable chunks (optionally capped at alpha)
    /// run out, then spill to the next request.
    fn fill_ordered(&mut self, order: OrderKey, cap_at_alpha: bool) {
        let mut ids: Vec<usize> = self.requests.iter().map(|r| r.id).collect();
        ids.sort_by(|&a, &b| {
            let ra = self.requests.iter().find(|r| r.id == a).unwrap();
            let rb = self.requests.iter().find(|r| r.id == b).unwrap();
            order.key(ra).partial_cmp(&order.key(rb)).unwrap()
        });
        for id in ids {
            loop {
                if self.idle.is_empty() {
                    return;
                }
                let r = self.local(id);
                if r.assignable() == 0 || (cap_at_alpha && r.delta >= r.alpha) {
                    break;
                }
                if !self.assign_one(id, ChunkPreference::PausedFirst) {
                    break;
                }
            }
        }
    }

    /// Dynamic fill in smallest alpha - delta order: each assignment bumps
    /// the request's delta, so the priority is re-evaluated per thread.
    fn fill_differential(&mut self, cap_at_alpha: bool) {
        loop {
            if self.idle.is_empty() {
                return;
            }
            let candidate = self
                .requests
                .iter()
                .filter(|r| r.assignable() > 0 && (!cap_at_alpha || r.delta < r.alpha))
                .min_by(|a, b| {
                    (a.alpha - a.delta, a.arrival, a.id)
                        .partial_cmp(&(b.alpha - b.delta, b.arrival, b.id))
                        .unwrap()
                })
                .map(|r| r.id);
            let Some(id) = candidate else { return };
            if !self.assign_one(id, ChunkPreference::PausedFirst) {
                return;
            }
        }
    }

    fn finish(self) -> Vec<Directive> {
        self.directives
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OrderKey {
    /// (alpha, arrival, id): SERPT priority.
    Alpha,
    /// (arrival, id): FCFS priority.
    Arrival,
    /// (alpha - delta, arrival, id) evaluated statically.
    Differential,
}

impl OrderKey {
    fn key(&self, r: &PlanRequest) -> (i64, f64, usize) {
        match self {
            OrderKey::Alpha => (r.alpha, r.arrival, r.id),
            OrderKey::Arrival => (0, r.arrival, r.id),
            OrderKey::Differential => (r.alpha - r.delta, r.arrival, r.id),
        }
    }
}

// ---------------------------------------------------------------------------
// Non-preemptive greedy policies: FCFS-R and non-preemptive SERPT-R.

struct GreedyOrdered {
    name: &'static str,
    order: OrderKey,
}

impl Policy for GreedyOrdered {
    fn name(&self) -> &'static str {
        self.name
    }

    fn preemptive(&self) -> bool {
        false
    }

    fn work_conserving(&self) -> bool {
        true
    }

    fn decide(&self, snap: &SystemSnapshot, _trigger: Trigger) -> Vec<Directive> {
        let mut plan = Planner::new(snap);
        plan.fill_ordered(self.order, false);
        plan.finish()
    }
}

// ---------------------------------------------------------------------------
// Preemptive SERPT-R: recompute the whole allocation each event.

struct SerptRPreemptive;

impl Policy for SerptRPreemptive {
    fn name(&self) -> &'static str {
        "SERPT_R_preemptive"
    }

    fn preemptive(&self) -> bool {
        true
    }

    fn work_conserving(&self) -> bool {
        true
    }

    fn decide(&self, snap: &SystemSnapshot, _trigger: Trigger) -> Vec<Directive> {
        let mut plan = Planner::new(snap);
        // Target thread counts by SERPT priority over full capacity.
        let mut order: Vec<usize> = (0..plan.requests.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&plan.requests[a], &plan.requests[b]);
            (ra.alpha, ra.arrival, ra.id)
                .partial_cmp(&(rb.alpha, rb.arrival, rb.id))
                .unwrap()
        });
        let mut left = snap.threads.len() as i64;
        let mut targets = vec![0i64; plan.requests.len()];
        for &i in &order {
            let m = plan.requests[i].capacity().min(left);
            targets[i] = m;
            left -= m;
            if left == 0 {
                break;
            }
        }
        // Preempt excess attempts, most recently started first.
        for i in 0..plan.requests.len() {
            let excess = plan.requests[i].delta - targets[i];
            if excess <= 0 {
                continue;
            }
            let id = plan.requests[i].id;
            let mut attempts: Vec<(f64, usize)> = snap
                .threads
                .iter()
                .filter_map(|t| {
                    t.serving
                        .as_ref()
                        .filter(|a| a.request == id)
                        .map(|a| (a.start, t.id))
                })
                .collect();
            attempts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
            for &(_, thread) in attempts.iter().take(excess as usize) {
                plan.preempt(thread);
            }
        }
        // Grow under-target requests in priority order.
        for &i in &order {
            let id = plan.requests[i].id;
            while plan.local(id).delta < targets[i] {
                if !plan.assign_one(id, ChunkPreference::PausedFirst) {
                    break;
                }
            }
        }
        plan.finish()
    }
}

// ---------------------------------------------------------------------------
// SEDPT-R and SEDPT-NR (non-preemptive): dynamic alpha - delta priority.

struct SedptFill {
    name: &'static str,
    cap_at_alpha: bool,
}

impl Policy for SedptFill {
    fn name(&self) -> &'static str {
        self.name
    }

    fn preemptive(&self) -> bool {
        false
    }

    fn work_conserving(&self) -> bool {
        // The NR cap deliberately idles threads once every request is served
        // by alpha threads.
        !self.cap_at_alpha
    }

    fn decide(&self, snap: &SystemSnapshot, _trigger: Trigger) -> Vec<Directive> {
        let mut plan = Planner::new(snap);
        plan.fill_differential(self.cap_at_alpha);
        plan.finish()
    }
}

// ---------------------------------------------------------------------------
// Work-conserving redundancy: the NR allocation first, leftover threads take
// redundant chunks, and a new arrival preempts the redundant attempts.

struct WorkConservingRedundant {
    name: &'static str,
    order: OrderKey,
}

impl Policy for WorkConservingRedundant {
    fn name(&self) -> &'static str {
        self.name
    }

    fn preemptive(&self) -> bool {
        true
    }

    fn work_conserving(&self) -> bool {
        true
    }

    fn decide(&self, snap: &SystemSnapshot, trigger: Trigger) -> Vec<Directive> {
        let mut plan = Planner::new(snap);
        if trigger == Trigger::Arrival {
            let redundant: Vec<usize> = snap
                .threads
                .iter()
                .filter(|t| t.serving.as_ref().is_some_and(|a| a.redundant))
                .map(|t| t.id)
                .collect();
            for thread in redundant {
                plan.preempt(thread);
            }
        }
        match self.order {
            OrderKey::Differential => {
                plan.fill_differential(true);
                plan.fill_differential(false);
            }
            _ => {
                plan.fill_ordered(self.order, true);
                plan.fill_ordered(self.order, false);
            }
        }
        plan.finish()
    }
}

// ---------------------------------------------------------------------------
// Scripted policies for the two worked counterexamples.

/// Two requests at time zero, L = 4: split the threads two and two, then run
/// greedily. Beats SERPT-R on its own workload.
struct ScriptQ1;

impl Policy for ScriptQ1 {
    fn name(&self) -> &'static str {
        "SCRIPT_Q1"
    }

    fn preemptive(&self) -> bool {
        false
    }

    fn work_conserving(&self) -> bool {
        true
    }

    fn validate_workload(&self, workload: &[Request], l_threads: usize) -> Result<(), PolicyError> {
        let shape_ok = l_threads == 4
            && workload.len() == 2
            && workload[0].arrival == 0.0
            && workload[1].arrival == 0.0
            && (workload[0].k, workload[0].n) == (1, 4)
            && (workload[1].k, workload[1].n) == (2, 2);
        if shape_ok {
            Ok(())
        } else {
            Err(PolicyError::WrongWorkload {
                policy: "SCRIPT_Q1".into(),
                reason: "expects requests (k=1, n=4) and (k=2, n=2) at t=0 with L=4".into(),
            })
        }
    }

    fn decide(&self, snap: &SystemSnapshot, _trigger: Trigger) -> Vec<Directive> {
        let mut plan = Planner::new(snap);
        if snap.departures == 0 {
            for id in [0usize, 1] {
                if plan.requests.iter().any(|r| r.id == id) {
                    while plan.local(id).delta < 2 {
                        if !plan.assign_one(id, ChunkPreference::PausedFirst) {
                            break;
                        }
                    }
                }
            }
        } else {
            plan.fill_ordered(OrderKey::Arrival, false);
        }
        plan.finish()
    }
}

/// Two threads idle until the second request lands at epsilon, serve it to
/// completion, then turn to the first request. Deliberately not
/// work-conserving; beats non-preemptive SERPT-R on its own workload.
struct ScriptQ2 {
    epsilon: Option<f64>,
}

impl Policy for ScriptQ2 {
    fn name(&self) -> &'static str {
        "SCRIPT_Q2"
    }

    fn preemptive(&self) -> bool {
        false
    }

    fn work_conserving(&self) -> bool {
        false
    }

    fn validate_workload(&self, workload: &[Request], l_threads: usize) -> Result<(), PolicyError> {
        let eps_ok = match self.epsilon {
            Some(eps) => workload.len() == 2 && (workload[1].arrival - eps).abs() < 1e-12,
            None => workload.len() == 2 && workload[1].arrival > 0.0,
        };
        let shape_ok = l_threads == 2
            && workload.len() == 2
            && workload[0].arrival == 0.0
            && (workload[0].k, workload[0].n) == (2, 3)
            && (workload[1].k, workload[1].n) == (1, 2)
            && workload[1].arrival > 0.0;
        if shape_ok && eps_ok {
            Ok(())
        } else {
            Err(PolicyError::WrongWorkload {
                policy: "SCRIPT_Q2".into(),
                reason: "expects (k=2, n=3) at t=0 and (k=1, n=2) at t=epsilon with L=2".into(),
            })
        }
    }

    fn decide(&self, snap: &SystemSnapshot, _trigger: Trigger) -> Vec<Directive> {
        let mut plan = Planner::new(snap);
        let second_active = plan.requests.iter().any(|r| r.id == 1);
        if second_active {
            while plan.local(1).assignable() > 0 {
                if !plan.assign_one(1, ChunkPreference::PausedFirst) {
                    break;
                }
            }
        } else if snap.completed >= 1 {
            plan.fill_ordered(OrderKey::Arrival, false);
        }
        // Before the second arrival: leave both threads idle.
        plan.finish()
    }
}

// ---------------------------------------------------------------------------
// Adversary comparators for the stochastic-ordering spot checks. Not part of
// the configurable catalog.

/// Preempts everything at every event and restarts on fresh chunks first,
/// deliberately discarding accumulated service.
pub struct ForcedSwitchAdversary;

impl Policy for ForcedSwitchAdversary {
    fn name(&self) -> &'static str {
        "ADVERSARY_FORCED_SWITCH"
    }

    fn preemptive(&self) -> bool {
        true
    }

    fn work_conserving(&self) -> bool {
        true
    }

    fn decide(&self, snap: &SystemSnapshot, _trigger: Trigger) -> Vec<Directive> {
        let mut plan = Planner::new(snap);
        let busy: Vec<usize> = snap
            .threads
            .iter()
            .filter(|t| t.serving.is_some())
            .map(|t| t.id)
            .collect();
        for thread in busy {
            plan.preempt(thread);
        }
        // Greedy FCFS refill, fresh chunks first.
        let mut ids: Vec<(f64, usize)> = plan.requests.iter().map(|r| (r.arrival, r.id)).collect();
        ids.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, id) in ids {
            loop {
                if plan.local(id).assignable() == 0 {
                    break;
                }
                if !plan.assign_one(id, ChunkPreference::FreshFirst) {
                    return plan.finish();
                }
            }
        }
        plan.finish()
    }
}

/// Assigns idle threads to uniformly random serviceable requests.
pub struct RandomAssignAdversary {
    rng: RefCell<ChaCha12Rng>,
}

impl RandomAssignAdversary {
    pub fn new(seed: u64) -> Self {
        RandomAssignAdversary {
            rng: RefCell::new(crate::rng::RngFactory::new(seed).stream(&[crate::rng::tags::SELECTION])),
        }
    }
}

impl Policy for RandomAssignAdversary {
    fn name(&self) -> &'static str {
        "ADVERSARY_RANDOM_ASSIGN"
    }

    fn preemptive(&self) -> bool {
        false
    }

    fn work_conserving(&self) -> bool {
        true
    }

    fn decide(&self, snap: &SystemSnapshot, _trigger: Trigger) -> Vec<Directive> {
        let mut plan = Planner::new(snap);
        let mut rng = self.rng.borrow_mut();
        loop {
            let candidates: Vec<usize> = plan
                .requests
                .iter()
                .filter(|r| r.assignable() > 0)
                .map(|r| r.id)
                .collect();
            if candidates.is_empty() || plan.idle.is_empty() {
                break;
            }
            let id = candidates[rng.random_range(0..candidates.len())];
            if !plan.assign_one(id, ChunkPreference::PausedFirst) {
                break;
            }
        }
        plan.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{state_vector, SystemState, VectorKind};

    fn example1_snapshot() -> SystemSnapshot {
        let workload = vec![
            Request {
                id: 0,
                arrival: 0.0,
                k: 1,
                n: 4,
            },
            Request {
                id: 1,
                arrival: 0.0,
                k: 2,
                n: 2,
            },
        ];
        let mut st = SystemState::new(&workload, 4);
        st.arrive(0);
        st.arrive(1);
        st.snapshot(0.0)
    }

    fn assigned_per_request(batch: &[Directive]) -> std::collections::HashMap<usize, usize> {
        let mut m = std::collections::HashMap::new();
        for d in batch {
            if let Directive::Assign { request, .. } = d {
                *m.entry(*request).or_insert(0) += 1;
            }
        }
        m
    }

    #[test]
    fn serpt_r_sends_all_threads_to_request_one() {
        let snap = example1_snapshot();
        let policy = make_policy(&PolicySpec::new(PolicyId::SerptRPreemptive)).unwrap();
        let batch = policy.decide(&snap, Trigger::Arrival);
        let counts = assigned_per_request(&batch);
        assert_eq!(counts.get(&0), Some(&4));
        assert_eq!(counts.get(&1), None);
    }

    #[test]
    fn script_q1_splits_two_and_two() {
        let snap = example1_snapshot();
        let policy = make_policy(&PolicySpec::new(PolicyId::ScriptQ1)).unwrap();
        let batch = policy.decide(&snap, Trigger::Arrival);
        let counts = assigned_per_request(&batch);
        assert_eq!(counts.get(&0), Some(&2));
        assert_eq!(counts.get(&1), Some(&2));
    }

    #[test]
    fn sedpt_nr_caps_at_alpha() {
        let workload = vec![Request {
            id: 0,
            arrival: 0.0,
            k: 2,
            n: 5,
        }];
        let mut st = SystemState::new(&workload, 3);
        st.arrive(0);
        let snap = st.snapshot(0.0);
        let policy = make_policy(&PolicySpec::new(PolicyId::SedptNrNonpreemptive)).unwrap();
        let batch = policy.decide(&snap, Trigger::Arrival);
        let counts = assigned_per_request(&batch);
        assert_eq!(counts.get(&0), Some(&2));
        assert_eq!(batch.len(), 2);
    }

    #[test]
    fn sedpt_r_goes_redundant_past_alpha() {
        let workload = vec![Request {
            id: 0,
            arrival: 0.0,
            k: 2,
            n: 5,
        }];
        let mut st = SystemState::new(&workload, 3);
        st.arrive(0);
        let snap = st.snapshot(0.0);
        let policy = make_policy(&PolicySpec::new(PolicyId::SedptRNonpreemptive)).unwrap();
        let counts = assigned_per_request(&policy.decide(&snap, Trigger::Arrival));
        assert_eq!(counts.get(&0), Some(&3));
    }

    #[test]
    fn decide_is_deterministic() {
        let snap = example1_snapshot();
        for id in [
            PolicyId::FcfsR,
            PolicyId::SerptRPreemptive,
            PolicyId::SedptRNonpreemptive,
            PolicyId::SedptWcrPreemptive,
        ] {
            let policy = make_policy(&PolicySpec::new(id)).unwrap();
            let a = policy.decide(&snap, Trigger::Arrival);
            let b = policy.decide(&snap, Trigger::Arrival);
            assert_eq!(a, b, "{id}");
        }
    }

    #[test]
    fn label_equivariance_under_id_swap() {
        // Two structurally different requests: decisions must follow the
        // request parameters when the labels move.
        let mk = |small_first: bool| {
            let (k0, k1) = if small_first { (1, 2) } else { (2, 1) };
            let workload = vec![
                Request {
                    id: 0,
                    arrival: 0.0,
                    k: k0,
                    n: 5,
                },
                Request {
                    id: 1,
                    arrival: 0.0,
                    k: k1,
                    n: 5,
                },
            ];
            let mut st = SystemState::new(&workload, 3);
            st.arrive(0);
            st.arrive(1);
            st.snapshot(0.0)
        };
        let policy = make_policy(&PolicySpec::new(PolicyId::SerptRPreemptive)).unwrap();
        let a = assigned_per_request(&policy.decide(&mk(true), Trigger::Arrival));
        let b = assigned_per_request(&policy.decide(&mk(false), Trigger::Arrival));
        // The k = 1 request gets all three threads whichever id it carries.
        assert_eq!(a.get(&0), Some(&3));
        assert_eq!(b.get(&1), Some(&3));

        // For identical twins the per-request assignment multiset is
        // invariant under relabeling (the tie-break picks one twin).
        let twins = |l: usize| {
            let workload = vec![
                Request {
                    id: 0,
                    arrival: 0.0,
                    k: 2,
                    n: 4,
                },
                Request {
                    id: 1,
                    arrival: 0.0,
                    k: 2,
                    n: 4,
                },
            ];
            let mut st = SystemState::new(&workload, l);
            st.arrive(0);
            st.arrive(1);
            st.snapshot(0.0)
        };
        // SEDPT-R dogpiles one twin: its differential drops with every
        // assignment, so it stays the minimum. Which twin is id-determined;
        // the multiset of assignments is invariant under relabeling.
        let policy = make_policy(&PolicySpec::new(PolicyId::SedptRNonpreemptive)).unwrap();
        let counts = assigned_per_request(&policy.decide(&twins(3), Trigger::Arrival));
        let sizes: Vec<usize> = counts.values().copied().collect();
        assert_eq!(sizes, vec![3]);
    }

    #[test]
    fn nonpreemptive_policies_never_preempt() {
        let snap = example1_snapshot();
        for id in [
            PolicyId::FcfsR,
            PolicyId::SerptRNonpreemptive,
            PolicyId::SedptRNonpreemptive,
            PolicyId::SedptNrNonpreemptive,
        ] {
            let policy = make_policy(&PolicySpec::new(id)).unwrap();
            assert!(!policy.preemptive());
            let batch = policy.decide(&snap, Trigger::Arrival);
            assert!(!batch.iter().any(|d| matches!(d, Directive::Preempt { .. })));
        }
    }

    #[test]
    fn wcr_preempts_redundant_attempts_on_arrival() {
        let workload = vec![
            Request {
                id: 0,
                arrival: 0.0,
                k: 1,
                n: 4,
            },
            Request {
                id: 1,
                arrival: 1.0,
                k: 1,
                n: 2,
            },
        ];
        let mut st = SystemState::new(&workload, 3);
        st.arrive(0);
        let policy = make_policy(&PolicySpec::new(PolicyId::SedptWcrPreemptive)).unwrap();
        let mut draw = |_| 100.0;
        let batch = policy.decide(&st.snapshot(0.0), Trigger::Arrival);
        // One needed chunk plus two redundant ones keep all threads busy.
        st.apply_directives(&batch, 0.0, true, &mut draw).unwrap();
        assert_eq!(st.busy_thread_ids().len(), 3);
        st.arrive(1);
        let snap = st.snapshot(1.0);
        let batch = policy.decide(&snap, Trigger::Arrival);
        let preempts = batch
            .iter()
            .filter(|d| matches!(d, Directive::Preempt { .. }))
            .count();
        assert!(preempts >= 1, "arrival must free redundant threads: {batch:?}");
        st.apply_directives(&batch, 1.0, true, &mut draw).unwrap();
        let snap = st.snapshot(1.0);
        let served: Vec<usize> = snap
            .threads
            .iter()
            .filter_map(|t| t.serving.as_ref().map(|a| a.request))
            .collect();
        assert!(served.contains(&1), "new arrival must be served: {served:?}");
        // Work conserving: all three threads still busy.
        assert_eq!(snap.busy_threads(), 3);
    }

    #[test]
    fn q2_idles_until_second_arrival() {
        let workload = vec![
            Request {
                id: 0,
                arrival: 0.0,
                k: 2,
                n: 3,
            },
            Request {
                id: 1,
                arrival: 0.01,
                k: 1,
                n: 2,
            },
        ];
        let policy = make_policy(&PolicySpec::script_q2(0.01)).unwrap();
        policy.validate_workload(&workload, 2).unwrap();
        let mut st = SystemState::new(&workload, 2);
        st.arrive(0);
        let batch = policy.decide(&st.snapshot(0.0), Trigger::Arrival);
        assert!(batch.iter().all(|d| !matches!(d, Directive::Assign { .. })));
        st.arrive(1);
        let batch = policy.decide(&st.snapshot(0.01), Trigger::Arrival);
        let counts = assigned_per_request(&batch);
        assert_eq!(counts.get(&1), Some(&2));
        assert_eq!(counts.get(&0), None);
    }

    #[test]
    fn scripts_reject_wrong_workloads() {
        let policy = make_policy(&PolicySpec::new(PolicyId::ScriptQ1)).unwrap();
        let bad = vec![Request {
            id: 0,
            arrival: 0.0,
            k: 1,
            n: 1,
        }];
        assert!(matches!(
            policy.validate_workload(&bad, 4),
            Err(PolicyError::WrongWorkload { .. })
        ));
    }

    #[test]
    fn state_vector_of_example1() {
        let snap = example1_snapshot();
        assert_eq!(state_vector(&snap, VectorKind::Remaining), vec![2, 1]);
    }

    #[test]
    fn policy_spec_serde_forms() {
        let plain: PolicySpec = serde_json::from_str("\"SERPT_R_preemptive\"").unwrap();
        assert_eq!(plain.id, PolicyId::SerptRPreemptive);
        let with_eps: PolicySpec =
            serde_json::from_str("{\"id\":\"SCRIPT_Q2\",\"epsilon\":0.01}").unwrap();
        assert_eq!(with_eps.id, PolicyId::ScriptQ2);
        assert_eq!(with_eps.epsilon, Some(0.01));
        assert!(serde_json::from_str::<PolicySpec>("\"NOT_A_POLICY\"").is_err());
    }
}
