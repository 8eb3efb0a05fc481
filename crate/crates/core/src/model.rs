//! Runtime system state: per-request progress, thread slots, and the sorted
//! state vectors the policies and dominance checks operate on.
//!
//! One `SystemState` lives inside one engine (or coupled-run driver) and is
//! mutated only there; policies see immutable `SystemSnapshot` values.

use serde::Serialize;
use thiserror::Error;

use crate::workload::Request;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("illegal directive: {0}")]
    IllegalDirective(String),
}

/// Which chunk an assignment starts: a never-started chunk or a paused one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkChoice {
    Fresh,
    Resume(u32),
}

/// One scheduling instruction emitted by a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Directive {
    Assign {
        thread: usize,
        request: usize,
        chunk: ChunkChoice,
    },
    Preempt {
        thread: usize,
    },
    Idle {
        thread: usize,
    },
}

/// What caused a policy invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    Start,
    Arrival,
    Completion,
}

/// A partially downloaded chunk put aside by preemption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PausedChunk {
    pub chunk: u32,
    pub elapsed: f64,
    pub requirement: f64,
}

/// A chunk download in progress on one thread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceAttempt {
    pub request: usize,
    pub chunk: u32,
    pub start: f64,
    pub requirement: f64,
    pub elapsed_prior: f64,
    /// True when the assignment pushed the request's thread count past its
    /// remaining-chunk count; these are the attempts work-conserving
    /// redundancy preempts first.
    pub redundant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlotState {
    Idle,
    Serving(ServiceAttempt),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreadSlot {
    pub id: usize,
    pub state: SlotState,
}

#[derive(Debug, Clone)]
pub struct RequestProgress {
    pub request: Request,
    pub arrived: bool,
    pub downloaded: u32,
    pub in_service: u32,
    /// Distinct chunks ever started; also the next fresh chunk id.
    pub next_chunk: u32,
    pub paused: Vec<PausedChunk>,
    pub completion: Option<f64>,
}

impl RequestProgress {
    pub fn remaining(&self) -> u32 {
        self.request.k - self.downloaded
    }

    pub fn fresh_available(&self) -> u32 {
        self.request.n - self.next_chunk
    }

    pub fn assignable(&self) -> u32 {
        self.fresh_available() + self.paused.len() as u32
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Totals {
    pub downloaded: u64,
    pub preempted: u64,
    pub terminated: u64,
}

/// Result of one chunk completion.
#[derive(Debug, Clone)]
pub struct CompletionOutcome {
    pub request: usize,
    pub request_completed: bool,
    /// Threads whose redundant attempts were terminated by the completion.
    pub terminated_threads: Vec<usize>,
}

/// Immutable per-request view handed to policies.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestView {
    pub id: usize,
    pub arrival: f64,
    pub k: u32,
    pub n: u32,
    pub downloaded: u32,
    /// Remaining chunks needed: k - downloaded.
    pub alpha: u32,
    /// Threads currently serving this request.
    pub delta: u32,
    pub fresh: u32,
    pub paused: Vec<(u32, f64)>,
}

impl RequestView {
    pub fn assignable(&self) -> u32 {
        self.fresh + self.paused.len() as u32
    }

    /// All non-downloaded distinct chunks, served or not.
    pub fn capacity(&self) -> u32 {
        self.n - self.downloaded
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptView {
    pub request: usize,
    pub chunk: u32,
    pub start: f64,
    pub elapsed_prior: f64,
    pub redundant: bool,
}

impl AttemptView {
    pub fn elapsed(&self, now: f64) -> f64 {
        self.elapsed_prior + (now - self.start)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreadView {
    pub id: usize,
    pub serving: Option<AttemptView>,
}

/// The decision input for every policy: active (arrived, unfinished)
/// requests plus the thread slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSnapshot {
    pub now: f64,
    pub requests: Vec<RequestView>,
    pub threads: Vec<ThreadView>,
    pub departures: usize,
    pub completed: usize,
}

impl SystemSnapshot {
    pub fn busy_threads(&self) -> usize {
        self.threads.iter().filter(|t| t.serving.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    Remaining,
    Differential,
}

/// Sorted state vector over unfinished requests: remaining chunk counts, or
/// remaining minus assigned threads, both nonincreasing.
pub fn state_vector(snap: &SystemSnapshot, kind: VectorKind) -> Vec<i64> {
    let mut v: Vec<i64> = snap
        .requests
        .iter()
        .map(|r| match kind {
            VectorKind::Remaining => r.alpha as i64,
            VectorKind::Differential => r.alpha as i64 - r.delta as i64,
        })
        .collect();
    v.sort_unstable_by(|a, b| b.cmp(a));
    v
}

/// Sum of coordinates j, j+1, ... (1-indexed) with zeros past the end.
pub fn tail_sum(vec: &[i64], j: usize) -> i64 {
    assert!(j >= 1, "tail index is 1-based");
    if j > vec.len() {
        0
    } else {
        vec[j - 1..].iter().sum()
    }
}

/// Total remaining chunks over unfinished requests.
pub fn remaining_total(snap: &SystemSnapshot) -> i64 {
    snap.requests.iter().map(|r| r.alpha as i64).sum()
}

/// One-line digest of the state after an event, for trace export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotDigest {
    pub t: f64,
    pub event: String,
    pub remaining: Vec<i64>,
    pub differential: Vec<i64>,
    pub busy: usize,
    pub departures: usize,
}

/// Mutable simulation state.
#[derive(Debug, Clone)]
pub struct SystemState {
    requests: Vec<RequestProgress>,
    threads: Vec<ThreadSlot>,
    /// Ids of arrived, unfinished requests in ascending order.
    active: Vec<usize>,
    departures: usize,
    completed: usize,
    totals: Totals,
}

impl SystemState {
    pub fn new(workload: &[Request], l_threads: usize) -> Self {
        SystemState {
            requests: workload
                .iter()
                .map(|&request| RequestProgress {
                    request,
                    arrived: false,
                    downloaded: 0,
                    in_service: 0,
                    next_chunk: 0,
                    paused: Vec::new(),
                    completion: None,
                })
                .collect(),
            threads: (0..l_threads)
                .map(|id| ThreadSlot {
                    id,
                    state: SlotState::Idle,
                })
                .collect(),
            active: Vec::new(),
            departures: 0,
            completed: 0,
            totals: Totals::default(),
        }
    }

    pub fn l_threads(&self) -> usize {
        self.threads.len()
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    pub fn departures(&self) -> usize {
        self.departures
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn all_complete(&self) -> bool {
        self.completed == self.requests.len()
    }

    pub fn active_ids(&self) -> &[usize] {
        &self.active
    }

    pub fn progress(&self, id: usize) -> &RequestProgress {
        &self.requests[id]
    }

    pub fn thread(&self, id: usize) -> &ThreadSlot {
        &self.threads[id]
    }

    pub fn busy_thread_ids(&self) -> Vec<usize> {
        self.threads
            .iter()
            .filter(|t| matches!(t.state, SlotState::Serving(_)))
            .map(|t| t.id)
            .collect()
    }

    pub fn arrive(&mut self, id: usize) {
        let prog = &mut self.requests[id];
        debug_assert!(!prog.arrived, "request {id} arrived twice");
        prog.arrived = true;
        self.active.push(id);
        self.active.sort_unstable();
    }

    /// Completes the chunk under service on `thread` at time `now`.
    ///
    /// If the download finishes the request, every other attempt on it is
    /// terminated immediately and its paused chunks are discarded.
    pub fn complete_on_thread(&mut self, thread: usize, now: f64) -> CompletionOutcome {
        let attempt = match std::mem::replace(&mut self.threads[thread].state, SlotState::Idle) {
            SlotState::Serving(a) => a,
            SlotState::Idle => panic!("completion on idle thread {thread}"),
        };
        let rid = attempt.request;
        let prog = &mut self.requests[rid];
        prog.in_service -= 1;
        prog.downloaded += 1;
        self.departures += 1;
        self.totals.downloaded += 1;
        let mut outcome = CompletionOutcome {
            request: rid,
            request_completed: false,
            terminated_threads: Vec::new(),
        };
        if prog.downloaded == prog.request.k {
            prog.completion = Some(now);
            prog.paused.clear();
            outcome.request_completed = true;
            self.completed += 1;
            self.active.retain(|&a| a != rid);
            for t in 0..self.threads.len() {
                if let SlotState::Serving(a) = &self.threads[t].state {
                    if a.request == rid {
                        self.threads[t].state = SlotState::Idle;
                        outcome.terminated_threads.push(t);
                        self.totals.terminated += 1;
                    }
                }
            }
            self.requests[rid].in_service = 0;
        }
        outcome
    }

    /// Validates and applies a directive batch. `now` stamps preemptions and
    /// fresh starts; `draw_requirement` supplies downloading times for fresh
    /// chunks (ignored by drivers that complete chunks exogenously).
    ///
    /// Returns the started attempts as (thread, remaining time) pairs.
    pub fn apply_directives(
        &mut self,
        batch: &[Directive],
        now: f64,
        allow_preempt: bool,
        draw_requirement: &mut dyn FnMut(usize) -> f64,
    ) -> Result<Vec<(usize, f64)>, ModelError> {
        // Preempts first: assigns may target the freed threads.
        for d in batch {
            if let Directive::Preempt { thread } = *d {
                if !allow_preempt {
                    return Err(ModelError::IllegalDirective(format!(
                        "preempt from a non-preemptive policy (thread {thread})"
                    )));
                }
                self.preempt(thread, now)?;
            }
        }
        let mut started = Vec::new();
        for d in batch {
            match *d {
                Directive::Assign {
                    thread,
                    request,
                    chunk,
                } => {
                    let remaining = self.assign(thread, request, chunk, now, draw_requirement)?;
                    started.push((thread, remaining));
                }
                Directive::Preempt { .. } => {}
                Directive::Idle { thread } => {
                    if thread >= self.threads.len() {
                        return Err(ModelError::IllegalDirective(format!(
                            "idle on unknown thread {thread}"
                        )));
                    }
                }
            }
        }
        Ok(started)
    }

    fn preempt(&mut self, thread: usize, now: f64) -> Result<(), ModelError> {
        let slot = self
            .threads
            .get_mut(thread)
            .ok_or_else(|| ModelError::IllegalDirective(format!("unknown thread {thread}")))?;
        let attempt = match std::mem::replace(&mut slot.state, SlotState::Idle) {
            SlotState::Serving(a) => a,
            SlotState::Idle => {
                return Err(ModelError::IllegalDirective(format!(
                    "preempt of idle thread {thread}"
                )))
            }
        };
        let prog = &mut self.requests[attempt.request];
        prog.in_service -= 1;
        prog.paused.push(PausedChunk {
            chunk: attempt.chunk,
            elapsed: attempt.elapsed_prior + (now - attempt.start),
            requirement: attempt.requirement,
        });
        self.totals.preempted += 1;
        Ok(())
    }

    fn assign(
        &mut self,
        thread: usize,
        request: usize,
        chunk: ChunkChoice,
        now: f64,
        draw_requirement: &mut dyn FnMut(usize) -> f64,
    ) -> Result<f64, ModelError> {
        if thread >= self.threads.len() {
            return Err(ModelError::IllegalDirective(format!(
                "unknown thread {thread}"
            )));
        }
        if !matches!(self.threads[thread].state, SlotState::Idle) {
            return Err(ModelError::IllegalDirective(format!(
                "assign to busy thread {thread}"
            )));
        }
        let prog = self
            .requests
            .get(request)
            .ok_or_else(|| ModelError::IllegalDirective(format!("unknown request {request}")))?;
        if !prog.arrived || prog.completion.is_some() {
            return Err(ModelError::IllegalDirective(format!(
                "assign to inactive request {request}"
            )));
        }
        let (chunk_id, requirement, elapsed_prior) = match chunk {
            ChunkChoice::Fresh => {
                if prog.next_chunk >= prog.request.n {
                    return Err(ModelError::IllegalDirective(format!(
                        "request {request} has no fresh chunk left (n = {})",
                        prog.request.n
                    )));
                }
                (prog.next_chunk, draw_requirement(thread), 0.0)
            }
            ChunkChoice::Resume(id) => {
                let Some(pos) = prog.paused.iter().position(|p| p.chunk == id) else {
                    return Err(ModelError::IllegalDirective(format!(
                        "request {request} has no paused chunk {id}"
                    )));
                };
                let p = prog.paused[pos];
                (p.chunk, p.requirement, p.elapsed)
            }
        };
        let prog = &mut self.requests[request];
        let redundant = prog.in_service + 1 > prog.remaining();
        match chunk {
            ChunkChoice::Fresh => prog.next_chunk += 1,
            ChunkChoice::Resume(id) => prog.paused.retain(|p| p.chunk != id),
        }
        prog.in_service += 1;
        self.threads[thread].state = SlotState::Serving(ServiceAttempt {
            request,
            chunk: chunk_id,
            start: now,
            requirement,
            elapsed_prior,
            redundant,
        });
        Ok(requirement - elapsed_prior)
    }

    pub fn snapshot(&self, now: f64) -> SystemSnapshot {
        SystemSnapshot {
            now,
            requests: self
                .active
                .iter()
                .map(|&id| {
                    let p = &self.requests[id];
                    RequestView {
                        id,
                        arrival: p.request.arrival,
                        k: p.request.k,
                        n: p.request.n,
                        downloaded: p.downloaded,
                        alpha: p.remaining(),
                        delta: p.in_service,
                        fresh: p.fresh_available(),
                        paused: p.paused.iter().map(|c| (c.chunk, c.elapsed)).collect(),
                    }
                })
                .collect(),
            threads: self
                .threads
                .iter()
                .map(|t| ThreadView {
                    id: t.id,
                    serving: match &t.state {
                        SlotState::Idle => None,
                        SlotState::Serving(a) => Some(AttemptView {
                            request: a.request,
                            chunk: a.chunk,
                            start: a.start,
                            elapsed_prior: a.elapsed_prior,
                            redundant: a.redundant,
                        }),
                    },
                })
                .collect(),
            departures: self.departures,
            completed: self.completed,
        }
    }

    /// Structural invariants; the engine runs this after every event in
    /// debug builds.
    pub fn check_invariants(&self) {
        let mut per_request = vec![0u32; self.requests.len()];
        let mut busy = 0;
        for t in &self.threads {
            if let SlotState::Serving(a) = &t.state {
                per_request[a.request] += 1;
                busy += 1;
            }
        }
        assert!(busy <= self.threads.len());
        for (id, p) in self.requests.iter().enumerate() {
            assert_eq!(
                p.in_service, per_request[id],
                "request {id}: delta mismatch"
            );
            assert!(p.downloaded <= p.request.k);
            assert_eq!(p.completion.is_some(), p.downloaded == p.request.k);
            assert!(
                p.next_chunk <= p.request.n,
                "request {id}: started more than n distinct chunks"
            );
            if p.completion.is_some() {
                assert_eq!(p.in_service, 0);
                assert!(p.paused.is_empty());
                assert!(!self.active.contains(&id));
            } else {
                // While unfinished, every started chunk is downloaded, in
                // service, or paused; termination only discards attempts of
                // completed requests.
                assert_eq!(
                    p.next_chunk,
                    p.downloaded + p.in_service + p.paused.len() as u32
                );
            }
        }
    }

    pub fn digest(&self, now: f64, event: &str) -> SnapshotDigest {
        let snap = self.snapshot(now);
        SnapshotDigest {
            t: now,
            event: event.to_string(),
            remaining: state_vector(&snap, VectorKind::Remaining),
            differential: state_vector(&snap, VectorKind::Differential),
            busy: snap.busy_threads(),
            departures: self.departures,
        }
    }
}
