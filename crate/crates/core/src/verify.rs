//! Mechanical checks of the sample-path lemmas: coupled runs, exact
//! state-vector dominance, empirical stochastic ordering, and
//! departure-process invariance.
//!
//! Two couplings drive a pair of policies from shared randomness:
//!
//! * shared departure instants — one exponential departure clock at rate
//!   L*mu runs while work remains, and at each instant every side completes
//!   one of its in-service chunks (chosen by a shared uniform draw). Valid
//!   when both sides keep all L threads busy, i.e. d_min >= L.
//! * per-thread tick streams — each thread carries a fixed Poisson(mu)
//!   process on the real line; a tick completes whatever chunk that thread
//!   is serving on each side and is skipped by a side whose thread is idle.
//!   This realizes the idle-period-deletion constructions and makes the
//!   dominance inequalities exact per path.
//!
//! All dominance checks are exact integer assertions with zero tolerance.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::distributions::DownloadDist;
use crate::engine::{simulate_with_factory, EngineError, SimConfig};
use crate::model::{state_vector, tail_sum, SystemState, Trigger, VectorKind};
use crate::policies::{make_policy, Policy, PolicyError, PolicySpec};
use crate::rng::{tags, RngFactory};
use crate::workload::{
    generate_requests, min_code_distance, pad_to_min_distance, Request, WorkloadError,
    WorkloadSpec,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("coupled runs require an exponential downloading time, got {0:?}")]
    DistMismatch(DownloadDist),
    #[error("misaligned histories: {0}")]
    MisalignedHistories(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    SharedDepartureInstants,
    PerThreadStreams,
}

/// State digest of one side after one coupled event.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPoint {
    pub t: f64,
    /// Remaining-chunk counts, sorted nonincreasing.
    pub remaining: Vec<i64>,
    /// Remaining minus assigned threads, sorted nonincreasing.
    pub differential: Vec<i64>,
    pub departures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledHistories {
    pub a: Vec<HistoryPoint>,
    pub b: Vec<HistoryPoint>,
    pub coupling: Coupling,
    pub l_threads: usize,
}

// ---------------------------------------------------------------------------
// Coupled-run sides.

enum Side {
    Modeled {
        state: SystemState,
        policy: Box<dyn Policy>,
    },
    /// The virtual-chunk lower-bound construction: all threads busy while
    /// any request is unfinished; every tick credits the unfinished request
    /// with fewest remaining chunks.
    VirtualBound {
        workload: Vec<Request>,
        remaining: Vec<u32>,
        active: Vec<usize>,
        departures: usize,
        completed: usize,
    },
}

impl Side {
    fn build(
        spec: &PolicySpec,
        workload: &[Request],
        l_threads: usize,
    ) -> Result<Side, VerifyError> {
        if spec.is_bound_only() {
            Ok(Side::VirtualBound {
                workload: workload.to_vec(),
                remaining: workload.iter().map(|r| r.k).collect(),
                active: Vec::new(),
                departures: 0,
                completed: 0,
            })
        } else {
            let policy = make_policy(spec)?;
            policy.validate_workload(workload, l_threads)?;
            Ok(Side::Modeled {
                state: SystemState::new(workload, l_threads),
                policy,
            })
        }
    }

    fn decide(&mut self, now: f64, trigger: Trigger) -> Result<(), VerifyError> {
        if let Side::Modeled { state, policy } = self {
            let snap = state.snapshot(now);
            let batch = policy.decide(&snap, trigger);
            // Completions are exogenous ticks; requirements are never used.
            let mut draw = |_| f64::INFINITY;
            state.apply_directives(&batch, now, policy.preemptive(), &mut draw)?;
            #[cfg(debug_assertions)]
            if let Side::Modeled { state, .. } = self {
                state.check_invariants();
            }
        }
        Ok(())
    }

    fn arrive(&mut self, idx: usize, now: f64) -> Result<(), VerifyError> {
        match self {
            Side::Modeled { state, .. } => {
                state.arrive(idx);
                self.decide(now, Trigger::Arrival)
            }
            Side::VirtualBound { active, .. } => {
                active.push(idx);
                Ok(())
            }
        }
    }

    fn done(&self) -> bool {
        match self {
            Side::Modeled { state, .. } => state.all_complete(),
            Side::VirtualBound {
                completed,
                workload,
                ..
            } => *completed == workload.len(),
        }
    }

    fn busy(&self, thread: usize) -> bool {
        match self {
            Side::Modeled { state, .. } => {
                matches!(state.thread(thread).state, crate::model::SlotState::Serving(_))
            }
            Side::VirtualBound { active, .. } => !active.is_empty(),
        }
    }

    fn busy_threads(&self) -> Vec<usize> {
        match self {
            Side::Modeled { state, .. } => state.busy_thread_ids(),
            // The bound side is never driven through shared-departure
            // selection; it has no per-thread identity.
            Side::VirtualBound { .. } => Vec::new(),
        }
    }

    fn complete_thread(&mut self, thread: usize, now: f64) -> Result<(), VerifyError> {
        match self {
            Side::Modeled { state, .. } => {
                state.complete_on_thread(thread, now);
                self.decide(now, Trigger::Completion)
            }
            Side::VirtualBound {
                workload,
                remaining,
                active,
                departures,
                completed,
            } => {
                let target = active
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        (remaining[a], workload[a].arrival, a)
                            .partial_cmp(&(remaining[b], workload[b].arrival, b))
                            .unwrap()
                    })
                    .expect("tick on an empty bound side");
                remaining[target] -= 1;
                *departures += 1;
                if remaining[target] == 0 {
                    active.retain(|&i| i != target);
                    *completed += 1;
                }
                Ok(())
            }
        }
    }

    fn point(&self, now: f64) -> HistoryPoint {
        match self {
            Side::Modeled { state, .. } => {
                let snap = state.snapshot(now);
                HistoryPoint {
                    t: now,
                    remaining: state_vector(&snap, VectorKind::Remaining),
                    differential: state_vector(&snap, VectorKind::Differential),
                    departures: state.departures(),
                }
            }
            Side::VirtualBound {
                remaining,
                active,
                departures,
                ..
            } => {
                let mut rem: Vec<i64> = active.iter().map(|&i| remaining[i] as i64).collect();
                rem.sort_unstable_by(|a, b| b.cmp(a));
                HistoryPoint {
                    t: now,
                    differential: rem.clone(),
                    remaining: rem,
                    departures: *departures,
                }
            }
        }
    }
}

fn require_exponential(dist: &DownloadDist) -> Result<f64, VerifyError> {
    match dist {
        DownloadDist::Exponential { rate } => Ok(*rate),
        other => Err(VerifyError::DistMismatch(other.clone())),
    }
}

/// Drives two policies from one shared departure-instant sequence.
///
/// While work remains, inter-departure times are exponential at rate L*mu;
/// at each instant every side completes one in-service chunk selected by a
/// shared uniform draw. Requires d_min >= L so that both sides keep all L
/// threads busy whenever the system is nonempty.
pub fn coupled_departure_run(
    policy_a: &PolicySpec,
    policy_b: &PolicySpec,
    workload: &[Request],
    l_threads: usize,
    dist: &DownloadDist,
    seed: u64,
) -> Result<CoupledHistories, VerifyError> {
    let mu = require_exponential(dist)?;
    let d_min = min_code_distance(workload)?;
    if (d_min as usize) < l_threads {
        return Err(VerifyError::PreconditionViolated(format!(
            "shared-departure coupling needs d_min >= L, got d_min = {d_min}, L = {l_threads}"
        )));
    }
    let factory = RngFactory::new(seed);
    let mut clock = factory.stream(&[tags::DEPARTURES]);
    let mut select = factory.stream(&[tags::SELECTION]);
    let race = Exp::new(l_threads as f64 * mu).unwrap();

    let mut sides = [
        Side::build(policy_a, workload, l_threads)?,
        Side::build(policy_b, workload, l_threads)?,
    ];
    let mut hist_a = Vec::new();
    let mut hist_b = Vec::new();
    let mut now = 0.0f64;
    let mut next_arrival = 0usize;
    let mut work_left = 0i64;

    while !(sides[0].done() && sides[1].done()) {
        let arrival_time = workload.get(next_arrival).map(|r| r.arrival);
        let departure_time = if work_left > 0 {
            Some(now + race.sample(&mut clock))
        } else {
            None
        };
        let departure_first = match (departure_time, arrival_time) {
            (Some(dt), Some(at)) => dt <= at,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => {
                return Err(VerifyError::PreconditionViolated(
                    "no work left but sides disagree on completion".into(),
                ))
            }
        };
        match (departure_time, arrival_time) {
            (Some(dt), _) if departure_first => {
                now = dt;
                let u: f64 = select.random();
                for side in sides.iter_mut() {
                    let busy = side.busy_threads();
                    if busy.len() != l_threads {
                        return Err(VerifyError::PreconditionViolated(format!(
                            "side had {} busy threads at t = {now}, expected {l_threads}",
                            busy.len()
                        )));
                    }
                    let idx = ((u * busy.len() as f64) as usize).min(busy.len() - 1);
                    side.complete_thread(busy[idx], now)?;
                }
                work_left -= 1;
            }
            _ => {
                now = arrival_time.expect("no departure pending implies an arrival");
                let idx = workload[next_arrival].id;
                work_left += workload[next_arrival].k as i64;
                next_arrival += 1;
                for side in sides.iter_mut() {
                    side.arrive(idx, now)?;
                }
            }
        }
        hist_a.push(sides[0].point(now));
        hist_b.push(sides[1].point(now));
    }

    Ok(CoupledHistories {
        a: hist_a,
        b: hist_b,
        coupling: Coupling::SharedDepartureInstants,
        l_threads,
    })
}

/// Drives two sides from L fixed per-thread Poisson(mu) tick processes.
///
/// A tick on thread l completes whatever chunk that thread serves on each
/// side; a side whose thread is idle skips (deletes) the tick. Side b may
/// run a different workload with the same arrivals and k (e.g. padded n)
/// or the virtual-chunk bound construction, which consumes ticks on every
/// thread whenever any request is unfinished.
pub fn coupled_thread_stream_run(
    policy_a: &PolicySpec,
    workload_a: &[Request],
    policy_b: &PolicySpec,
    workload_b: &[Request],
    l_threads: usize,
    dist: &DownloadDist,
    seed: u64,
) -> Result<CoupledHistories, VerifyError> {
    let mu = require_exponential(dist)?;
    if workload_a.len() != workload_b.len()
        || workload_a
            .iter()
            .zip(workload_b)
            .any(|(x, y)| x.arrival != y.arrival || x.k != y.k)
    {
        return Err(VerifyError::PreconditionViolated(
            "coupled workloads must share arrivals and k".into(),
        ));
    }
    let factory = RngFactory::new(seed);
    let mut tick_rngs: Vec<_> = (0..l_threads)
        .map(|l| factory.stream(&[tags::THREAD_TICKS, l as u64]))
        .collect();
    let gap = Exp::new(mu).unwrap();
    let mut next_tick: Vec<f64> = tick_rngs.iter_mut().map(|r| gap.sample(r)).collect();

    let mut side_a = Side::build(policy_a, workload_a, l_threads)?;
    let mut side_b = Side::build(policy_b, workload_b, l_threads)?;
    let mut hist_a = Vec::new();
    let mut hist_b = Vec::new();
    let mut next_arrival = 0usize;
    let mut guard = 0u64;

    while !(side_a.done() && side_b.done()) {
        guard += 1;
        if guard > 50_000_000 {
            return Err(VerifyError::PreconditionViolated(
                "tick budget exhausted; coupling stalled".into(),
            ));
        }
        let (tick_thread, tick_time) = next_tick
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(l, t)| (l, t))
            .unwrap();
        let arrival_time = workload_a.get(next_arrival).map(|r| r.arrival);
        if arrival_time.is_some() && arrival_time.unwrap() <= tick_time {
            let now = arrival_time.unwrap();
            let idx = workload_a[next_arrival].id;
            next_arrival += 1;
            side_a.arrive(idx, now)?;
            side_b.arrive(idx, now)?;
            hist_a.push(side_a.point(now));
            hist_b.push(side_b.point(now));
        } else {
            let now = tick_time;
            let mut fired = false;
            if !side_a.done() && side_a.busy(tick_thread) {
                side_a.complete_thread(tick_thread, now)?;
                fired = true;
            }
            if !side_b.done() && side_b.busy(tick_thread) {
                side_b.complete_thread(tick_thread, now)?;
                fired = true;
            }
            next_tick[tick_thread] = now + gap.sample(&mut tick_rngs[tick_thread]);
            if fired {
                hist_a.push(side_a.point(now));
                hist_b.push(side_b.point(now));
            }
        }
    }

    Ok(CoupledHistories {
        a: hist_a,
        b: hist_b,
        coupling: Coupling::PerThreadStreams,
        l_threads,
    })
}

// ---------------------------------------------------------------------------
// Dominance checks.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DominanceMode {
    /// tail(alpha - delta, j) <= tail(beta, j) for all j.
    DifferentialVsRemaining,
    /// tail(alpha, j) <= tail(beta, j) + c for all j.
    RemainingOffset(i64),
    /// sum(alpha) <= sum(beta) + L - 1.
    TotalLMinus1,
    /// sum(beta) + tail(alpha - delta, j) <= tail(beta, j) + sum(alpha).
    Mixed2LMinus1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub t: f64,
    pub j: usize,
    pub lhs: i64,
    pub rhs: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub mode: DominanceMode,
    pub points: usize,
    pub violation: Option<Violation>,
}

impl DominanceReport {
    pub fn pass(&self) -> bool {
        self.violation.is_none()
    }
}

pub fn check_dominance(
    h: &CoupledHistories,
    mode: DominanceMode,
) -> Result<DominanceReport, VerifyError> {
    if h.a.len() != h.b.len() {
        return Err(VerifyError::MisalignedHistories(format!(
            "{} vs {} points",
            h.a.len(),
            h.b.len()
        )));
    }
    let l = h.l_threads as i64;
    let mut violation = None;
    'scan: for (pa, pb) in h.a.iter().zip(&h.b) {
        if pa.t != pb.t {
            return Err(VerifyError::MisalignedHistories(format!(
                "timestamps {} vs {}",
                pa.t, pb.t
            )));
        }
        match mode {
            DominanceMode::TotalLMinus1 => {
                let lhs: i64 = pa.remaining.iter().sum();
                let rhs: i64 = pb.remaining.iter().sum::<i64>() + l - 1;
                if lhs > rhs {
                    violation = Some(Violation {
                        t: pa.t,
                        j: 1,
                        lhs,
                        rhs,
                    });
                    break 'scan;
                }
            }
            DominanceMode::DifferentialVsRemaining => {
                let jmax = pa.differential.len().max(pb.remaining.len());
                for j in 1..=jmax {
                    let lhs = tail_sum(&pa.differential, j);
                    let rhs = tail_sum(&pb.remaining, j);
                    if lhs > rhs {
                        violation = Some(Violation {
                            t: pa.t,
                            j,
                            lhs,
                            rhs,
                        });
                        break 'scan;
                    }
                }
            }
            DominanceMode::RemainingOffset(c) => {
                let jmax = pa.remaining.len().max(pb.remaining.len());
                for j in 1..=jmax {
                    let lhs = tail_sum(&pa.remaining, j);
                    let rhs = tail_sum(&pb.remaining, j) + c;
                    if lhs > rhs {
                        violation = Some(Violation {
                            t: pa.t,
                            j,
                            lhs,
                            rhs,
                        });
                        break 'scan;
                    }
                }
            }
            DominanceMode::Mixed2LMinus1 => {
                let beta_total: i64 = pb.remaining.iter().sum();
                let alpha_total: i64 = pa.remaining.iter().sum();
                let jmax = pa.differential.len().max(pb.remaining.len());
                for j in 1..=jmax {
                    let lhs = beta_total + tail_sum(&pa.differential, j);
                    let rhs = tail_sum(&pb.remaining, j) + alpha_total;
                    if lhs > rhs {
                        violation = Some(Violation {
                            t: pa.t,
                            j,
                            lhs,
                            rhs,
                        });
                        break 'scan;
                    }
                }
            }
        }
    }
    Ok(DominanceReport {
        mode,
        points: h.a.len(),
        violation,
    })
}

/// Corrupts a history so the given mode must report a violation; negative
/// control for the checker itself.
pub fn corrupt_history(h: &mut CoupledHistories, mode: DominanceMode) {
    let mid = h.a.len() / 2;
    match mode {
        DominanceMode::Mixed2LMinus1 => {
            // Inflate the differential tail past sum(delta) <= L.
            let bump = 2 * h.l_threads as i64 + 10;
            let p = &mut h.a[mid];
            if p.differential.is_empty() {
                p.differential.push(bump);
            } else {
                p.differential[0] += bump;
            }
        }
        _ => {
            // Sink one beta entry far enough that no tail can cover it.
            let p = &mut h.b[mid];
            let total: i64 = p.remaining.iter().sum();
            let sink = total + 2 * h.l_threads as i64 + 1;
            if p.remaining.is_empty() {
                p.remaining.push(-sink);
            } else {
                p.remaining[0] -= sink;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Randomized workloads for the dominance suites.

/// Workload and thread count for one randomized coupled run.
pub fn random_suite_workload(
    seed: u64,
    max_requests: usize,
    max_threads: usize,
    require_dmin_ge_l: bool,
) -> (Vec<Request>, usize) {
    let mut rng = RngFactory::new(seed).stream(&[tags::WORKLOAD_REP]);
    let l = rng.random_range(2..=max_threads);
    let n_req = rng.random_range(1..=max_requests);
    let mut requests = Vec::with_capacity(n_req);
    let mut t = 0.0;
    for id in 0..n_req {
        let k = rng.random_range(1..=3u32);
        let n = if require_dmin_ge_l {
            k + l as u32 - 1 + rng.random_range(0..=2u32)
        } else {
            k + rng.random_range(0..=l as u32)
        };
        if id > 0 {
            // Mean gap tuned around the service capacity so queues form.
            let rho = 0.4 + 0.8 * rng.random::<f64>();
            let gap = Exp::new(rho * l as f64 / 1.8).unwrap();
            t += gap.sample(&mut rng);
        }
        requests.push(Request {
            id,
            arrival: t,
            k,
            n,
        });
    }
    (requests, l)
}

/// Which lemma a dominance-suite cell exercises; fixes the policy pair and
/// coupling for each mode.
pub fn run_dominance_case(
    mode: DominanceMode,
    workload: &[Request],
    l_threads: usize,
    seed: u64,
) -> Result<DominanceReport, VerifyError> {
    use crate::policies::PolicyId;
    let exp = DownloadDist::exponential(1.0);
    let histories = match mode {
        DominanceMode::DifferentialVsRemaining => coupled_departure_run(
            &PolicySpec::new(PolicyId::SedptRNonpreemptive),
            &PolicySpec::new(PolicyId::SerptRPreemptive),
            workload,
            l_threads,
            &exp,
            seed,
        )?,
        DominanceMode::RemainingOffset(_) => {
            let padded = pad_to_min_distance(workload, l_threads);
            coupled_thread_stream_run(
                &PolicySpec::new(PolicyId::SerptRPreemptive),
                workload,
                &PolicySpec::new(PolicyId::SerptRPreemptive),
                &padded,
                l_threads,
                &exp,
                seed,
            )?
        }
        DominanceMode::TotalLMinus1 | DominanceMode::Mixed2LMinus1 => coupled_thread_stream_run(
            &PolicySpec::new(PolicyId::SedptNrNonpreemptive),
            workload,
            &PolicySpec::new(PolicyId::LowerBoundVirtual),
            workload,
            l_threads,
            &exp,
            seed,
        )?,
    };
    check_dominance(&histories, mode)
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub runs: usize,
    pub failures: Vec<(u64, Violation)>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs `runs` randomized coupled runs of one dominance mode. Workloads are
/// constrained to d_min >= L only where the lemma requires it.
pub fn dominance_suite(mode: DominanceMode, runs: usize, seed: u64) -> Result<SuiteReport, VerifyError> {
    let need_dmin = matches!(mode, DominanceMode::DifferentialVsRemaining);
    let mut failures = Vec::new();
    for run in 0..runs {
        let case_seed = seed.wrapping_add(run as u64);
        let (workload, l) = random_suite_workload(case_seed, 50, 6, need_dmin);
        let mode = match mode {
            DominanceMode::RemainingOffset(_) => {
                let d_min = min_code_distance(&workload).unwrap() as i64;
                DominanceMode::RemainingOffset((l as i64 - d_min).max(0))
            }
            m => m,
        };
        let report = run_dominance_case(mode, &workload, l, case_seed)?;
        if let Some(v) = report.violation {
            failures.push((case_seed, v));
        }
    }
    Ok(SuiteReport {
        runs,
        failures,
    })
}

// ---------------------------------------------------------------------------
// Empirical stochastic ordering of departure instants.

#[derive(Debug, Clone)]
pub struct JOrderReport {
    pub j: usize,
    pub pass: bool,
    /// Largest p_a - (p_b + 3 se) over the grid; negative means slack.
    pub worst_margin: f64,
    pub worst_x: f64,
}

#[derive(Debug, Clone)]
pub struct OrderReport {
    pub per_j: Vec<JOrderReport>,
}

impl OrderReport {
    pub fn pass(&self) -> bool {
        self.per_j.iter().all(|r| r.pass)
    }
}

fn hash_name(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

fn collect_departures(
    spec: &PolicySpec,
    workload_spec: &WorkloadSpec,
    dist: &DownloadDist,
    l_threads: usize,
    reps: usize,
    j_set: &[usize],
    seed: u64,
) -> Result<Vec<Vec<f64>>, VerifyError> {
    use rayon::prelude::*;
    let root = RngFactory::new(seed);
    let key = hash_name(spec.id.as_str());
    let cfg = SimConfig::new(l_threads, dist.clone(), spec.clone(), seed);
    let out: Result<Vec<Vec<f64>>, VerifyError> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let wl_factory = root.child(tags::WORKLOAD_REP).child(r as u64);
            let workload = generate_requests(workload_spec, &wl_factory)?;
            let service = root.child(tags::REP).child(r as u64).child(key);
            let trace = simulate_with_factory(&workload, &cfg, &service)?;
            let mut row = Vec::with_capacity(j_set.len());
            for &j in j_set {
                if j == 0 || j > trace.chunk_departures.len() {
                    return Err(VerifyError::PreconditionViolated(format!(
                        "t_{j} requested but only {} chunks depart",
                        trace.chunk_departures.len()
                    )));
                }
                row.push(trace.chunk_departures[j - 1]);
            }
            Ok(row)
        })
        .collect();
    out
}

/// Tests coordinate-wise first-order dominance of the departure instants of
/// `policy_a` against `policy_b`: for every j in `j_set` and every x on a
/// 50-point pooled-quantile grid, the empirical tail of t_j under a must
/// not exceed the tail under b by more than three binomial standard errors.
pub fn empirical_stochastic_order(
    policy_a: &PolicySpec,
    policy_b: &PolicySpec,
    workload_spec: &WorkloadSpec,
    dist: &DownloadDist,
    l_threads: usize,
    reps: usize,
    j_set: &[usize],
    seed: u64,
) -> Result<OrderReport, VerifyError> {
    if reps < 10_000 {
        return Err(VerifyError::PreconditionViolated(format!(
            "tail comparison needs at least 10^4 replications, got {reps}"
        )));
    }
    let a = collect_departures(policy_a, workload_spec, dist, l_threads, reps, j_set, seed)?;
    let b = collect_departures(policy_b, workload_spec, dist, l_threads, reps, j_set, seed)?;
    let n = reps as f64;
    let mut per_j = Vec::with_capacity(j_set.len());
    for (ji, &j) in j_set.iter().enumerate() {
        let sa: Vec<f64> = a.iter().map(|row| row[ji]).collect();
        let sb: Vec<f64> = b.iter().map(|row| row[ji]).collect();
        let mut pooled: Vec<f64> = sa.iter().chain(&sb).copied().collect();
        pooled.sort_by(f64::total_cmp);
        let mut worst_margin = f64::NEG_INFINITY;
        let mut worst_x = 0.0;
        for g in 0..50 {
            let idx = ((g as f64 + 0.5) / 50.0 * pooled.len() as f64) as usize;
            let x = pooled[idx.min(pooled.len() - 1)];
            let pa = sa.iter().filter(|&&v| v > x).count() as f64 / n;
            let pb = sb.iter().filter(|&&v| v > x).count() as f64 / n;
            let se = ((pa * (1.0 - pa) + pb * (1.0 - pb)) / n).sqrt();
            let margin = pa - (pb + 3.0 * se);
            if margin > worst_margin {
                worst_margin = margin;
                worst_x = x;
            }
        }
        per_j.push(JOrderReport {
            j,
            pass: worst_margin <= 1e-12,
            worst_margin,
            worst_x,
        });
    }
    Ok(OrderReport { per_j })
}

// ---------------------------------------------------------------------------
// Departure-process invariance across work-conserving policies.

#[derive(Debug, Clone)]
pub struct InvariancePair {
    pub policy_a: String,
    pub policy_b: String,
    pub j: usize,
    pub mean_diff: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub j_count: usize,
    pub worst: Option<InvariancePair>,
    pub pass: bool,
}

/// Checks that the mean of every t_j (j <= j_max) agrees across the given
/// work-conserving policies on d_min >= L exponential workloads, within
/// three standard errors of the paired per-replication differences.
pub fn check_departure_invariance(
    policies: &[PolicySpec],
    workload_spec: &WorkloadSpec,
    l_threads: usize,
    dist: &DownloadDist,
    reps: usize,
    j_max: usize,
    seed: u64,
) -> Result<InvarianceReport, VerifyError> {
    require_exponential(dist)?;
    for spec in policies {
        let policy = make_policy(spec)?;
        if !policy.work_conserving() {
            return Err(VerifyError::PreconditionViolated(format!(
                "{} is not work-conserving",
                policy.name()
            )));
        }
    }
    // Probe one workload per replication stream for the d_min precondition
    // and the common chunk count.
    let root = RngFactory::new(seed);
    let mut total_chunks = usize::MAX;
    for r in 0..reps {
        let wl = generate_requests(workload_spec, &root.child(tags::WORKLOAD_REP).child(r as u64))?;
        let d_min = min_code_distance(&wl)?;
        if (d_min as usize) < l_threads {
            return Err(VerifyError::PreconditionViolated(format!(
                "replication {r} drew d_min = {d_min} < L = {l_threads}"
            )));
        }
        total_chunks = total_chunks.min(wl.iter().map(|r| r.k as usize).sum());
    }
    let j_count = j_max.min(total_chunks);
    let j_set: Vec<usize> = (1..=j_count).collect();
    let mut samples = Vec::with_capacity(policies.len());
    for spec in policies {
        samples.push(collect_departures(
            spec,
            workload_spec,
            dist,
            l_threads,
            reps,
            &j_set,
            seed,
        )?);
    }
    let mut worst: Option<InvariancePair> = None;
    let mut pass = true;
    for i in 0..policies.len() {
        for k in i + 1..policies.len() {
            for (ji, &j) in j_set.iter().enumerate() {
                let diffs: Vec<f64> = samples[i]
                    .iter()
                    .zip(&samples[k])
                    .map(|(ra, rb)| ra[ji] - rb[ji])
                    .collect();
                let s = crate::engine::summarize(&diffs);
                let ok = s.mean.abs() <= 3.0 * s.std_err;
                pass &= ok;
                let record = InvariancePair {
                    policy_a: policies[i].id.as_str().into(),
                    policy_b: policies[k].id.as_str().into(),
                    j,
                    mean_diff: s.mean,
                    std_err: s.std_err,
                };
                let score = if s.std_err > 0.0 {
                    s.mean.abs() / s.std_err
                } else {
                    0.0
                };
                let worst_score = worst
                    .as_ref()
                    .map(|w| {
                        if w.std_err > 0.0 {
                            w.mean_diff.abs() / w.std_err
                        } else {
                            0.0
                        }
                    })
                    .unwrap_or(-1.0);
                if score > worst_score {
                    worst = Some(record);
                }
            }
        }
    }
    Ok(InvarianceReport {
        j_count,
        worst,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::PolicyId;

    fn exp1() -> DownloadDist {
        DownloadDist::exponential(1.0)
    }

    #[test]
    fn identical_policies_identical_histories() {
        let (workload, l) = random_suite_workload(3, 20, 4, true);
        let spec = PolicySpec::new(PolicyId::SedptRNonpreemptive);
        let h = coupled_departure_run(&spec, &spec, &workload, l, &exp1(), 11).unwrap();
        assert_eq!(h.a, h.b);
        let h = coupled_thread_stream_run(&spec, &workload, &spec, &workload, l, &exp1(), 11)
            .unwrap();
        assert_eq!(h.a, h.b);
    }

    #[test]
    fn departure_coupling_requires_exponential() {
        let (workload, l) = random_suite_workload(4, 10, 3, true);
        let spec = PolicySpec::new(PolicyId::SedptRNonpreemptive);
        let err = coupled_departure_run(
            &spec,
            &spec,
            &workload,
            l,
            &DownloadDist::shifted_from_mu(1.0, 0.4),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, VerifyError::DistMismatch(_)));
    }

    #[test]
    fn departure_coupling_requires_dmin_ge_l() {
        let workload = vec![Request {
            id: 0,
            arrival: 0.0,
            k: 2,
            n: 2,
        }];
        let spec = PolicySpec::new(PolicyId::SedptRNonpreemptive);
        let err = coupled_departure_run(&spec, &spec, &workload, 4, &exp1(), 0).unwrap_err();
        assert!(matches!(err, VerifyError::PreconditionViolated(_)));
    }

    #[test]
    fn dominance_small_suites_pass() {
        for (mode, runs) in [
            (DominanceMode::DifferentialVsRemaining, 60),
            (DominanceMode::RemainingOffset(0), 60),
            (DominanceMode::TotalLMinus1, 60),
            (DominanceMode::Mixed2LMinus1, 60),
        ] {
            let report = dominance_suite(mode, runs, 2024).unwrap();
            assert!(
                report.pass(),
                "{mode:?} failed on seeds {:?}",
                report.failures
            );
        }
    }

    #[test]
    fn negative_controls_fail() {
        let (workload, l) = random_suite_workload(7, 25, 5, true);
        for mode in [
            DominanceMode::DifferentialVsRemaining,
            DominanceMode::RemainingOffset(0),
            DominanceMode::TotalLMinus1,
            DominanceMode::Mixed2LMinus1,
        ] {
            let spec_a = PolicySpec::new(PolicyId::SedptRNonpreemptive);
            let spec_b = PolicySpec::new(PolicyId::SerptRPreemptive);
            let mut h =
                coupled_departure_run(&spec_a, &spec_b, &workload, l, &exp1(), 5).unwrap();
            corrupt_history(&mut h, mode);
            let report = check_dominance(&h, mode).unwrap();
            assert!(
                report.violation.is_some(),
                "{mode:?} must detect the corrupted fixture"
            );
        }
    }

    #[test]
    fn misaligned_histories_rejected() {
        let (workload, l) = random_suite_workload(9, 10, 3, true);
        let spec = PolicySpec::new(PolicyId::SedptRNonpreemptive);
        let mut h = coupled_departure_run(&spec, &spec, &workload, l, &exp1(), 1).unwrap();
        h.b.pop();
        assert!(matches!(
            check_dominance(&h, DominanceMode::TotalLMinus1),
            Err(VerifyError::MisalignedHistories(_))
        ));
    }

    #[test]
    fn empty_workload_passes_vacuously() {
        let h = CoupledHistories {
            a: vec![],
            b: vec![],
            coupling: Coupling::SharedDepartureInstants,
            l_threads: 3,
        };
        for mode in [
            DominanceMode::DifferentialVsRemaining,
            DominanceMode::TotalLMinus1,
        ] {
            assert!(check_dominance(&h, mode).unwrap().pass());
        }
    }

    #[test]
    fn stochastic_order_same_policy_zero_margin() {
        let spec = WorkloadSpec::Explicit {
            requests: (0..6)
                .map(|i| crate::workload::RequestParams {
                    arrival: 0.1 * i as f64,
                    k: 2,
                    n: 6,
                })
                .collect(),
        };
        let p = PolicySpec::new(PolicyId::SedptRNonpreemptive);
        assert!(matches!(
            empirical_stochastic_order(&p, &p, &spec, &exp1(), 3, 500, &[1], 77),
            Err(VerifyError::PreconditionViolated(_))
        ));
        let report = empirical_stochastic_order(
            &p,
            &p,
            &spec,
            &exp1(),
            3,
            10_000,
            &[1, 3, 5],
            77,
        )
        .unwrap();
        assert!(report.pass());
        for j in &report.per_j {
            // Identical seeds and policies give identical samples.
            assert!(j.worst_margin <= 0.0);
        }
    }

    #[test]
    fn invariance_small() {
        let spec = WorkloadSpec::Stochastic {
            n_requests: 10,
            lambda: 4.0,
            arrival_mixture: vec![(1.0, 1.0)],
            code_mix: vec![(1.0, (4, 1))],
        };
        let policies = [
            PolicySpec::new(PolicyId::SerptRPreemptive),
            PolicySpec::new(PolicyId::SedptRNonpreemptive),
            PolicySpec::new(PolicyId::FcfsR),
        ];
        let report = check_departure_invariance(
            &policies,
            &spec,
            2,
            &exp1(),
            4_000,
            8,
            31,
        )
        .unwrap();
        assert!(report.pass, "worst pair: {:?}", report.worst);
    }

    #[test]
    fn invariance_rejects_non_work_conserving() {
        let spec = WorkloadSpec::Stochastic {
            n_requests: 5,
            lambda: 4.0,
            arrival_mixture: vec![(1.0, 1.0)],
            code_mix: vec![(1.0, (4, 1))],
        };
        let policies = [
            PolicySpec::new(PolicyId::SerptRPreemptive),
            PolicySpec::new(PolicyId::SedptNrNonpreemptive),
        ];
        let err =
            check_departure_invariance(&policies, &spec, 2, &exp1(), 100, 5, 0).unwrap_err();
        assert!(matches!(err, VerifyError::PreconditionViolated(_)));
    }

    #[test]
    fn invariance_rejects_low_redundancy_workloads() {
        let spec = WorkloadSpec::Stochastic {
            n_requests: 5,
            lambda: 4.0,
            arrival_mixture: vec![(1.0, 1.0)],
            code_mix: vec![(1.0, (2, 2))],
        };
        let policies = [PolicySpec::new(PolicyId::SerptRPreemptive)];
        let err =
            check_departure_invariance(&policies, &spec, 3, &exp1(), 50, 5, 0).unwrap_err();
        assert!(matches!(err, VerifyError::PreconditionViolated(_)));
    }
}
