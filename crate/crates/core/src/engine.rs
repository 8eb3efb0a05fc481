//! Discrete-event simulation loop and replication harness.
//!
//! Events are request arrivals and scheduled chunk completions. Completions
//! sort before arrivals at equal timestamps, lowest thread id first, so runs
//! are deterministic. After every event the policy re-decides and the
//! directives are applied; a fresh assignment draws its downloading time
//! from a per-(thread, attempt) stream, a resumed chunk completes after its
//! remaining time, and a preemption cancels the scheduled completion via a
//! generation counter on the thread.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::DownloadDist;
use crate::model::{
    ModelError, SnapshotDigest, SystemState, Totals, Trigger,
};
use crate::policies::{make_policy, PolicyError, PolicySpec};
use crate::rng::{tags, RngFactory};
use crate::workload::{generate_requests, Request, WorkloadError, WorkloadSpec};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("event cap exceeded after {events} events (cap {cap})")]
    EventCapExceeded { events: u64, cap: u64 },
    #[error(transparent)]
    IllegalDirective(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("no pending events at t = {at} but {unfinished} requests unfinished")]
    Stalled { at: f64, unfinished: usize },
    #[error("trace incomplete: {completed} of {total} requests finished")]
    IncompleteTrace { completed: usize, total: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub l_threads: usize,
    pub dist: DownloadDist,
    pub policy: PolicySpec,
    pub seed: u64,
    #[serde(default)]
    pub record_snapshots: bool,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
}

fn default_max_events() -> u64 {
    50_000_000
}

impl SimConfig {
    pub fn new(l_threads: usize, dist: DownloadDist, policy: PolicySpec, seed: u64) -> Self {
        SimConfig {
            l_threads,
            dist,
            policy,
            seed,
            record_snapshots: false,
            max_events: default_max_events(),
        }
    }

    pub fn with_policy(&self, policy: PolicySpec) -> Self {
        SimConfig {
            policy,
            ..self.clone()
        }
    }
}

/// Full record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Task instants: each request contributes k copies of its arrival.
    pub chunk_task_arrivals: Vec<f64>,
    /// Completion instant of every downloaded chunk, in time order.
    pub chunk_departures: Vec<f64>,
    /// Completion time per request, indexed by request id.
    pub completions: Vec<f64>,
    pub snapshots: Option<Vec<SnapshotDigest>>,
    pub totals: Totals,
}

/// Mean of completion minus arrival over the workload.
pub fn average_flow_time(trace: &Trace, workload: &[Request]) -> Result<f64, EngineError> {
    if trace.completions.len() != workload.len() {
        return Err(EngineError::IncompleteTrace {
            completed: trace.completions.len(),
            total: workload.len(),
        });
    }
    let n = workload.len() as f64;
    Ok(workload
        .iter()
        .map(|r| trace.completions[r.id] - r.arrival)
        .sum::<f64>()
        / n)
}

/// Scheduled completion; min-heap order on (time, thread).
#[derive(Debug, Clone, Copy, PartialEq)]
struct CompletionEvent {
    time: f64,
    thread: usize,
    gen: u64,
}

impl Eq for CompletionEvent {}

impl Ord for CompletionEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.thread.cmp(&self.thread))
    }
}

impl PartialOrd for CompletionEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs one simulation with streams derived from `cfg.seed`.
pub fn simulate(workload: &[Request], cfg: &SimConfig) -> Result<Trace, EngineError> {
    simulate_with_factory(workload, cfg, &RngFactory::new(cfg.seed))
}

/// Runs one simulation with an externally supplied stream factory, so that
/// replications and coupled comparisons control seeding.
pub fn simulate_with_factory(
    workload: &[Request],
    cfg: &SimConfig,
    factory: &RngFactory,
) -> Result<Trace, EngineError> {
    debug_assert!(workload.windows(2).all(|w| w[0].arrival <= w[1].arrival));
    if cfg.policy.is_bound_only() {
        return simulate_virtual_bound(workload, cfg, factory);
    }
    let policy = make_policy(&cfg.policy)?;
    policy.validate_workload(workload, cfg.l_threads)?;
    let mut state = SystemState::new(workload, cfg.l_threads);
    let mut heap: BinaryHeap<CompletionEvent> = BinaryHeap::new();
    let mut gens = vec![0u64; cfg.l_threads];
    let mut attempts = vec![0u64; cfg.l_threads];
    let mut departures: Vec<f64> = Vec::new();
    let mut completions = vec![f64::NAN; workload.len()];
    let mut snapshots = cfg.record_snapshots.then(Vec::new);
    let mut next_arrival = 0usize;
    let mut events = 0u64;
    let mut now = 0.0f64;

    let handle = |state: &mut SystemState,
                      heap: &mut BinaryHeap<CompletionEvent>,
                      gens: &mut Vec<u64>,
                      attempts: &mut Vec<u64>,
                      now: f64,
                      trigger: Trigger|
     -> Result<(), EngineError> {
        let snap = state.snapshot(now);
        let batch = policy.decide(&snap, trigger);
        let mut draw = |thread: usize| {
            attempts[thread] += 1;
            let mut rng = factory.stream(&[tags::SERVICE, thread as u64, attempts[thread]]);
            cfg.dist.sample(&mut rng)
        };
        let started = state.apply_directives(&batch, now, policy.preemptive(), &mut draw)?;
        for (thread, remaining) in started {
            gens[thread] += 1;
            heap.push(CompletionEvent {
                time: now + remaining,
                thread,
                gen: gens[thread],
            });
        }
        #[cfg(debug_assertions)]
        state.check_invariants();
        Ok(())
    };

    // Work conservation is a statement about positive-length intervals, so
    // it is checked once an instant is settled (several events can share a
    // timestamp, e.g. simultaneous arrivals).
    #[cfg(debug_assertions)]
    let check_work_conserving = |state: &SystemState, now: f64| {
        if policy.work_conserving() {
            let idle = (0..cfg.l_threads)
                .any(|t| matches!(state.thread(t).state, crate::model::SlotState::Idle));
            let assignable = state
                .active_ids()
                .iter()
                .any(|&id| state.progress(id).assignable() > 0);
            assert!(
                !(idle && assignable),
                "{} left a thread idle with assignable chunks at t = {now}",
                policy.name()
            );
        }
    };

    // Let the policy see the initial (empty) system once.
    handle(
        &mut state, &mut heap, &mut gens, &mut attempts, 0.0, Trigger::Start,
    )?;

    while !state.all_complete() {
        events += 1;
        if events > cfg.max_events {
            return Err(EngineError::EventCapExceeded {
                events,
                cap: cfg.max_events,
            });
        }
        // Discard cancelled completions.
        while let Some(top) = heap.peek() {
            if gens[top.thread] == top.gen {
                break;
            }
            heap.pop();
        }
        let next_completion = heap.peek().copied();
        let arrival_time = workload.get(next_arrival).map(|r| r.arrival);
        let take_completion = match (next_completion, arrival_time) {
            (Some(c), Some(a)) => c.time <= a,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => {
                return Err(EngineError::Stalled {
                    at: now,
                    unfinished: workload.len() - state.completed(),
                })
            }
        };
        #[cfg(debug_assertions)]
        {
            let next_time = if take_completion {
                next_completion.unwrap().time
            } else {
                arrival_time.unwrap()
            };
            if next_time > now {
                check_work_conserving(&state, now);
            }
        }
        if take_completion {
            let ev = heap.pop().unwrap();
            now = ev.time;
            let outcome = state.complete_on_thread(ev.thread, now);
            gens[ev.thread] += 1;
            for t in outcome.terminated_threads {
                gens[t] += 1;
            }
            departures.push(now);
            if outcome.request_completed {
                completions[outcome.request] = now;
            }
            handle(
                &mut state, &mut heap, &mut gens, &mut attempts, now, Trigger::Completion,
            )?;
            if let Some(s) = snapshots.as_mut() {
                s.push(state.digest(now, "completion"));
            }
        } else {
            let req = &workload[next_arrival];
            now = req.arrival;
            state.arrive(req.id);
            next_arrival += 1;
            handle(
                &mut state, &mut heap, &mut gens, &mut attempts, now, Trigger::Arrival,
            )?;
            if let Some(s) = snapshots.as_mut() {
                s.push(state.digest(now, "arrival"));
            }
        }
    }

    let mut tasks: Vec<f64> = Vec::with_capacity(departures.len());
    for r in workload {
        tasks.extend(std::iter::repeat(r.arrival).take(r.k as usize));
    }
    tasks.sort_by(f64::total_cmp);
    Ok(Trace {
        chunk_task_arrivals: tasks,
        chunk_departures: departures,
        completions,
        snapshots,
        totals: state.totals(),
    })
}

/// The virtual-chunk lower-bound construction: while any request is
/// unfinished all threads run nonpreemptive renewal chunks (padding with
/// virtual chunks when fewer real ones remain), and every completion is
/// credited to the unfinished request with the fewest remaining chunks.
/// Infeasible as a real policy; used as the delay lower bound.
fn simulate_virtual_bound(
    workload: &[Request],
    cfg: &SimConfig,
    factory: &RngFactory,
) -> Result<Trace, EngineError> {
    let l = cfg.l_threads;
    let mut remaining: Vec<u32> = workload.iter().map(|r| r.k).collect();
    let mut completions = vec![f64::NAN; workload.len()];
    let mut departures = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    let mut ends: Vec<Option<f64>> = vec![None; l];
    let mut attempts = vec![0u64; l];
    let mut next_arrival = 0usize;
    let mut events = 0u64;
    let mut now;
    let mut done = 0usize;
    let mut downloaded = 0u64;

    let draw = |thread: usize, attempts: &mut Vec<u64>| {
        attempts[thread] += 1;
        let mut rng = factory.stream(&[tags::SERVICE, thread as u64, attempts[thread]]);
        cfg.dist.sample(&mut rng)
    };

    while done < workload.len() {
        events += 1;
        if events > cfg.max_events {
            return Err(EngineError::EventCapExceeded {
                events,
                cap: cfg.max_events,
            });
        }
        let next_done: Option<(f64, usize)> = ends
            .iter()
            .enumerate()
            .filter_map(|(t, e)| e.map(|time| (time, t)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let arrival_time = workload.get(next_arrival).map(|r| r.arrival);
        let completion_first = match (next_done, arrival_time) {
            (Some((ct, _)), Some(at)) => ct <= at,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => unreachable!("threads idle only when no work remains"),
        };
        match (next_done, arrival_time) {
            (Some((ct, thread)), _) if completion_first => {
                now = ct;
                // Credit the unfinished request with fewest remaining chunks.
                let target = active
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        (remaining[a], workload[a].arrival, a)
                            .partial_cmp(&(remaining[b], workload[b].arrival, b))
                            .unwrap()
                    })
                    .expect("active nonempty while threads run");
                remaining[target] -= 1;
                departures.push(now);
                downloaded += 1;
                if remaining[target] == 0 {
                    completions[target] = now;
                    active.retain(|&a| a != target);
                    done += 1;
                }
                if active.is_empty() {
                    // System emptied: all threads idle, progress discarded.
                    ends.iter_mut().for_each(|e| *e = None);
                } else {
                    ends[thread] = Some(now + draw(thread, &mut attempts));
                }
            }
            _ => {
                now = arrival_time.expect("no completion pending implies an arrival");
                let id = workload[next_arrival].id;
                let was_empty = active.is_empty();
                active.push(id);
                next_arrival += 1;
                if was_empty {
                    for t in 0..l {
                        ends[t] = Some(now + draw(t, &mut attempts));
                    }
                }
            }
        }
    }

    let mut tasks: Vec<f64> = Vec::new();
    for r in workload {
        tasks.extend(std::iter::repeat(r.arrival).take(r.k as usize));
    }
    tasks.sort_by(f64::total_cmp);
    Ok(Trace {
        chunk_task_arrivals: tasks,
        chunk_departures: departures,
        completions,
        snapshots: None,
        totals: Totals {
            downloaded,
            preempted: 0,
            terminated: 0,
        },
    })
}

/// Mean, standard error and a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std_err: f64,
    pub ci95: (f64, f64),
    pub reps: usize,
}

pub fn summarize(samples: &[f64]) -> Summary {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std_err = (var / n).sqrt();
    Summary {
        mean,
        std_err,
        ci95: (mean - 1.96 * std_err, mean + 1.96 * std_err),
        reps: samples.len(),
    }
}

/// Per-replication average flow times for `policy` on workloads drawn from
/// `spec`. Replication r uses workload stream r when `resample_arrivals` is
/// set (stream 0 otherwise) and service streams keyed by (rep, thread,
/// attempt), so two policies run with the same `base_seed` see identical
/// workloads and coupled service draws.
pub fn replicate_flow_times(
    spec: &WorkloadSpec,
    cfg: &SimConfig,
    reps: usize,
    resample_arrivals: bool,
    base_seed: u64,
) -> Result<Vec<f64>, EngineError> {
    replicate_flow_times_mapped(spec, cfg, reps, resample_arrivals, base_seed, &|w| {
        w.to_vec()
    })
}

/// Same as [`replicate_flow_times`] with a per-replication workload
/// transform (e.g. padding code parameters for a lower-bound run).
pub fn replicate_flow_times_mapped(
    spec: &WorkloadSpec,
    cfg: &SimConfig,
    reps: usize,
    resample_arrivals: bool,
    base_seed: u64,
    map: &(dyn Fn(&[Request]) -> Vec<Request> + Sync),
) -> Result<Vec<f64>, EngineError> {
    let root = RngFactory::new(base_seed);
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let wl_stream = if resample_arrivals { r as u64 } else { 0 };
            let workload_factory = root.child(tags::WORKLOAD_REP).child(wl_stream);
            let workload = map(&generate_requests(spec, &workload_factory)?);
            let service_factory = root.child(tags::REP).child(r as u64);
            let trace = simulate_with_factory(&workload, cfg, &service_factory)?;
            average_flow_time(&trace, &workload)
        })
        .collect()
}

pub fn run_replications(
    spec: &WorkloadSpec,
    cfg: &SimConfig,
    reps: usize,
    resample_arrivals: bool,
    base_seed: u64,
) -> Result<Summary, EngineError> {
    assert!(reps >= 2, "need at least two replications");
    let flows = replicate_flow_times(spec, cfg, reps, resample_arrivals, base_seed)?;
    Ok(summarize(&flows))
}

/// Paired comparison of two configurations on common workloads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedSummary {
    pub a: Summary,
    pub b: Summary,
    /// Statistics of the per-replication difference a - b.
    pub diff_mean: f64,
    pub diff_std_err: f64,
}

pub fn run_paired_replications(
    spec: &WorkloadSpec,
    cfg_a: &SimConfig,
    cfg_b: &SimConfig,
    map_b: Option<&(dyn Fn(&[Request]) -> Vec<Request> + Sync)>,
    reps: usize,
    resample_arrivals: bool,
    base_seed: u64,
) -> Result<PairedSummary, EngineError> {
    assert!(reps >= 2, "need at least two replications");
    let flows_a = replicate_flow_times(spec, cfg_a, reps, resample_arrivals, base_seed)?;
    let identity = |w: &[Request]| w.to_vec();
    let flows_b = replicate_flow_times_mapped(
        spec,
        cfg_b,
        reps,
        resample_arrivals,
        base_seed,
        map_b.unwrap_or(&identity),
    )?;
    let diffs: Vec<f64> = flows_a
        .iter()
        .zip(&flows_b)
        .map(|(a, b)| a - b)
        .collect();
    let d = summarize(&diffs);
    Ok(PairedSummary {
        a: summarize(&flows_a),
        b: summarize(&flows_b),
        diff_mean: d.mean,
        diff_std_err: d.std_err,
    })
}

/// Convenience: the two-request workload of the first worked example
/// (k=1,n=4) and (k=2,n=2) at time zero, L = 4.
pub fn example1_workload() -> Vec<Request> {
    vec![
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
    ]
}

/// The second worked example: (k=2,n=3) at zero, (k=1,n=2) at epsilon, L = 2.
pub fn example2_workload(epsilon: f64) -> Vec<Request> {
    vec![
        Request {
            id: 0,
            arrival: 0.0,
            k: 2,
            n: 3,
        },
        Request {
            id: 1,
            arrival: epsilon,
            k: 1,
            n: 2,
        },
    ]
}

/// Monte Carlo mean flow time of a fixed workload over independent seeds.
pub fn mc_mean_flow(
    workload: &[Request],
    cfg: &SimConfig,
    reps: usize,
    base_seed: u64,
) -> Result<Summary, EngineError> {
    let root = RngFactory::new(base_seed);
    let flows: Result<Vec<f64>, EngineError> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let factory = root.child(tags::REP).child(r as u64);
            let trace = simulate_with_factory(workload, cfg, &factory)?;
            average_flow_time(&trace, workload)
        })
        .collect();
    Ok(summarize(&flows?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::PolicyId;

    fn cfg(l: usize, mu: f64, policy: PolicySpec, seed: u64) -> SimConfig {
        SimConfig::new(l, DownloadDist::exponential(mu), policy, seed)
    }

    #[test]
    fn single_request_single_thread_flow_is_service_time() {
        let workload = vec![Request {
            id: 0,
            arrival: 0.0,
            k: 1,
            n: 1,
        }];
        let c = cfg(1, 1.0, PolicySpec::new(PolicyId::FcfsR), 5);
        let s = mc_mean_flow(&workload, &c, 200_000, 5).unwrap();
        assert!(
            (s.mean - 1.0).abs() < 3.0 * s.std_err,
            "mean {} se {}",
            s.mean,
            s.std_err
        );
    }

    #[test]
    fn example1_serpt_r_mean() {
        let c = cfg(4, 1.0, PolicySpec::new(PolicyId::SerptRPreemptive), 7);
        let s = mc_mean_flow(&example1_workload(), &c, 200_000, 7).unwrap();
        assert!(
            (s.mean - 1.0).abs() < 3.0 * s.std_err,
            "mean {} se {}",
            s.mean,
            s.std_err
        );
    }

    #[test]
    fn example1_script_q1_mean() {
        let c = cfg(4, 1.0, PolicySpec::new(PolicyId::ScriptQ1), 8);
        let s = mc_mean_flow(&example1_workload(), &c, 200_000, 8).unwrap();
        assert!(
            (s.mean - 0.953125).abs() < 3.0 * s.std_err,
            "mean {} se {}",
            s.mean,
            s.std_err
        );
    }

    #[test]
    fn example2_script_q2_mean() {
        let eps = 0.01;
        let c = cfg(2, 1.0, PolicySpec::script_q2(eps), 9);
        let s = mc_mean_flow(&example2_workload(eps), &c, 200_000, 9).unwrap();
        let expect = 1.0 + eps / 2.0;
        assert!(
            (s.mean - expect).abs() < 3.0 * s.std_err,
            "mean {} se {}",
            s.mean,
            s.std_err
        );
    }

    #[test]
    fn example2_nonpreemptive_serpt_mean() {
        let eps = 0.01;
        let c = cfg(2, 1.0, PolicySpec::new(PolicyId::SerptRNonpreemptive), 10);
        let s = mc_mean_flow(&example2_workload(eps), &c, 200_000, 10).unwrap();
        let expect = 1.25 - eps / 2.0;
        assert!(
            (s.mean - expect).abs() < 3.0 * s.std_err,
            "mean {} se {}",
            s.mean,
            s.std_err
        );
    }

    #[test]
    fn average_flow_time_by_hand() {
        let workload = vec![
            Request {
                id: 0,
                arrival: 0.0,
                k: 1,
                n: 1,
            },
            Request {
                id: 1,
                arrival: 1.0,
                k: 1,
                n: 1,
            },
        ];
        let trace = Trace {
            chunk_task_arrivals: vec![0.0, 1.0],
            chunk_departures: vec![2.0, 3.0],
            completions: vec![2.0, 3.0],
            snapshots: None,
            totals: Totals::default(),
        };
        assert_eq!(average_flow_time(&trace, &workload).unwrap(), 2.0);
        let zero = Trace {
            chunk_task_arrivals: vec![0.0],
            chunk_departures: vec![0.0],
            completions: vec![0.0],
            snapshots: None,
            totals: Totals::default(),
        };
        let one = vec![workload[0]];
        assert_eq!(average_flow_time(&zero, &one).unwrap(), 0.0);
        let incomplete = Trace {
            completions: vec![],
            ..zero
        };
        assert!(matches!(
            average_flow_time(&incomplete, &one),
            Err(EngineError::IncompleteTrace { .. })
        ));
    }

    #[test]
    fn first_departure_is_min_of_l_exponentials() {
        // d_min >= L and work conserving: t_1 ~ Exp(L mu).
        let workload = vec![Request {
            id: 0,
            arrival: 0.0,
            k: 2,
            n: 5,
        }];
        let c = cfg(3, 2.0, PolicySpec::new(PolicyId::FcfsR), 11);
        let root = RngFactory::new(11);
        let reps = 100_000;
        let t1s: Vec<f64> = (0..reps)
            .map(|r| {
                let f = root.child(tags::REP).child(r as u64);
                let trace = simulate_with_factory(&workload, &c, &f).unwrap();
                trace.chunk_departures[0]
            })
            .collect();
        let s = summarize(&t1s);
        let expect = 1.0 / (3.0 * 2.0);
        assert!(
            (s.mean - expect).abs() < 3.0 * s.std_err,
            "mean {} expect {expect}",
            s.mean
        );
    }

    #[test]
    fn traces_reproducible_bit_exact() {
        let spec = WorkloadSpec::Stochastic {
            n_requests: 50,
            lambda: 20.0,
            arrival_mixture: vec![(0.99, 0.5), (0.01, 50.5)],
            code_mix: vec![(0.9, (3, 1)), (0.1, (14, 10))],
        };
        let workload = generate_requests(&spec, &RngFactory::new(3)).unwrap();
        for policy in [
            PolicyId::SerptRPreemptive,
            PolicyId::SedptRNonpreemptive,
            PolicyId::SedptWcrPreemptive,
            PolicyId::LowerBoundVirtual,
        ] {
            let c = cfg(3, 50.0, PolicySpec::new(policy), 42);
            let a = simulate(&workload, &c).unwrap();
            let b = simulate(&workload, &c).unwrap();
            assert_eq!(a, b, "{policy}");
        }
    }

    #[test]
    fn chunk_accounting_exact() {
        let spec = WorkloadSpec::Stochastic {
            n_requests: 80,
            lambda: 30.0,
            arrival_mixture: vec![(1.0, 1.0)],
            code_mix: vec![(0.9, (3, 1)), (0.1, (14, 10))],
        };
        let workload = generate_requests(&spec, &RngFactory::new(13)).unwrap();
        let total_k: u64 = workload.iter().map(|r| r.k as u64).sum();
        for policy in [
            PolicyId::FcfsR,
            PolicyId::SerptRPreemptive,
            PolicyId::SedptRNonpreemptive,
            PolicyId::SedptNrNonpreemptive,
            PolicyId::SedptWcrPreemptive,
            PolicyId::FcfsWcr,
        ] {
            let c = cfg(3, 50.0, PolicySpec::new(policy), 21);
            let trace = simulate(&workload, &c).unwrap();
            assert_eq!(trace.totals.downloaded, total_k, "{policy}");
            assert_eq!(trace.chunk_departures.len() as u64, total_k);
            assert!(trace
                .chunk_departures
                .windows(2)
                .all(|w| w[0] <= w[1]));
            for r in &workload {
                assert!(trace.completions[r.id] >= r.arrival);
            }
        }
    }

    #[test]
    fn event_cap_enforced() {
        let workload = vec![Request {
            id: 0,
            arrival: 0.0,
            k: 5,
            n: 5,
        }];
        let mut c = cfg(2, 1.0, PolicySpec::new(PolicyId::FcfsR), 1);
        c.max_events = 3;
        assert!(matches!(
            simulate(&workload, &c),
            Err(EngineError::EventCapExceeded { .. })
        ));
    }

    #[test]
    fn replication_summary_and_determinism() {
        let spec = WorkloadSpec::Stochastic {
            n_requests: 30,
            lambda: 10.0,
            arrival_mixture: vec![(1.0, 1.0)],
            code_mix: vec![(1.0, (3, 1))],
        };
        let c = cfg(3, 50.0, PolicySpec::new(PolicyId::SerptRPreemptive), 0);
        let s1 = run_replications(&spec, &c, 20, true, 77).unwrap();
        let s2 = run_replications(&spec, &c, 20, true, 77).unwrap();
        assert_eq!(s1.mean.to_bits(), s2.mean.to_bits());
        assert!(s1.std_err > 0.0);
        assert!(s1.ci95.0 < s1.mean && s1.mean < s1.ci95.1);
        // Fixing arrivals still resamples service.
        let s3 = run_replications(&spec, &c, 20, false, 77).unwrap();
        assert!(s3.std_err > 0.0);
    }

    #[test]
    fn virtual_bound_credits_all_chunks() {
        let spec = WorkloadSpec::Stochastic {
            n_requests: 40,
            lambda: 15.0,
            arrival_mixture: vec![(1.0, 1.0)],
            code_mix: vec![(0.9, (3, 1)), (0.1, (14, 10))],
        };
        let workload = generate_requests(&spec, &RngFactory::new(17)).unwrap();
        let c = cfg(3, 50.0, PolicySpec::new(PolicyId::LowerBoundVirtual), 18);
        let trace = simulate(&workload, &c).unwrap();
        let total_k: u64 = workload.iter().map(|r| r.k as u64).sum();
        assert_eq!(trace.totals.downloaded, total_k);
        for r in &workload {
            assert!(trace.completions[r.id] >= r.arrival);
        }
    }

    #[test]
    fn paired_runs_share_workloads() {
        let spec = WorkloadSpec::Stochastic {
            n_requests: 40,
            lambda: 20.0,
            arrival_mixture: vec![(1.0, 1.0)],
            code_mix: vec![(1.0, (3, 1))],
        };
        let a = cfg(3, 50.0, PolicySpec::new(PolicyId::SerptRPreemptive), 0);
        let p = run_paired_replications(&spec, &a, &a, None, 10, true, 5).unwrap();
        // Identical configurations on shared streams give identical flows.
        assert_eq!(p.diff_mean, 0.0);
        assert_eq!(p.diff_std_err, 0.0);
    }
}
