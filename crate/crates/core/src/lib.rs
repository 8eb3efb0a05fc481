//! Discrete-event simulator and verification harness for redundant parallel
//! data retrieval from erasure-coded storage.
//!
//! A proxy with `L` downloading threads serves read requests for files
//! stored under (n, k) MDS codes: any k of a file's n chunks reconstruct
//! it, so threads beyond k accelerate a request at the cost of extra load.
//! The crate provides the thread-scheduling policy catalog (SERPT/SEDPT
//! families, FCFS baselines, scripted counterexamples, a virtual-chunk
//! delay lower bound), an event-driven engine with chunk-level preemption
//! and service termination, closed-form delay-gap bounds, and a
//! verification layer that checks the sample-path dominance lemmas and
//! departure-process invariance behind those bounds.

pub mod analysis;
pub mod distributions;
pub mod engine;
pub mod model;
pub mod policies;
pub mod rng;
pub mod verify;
pub mod workload;

pub use analysis::{gap_bound, verdict, GapBoundQuery, GapSetting, Verdict};
pub use distributions::{Classification, DownloadDist, Extreme, ExtremeMethod};
pub use engine::{
    average_flow_time, run_paired_replications, run_replications, simulate, SimConfig, Summary,
    Trace,
};
pub use model::{state_vector, tail_sum, Directive, SystemSnapshot, Trigger, VectorKind};
pub use policies::{make_policy, Policy, PolicyId, PolicySpec};
pub use rng::RngFactory;
pub use workload::{
    generate_requests, min_code_distance, solve_lambda_for_rho, traffic_intensity,
    IntensityVariant, Request, WorkloadSpec,
};
