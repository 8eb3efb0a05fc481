//! Request sequences: arrival times, code parameters, load accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistError, DownloadDist, Extreme, ExtremeMethod};
use crate::rng::{tags, RngFactory};

pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("empty workload")]
    EmptyWorkload,
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// One file-read request: arrival instant plus its (n, k) code parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: usize,
    pub arrival: f64,
    /// Chunks needed to reconstruct the file.
    pub k: u32,
    /// Chunks stored; any k of them suffice.
    pub n: u32,
}

impl Request {
    /// Code distance n - k + 1.
    pub fn distance(&self) -> u32 {
        self.n - self.k + 1
    }
}

/// Request parameters without an assigned id, as they appear in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub arrival: f64,
    pub k: u32,
    pub n: u32,
}

/// How a workload is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WorkloadSpec {
    Explicit {
        requests: Vec<RequestParams>,
    },
    Stochastic {
        #[serde(rename = "N")]
        n_requests: usize,
        lambda: f64,
        /// (probability, rate multiple of lambda) pairs.
        arrival_mixture: Vec<(f64, f64)>,
        /// (probability, (n, k)) pairs.
        code_mix: Vec<(f64, (u32, u32))>,
    },
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        match self {
            WorkloadSpec::Explicit { requests } => {
                if requests.is_empty() {
                    return Err(WorkloadError::InvalidSpec("no requests".into()));
                }
                if requests[0].arrival != 0.0 {
                    return Err(WorkloadError::InvalidSpec(format!(
                        "first arrival must be 0, got {}",
                        requests[0].arrival
                    )));
                }
                for pair in requests.windows(2) {
                    if pair[1].arrival < pair[0].arrival {
                        return Err(WorkloadError::InvalidSpec(
                            "arrivals must be nondecreasing".into(),
                        ));
                    }
                }
                for r in requests {
                    validate_code(r.n, r.k)?;
                }
            }
            WorkloadSpec::Stochastic {
                n_requests,
                lambda,
                arrival_mixture,
                code_mix,
            } => {
                if *n_requests < 1 {
                    return Err(WorkloadError::InvalidSpec("N must be >= 1".into()));
                }
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(WorkloadError::InvalidSpec(format!(
                        "lambda {lambda} must be > 0"
                    )));
                }
                check_mixture(arrival_mixture.iter().map(|&(p, _)| p), "arrival_mixture")?;
                for &(_, mult) in arrival_mixture {
                    if !(mult.is_finite() && mult > 0.0) {
                        return Err(WorkloadError::InvalidSpec(
                            "arrival mixture rates must be > 0".into(),
                        ));
                    }
                }
                check_mixture(code_mix.iter().map(|&(p, _)| p), "code_mix")?;
                for &(_, (n, k)) in code_mix {
                    validate_code(n, k)?;
                }
            }
        }
        Ok(())
    }

    /// Mean inter-arrival time of the stochastic arrival law.
    pub fn mean_interarrival(&self) -> Result<f64, WorkloadError> {
        match self {
            WorkloadSpec::Stochastic {
                lambda,
                arrival_mixture,
                ..
            } => Ok(arrival_mixture
                .iter()
                .map(|&(p, mult)| p / (mult * lambda))
                .sum()),
            WorkloadSpec::Explicit { .. } => Err(WorkloadError::InvalidSpec(
                "explicit workloads have no arrival law".into(),
            )),
        }
    }

    pub fn with_lambda(&self, new_lambda: f64) -> WorkloadSpec {
        match self {
            WorkloadSpec::Stochastic {
                n_requests,
                arrival_mixture,
                code_mix,
                ..
            } => WorkloadSpec::Stochastic {
                n_requests: *n_requests,
                lambda: new_lambda,
                arrival_mixture: arrival_mixture.clone(),
                code_mix: code_mix.clone(),
            },
            explicit => explicit.clone(),
        }
    }

    /// Minimum code distance over the workload's support: the realized
    /// minimum for explicit workloads, the minimum over the code mix for
    /// stochastic ones.
    pub fn support_min_distance(&self) -> Option<u32> {
        match self {
            WorkloadSpec::Explicit { requests } => {
                requests.iter().map(|r| r.n - r.k + 1).min()
            }
            WorkloadSpec::Stochastic { code_mix, .. } => {
                code_mix.iter().map(|&(_, (n, k))| n - k + 1).min()
            }
        }
    }

    pub fn with_n(&self, n: usize) -> WorkloadSpec {
        match self {
            WorkloadSpec::Stochastic {
                lambda,
                arrival_mixture,
                code_mix,
                ..
            } => WorkloadSpec::Stochastic {
                n_requests: n,
                lambda: *lambda,
                arrival_mixture: arrival_mixture.clone(),
                code_mix: code_mix.clone(),
            },
            explicit => explicit.clone(),
        }
    }
}

fn validate_code(n: u32, k: u32) -> Result<(), WorkloadError> {
    if k < 1 || n < k {
        return Err(WorkloadError::InvalidSpec(format!(
            "code (n={n}, k={k}) needs n >= k >= 1"
        )));
    }
    Ok(())
}

fn check_mixture(probs: impl Iterator<Item = f64>, what: &str) -> Result<(), WorkloadError> {
    let mut total = 0.0;
    let mut any = false;
    for p in probs {
        any = true;
        if !(p.is_finite() && p > 0.0) {
            return Err(WorkloadError::InvalidSpec(format!(
                "{what} probabilities must be > 0"
            )));
        }
        total += p;
    }
    if !any {
        return Err(WorkloadError::InvalidSpec(format!("{what} is empty")));
    }
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(WorkloadError::InvalidSpec(format!(
            "{what} probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Generates the request sequence for `spec`.
///
/// Stochastic mode draws N inter-arrival gaps, cumulates them, and shifts
/// the sequence so the first arrival is exactly 0. Code parameters come
/// from a separate stream so that fixing one stream holds the other part
/// of the workload constant across coupled runs.
pub fn generate_requests(
    spec: &WorkloadSpec,
    factory: &RngFactory,
) -> Result<Vec<Request>, WorkloadError> {
    spec.validate()?;
    match spec {
        WorkloadSpec::Explicit { requests } => Ok(requests
            .iter()
            .enumerate()
            .map(|(id, r)| Request {
                id,
                arrival: r.arrival,
                k: r.k,
                n: r.n,
            })
            .collect()),
        WorkloadSpec::Stochastic {
            n_requests,
            lambda,
            arrival_mixture,
            code_mix,
        } => {
            use rand::Rng;
            use rand_distr::{Distribution, Exp};
            let mut arr_rng = factory.stream(&[tags::ARRIVALS]);
            let mut code_rng = factory.stream(&[tags::CODES]);
            let mut cum = 0.0;
            let mut arrivals = Vec::with_capacity(*n_requests);
            for _ in 0..*n_requests {
                let u: f64 = arr_rng.random();
                let mut acc = 0.0;
                let mut rate = arrival_mixture.last().unwrap().1 * lambda;
                for &(p, mult) in arrival_mixture {
                    acc += p;
                    if u < acc {
                        rate = mult * lambda;
                        break;
                    }
                }
                cum += Exp::new(rate).unwrap().sample(&mut arr_rng);
                arrivals.push(cum);
            }
            let first = arrivals[0];
            let mut requests = Vec::with_capacity(*n_requests);
            for (id, a) in arrivals.into_iter().enumerate() {
                let u: f64 = code_rng.random();
                let mut acc = 0.0;
                let mut code = code_mix.last().unwrap().1;
                for &(p, nk) in code_mix {
                    acc += p;
                    if u < acc {
                        code = nk;
                        break;
                    }
                }
                requests.push(Request {
                    id,
                    arrival: a - first,
                    k: code.1,
                    n: code.0,
                });
            }
            Ok(requests)
        }
    }
}

/// Minimum code distance across the workload.
pub fn min_code_distance(requests: &[Request]) -> Result<u32, WorkloadError> {
    requests
        .iter()
        .map(Request::distance)
        .min()
        .ok_or(WorkloadError::EmptyWorkload)
}

/// Copy of the workload with every n raised so that all code distances
/// reach at least `l`. Arrivals and k are untouched.
pub fn pad_to_min_distance(requests: &[Request], l: usize) -> Vec<Request> {
    requests
        .iter()
        .map(|r| Request {
            n: r.n.max(r.k + l as u32 - 1),
            ..*r
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityVariant {
    /// (sum of p_m k_m) * lambda / (L * mu_eff).
    ChunkRate,
    /// lambda * E[min over L draws].
    MinBased,
}

/// Traffic intensity of a stochastic workload on `l` threads.
pub fn traffic_intensity(
    spec: &WorkloadSpec,
    l: usize,
    dist: &DownloadDist,
    variant: IntensityVariant,
) -> Result<f64, WorkloadError> {
    let WorkloadSpec::Stochastic {
        lambda, code_mix, ..
    } = spec
    else {
        return Err(WorkloadError::InvalidSpec(
            "traffic intensity needs a stochastic workload".into(),
        ));
    };
    match variant {
        IntensityVariant::ChunkRate => {
            let mean_k: f64 = code_mix.iter().map(|&(p, (_, k))| p * k as f64).sum();
            let mu_eff = 1.0 / dist.mean();
            Ok(mean_k * lambda / (l as f64 * mu_eff))
        }
        IntensityVariant::MinBased => {
            let e_min = dist
                .expected_extreme(l, Extreme::Min, ExtremeMethod::Analytic)?
                .value;
            Ok(lambda * e_min)
        }
    }
}

/// Arrival rate parameter achieving `rho_target`; both variants are linear
/// in lambda so the inversion is exact.
pub fn solve_lambda_for_rho(
    spec: &WorkloadSpec,
    l: usize,
    dist: &DownloadDist,
    variant: IntensityVariant,
    rho_target: f64,
) -> Result<f64, WorkloadError> {
    assert!(rho_target > 0.0, "rho target must be positive");
    let unit = traffic_intensity(&spec.with_lambda(1.0), l, dist, variant)?;
    Ok(rho_target / unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig2_spec(lambda: f64) -> WorkloadSpec {
        WorkloadSpec::Stochastic {
            n_requests: 3000,
            lambda,
            arrival_mixture: vec![(0.99, 0.5), (0.01, 50.5)],
            code_mix: vec![(0.9, (3, 1)), (0.1, (14, 10))],
        }
    }

    #[test]
    fn explicit_returned_verbatim() {
        let spec = WorkloadSpec::Explicit {
            requests: vec![
                RequestParams {
                    arrival: 0.0,
                    k: 1,
                    n: 4,
                },
                RequestParams {
                    arrival: 0.0,
                    k: 2,
                    n: 2,
                },
            ],
        };
        let reqs = generate_requests(&spec, &RngFactory::new(1)).unwrap();
        assert_eq!(reqs.len(), 2);
        assert_eq!((reqs[0].k, reqs[0].n, reqs[0].arrival), (1, 4, 0.0));
        assert_eq!((reqs[1].k, reqs[1].n, reqs[1].arrival), (2, 2, 0.0));
        assert_eq!(reqs[0].distance(), 4);
        assert_eq!(reqs[1].distance(), 1);
    }

    #[test]
    fn stochastic_interarrival_mean() {
        let lambda = 2.0;
        let spec = WorkloadSpec::Stochastic {
            n_requests: 1_000_000,
            lambda,
            arrival_mixture: vec![(0.99, 0.5), (0.01, 50.5)],
            code_mix: vec![(1.0, (3, 1))],
        };
        let reqs = generate_requests(&spec, &RngFactory::new(7)).unwrap();
        let span = reqs.last().unwrap().arrival;
        let mean_gap = span / (reqs.len() - 1) as f64;
        let expected = 0.99 / (0.5 * lambda) + 0.01 / (50.5 * lambda);
        assert!(
            (mean_gap - expected).abs() / expected < 0.01,
            "gap {mean_gap} vs {expected}"
        );
        assert!((spec.mean_interarrival().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn single_request_pinned_at_zero() {
        let spec = WorkloadSpec::Stochastic {
            n_requests: 1,
            lambda: 3.0,
            arrival_mixture: vec![(1.0, 1.0)],
            code_mix: vec![(1.0, (3, 1))],
        };
        let reqs = generate_requests(&spec, &RngFactory::new(9)).unwrap();
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].arrival, 0.0);
    }

    #[test]
    fn min_distance_examples() {
        let mk = |codes: &[(u32, u32)]| -> Vec<Request> {
            codes
                .iter()
                .enumerate()
                .map(|(id, &(n, k))| Request {
                    id,
                    arrival: 0.0,
                    k,
                    n,
                })
                .collect()
        };
        assert_eq!(min_code_distance(&mk(&[(3, 1), (14, 10)])).unwrap(), 3);
        assert_eq!(min_code_distance(&mk(&[(4, 1)])).unwrap(), 4);
        assert_eq!(min_code_distance(&mk(&[(2, 2)])).unwrap(), 1);
        assert_eq!(
            min_code_distance(&[]).unwrap_err(),
            WorkloadError::EmptyWorkload
        );
    }

    #[test]
    fn fig2_rho_inversion() {
        let dist = DownloadDist::exponential(50.0);
        let lambda =
            solve_lambda_for_rho(&fig2_spec(1.0), 3, &dist, IntensityVariant::ChunkRate, 0.5)
                .unwrap();
        assert!((lambda - 39.473684).abs() < 1e-4, "lambda {lambda}");
        let rho = traffic_intensity(
            &fig2_spec(lambda),
            3,
            &dist,
            IntensityVariant::ChunkRate,
        )
        .unwrap();
        assert!((rho - 0.5).abs() < 1e-12);
    }

    #[test]
    fn min_based_intensity() {
        let dist = DownloadDist::exponential(1.0);
        let spec = WorkloadSpec::Stochastic {
            n_requests: 10,
            lambda: 3.0,
            arrival_mixture: vec![(1.0, 1.0)],
            code_mix: vec![(1.0, (3, 1))],
        };
        let rho = traffic_intensity(&spec, 3, &dist, IntensityVariant::MinBased).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        let lambda =
            solve_lambda_for_rho(&spec, 3, &dist, IntensityVariant::MinBased, 0.9).unwrap();
        assert!((lambda - 2.7).abs() < 1e-12);
    }

    #[test]
    fn padding_raises_distance() {
        let reqs = vec![
            Request {
                id: 0,
                arrival: 0.0,
                k: 1,
                n: 3,
            },
            Request {
                id: 1,
                arrival: 0.5,
                k: 10,
                n: 14,
            },
        ];
        let padded = pad_to_min_distance(&reqs, 5);
        assert_eq!(min_code_distance(&padded).unwrap(), 5);
        assert_eq!(padded[0].n, 5);
        assert_eq!(padded[1].n, 14);
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = WorkloadSpec::Explicit {
            requests: vec![RequestParams {
                arrival: 1.0,
                k: 1,
                n: 1,
            }],
        };
        assert!(matches!(
            generate_requests(&bad, &RngFactory::new(0)),
            Err(WorkloadError::InvalidSpec(_))
        ));
        let bad_mix = WorkloadSpec::Stochastic {
            n_requests: 5,
            lambda: 1.0,
            arrival_mixture: vec![(0.5, 1.0)],
            code_mix: vec![(1.0, (3, 1))],
        };
        assert!(bad_mix.validate().is_err());
    }

    proptest! {
        #[test]
        fn generation_sorted_and_deterministic(seed in 0u64..500, n in 1usize..200) {
            let spec = WorkloadSpec::Stochastic {
                n_requests: n,
                lambda: 5.0,
                arrival_mixture: vec![(0.99, 0.5), (0.01, 50.5)],
                code_mix: vec![(0.9, (3, 1)), (0.1, (14, 10))],
            };
            let a = generate_requests(&spec, &RngFactory::new(seed)).unwrap();
            let b = generate_requests(&spec, &RngFactory::new(seed)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a[0].arrival, 0.0);
            for w in a.windows(2) {
                prop_assert!(w[1].arrival >= w[0].arrival);
            }
            let both_classes = a.iter().any(|r| r.k == 1) && a.iter().any(|r| r.k == 10);
            if both_classes {
                prop_assert_eq!(min_code_distance(&a).unwrap(), 3);
            }
        }

        #[test]
        fn intensity_linear_in_lambda(lambda in 0.01f64..100.0) {
            let dist = DownloadDist::exponential(50.0);
            let r1 = traffic_intensity(&fig2_spec(lambda), 3, &dist, IntensityVariant::ChunkRate).unwrap();
            let r2 = traffic_intensity(&fig2_spec(2.0 * lambda), 3, &dist, IntensityVariant::ChunkRate).unwrap();
            prop_assert!((r2 - 2.0 * r1).abs() <= 1e-12 * r2.abs().max(1.0));
        }
    }
}
