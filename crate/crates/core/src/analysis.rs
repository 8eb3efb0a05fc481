//! Closed-form delay-gap bounds and bound-versus-measurement verdicts.
//!
//! Each setting row maps to the exact gap expression proved for it: zero for
//! the delay-optimal regimes, harmonic partial sums for the exponential
//! regimes, and sums of expected maxima for the used-shortens-service
//! regimes. Verdicts compare a measured gap with 3-sigma slack against the
//! corresponding bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistError, DownloadDist, Extreme, ExtremeMethod};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("unsupported setting: {0}")]
    UnsupportedSetting(String),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapSetting {
    /// Exponential, preemption allowed, any redundancy.
    ExpPreemptiveGeneral,
    /// Exponential, preemption allowed, d_min >= L: delay-optimal.
    ExpPreemptiveDminGeL,
    /// Exponential, no preemption, d_min >= L.
    ExpNonpreemptiveDminGeL,
    /// Exponential, no preemption, any redundancy.
    ExpNonpreemptiveGeneral,
    /// Used-is-shorter service law, no preemption.
    NluNonpreemptive,
    /// Used-is-shorter service law, preemption allowed.
    NluPreemptive,
    /// Used-is-longer mixture on repetition codes, no preemption:
    /// delay-optimal.
    NsuRepetitionNonpreemptive,
}

impl GapSetting {
    pub const ALL: [GapSetting; 7] = [
        GapSetting::ExpPreemptiveGeneral,
        GapSetting::ExpPreemptiveDminGeL,
        GapSetting::ExpNonpreemptiveDminGeL,
        GapSetting::ExpNonpreemptiveGeneral,
        GapSetting::NluNonpreemptive,
        GapSetting::NluPreemptive,
        GapSetting::NsuRepetitionNonpreemptive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GapSetting::ExpPreemptiveGeneral => "exp_preemptive_general",
            GapSetting::ExpPreemptiveDminGeL => "exp_preemptive_dmin_ge_L",
            GapSetting::ExpNonpreemptiveDminGeL => "exp_nonpreemptive_dmin_ge_L",
            GapSetting::ExpNonpreemptiveGeneral => "exp_nonpreemptive_general",
            GapSetting::NluNonpreemptive => "nlu_nonpreemptive",
            GapSetting::NluPreemptive => "nlu_preemptive",
            GapSetting::NsuRepetitionNonpreemptive => "nsu_repetition_nonpreemptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapBoundQuery {
    pub setting: GapSetting,
    pub l_threads: usize,
    pub d_min: u32,
    pub dist: DownloadDist,
}

/// Partial harmonic sum 1/d_min + ... + 1/(L-1); empty when d_min >= L.
fn harmonic_span(d_min: u32, l_threads: usize) -> f64 {
    if d_min as usize >= l_threads {
        return 0.0;
    }
    (d_min as usize..l_threads).map(|l| 1.0 / l as f64).sum()
}

/// The proved gap from the optimum for `q`, in seconds; 0 means
/// delay-optimal.
pub fn gap_bound(q: &GapBoundQuery) -> Result<f64, AnalysisError> {
    assert!(q.l_threads >= 1 && q.d_min >= 1);
    let mu = match &q.dist {
        DownloadDist::Exponential { rate } => *rate,
        _ => 1.0 / q.dist.mean(),
    };
    match q.setting {
        GapSetting::ExpPreemptiveDminGeL | GapSetting::NsuRepetitionNonpreemptive => Ok(0.0),
        GapSetting::ExpPreemptiveGeneral => {
            require_exponential(&q.dist, q.setting)?;
            Ok(harmonic_span(q.d_min, q.l_threads) / mu)
        }
        GapSetting::ExpNonpreemptiveDminGeL => {
            require_exponential(&q.dist, q.setting)?;
            Ok(1.0 / mu)
        }
        GapSetting::ExpNonpreemptiveGeneral => {
            require_exponential(&q.dist, q.setting)?;
            Ok((1.0 + harmonic_span(q.d_min, q.l_threads)) / mu)
        }
        GapSetting::NluNonpreemptive | GapSetting::NluPreemptive => {
            let max_l = q
                .dist
                .expected_extreme(q.l_threads, Extreme::Max, ExtremeMethod::Analytic)?
                .value;
            let max_l1 = if q.l_threads == 1 {
                0.0
            } else {
                q.dist
                    .expected_extreme(q.l_threads - 1, Extreme::Max, ExtremeMethod::Analytic)?
                    .value
            };
            Ok(max_l + max_l1)
        }
    }
}

fn require_exponential(dist: &DownloadDist, setting: GapSetting) -> Result<(), AnalysisError> {
    if matches!(dist, DownloadDist::Exponential { .. }) {
        Ok(())
    } else {
        Err(AnalysisError::UnsupportedSetting(format!(
            "{} requires an exponential downloading time",
            setting.as_str()
        )))
    }
}

/// Display-only logarithmic estimate (ln((L-1)/d_min) + 1)/mu of the
/// harmonic-span gap; never used for verdicts.
pub fn harmonic_log_estimate(d_min: u32, l_threads: usize, mu: f64) -> f64 {
    if d_min as usize >= l_threads {
        0.0
    } else {
        (((l_threads - 1) as f64 / d_min as f64).ln() + 1.0) / mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Within,
    Violated,
    Inconclusive,
}

/// Compares a measured gap (with standard error) against a bound:
/// violated when even 3 standard errors of slack leave it above the bound,
/// within when the point estimate is at or under the bound, inconclusive
/// when the estimate exceeds the bound but its interval spans it.
pub fn verdict(measured: f64, std_err: f64, bound: f64) -> Verdict {
    assert!(std_err >= 0.0);
    if measured - 3.0 * std_err > bound {
        Verdict::Violated
    } else if measured <= bound {
        Verdict::Within
    } else {
        Verdict::Inconclusive
    }
}
