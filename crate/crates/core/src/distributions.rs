//! Chunk downloading-time distributions.
//!
//! Three families cover the workloads of interest: plain exponential,
//! shifted exponential (a constant setup delay followed by an exponential
//! tail, the common fit for cloud object reads), and finite mixtures of
//! exponentials (occasional slow responses). Each family supports exact
//! tail evaluation, analytic residual sampling conditioned on elapsed
//! service, used/fresh classification, and expectations of extreme order
//! statistics over `L` parallel draws.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{tags, RngFactory};

/// Comparison tolerance for analytic tail inequalities.
pub const TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid distribution: {0}")]
    Invalid(String),
    #[error("zero tail probability at elapsed {elapsed}")]
    ZeroTailProbability { elapsed: f64 },
    #[error("no closed form for {what} with method=analytic")]
    UnsupportedAnalytic { what: String },
}

/// A downloading-time law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DownloadDist {
    /// Exponential with the given rate (mean `1/rate`).
    Exponential { rate: f64 },
    /// Constant `shift` plus an exponential with the given rate.
    ShiftedExponential { shift: f64, rate: f64 },
    /// Mixture of exponentials; components are (weight, rate) pairs.
    ExponentialMixture { components: Vec<(f64, f64)> },
}

/// Outcome of testing the used-vs-fresh tail inequalities on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// Equality everywhere: memoryless.
    Both,
    /// Residual life stochastically shorter than a fresh draw.
    Nlu,
    /// Residual life stochastically longer than a fresh draw.
    Nsu,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Max,
    Min,
}

/// Config-file form of a downloading-time law. Rates are expressed through
/// `mu` (the reciprocal mean for the exponential and shifted families;
/// mixture component rates are multiples of `mu`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    Exponential { mu: f64 },
    ShiftedExp { mu: f64, shift_frac: f64 },
    ExpMixture { mu: f64, components: Vec<(f64, f64)> },
}

impl DistSpec {
    pub fn to_dist(&self) -> Result<DownloadDist, DistError> {
        let dist = match self {
            DistSpec::Exponential { mu } => DownloadDist::Exponential { rate: *mu },
            DistSpec::ShiftedExp { mu, shift_frac } => {
                if !(*shift_frac >= 0.0 && *shift_frac < 1.0) {
                    return Err(DistError::Invalid(format!(
                        "shift_frac {shift_frac} must lie in [0, 1)"
                    )));
                }
                DownloadDist::shifted_from_mu(*mu, *shift_frac)
            }
            DistSpec::ExpMixture { mu, components } => DownloadDist::ExponentialMixture {
                components: components.iter().map(|&(w, r)| (w, r * mu)).collect(),
            },
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn mu(&self) -> f64 {
        match self {
            DistSpec::Exponential { mu }
            | DistSpec::ShiftedExp { mu, .. }
            | DistSpec::ExpMixture { mu, .. } => *mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtremeMethod {
    Analytic,
    MonteCarlo { reps: usize, seed: u64 },
}

/// Expected extreme value, with a standard error when estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremeEstimate {
    pub value: f64,
    pub std_err: Option<f64>,
}

/// Sum of 1/1 + 1/2 + ... + 1/n.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

impl DownloadDist {
    pub fn exponential(rate: f64) -> Self {
        DownloadDist::Exponential { rate }
    }

    pub fn shifted_exponential(shift: f64, rate: f64) -> Self {
        DownloadDist::ShiftedExponential { shift, rate }
    }

    pub fn mixture(components: Vec<(f64, f64)>) -> Self {
        DownloadDist::ExponentialMixture { components }
    }

    /// The shifted-exponential law with tail 1 below `shift_frac/mu` and mean
    /// `1/mu`: shift `shift_frac/mu`, rate `mu/(1-shift_frac)`.
    pub fn shifted_from_mu(mu: f64, shift_frac: f64) -> Self {
        DownloadDist::ShiftedExponential {
            shift: shift_frac / mu,
            rate: mu / (1.0 - shift_frac),
        }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        match self {
            DownloadDist::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(DistError::Invalid(format!("rate {rate} must be > 0")));
                }
            }
            DownloadDist::ShiftedExponential { shift, rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(DistError::Invalid(format!("rate {rate} must be > 0")));
                }
                if !(shift.is_finite() && *shift >= 0.0) {
                    return Err(DistError::Invalid(format!("shift {shift} must be >= 0")));
                }
            }
            DownloadDist::ExponentialMixture { components } => {
                if components.is_empty() {
                    return Err(DistError::Invalid("mixture has no components".into()));
                }
                let mut total = 0.0;
                for &(w, r) in components {
                    if !(w.is_finite() && w > 0.0) {
                        return Err(DistError::Invalid(format!("weight {w} must be > 0")));
                    }
                    if !(r.is_finite() && r > 0.0) {
                        return Err(DistError::Invalid(format!("rate {r} must be > 0")));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > TAIL_TOL {
                    return Err(DistError::Invalid(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            DownloadDist::Exponential { rate } => 1.0 / rate,
            DownloadDist::ShiftedExponential { shift, rate } => shift + 1.0 / rate,
            DownloadDist::ExponentialMixture { components } => {
                components.iter().map(|&(w, r)| w / r).sum()
            }
        }
    }

    /// Exact `P(X > t)` for `t >= 0`.
    pub fn tail(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        match self {
            DownloadDist::Exponential { rate } => (-rate * t).exp(),
            DownloadDist::ShiftedExponential { shift, rate } => {
                if t <= *shift {
                    1.0
                } else {
                    (-rate * (t - shift)).exp()
                }
            }
            DownloadDist::ExponentialMixture { components } => {
                components.iter().map(|&(w, r)| w * (-r * t).exp()).sum()
            }
        }
    }

    /// One i.i.d. draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DownloadDist::Exponential { rate } => Exp::new(*rate).unwrap().sample(rng),
            DownloadDist::ShiftedExponential { shift, rate } => {
                shift + Exp::new(*rate).unwrap().sample(rng)
            }
            DownloadDist::ExponentialMixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(w, r) in components {
                    acc += w;
                    if u < acc {
                        return Exp::new(r).unwrap().sample(rng);
                    }
                }
                // Weight rounding can leave u just past the final cumulative sum.
                Exp::new(components.last().unwrap().1).unwrap().sample(rng)
            }
        }
    }

    /// A draw from the law of `X - elapsed` given `X > elapsed`.
    ///
    /// Each family has an analytic conditional: exponential is memoryless,
    /// the shifted family shrinks its shift by the elapsed time, and a
    /// mixture reweights its components by their posterior probability of
    /// having survived.
    pub fn residual_sample<R: Rng + ?Sized>(
        &self,
        elapsed: f64,
        rng: &mut R,
    ) -> Result<f64, DistError> {
        if self.tail(elapsed) <= 0.0 {
            return Err(DistError::ZeroTailProbability { elapsed });
        }
        Ok(match self {
            DownloadDist::Exponential { rate } => Exp::new(*rate).unwrap().sample(rng),
            DownloadDist::ShiftedExponential { shift, rate } => {
                if elapsed < *shift {
                    (shift - elapsed) + Exp::new(*rate).unwrap().sample(rng)
                } else {
                    Exp::new(*rate).unwrap().sample(rng)
                }
            }
            DownloadDist::ExponentialMixture { components } => {
                let total: f64 = components
                    .iter()
                    .map(|&(w, r)| w * (-r * elapsed).exp())
                    .sum();
                let u: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for &(w, r) in components {
                    acc += w * (-r * elapsed).exp();
                    if u < acc {
                        return Ok(Exp::new(r).unwrap().sample(rng));
                    }
                }
                Exp::new(components.last().unwrap().1).unwrap().sample(rng)
            }
        })
    }

    /// Default classification grid: 201 points spanning ten means.
    pub fn default_grid(&self) -> Vec<f64> {
        let mean = self.mean();
        (0..=200).map(|i| i as f64 * 0.05 * mean).collect()
    }

    /// Tests the used-vs-fresh inequalities `P(X>t)P(X>tau) >= P(X>t+tau)`
    /// (residual shorter than fresh) and its reverse on all grid pairs,
    /// with tolerance [`TAIL_TOL`] on the analytic tails.
    pub fn classify(&self, t_grid: &[f64], tau_grid: &[f64]) -> Classification {
        let mut nlu_ok = true;
        let mut nsu_ok = true;
        for &t in t_grid {
            for &tau in tau_grid {
                let survives = self.tail(tau);
                if survives <= 0.0 {
                    continue;
                }
                let fresh = self.tail(t) * survives;
                let used = self.tail(t + tau);
                if fresh < used - TAIL_TOL {
                    nlu_ok = false;
                }
                if fresh > used + TAIL_TOL {
                    nsu_ok = false;
                }
            }
            if !nlu_ok && !nsu_ok {
                break;
            }
        }
        match (nlu_ok, nsu_ok) {
            (true, true) => Classification::Both,
            (true, false) => Classification::Nlu,
            (false, true) => Classification::Nsu,
            (false, false) => Classification::Neither,
        }
    }

    pub fn classify_default(&self) -> Classification {
        let grid = self.default_grid();
        self.classify(&grid, &grid)
    }

    /// `E[max(X_1..X_L)]` or `E[min(X_1..X_L)]` over `L` i.i.d. draws.
    ///
    /// Closed forms: exponential and shifted-exponential for both extremes,
    /// mixtures for the min (the tail of the min expands by the multinomial
    /// theorem). The max of a mixture falls back to Monte Carlo.
    pub fn expected_extreme(
        &self,
        l: usize,
        which: Extreme,
        method: ExtremeMethod,
    ) -> Result<ExtremeEstimate, DistError> {
        assert!(l >= 1, "need at least one draw");
        match method {
            ExtremeMethod::Analytic => {
                let value = self.extreme_analytic(l, which)?;
                Ok(ExtremeEstimate {
                    value,
                    std_err: None,
                })
            }
            ExtremeMethod::MonteCarlo { reps, seed } => {
                let mut rng = RngFactory::new(seed).stream(&[tags::EXTREME_MC]);
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for _ in 0..reps {
                    let mut ext = self.sample(&mut rng);
                    for _ in 1..l {
                        let x = self.sample(&mut rng);
                        ext = match which {
                            Extreme::Max => ext.max(x),
                            Extreme::Min => ext.min(x),
                        };
                    }
                    sum += ext;
                    sumsq += ext * ext;
                }
                let n = reps as f64;
                let mean = sum / n;
                let var = (sumsq / n - mean * mean).max(0.0) * n / (n - 1.0);
                Ok(ExtremeEstimate {
                    value: mean,
                    std_err: Some((var / n).sqrt()),
                })
            }
        }
    }

    fn extreme_analytic(&self, l: usize, which: Extreme) -> Result<f64, DistError> {
        match (self, which) {
            (DownloadDist::Exponential { rate }, Extreme::Max) => Ok(harmonic(l) / rate),
            (DownloadDist::Exponential { rate }, Extreme::Min) => Ok(1.0 / (l as f64 * rate)),
            (DownloadDist::ShiftedExponential { shift, rate }, Extreme::Max) => {
                Ok(shift + harmonic(l) / rate)
            }
            (DownloadDist::ShiftedExponential { shift, rate }, Extreme::Min) => {
                Ok(shift + 1.0 / (l as f64 * rate))
            }
            (DownloadDist::ExponentialMixture { components }, Extreme::Min) => {
                // E[min] = integral of tail^L; expand the power of the
                // component sum over compositions of L.
                let m = components.len();
                let mut total = 0.0;
                let mut counts = vec![0usize; m];
                expand_compositions(l, 0, &mut counts, &mut |counts| {
                    let mut coef = multinomial(l, counts);
                    let mut rate_sum = 0.0;
                    for (i, &c) in counts.iter().enumerate() {
                        coef *= components[i].0.powi(c as i32);
                        rate_sum += c as f64 * components[i].1;
                    }
                    total += coef / rate_sum;
                });
                Ok(total)
            }
            (DownloadDist::ExponentialMixture { .. }, Extreme::Max) => {
                Err(DistError::UnsupportedAnalytic {
                    what: "max of an exponential mixture".into(),
                })
            }
        }
    }
}

fn multinomial(n: usize, counts: &[usize]) -> f64 {
    let mut result = 1.0;
    let mut remaining = n;
    for &c in counts {
        for i in 0..c {
            result *= (remaining - i) as f64 / (i + 1) as f64;
        }
        remaining -= c;
    }
    result
}

fn expand_compositions(
    remaining: usize,
    idx: usize,
    counts: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if idx == counts.len() - 1 {
        counts[idx] = remaining;
        visit(counts);
        return;
    }
    for c in 0..=remaining {
        counts[idx] = c;
        expand_compositions(remaining - c, idx + 1, counts, visit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngFactory;
    use proptest::prelude::*;

    fn stream(seed: u64) -> rand_chacha::ChaCha12Rng {
        RngFactory::new(seed).stream(&[99])
    }

    fn empirical_mean(dist: &DownloadDist, n: usize, seed: u64) -> f64 {
        let mut rng = stream(seed);
        (0..n).map(|_| dist.sample(&mut rng)).sum::<f64>() / n as f64
    }

    #[test]
    fn exponential_mean_one() {
        let d = DownloadDist::exponential(1.0);
        let m = empirical_mean(&d, 1_000_000, 1);
        assert!((m - 1.0).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn shifted_draws_at_least_shift() {
        // mu = 50 parametrization: shift 0.4/mu = 0.008 s.
        let d = DownloadDist::shifted_from_mu(50.0, 0.4);
        let mut rng = stream(2);
        for _ in 0..100_000 {
            assert!(d.sample(&mut rng) >= 0.008);
        }
        assert!((d.mean() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn mixture_mean_by_hand() {
        // 0.5/0.4 + 0.5/1.6 = 1.5625 at mu = 1.
        let d = DownloadDist::mixture(vec![(0.5, 0.4), (0.5, 1.6)]);
        assert!((d.mean() - 1.5625).abs() < 1e-12);
        let m = empirical_mean(&d, 1_000_000, 3);
        assert!((m - 1.5625).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn residual_exponential_memoryless() {
        let d = DownloadDist::exponential(1.0);
        let mut rng = stream(4);
        let n = 1_000_000;
        let m = (0..n)
            .map(|_| d.residual_sample(5.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((m - 1.0).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn residual_shifted_past_shift_is_exponential() {
        let d = DownloadDist::shifted_exponential(0.4, 1.0 / 0.6);
        let mut rng = stream(5);
        let n = 1_000_000;
        let m = (0..n)
            .map(|_| d.residual_sample(0.4, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((m - 0.6).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn residual_shifted_before_shift_keeps_remaining_shift() {
        let d = DownloadDist::shifted_exponential(1.0, 2.0);
        let mut rng = stream(6);
        for _ in 0..10_000 {
            assert!(d.residual_sample(0.25, &mut rng).unwrap() >= 0.75);
        }
    }

    #[test]
    fn residual_rejects_zero_tail() {
        let d = DownloadDist::shifted_exponential(1.0, 2.0);
        // Tail is exactly exp(-...) > 0 for any finite elapsed, so force an
        // infinite elapsed to hit the error path.
        let mut rng = stream(7);
        let err = d.residual_sample(f64::INFINITY, &mut rng).unwrap_err();
        assert!(matches!(err, DistError::ZeroTailProbability { .. }));
    }

    #[test]
    fn tail_values() {
        let e = DownloadDist::exponential(1.0);
        assert!((e.tail(1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(e.tail(0.0), 1.0);
        let s = DownloadDist::shifted_from_mu(50.0, 0.4);
        assert_eq!(s.tail(0.3 / 50.0), 1.0);
        let m = DownloadDist::mixture(vec![(0.5, 0.4), (0.5, 1.6)]);
        assert_eq!(m.tail(0.0), 1.0);
    }

    #[test]
    fn classify_families() {
        assert_eq!(
            DownloadDist::exponential(3.0).classify_default(),
            Classification::Both
        );
        assert_eq!(
            DownloadDist::shifted_from_mu(1.0, 0.4).classify_default(),
            Classification::Nlu
        );
        assert_eq!(
            DownloadDist::mixture(vec![(0.5, 0.4), (0.5, 1.6)]).classify_default(),
            Classification::Nsu
        );
    }

    #[test]
    fn classify_on_explicit_grid() {
        // t, tau in {0, 0.1, ..., 5}.
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        let d = DownloadDist::mixture(vec![(0.5, 0.4), (0.5, 1.6)]);
        assert_eq!(d.classify(&grid, &grid), Classification::Nsu);
    }

    #[test]
    fn extreme_exponential_harmonic() {
        let d = DownloadDist::exponential(1.0);
        let max3 = d
            .expected_extreme(3, Extreme::Max, ExtremeMethod::Analytic)
            .unwrap();
        assert!((max3.value - (1.0 + 0.5 + 1.0 / 3.0)).abs() < 1e-12);
        let min3 = d
            .expected_extreme(3, Extreme::Min, ExtremeMethod::Analytic)
            .unwrap();
        assert!((min3.value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn extreme_shifted_gap_terms() {
        // L=3 max is 0.0300 s, L=2 max is 0.0260 s, summing to 0.0560 s.
        let d = DownloadDist::shifted_from_mu(50.0, 0.4);
        let m3 = d
            .expected_extreme(3, Extreme::Max, ExtremeMethod::Analytic)
            .unwrap()
            .value;
        let m2 = d
            .expected_extreme(2, Extreme::Max, ExtremeMethod::Analytic)
            .unwrap()
            .value;
        assert!((m3 - 0.0300).abs() < 1e-12, "m3 {m3}");
        assert!((m2 - 0.0260).abs() < 1e-12, "m2 {m2}");
        assert!((m3 + m2 - 0.0560).abs() < 1e-12);
    }

    #[test]
    fn extreme_mixture_min_matches_monte_carlo() {
        let d = DownloadDist::mixture(vec![(0.5, 0.4), (0.5, 1.6)]);
        let exact = d
            .expected_extreme(3, Extreme::Min, ExtremeMethod::Analytic)
            .unwrap()
            .value;
        assert!((exact - 0.390625).abs() < 1e-12, "exact {exact}");
        let mc = d
            .expected_extreme(
                3,
                Extreme::Min,
                ExtremeMethod::MonteCarlo {
                    reps: 200_000,
                    seed: 8,
                },
            )
            .unwrap();
        let se = mc.std_err.unwrap();
        assert!((mc.value - exact).abs() < 4.0 * se);
    }

    #[test]
    fn extreme_mixture_max_needs_monte_carlo() {
        let d = DownloadDist::mixture(vec![(0.5, 0.4), (0.5, 1.6)]);
        let err = d
            .expected_extreme(3, Extreme::Max, ExtremeMethod::Analytic)
            .unwrap_err();
        assert!(matches!(err, DistError::UnsupportedAnalytic { .. }));
    }

    #[test]
    fn nlu_extreme_bound_sandwich() {
        // 1/mu <= E max <= H_L / mu for NLU laws with mean 1/mu.
        for l in 2..=8 {
            for dist in [
                DownloadDist::exponential(50.0),
                DownloadDist::shifted_from_mu(50.0, 0.4),
            ] {
                let mu_eff = 1.0 / dist.mean();
                let e = dist
                    .expected_extreme(l, Extreme::Max, ExtremeMethod::Analytic)
                    .unwrap()
                    .value;
                assert!(e >= 1.0 / mu_eff - 1e-12);
                assert!(e <= harmonic(l) / mu_eff + 1e-12);
            }
        }
    }

    #[test]
    fn dist_spec_config_forms() {
        let e: DistSpec = serde_json::from_str(r#"{"kind":"exponential","mu":50.0}"#).unwrap();
        assert_eq!(e.to_dist().unwrap(), DownloadDist::exponential(50.0));
        let s: DistSpec =
            serde_json::from_str(r#"{"kind":"shifted_exp","mu":50.0,"shift_frac":0.4}"#).unwrap();
        assert_eq!(s.to_dist().unwrap(), DownloadDist::shifted_from_mu(50.0, 0.4));
        let m: DistSpec = serde_json::from_str(
            r#"{"kind":"exp_mixture","mu":50.0,"components":[[0.5,0.4],[0.5,1.6]]}"#,
        )
        .unwrap();
        assert_eq!(
            m.to_dist().unwrap(),
            DownloadDist::mixture(vec![(0.5, 20.0), (0.5, 80.0)])
        );
        assert!((m.to_dist().unwrap().mean() - 0.03125).abs() < 1e-12);
    }

    #[test]
    fn validation_errors() {
        assert!(DownloadDist::exponential(0.0).validate().is_err());
        assert!(DownloadDist::shifted_exponential(-0.1, 1.0).validate().is_err());
        assert!(DownloadDist::mixture(vec![(0.5, 1.0), (0.6, 2.0)])
            .validate()
            .is_err());
        assert!(DownloadDist::mixture(vec![]).validate().is_err());
        assert!(DownloadDist::mixture(vec![(0.5, 0.4), (0.5, 1.6)])
            .validate()
            .is_ok());
    }

    /// Two-sample Kolmogorov-Smirnov statistic.
    fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (n, m) = (a.len(), b.len());
        let (mut i, mut j) = (0usize, 0usize);
        let mut d: f64 = 0.0;
        while i < n && j < m {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
        }
        d
    }

    #[test]
    fn residual_at_zero_matches_fresh_distribution() {
        // Two-sample KS at alpha = 0.01 over 100 fixed seeds; at most one
        // rejection expected under the null.
        let dists = [
            DownloadDist::exponential(2.0),
            DownloadDist::shifted_from_mu(1.0, 0.4),
            DownloadDist::mixture(vec![(0.5, 0.4), (0.5, 1.6)]),
        ];
        let n = 100_000usize;
        // Critical value sqrt(-ln(alpha/2)/2) * sqrt((n+m)/(n m)).
        let crit = (-(0.005f64).ln() / 2.0).sqrt() * ((2 * n) as f64 / (n * n) as f64).sqrt();
        for dist in dists {
            let mut failures = 0;
            for seed in 0..100u64 {
                let mut rng = RngFactory::new(7000 + seed).stream(&[11]);
                let fresh: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
                let resid: Vec<f64> = (0..n)
                    .map(|_| dist.residual_sample(0.0, &mut rng).unwrap())
                    .collect();
                if ks_statistic(fresh, resid) > crit {
                    failures += 1;
                }
            }
            assert!(failures <= 1, "{dist:?}: {failures} of 100 seeds rejected");
        }
    }

    proptest! {
        #[test]
        fn tail_nonincreasing(rate in 0.1f64..10.0, shift in 0.0f64..2.0, t1 in 0.0f64..20.0, dt in 0.0f64..20.0) {
            for dist in [
                DownloadDist::exponential(rate),
                DownloadDist::shifted_exponential(shift, rate),
                DownloadDist::mixture(vec![(0.3, rate), (0.7, rate * 3.0)]),
            ] {
                prop_assert!(dist.tail(t1 + dt) <= dist.tail(t1) + 1e-15);
                prop_assert!(dist.tail(t1) >= 0.0 && dist.tail(t1) <= 1.0);
            }
        }

        #[test]
        fn samples_nonnegative_and_above_shift(seed in 0u64..1000, shift in 0.0f64..2.0, rate in 0.1f64..10.0) {
            let mut rng = stream(seed);
            let s = DownloadDist::shifted_exponential(shift, rate);
            let x = s.sample(&mut rng);
            prop_assert!(x >= shift);
            let e = DownloadDist::exponential(rate);
            prop_assert!(e.sample(&mut rng) >= 0.0);
        }

        #[test]
        fn empirical_mean_tracks_analytic(rate in 0.2f64..5.0) {
            let d = DownloadDist::exponential(rate);
            let n = 100_000;
            let m = empirical_mean(&d, n, rate.to_bits());
            // 4 standard errors of an exponential sample mean.
            let se = d.mean() / (n as f64).sqrt();
            prop_assert!((m - d.mean()).abs() < 4.0 * se);
        }
    }
}
