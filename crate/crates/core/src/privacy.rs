//! Gaussian differential privacy: noise calibration, sensitivities,
//! composition and conversion to `(epsilon, delta)`-DP.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregate::AggregationScheme;
use crate::dataset::Bounds;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::rng::NoiseKey;
use crate::stats::{ln_std_normal_cdf, std_normal_cdf};

/// Delta used when reporting an equivalent `(epsilon, delta)` guarantee.
pub const REPORT_DELTA: f64 = 1e-5;

/// GDP parameter `mu`. Zero means "no guarantee" and is only valid in
/// non-private mode.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrivacyBudget {
    pub mu: f64,
}

impl PrivacyBudget {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::param(format!("GDP mu must be finite and >= 0, got {mu}")));
        }
        Ok(PrivacyBudget { mu })
    }

    pub fn non_private() -> Self {
        PrivacyBudget { mu: 0.0 }
    }

    pub fn is_non_private(&self) -> bool {
        self.mu == 0.0
    }

    /// Splits a total budget evenly over two releases: `mu / sqrt(2)` each.
    pub fn split_even(self) -> (PrivacyBudget, PrivacyBudget) {
        let half = PrivacyBudget { mu: self.mu / std::f64::consts::SQRT_2 };
        (half, half)
    }

    fn positive(self) -> Result<f64> {
        if self.mu > 0.0 {
            Ok(self.mu)
        } else {
            Err(Error::ZeroBudget)
        }
    }
}

/// Record-level sensitivities of a fold-aggregated estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPair {
    /// Change caused by a record inside the same fold.
    pub delta_eq: f64,
    /// Change caused through the models of a different fold.
    pub delta_neq: f64,
    /// Uniform bound `M` on `|score_i|`.
    pub score_bound: f64,
}

impl SensitivityPair {
    pub fn new(delta_eq: f64, delta_neq: f64, score_bound: f64) -> Result<Self> {
        if !(delta_eq >= 0.0 && delta_neq >= 0.0 && score_bound >= 0.0)
            || !(delta_eq.is_finite() && delta_neq.is_finite() && score_bound.is_finite())
        {
            return Err(Error::param("sensitivities must be finite and nonnegative"));
        }
        Ok(SensitivityPair { delta_eq, delta_neq, score_bound })
    }

    /// Sensitivities of a built-in estimator under the given aggregation scheme.
    ///
    /// `max_load` is the largest number of records served by one fold's
    /// models under the sampling scheme and is ignored for complete means.
    pub fn for_kind(
        kind: EstimatorKind,
        bounds: &Bounds,
        scheme: AggregationScheme,
        n: usize,
        k: usize,
        max_load: usize,
    ) -> Result<Self> {
        check_folds(n, k)?;
        let (bm, bp) = (bounds.b_mu, bounds.b_pi);
        let kf = k as f64;
        let delta_eq = match kind {
            EstimatorKind::G => 4.0 * bm,
            EstimatorKind::Ipw => 2.0 * bm * bp,
            EstimatorKind::Aipw => 4.0 * bm * (1.0 + bp),
        };
        let delta_neq = match scheme {
            AggregationScheme::CompleteMeans => {
                let ratio = kf / (kf - 1.0);
                match kind {
                    EstimatorKind::G => 4.0 * bm * ratio,
                    EstimatorKind::Ipw => bm * bp * ratio,
                    EstimatorKind::Aipw => 4.0 * bm * (1.0 + bp) * ratio,
                }
            }
            AggregationScheme::Sampling => {
                let per_record = match kind {
                    EstimatorKind::G => 4.0 * bm,
                    EstimatorKind::Ipw => bm * bp,
                    EstimatorKind::Aipw => 4.0 * bm + 3.0 * bm * bp,
                };
                per_record * kf * max_load as f64 / n as f64
            }
        };
        SensitivityPair::new(delta_eq, delta_neq, kind.score_bound(bounds))
    }
}

/// Estimator constant `C` such that `sqrt(C) * (1/n + 1/(K-1))` bounds the
/// sensitivity of the point estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EstimatorConstant {
    pub c: f64,
}

impl EstimatorConstant {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::param(format!("estimator constant must be positive, got {c}")));
        }
        Ok(EstimatorConstant { c })
    }
}

pub fn estimator_constant(kind: EstimatorKind, bounds: &Bounds) -> EstimatorConstant {
    let (bm, bp) = (bounds.b_mu, bounds.b_pi);
    let c = match kind {
        EstimatorKind::G => 16.0 * bm * bm,
        EstimatorKind::Ipw => 4.0 * bm * bm * bp * bp,
        EstimatorKind::Aipw => 16.0 * bm * bm * (1.0 + bp) * (1.0 + bp),
    };
    EstimatorConstant { c }
}

fn check_folds(n: usize, k: usize) -> Result<()> {
    if k < 2 || n < 1 {
        return Err(Error::InvalidFoldCount { n, k });
    }
    Ok(())
}

fn fold_rate(n: usize, k: usize) -> f64 {
    1.0 / n as f64 + 1.0 / (k as f64 - 1.0)
}

/// Noise variance of the ATE release: `(C / mu1^2) (1/n + 1/(K-1))^2`.
pub fn sigma1_squared(c: EstimatorConstant, mu1: PrivacyBudget, n: usize, k: usize) -> Result<f64> {
    let mu = mu1.positive()?;
    check_folds(n, k)?;
    let u = fold_rate(n, k);
    Ok(c.c / (mu * mu) * u * u)
}

/// Noise variance of the square-root variance release:
/// `(2Cn / (mu2^2 (n-1))) (u + sqrt(u))^2` with `u = 1/n + 1/(K-1)`.
pub fn sigma2_squared(c: EstimatorConstant, mu2: PrivacyBudget, n: usize, k: usize) -> Result<f64> {
    let mu = mu2.positive()?;
    check_folds(n, k)?;
    if n < 2 {
        return Err(Error::param("variance release needs n >= 2"));
    }
    let u = fold_rate(n, k);
    let nf = n as f64;
    let w = u + u.sqrt();
    Ok(2.0 * c.c * nf / (mu * mu * (nf - 1.0)) * w * w)
}

/// Sensitivity of the mean of scores: `delta_eq / n + delta_neq / K`.
pub fn unified_sensitivity(s: &SensitivityPair, n: usize, k: usize) -> f64 {
    s.delta_eq / n as f64 + s.delta_neq / k as f64
}

/// Sensitivity of `sqrt(V)` where `V` is the sample variance of the scores.
pub fn sqrt_variance_sensitivity(s: &SensitivityPair, n: usize, k: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::param("variance release needs n >= 2"));
    }
    let nf = n as f64;
    let t = unified_sensitivity(s, n, k);
    Ok((2.0 * nf / (nf - 1.0)).sqrt() * (2.0 * s.score_bound.sqrt() * t.sqrt() + t))
}

/// Gaussian-mechanism variance for a statistic with sensitivity `sens` under `mu`-GDP.
pub fn gaussian_variance(sens: f64, mu: PrivacyBudget) -> Result<f64> {
    let mu = mu.positive()?;
    Ok((sens / mu).powi(2))
}

/// `value + N(0, variance)` drawn from the stream identified by `key`.
pub fn add_gaussian_noise(value: f64, variance: f64, key: NoiseKey) -> Result<f64> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::param(format!("noise variance must be finite and >= 0, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(value);
    }
    let z: f64 = StandardNormal.sample(&mut key.rng());
    Ok(value + variance.sqrt() * z)
}

/// GDP composition: `sqrt(sum mu_j^2)`.
pub fn compose(budgets: &[PrivacyBudget]) -> PrivacyBudget {
    let max = budgets.iter().map(|b| b.mu).fold(0.0, f64::max);
    if max == 0.0 {
        return PrivacyBudget::non_private();
    }
    let ss: f64 = budgets.iter().map(|b| (b.mu / max).powi(2)).sum();
    PrivacyBudget { mu: max * ss.sqrt() }
}

/// Smallest `delta` such that a `mu`-GDP mechanism is `(epsilon, delta)`-DP.
pub fn gdp_to_approx_dp(mu: PrivacyBudget, epsilon: f64) -> Result<f64> {
    let mu = mu.positive()?;
    if !(epsilon >= 0.0) {
        return Err(Error::param(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if epsilon.is_infinite() {
        return Ok(0.0);
    }
    let a = std_normal_cdf(-epsilon / mu + mu / 2.0);
    let b = (epsilon + ln_std_normal_cdf(-epsilon / mu - mu / 2.0)).exp();
    Ok((a - b).clamp(0.0, 1.0))
}

/// Smallest `epsilon` with `gdp_to_approx_dp(mu, epsilon) <= delta`, by bisection.
pub fn epsilon_for_delta(mu: PrivacyBudget, delta: f64) -> Result<f64> {
    mu.positive()?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
    }
    if gdp_to_approx_dp(mu, 0.0)? <= delta {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while gdp_to_approx_dp(mu, hi)? > delta {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical("epsilon search diverged".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gdp_to_approx_dp(mu, mid)? > delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub mu_total: f64,
    pub mu_ate: f64,
    pub mu_var: f64,
    pub delta: f64,
    pub epsilon_at_delta: Option<f64>,
}

impl BudgetReport {
    pub fn new(mu_ate: PrivacyBudget, mu_var: PrivacyBudget) -> Result<Self> {
        let total = compose(&[mu_ate, mu_var]);
        let epsilon_at_delta = if total.is_non_private() {
            None
        } else {
            Some(epsilon_for_delta(total, REPORT_DELTA)?)
        };
        Ok(BudgetReport {
            mu_total: total.mu,
            mu_ate: mu_ate.mu,
            mu_var: mu_var.mu,
            delta: REPORT_DELTA,
            epsilon_at_delta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn b(mu: f64) -> PrivacyBudget {
        PrivacyBudget::new(mu).unwrap()
    }

    #[test]
    fn constants() {
        let bounds = Bounds::new(1.0, 2.0).unwrap();
        assert_eq!(estimator_constant(EstimatorKind::G, &bounds).c, 16.0);
        assert_eq!(estimator_constant(EstimatorKind::Ipw, &bounds).c, 16.0);
        assert_eq!(estimator_constant(EstimatorKind::Aipw, &bounds).c, 144.0);
    }

    #[test]
    fn sigma1_values() {
        let c = EstimatorConstant::new(16.0).unwrap();
        assert_relative_eq!(
            sigma1_squared(c, b(1.5), 5000, 200).unwrap(),
            1.9414711345673086e-4,
            max_relative = 1e-12
        );
        assert_relative_eq!(sigma1_squared(c, b(4.0), 1_000_000_000, 2).unwrap(), 1.000000002, max_relative = 1e-12);
        assert!(sigma1_squared(c, b(1.0), 10, 1).is_err());
        assert!(matches!(sigma1_squared(c, b(0.0), 10, 2), Err(Error::ZeroBudget)));
    }

    #[test]
    fn sigma2_values() {
        let c = EstimatorConstant::new(16.0).unwrap();
        assert_relative_eq!(
            sigma2_squared(c, b(1.5), 5000, 200).unwrap(),
            0.08546170455512732,
            max_relative = 1e-12
        );
        let u: f64 = 1.5;
        let expected = 2.0 * 16.0 * 2.0 / 2.25 * (u + u.sqrt()).powi(2);
        assert_relative_eq!(sigma2_squared(c, b(1.5), 2, 2).unwrap(), expected, max_relative = 1e-14);
        assert!(matches!(sigma2_squared(c, b(0.0), 10, 2), Err(Error::ZeroBudget)));
    }

    #[test]
    fn unified_examples() {
        let bounds = Bounds::new(1.0, 5.0).unwrap();
        let g = SensitivityPair::for_kind(EstimatorKind::G, &bounds, AggregationScheme::CompleteMeans, 100, 5, 0)
            .unwrap();
        assert_relative_eq!(unified_sensitivity(&g, 100, 5), 1.04, max_relative = 1e-14);
        assert_eq!(unified_sensitivity(&SensitivityPair::new(0.0, 0.0, 1.0).unwrap(), 10, 3), 0.0);
        let ipw = SensitivityPair::for_kind(EstimatorKind::Ipw, &bounds, AggregationScheme::CompleteMeans, 50, 6, 0)
            .unwrap();
        assert_relative_eq!(unified_sensitivity(&ipw, 50, 6), 1.2, max_relative = 1e-14);
    }

    #[test]
    fn complete_means_sensitivity_within_constant() {
        let bounds = Bounds::new(1.3, 4.0).unwrap();
        for kind in EstimatorKind::ALL {
            for (n, k) in [(12, 3), (100, 5), (5000, 200)] {
                let s = SensitivityPair::for_kind(kind, &bounds, AggregationScheme::CompleteMeans, n, k, 0).unwrap();
                let c = estimator_constant(kind, &bounds).c;
                assert!(unified_sensitivity(&s, n, k) <= c.sqrt() * fold_rate(n, k) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn noise_identity_and_moments() {
        let key = NoiseKey::new(crate::rng::Seed(1), 0);
        assert_eq!(add_gaussian_noise(5.0, 0.0, key).unwrap(), 5.0);
        assert!(add_gaussian_noise(0.0, -1.0, key).is_err());
        let draws: Vec<f64> = (0..100_000)
            .map(|r| add_gaussian_noise(0.0, 4.0, NoiseKey::new(crate::rng::Seed(9), r)).unwrap())
            .collect();
        let m = crate::stats::mean(&draws);
        let v = crate::stats::sample_variance(&draws);
        assert!(m.abs() < 0.02 * 2.0, "mean {m}");
        assert!((v - 4.0).abs() < 0.2, "var {v}");
        let unit: Vec<f64> = (0..100_000)
            .map(|r| add_gaussian_noise(0.0, 1.0, NoiseKey::new(crate::rng::Seed(10), r)).unwrap())
            .collect();
        assert!(crate::stats::mean(&unit).abs() < 0.02);
        assert!((crate::stats::sample_variance(&unit) - 1.0).abs() < 0.05);
    }

    #[test]
    fn composition_examples() {
        assert_relative_eq!(compose(&[b(3.0), b(4.0)]).mu, 5.0);
        assert_eq!(compose(&[b(1.7), b(0.0)]).mu, 1.7);
        assert_relative_eq!(compose(&[b(1.0); 4]).mu, 2.0);
        assert_eq!(compose(&[]).mu, 0.0);
    }

    #[test]
    fn conversion_examples() {
        assert_relative_eq!(
            gdp_to_approx_dp(b(1.5), 7.05).unwrap(),
            1.0040952855288794e-5,
            max_relative = 1e-10
        );
        assert_relative_eq!(gdp_to_approx_dp(b(2.0), 0.0).unwrap(), 0.6826894921370859, max_relative = 1e-12);
        assert!(gdp_to_approx_dp(b(0.0), 1.0).is_err());
        assert_eq!(gdp_to_approx_dp(b(1.0), f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn epsilon_inverts_delta() {
        let eps = epsilon_for_delta(b(1.5), 1e-5).unwrap();
        assert!((eps - 7.05).abs() < 0.01, "{eps}");
        assert_relative_eq!(gdp_to_approx_dp(b(1.5), eps).unwrap(), 1e-5, max_relative = 1e-8);
    }

    #[test]
    fn budget_report_split() {
        let (a, v) = b(2.0).split_even();
        let report = BudgetReport::new(a, v).unwrap();
        assert_relative_eq!(report.mu_total, 2.0, max_relative = 1e-14);
        assert!(report.epsilon_at_delta.unwrap() > 0.0);
        assert!(BudgetReport::new(PrivacyBudget::non_private(), PrivacyBudget::non_private())
            .unwrap()
            .epsilon_at_delta
            .is_none());
    }

    proptest! {
        #[test]
        fn compose_permutation_and_associativity(mus in proptest::collection::vec(0.0f64..5.0, 1..8), rot in 0usize..8) {
            let budgets: Vec<PrivacyBudget> = mus.iter().map(|&m| b(m)).collect();
            let whole = compose(&budgets).mu;
            let mut rotated = budgets.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            prop_assert!((compose(&rotated).mu - whole).abs() <= 1e-12 * whole.max(1.0));
            let split = (rot % len).max(1).min(len);
            let nested = compose(&[compose(&budgets[..split]), compose(&budgets[split..])]).mu;
            prop_assert!((nested - whole).abs() <= 1e-12 * whole.max(1.0));
        }

        #[test]
        fn delta_monotone(mu in 0.05f64..6.0, e1 in 0.0f64..20.0, de in 0.0f64..5.0, dmu in 0.0f64..2.0) {
            let d1 = gdp_to_approx_dp(b(mu), e1).unwrap();
            let d2 = gdp_to_approx_dp(b(mu), e1 + de).unwrap();
            let d3 = gdp_to_approx_dp(b(mu + dmu), e1).unwrap();
            prop_assert!((0.0..=1.0).contains(&d1));
            prop_assert!(d2 <= d1 + 1e-15);
            prop_assert!(d3 >= d1 - 1e-15);
        }

        #[test]
        fn sigma1_monotone(n in 2usize..100_000, k in 2usize..500, mu in 0.1f64..10.0) {
            let c = EstimatorConstant::new(16.0).unwrap();
            let s = sigma1_squared(c, b(mu), n, k).unwrap();
            prop_assert!(sigma1_squared(c, b(mu), n + 1, k).unwrap() <= s);
            prop_assert!(sigma1_squared(c, b(mu), n, k + 1).unwrap() <= s);
            let scaled = sigma1_squared(c, b(2.0 * mu), n, k).unwrap();
            prop_assert!((scaled * 4.0 - s).abs() <= 1e-12 * s);
        }
    }
}
