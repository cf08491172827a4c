//! G-formula, IPW and AIPW scores, private ATE and variance releases, and
//! the variance-based private confidence interval.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::AggregatedNuisance;
use crate::dataset::{Bounds, Dataset};
use crate::error::{Error, Result};
use crate::privacy::{add_gaussian_noise, BudgetReport, PrivacyBudget};
use crate::rng::{NoiseKey, Seed, SimRng};
use crate::stats::std_normal_quantile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    G,
    Ipw,
    Aipw,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::G, EstimatorKind::Ipw, EstimatorKind::Aipw];

    /// Uniform bound on `|score_i|` given clipped nuisances and outcomes.
    pub fn score_bound(self, bounds: &Bounds) -> f64 {
        match self {
            EstimatorKind::G => 2.0 * bounds.b_mu,
            EstimatorKind::Ipw => bounds.b_mu * bounds.b_pi,
            EstimatorKind::Aipw => 2.0 * bounds.b_mu * (1.0 + bounds.b_pi),
        }
    }

    pub fn uses_propensity(self) -> bool {
        self != EstimatorKind::G
    }

    pub fn uses_outcomes(self) -> bool {
        self != EstimatorKind::Ipw
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::G => "g",
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::Aipw => "aipw",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g" | "g-formula" | "gformula" => Ok(EstimatorKind::G),
            "ipw" => Ok(EstimatorKind::Ipw),
            "aipw" => Ok(EstimatorKind::Aipw),
            other => Err(Error::param(format!("unknown estimator '{other}' (expected g, ipw or aipw)"))),
        }
    }
}

/// Score of one record.
#[inline]
pub fn score(kind: EstimatorKind, a: f64, y: f64, pi1: f64, one_minus_pi0: f64, mu0: f64, mu1: f64) -> f64 {
    match kind {
        EstimatorKind::G => mu1 - mu0,
        EstimatorKind::Ipw => a * y / pi1 - (1.0 - a) * y / one_minus_pi0,
        EstimatorKind::Aipw => {
            mu1 - mu0 + a * (y - mu1) / pi1 - (1.0 - a) * (y - mu0) / one_minus_pi0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub kind: EstimatorKind,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.scores)
    }
}

pub fn compute_scores(data: &Dataset, agg: &AggregatedNuisance, kind: EstimatorKind) -> Result<ScoreVector> {
    if agg.n() != data.n() {
        return Err(Error::shape(format!("nuisances cover {} records, data has {}", agg.n(), data.n())));
    }
    let scores = (0..data.n())
        .map(|i| {
            score(
                kind,
                data.treatment()[i],
                data.outcome()[i],
                agg.pi1[i],
                agg.one_minus_pi0[i],
                agg.mu0[i],
                agg.mu1[i],
            )
        })
        .collect();
    Ok(ScoreVector { scores, kind })
}

/// Returns `(tau_dp, tau_hat)` where `tau_hat` is the plain mean of the scores.
pub fn private_ate(scores: &ScoreVector, sigma1_sq: f64, key: NoiseKey) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::param("no scores to average"));
    }
    let tau = scores.mean();
    Ok((add_gaussian_noise(tau, sigma1_sq, key)?, tau))
}

/// `(sqrt(V) + N(0, sigma2_sq))^2 + n sigma1_sq` where `V` is the sample
/// variance of the scores around `tau_hat`.
pub fn private_variance(
    scores: &ScoreVector,
    tau_hat: f64,
    sigma1_sq: f64,
    sigma2_sq: f64,
    key: NoiseKey,
) -> Result<f64> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::param("variance release needs n >= 2"));
    }
    if !(sigma1_sq >= 0.0) {
        return Err(Error::param("sigma1^2 must be >= 0"));
    }
    let v = scores.scores.iter().map(|g| (g - tau_hat).powi(2)).sum::<f64>() / (n - 1) as f64;
    let root = add_gaussian_noise(v.sqrt(), sigma2_sq, key)?;
    Ok(root * root + n as f64 * sigma1_sq)
}

/// Interval for the ATE from the released `tau_dp` and `v_dp`.
pub fn asymptotic_ci(tau_dp: f64, v_dp: f64, n: usize, alpha: f64, alpha1: f64, sigma2_sq: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(alpha1 > 0.0 && alpha1 < alpha) {
        return Err(Error::param(format!("alpha1 must lie in (0, alpha), got {alpha1}")));
    }
    if n == 0 || !(v_dp >= 0.0) || !(sigma2_sq >= 0.0) {
        return Err(Error::param("asymptotic_ci needs n >= 1 and nonnegative variances"));
    }
    let z = std_normal_quantile(1.0 - alpha / 2.0 + alpha1 / 2.0);
    let offset = std_normal_quantile(1.0 - alpha1 / 2.0) * sigma2_sq;
    let half = z * ((v_dp + offset) / n as f64).sqrt();
    Ok((tau_dp - half, tau_dp + half))
}

/// Released quantities of one run. The non-private mean is only kept in
/// non-private mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivateEstimate {
    pub kind: EstimatorKind,
    pub n: usize,
    pub k: usize,
    pub tau_dp: f64,
    pub v_dp: f64,
    pub ci: Option<(f64, f64)>,
    pub budget: BudgetReport,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau_nonprivate: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl PrivateEstimate {
    pub fn mu_total(&self) -> PrivacyBudget {
        PrivacyBudget { mu: self.budget.mu_total }
    }

    /// Estimated variance of `tau_dp`.
    pub fn variance_of_tau(&self) -> f64 {
        self.v_dp / self.n as f64
    }

    pub fn report(&self, seed: Seed) -> EstimateReport {
        EstimateReport {
            kind: self.kind,
            n: self.n,
            k: self.k,
            tau_dp: self.tau_dp,
            v_dp: self.v_dp,
            ci: self.ci.map(|(lo, hi)| [lo, hi]),
            mu_total: self.budget.mu_total,
            mu_ate: self.budget.mu_ate,
            mu_var: self.budget.mu_var,
            epsilon_at_1e_5: self.budget.epsilon_at_delta,
            seed: seed.0,
            tau_nonprivate: self.tau_nonprivate,
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub tau_dp: f64,
    pub v_dp: f64,
    pub ci: Option<[f64; 2]>,
    pub mu_total: f64,
    pub mu_ate: f64,
    pub mu_var: f64,
    #[serde(rename = "epsilon_at_1e-5")]
    pub epsilon_at_1e_5: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau_nonprivate: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// A data-generating process with known nuisance functions.
pub trait PopulationModel: Send + Sync {
    fn d(&self) -> usize;
    fn sample_covariates(&self, rng: &mut SimRng) -> Vec<f64>;
    fn propensity(&self, x: &[f64]) -> f64;
    fn outcome_mean(&self, x: &[f64], a: f64) -> f64;
    fn outcome_variance(&self, x: &[f64], a: f64) -> f64;
    fn sample_outcome(&self, x: &[f64], a: f64, rng: &mut SimRng) -> f64;
}

/// Monte-Carlo value of the oracle asymptotic variance of `kind` under `model`.
pub fn oracle_variance_reference(kind: EstimatorKind, model: &dyn PopulationModel, draws: usize, seed: Seed) -> f64 {
    let mut rng = seed.rng();
    let mut cate = Vec::with_capacity(draws);
    let mut ipw_terms = 0.0;
    let mut resid_terms = 0.0;
    for _ in 0..draws {
        let x = model.sample_covariates(&mut rng);
        let p = model.propensity(&x);
        let (m0, m1) = (model.outcome_mean(&x, 0.0), model.outcome_mean(&x, 1.0));
        let (v0, v1) = (model.outcome_variance(&x, 0.0), model.outcome_variance(&x, 1.0));
        cate.push(m1 - m0);
        ipw_terms += (m1 * m1 + v1) / p + (m0 * m0 + v0) / (1.0 - p);
        resid_terms += v1 / p + v0 / (1.0 - p);
    }
    let m = draws as f64;
    let tau = crate::stats::mean(&cate);
    let var_cate = cate.iter().map(|c| (c - tau).powi(2)).sum::<f64>() / m;
    match kind {
        EstimatorKind::G => var_cate,
        EstimatorKind::Ipw => ipw_terms / m - tau * tau,
        EstimatorKind::Aipw => resid_terms / m + var_cate,
    }
}
