//! Fixed-weight meta-analysis of independently released private estimates.
//!
//! Only released quantities are used, so combining consumes no budget.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimateReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub tau_dp: f64,
    /// Scaled variance: `v_dp / n` estimates the variance of `tau_dp`.
    pub v_dp: f64,
    pub n: usize,
    pub mu: f64,
}

impl StudyRecord {
    pub fn new(tau_dp: f64, v_dp: f64, n: usize, mu: f64) -> Result<Self> {
        if !(v_dp > 0.0 && v_dp.is_finite()) {
            return Err(Error::param(format!("study variance must be positive, got {v_dp}")));
        }
        if n == 0 {
            return Err(Error::param("study size must be >= 1"));
        }
        Ok(StudyRecord { tau_dp, v_dp, n, mu })
    }

    pub fn from_report(report: &EstimateReport) -> Result<Self> {
        StudyRecord::new(report.tau_dp, report.v_dp, report.n, report.mu_total)
    }

    /// Variance of this study's estimate, `v_dp / n`.
    pub fn variance(&self) -> f64 {
        self.v_dp / self.n as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weights proportional to `(v_dp / n)^(-1/2)`.
    #[default]
    InverseStdError,
    /// Weights proportional to `(v_dp / n)^(-1)`.
    InverseVariance,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "inverse_std_error" => Ok(Weighting::InverseStdError),
            "inverse_variance" => Ok(Weighting::InverseVariance),
            other => Err(Error::param(format!("unknown weighting '{other}' (expected inverse_std_error or inverse_variance)"))),
        }
    }
}

fn check(studies: &[StudyRecord]) -> Result<()> {
    if studies.len() < 2 {
        return Err(Error::param("meta-analysis needs at least 2 studies"));
    }
    if let Some(s) = studies.iter().find(|s| !(s.v_dp > 0.0)) {
        return Err(Error::param(format!("study variance must be positive, got {}", s.v_dp)));
    }
    Ok(())
}

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// `lambda_j` proportional to `(v_j / n_j)^(-1/2)`.
pub fn optimal_weights(studies: &[StudyRecord]) -> Result<Vec<f64>> {
    check(studies)?;
    Ok(normalized(studies.iter().map(|s| s.variance().powf(-0.5)).collect()))
}

/// `lambda_j` proportional to `(v_j / n_j)^(-1)`.
pub fn inverse_variance_weights(studies: &[StudyRecord]) -> Result<Vec<f64>> {
    check(studies)?;
    Ok(normalized(studies.iter().map(|s| 1.0 / s.variance()).collect()))
}

pub fn weights(studies: &[StudyRecord], weighting: Weighting) -> Result<Vec<f64>> {
    match weighting {
        Weighting::InverseStdError => optimal_weights(studies),
        Weighting::InverseVariance => inverse_variance_weights(studies),
    }
}

/// Returns `(sum lambda_j tau_j, sum lambda_j^2 v_j / n_j)`.
pub fn meta_combine(studies: &[StudyRecord], weights: &[f64]) -> Result<(f64, f64)> {
    if weights.len() != studies.len() {
        return Err(Error::shape(format!("{} weights for {} studies", weights.len(), studies.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param("weights must be nonnegative and sum to 1"));
    }
    let tau = studies.iter().zip(weights).map(|(s, w)| w * s.tau_dp).sum();
    let var = studies.iter().zip(weights).map(|(s, w)| w * w * s.variance()).sum();
    Ok((tau, var))
}

/// Closed-form variance of the combination under [`optimal_weights`]:
/// `(1/N) (mean_j (v_j / n_j)^(-1/2))^(-2)`.
pub fn optimal_variance_identity(studies: &[StudyRecord]) -> f64 {
    let big_n = studies.len() as f64;
    let m = studies.iter().map(|s| s.variance().powf(-0.5)).sum::<f64>() / big_n;
    1.0 / (big_n * m * m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaReport {
    pub weighting: Weighting,
    pub n_studies: usize,
    pub weights: Vec<f64>,
    pub tau_meta: f64,
    pub variance: f64,
    pub se: f64,
    pub max_mu: f64,
}

pub fn report(studies: &[StudyRecord], weighting: Weighting) -> Result<MetaReport> {
    let w = weights(studies, weighting)?;
    let (tau_meta, variance) = meta_combine(studies, &w)?;
    Ok(MetaReport {
        weighting,
        n_studies: studies.len(),
        weights: w,
        tau_meta,
        variance,
        se: variance.sqrt(),
        max_mu: studies.iter().map(|s| s.mu).fold(0.0, f64::max),
    })
}

/// Reads every `*.json` estimate report of a directory, in file-name order.
pub fn load_studies(dir: impl AsRef<Path>) -> Result<Vec<StudyRecord>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let report: EstimateReport = serde_json::from_reader(std::fs::File::open(p)?)?;
            StudyRecord::from_report(&report)
        })
        .collect()
}
