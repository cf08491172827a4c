//! End-to-end private ATE estimation: split, fit, aggregate, score, release.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{build_aggregated, AggregationScheme, Aggregator, NuisanceMatrix};
use crate::dataset::{clip_outcomes, split_folds, validate, Bounds, Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::estimators::{asymptotic_ci, compute_scores, private_ate, private_variance, EstimatorKind, PrivateEstimate};
use crate::intervals::{bootstrap_bounds, private_interval, BootstrapSettings, CiMethod, CiReport, PrivateInterval};
use crate::nuisance::{fit_triple, Learner, LearnerPair, LearnerSpec, NuisanceTriple};
use crate::privacy::{
    compose, estimator_constant, gaussian_variance, sigma1_squared, sigma2_squared, sqrt_variance_sensitivity,
    unified_sensitivity, BudgetReport, PrivacyBudget, SensitivityPair,
};
use crate::rng::{fold_seed, tags, NoiseKey, Seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PrivacyMode {
    /// No noise and no guarantee; the non-private mean is reported.
    NonPrivate,
    Gdp { mu_ate: f64, mu_var: f64 },
}

impl PrivacyMode {
    /// Splits `mu_total` evenly between the ATE and variance releases.
    pub fn even(mu_total: f64) -> Result<Self> {
        let total = PrivacyBudget::new(mu_total)?;
        if total.is_non_private() {
            return Err(Error::ZeroBudget);
        }
        let (a, v) = total.split_even();
        Ok(PrivacyMode::Gdp { mu_ate: a.mu, mu_var: v.mu })
    }

    pub fn budgets(&self) -> (PrivacyBudget, PrivacyBudget) {
        match *self {
            PrivacyMode::NonPrivate => (PrivacyBudget::non_private(), PrivacyBudget::non_private()),
            PrivacyMode::Gdp { mu_ate, mu_var } => (PrivacyBudget { mu: mu_ate }, PrivacyBudget { mu: mu_var }),
        }
    }

    pub fn total(&self) -> PrivacyBudget {
        let (a, v) = self.budgets();
        compose(&[a, v])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub kind: EstimatorKind,
    pub k: usize,
    pub bounds: Bounds,
    pub learner_pi: LearnerSpec,
    pub learner_mu: LearnerSpec,
    #[serde(default)]
    pub scheme: AggregationScheme,
    pub privacy: PrivacyMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha1")]
    pub alpha1: f64,
    /// Replaces the built-in sensitivities; noise then follows the general
    /// sensitivity route for both releases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityPair>,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_alpha1() -> f64 {
    0.02
}

impl PipelineConfig {
    pub fn new(kind: EstimatorKind, k: usize, bounds: Bounds, privacy: PrivacyMode) -> Self {
        PipelineConfig {
            kind,
            k,
            bounds,
            learner_pi: LearnerSpec::logistic(),
            learner_mu: LearnerSpec::linear(),
            scheme: AggregationScheme::CompleteMeans,
            privacy,
            alpha: default_alpha(),
            alpha1: default_alpha1(),
            sensitivity: None,
        }
    }

    pub fn with_learners(mut self, pi: LearnerSpec, mu: LearnerSpec) -> Self {
        self.learner_pi = pi;
        self.learner_mu = mu;
        self
    }

    pub fn with_scheme(mut self, scheme: AggregationScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::param(format!("K must be >= 2, got {}", self.k)));
        }
        Bounds::new(self.bounds.b_mu, self.bounds.b_pi)?;
        self.learner_pi.validate()?;
        self.learner_mu.validate()?;
        if let PrivacyMode::Gdp { mu_ate, mu_var } = self.privacy {
            if !(mu_ate > 0.0 && mu_var > 0.0 && mu_ate.is_finite() && mu_var.is_finite()) {
                return Err(Error::ZeroBudget);
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.alpha1 > 0.0 && self.alpha1 < self.alpha) {
            return Err(Error::param("need 0 < alpha1 < alpha < 1"));
        }
        Ok(())
    }
}

/// Everything a run produced. Only `estimate` is meant to leave the data holder.
pub struct PipelineOutput {
    pub estimate: PrivateEstimate,
    pub folds: FoldAssignment,
}

static CONSTANT: LearnerSpec = LearnerSpec::Constant;

pub struct Pipeline {
    config: PipelineConfig,
    custom: Option<(Arc<dyn Learner>, Arc<dyn Learner>)>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config, custom: None })
    }

    /// Uses arbitrary learners in place of the configured specs.
    pub fn with_custom_learners(mut self, pi: Arc<dyn Learner>, mu: Arc<dyn Learner>) -> Self {
        self.custom = Some((pi, mu));
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Learners actually fitted: nuisances the score ignores use the constant learner.
    pub fn learners(&self) -> LearnerPair<'_> {
        let (pi, mu): (&dyn Learner, &dyn Learner) = match &self.custom {
            Some((pi, mu)) => (pi.as_ref(), mu.as_ref()),
            None => (&self.config.learner_pi, &self.config.learner_mu),
        };
        LearnerPair {
            propensity: if self.config.kind.uses_propensity() { pi } else { &CONSTANT },
            outcome: if self.config.kind.uses_outcomes() { mu } else { &CONSTANT },
        }
    }

    pub fn folds_for(&self, data: &Dataset, seed: Seed) -> Result<FoldAssignment> {
        split_folds(data.n(), self.config.k, seed.derive(tags::FOLDS))
    }

    /// Validates and clips the data; the count of clipped outcomes becomes a warning.
    pub fn prepare(&self, data: &Dataset) -> Result<(Dataset, Vec<String>)> {
        let report = validate(data, &self.config.bounds)?;
        let mut warnings = Vec::new();
        if report.outcomes_out_of_bounds > 0 {
            warnings.push(report.summary());
        }
        Ok((clip_outcomes(data, &self.config.bounds), warnings))
    }

    pub fn fit_folds(&self, data: &Dataset, folds: &FoldAssignment, seed: Seed) -> Result<Vec<NuisanceTriple>> {
        let pair = self.learners();
        (0..folds.k())
            .into_par_iter()
            .map(|k| fit_triple(data, folds.members(k), pair.propensity, pair.outcome, &self.config.bounds, fold_seed(seed, k)))
            .collect()
    }

    pub fn run(&self, data: &Dataset, seed: Seed) -> Result<PipelineOutput> {
        let folds = self.folds_for(data, seed)?;
        self.run_with_folds(data, folds, seed)
    }

    pub fn run_with_folds(&self, data: &Dataset, folds: FoldAssignment, seed: Seed) -> Result<PipelineOutput> {
        let cfg = &self.config;
        if folds.n() != data.n() {
            return Err(Error::shape("fold assignment does not match the data"));
        }
        let (data, mut warnings) = self.prepare(data)?;
        let n = data.n();
        let k = folds.k();
        let models = self.fit_folds(&data, &folds, seed)?;
        for t in &models {
            for w in &t.warnings {
                if !warnings.contains(w) {
                    warnings.push(w.clone());
                }
            }
        }
        let matrix = NuisanceMatrix::from_models(&data, &models);
        let aggregator = Aggregator::new(cfg.scheme, &folds, seed.derive(tags::SAMPLING));
        let agg = build_aggregated(&matrix, &folds, &aggregator)?;
        let scores = compute_scores(&data, &agg, cfg.kind)?;
        let (mu_ate, mu_var) = cfg.privacy.budgets();
        let (sigma1_sq, sigma2_sq) = match cfg.privacy {
            PrivacyMode::NonPrivate => (0.0, 0.0),
            PrivacyMode::Gdp { .. } => self.noise_variances(n, k, &aggregator, mu_ate, mu_var)?,
        };
        let noise = seed.derive(tags::NOISE);
        let (tau_dp, tau_hat) = private_ate(&scores, sigma1_sq, NoiseKey::new(noise, 0))?;
        let v_dp = private_variance(&scores, tau_hat, sigma1_sq, sigma2_sq, NoiseKey::new(noise, 1))?;
        let ci = asymptotic_ci(tau_dp, v_dp, n, cfg.alpha, cfg.alpha1, sigma2_sq)?;
        let estimate = PrivateEstimate {
            kind: cfg.kind,
            n,
            k,
            tau_dp,
            v_dp,
            ci: Some(ci),
            budget: BudgetReport::new(mu_ate, mu_var)?,
            sigma1_sq,
            sigma2_sq,
            tau_nonprivate: matches!(cfg.privacy, PrivacyMode::NonPrivate).then_some(tau_hat),
            warnings,
        };
        Ok(PipelineOutput { estimate, folds })
    }

    fn noise_variances(
        &self,
        n: usize,
        k: usize,
        aggregator: &Aggregator,
        mu_ate: PrivacyBudget,
        mu_var: PrivacyBudget,
    ) -> Result<(f64, f64)> {
        let cfg = &self.config;
        let general = |s: SensitivityPair| -> Result<(f64, f64)> {
            Ok((
                gaussian_variance(unified_sensitivity(&s, n, k), mu_ate)?,
                gaussian_variance(sqrt_variance_sensitivity(&s, n, k)?, mu_var)?,
            ))
        };
        match (cfg.sensitivity, aggregator.scheme()) {
            (Some(s), _) => general(s),
            (None, AggregationScheme::CompleteMeans) => {
                let c = estimator_constant(cfg.kind, &cfg.bounds);
                Ok((sigma1_squared(c, mu_ate, n, k)?, sigma2_squared(c, mu_var, n, k)?))
            }
            (None, AggregationScheme::Sampling) => general(SensitivityPair::for_kind(
                cfg.kind,
                &cfg.bounds,
                AggregationScheme::Sampling,
                n,
                k,
                aggregator.max_load(),
            )?),
        }
    }

    /// Bootstrap interval released with `mu_release`-GDP per end point
    /// (`sqrt(2) * mu_release` in total). Noise uses the G-formula constant.
    pub fn bootstrap_ci(
        &self,
        data: &Dataset,
        settings: BootstrapSettings,
        beta: f64,
        mu_release: PrivacyBudget,
        seed: Seed,
    ) -> Result<(PrivateInterval, CiReport)> {
        let (data, _) = self.prepare(data)?;
        let folds = self.folds_for(&data, seed)?;
        let bounds = bootstrap_bounds(&data, &folds, self.learners(), self.config.kind, &self.config.bounds, settings, seed)?;
        let sigma1_sq = if mu_release.is_non_private() {
            0.0
        } else {
            sigma1_squared(estimator_constant(EstimatorKind::G, &self.config.bounds), mu_release, data.n(), folds.k())?
        };
        let interval = private_interval(&bounds, sigma1_sq, beta, self.config.bounds.b_mu, seed.derive(tags::INTERVAL))?;
        let report = CiReport {
            method: CiMethod::Bootstrap,
            alpha: settings.alpha,
            beta,
            r: Some(settings.r),
            tau_minus: interval.tau_minus,
            tau_plus: interval.tau_plus,
            mu_total: compose(&[mu_release, mu_release]).mu,
        };
        Ok((interval, report))
    }
}
