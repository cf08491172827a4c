//! Nuisance learners: a small model-agnostic interface plus the built-in
//! constant, linear, logistic, tree and forest learners.
//!
//! Any type implementing [`Learner`] can be plugged into the pipeline. Its
//! predictions are clipped to the declared bounds at prediction time, so
//! the privacy analysis never depends on the learner behaving well.

mod forest;
mod linear;
mod logistic;
mod tree;

use serde::{Deserialize, Serialize};

use crate::dataset::{Bounds, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::rng::Seed;

pub use forest::{fit_forest, Forest};
pub use linear::{fit_linear, LinearModel};
pub use logistic::{expit, fit_logistic, LogisticFit, LogisticModel};
pub use tree::{fit_tree, RegressionTree};

/// A fitted function of the covariates.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Predictor for F {
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Training rows of a learner. `target` is indexed by row id (it has one
/// entry per row of `x`), and only `rows` are used.
#[derive(Clone, Copy)]
pub struct TrainingSet<'a> {
    pub x: &'a Matrix,
    pub rows: &'a [usize],
    pub target: &'a [f64],
}

impl<'a> TrainingSet<'a> {
    pub fn new(x: &'a Matrix, rows: &'a [usize], target: &'a [f64]) -> Result<Self> {
        if target.len() != x.rows() {
            return Err(Error::shape(format!("target has {} entries for {} rows", target.len(), x.rows())));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(Error::shape(format!("row id {bad} out of range")));
        }
        Ok(TrainingSet { x, rows, target })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn target_mean(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|&r| self.target[r]).sum::<f64>() / self.rows.len() as f64
    }
}

/// Something that can be trained into a [`Predictor`].
pub trait Learner: Send + Sync {
    fn fit(&self, data: &TrainingSet<'_>, seed: Seed) -> Result<Box<dyn Predictor>>;
}

/// Propensity and outcome learners used together for each fold.
#[derive(Clone, Copy)]
pub struct LearnerPair<'a> {
    pub propensity: &'a dyn Learner,
    pub outcome: &'a dyn Learner,
}

/// Built-in learners and their hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Constant,
    Linear {
        #[serde(default = "defaults::ridge")]
        ridge: f64,
    },
    Logistic {
        #[serde(default = "defaults::max_iter")]
        max_iter: usize,
        #[serde(default = "defaults::tolerance")]
        tolerance: f64,
    },
    Tree {
        #[serde(default = "defaults::max_depth")]
        max_depth: usize,
        #[serde(default = "defaults::min_leaf")]
        min_leaf: usize,
    },
    Forest {
        #[serde(default = "defaults::n_trees")]
        n_trees: usize,
        #[serde(default = "defaults::subsample_fraction")]
        subsample_fraction: f64,
        #[serde(default = "defaults::max_depth")]
        max_depth: usize,
        #[serde(default = "defaults::min_leaf")]
        min_leaf: usize,
    },
}

pub mod defaults {
    pub fn ridge() -> f64 {
        1e-8
    }
    pub fn max_iter() -> usize {
        100
    }
    pub fn tolerance() -> f64 {
        1e-8
    }
    pub fn max_depth() -> usize {
        8
    }
    pub fn min_leaf() -> usize {
        5
    }
    pub fn n_trees() -> usize {
        300
    }
    pub fn subsample_fraction() -> f64 {
        0.4
    }
}

impl LearnerSpec {
    pub fn linear() -> Self {
        LearnerSpec::Linear { ridge: defaults::ridge() }
    }

    pub fn logistic() -> Self {
        LearnerSpec::Logistic { max_iter: defaults::max_iter(), tolerance: defaults::tolerance() }
    }

    pub fn tree() -> Self {
        LearnerSpec::Tree { max_depth: defaults::max_depth(), min_leaf: defaults::min_leaf() }
    }

    pub fn forest() -> Self {
        LearnerSpec::Forest {
            n_trees: defaults::n_trees(),
            subsample_fraction: defaults::subsample_fraction(),
            max_depth: defaults::max_depth(),
            min_leaf: defaults::min_leaf(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Constant => "constant",
            LearnerSpec::Linear { .. } => "linear",
            LearnerSpec::Logistic { .. } => "logistic",
            LearnerSpec::Tree { .. } => "tree",
            LearnerSpec::Forest { .. } => "forest",
        }
    }

    /// Parses a bare learner name with default hyperparameters.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "constant" => LearnerSpec::Constant,
            "linear" => LearnerSpec::linear(),
            "logistic" => LearnerSpec::logistic(),
            "tree" => LearnerSpec::tree(),
            "forest" => LearnerSpec::forest(),
            other => return Err(Error::param(format!("unknown learner '{other}'"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearnerSpec::Constant => true,
            LearnerSpec::Linear { ridge } => ridge.is_finite() && ridge >= 0.0,
            LearnerSpec::Logistic { max_iter, tolerance } => max_iter > 0 && tolerance > 0.0,
            LearnerSpec::Tree { max_depth, min_leaf } => max_depth > 0 && min_leaf > 0,
            LearnerSpec::Forest { n_trees, subsample_fraction, max_depth, min_leaf } => {
                n_trees > 0
                    && subsample_fraction > 0.0
                    && subsample_fraction <= 1.0
                    && max_depth > 0
                    && min_leaf > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid hyperparameters for {self:?}")))
        }
    }
}

impl Learner for LearnerSpec {
    fn fit(&self, data: &TrainingSet<'_>, seed: Seed) -> Result<Box<dyn Predictor>> {
        self.validate()?;
        if data.is_empty() {
            return Err(Error::shape("cannot fit a learner on zero rows"));
        }
        Ok(match *self {
            LearnerSpec::Constant => Box::new(ConstantModel(data.target_mean())),
            LearnerSpec::Linear { ridge } => Box::new(fit_linear(data, ridge)?),
            LearnerSpec::Logistic { max_iter, tolerance } => {
                let fit = fit_logistic(data, max_iter, tolerance)?;
                match fit.constant {
                    Some(p) => Box::new(ConstantModel(p)),
                    None => Box::new(fit.model),
                }
            }
            LearnerSpec::Tree { max_depth, min_leaf } => Box::new(fit_tree(data, max_depth, min_leaf)),
            LearnerSpec::Forest { n_trees, subsample_fraction, max_depth, min_leaf } => {
                Box::new(fit_forest(data, n_trees, subsample_fraction, max_depth, min_leaf, seed))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantModel(pub f64);

impl Predictor for ConstantModel {
    fn predict(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

/// Wraps a predictor and projects its output on `[lo, hi]`. NaN outputs map
/// to the midpoint of the range.
pub struct ClippedPredictor {
    inner: Box<dyn Predictor>,
    lo: f64,
    hi: f64,
}

impl ClippedPredictor {
    pub fn new(inner: Box<dyn Predictor>, lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "empty clip range [{lo}, {hi}]");
        ClippedPredictor { inner, lo, hi }
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

impl Predictor for ClippedPredictor {
    #[inline]
    fn predict(&self, x: &[f64]) -> f64 {
        let v = self.inner.predict(x);
        if v.is_nan() {
            0.5 * (self.lo + self.hi)
        } else {
            v.clamp(self.lo, self.hi)
        }
    }
}

/// Propensity and outcome models fitted on one fold.
pub struct NuisanceTriple {
    pub propensity: ClippedPredictor,
    pub outcome0: ClippedPredictor,
    pub outcome1: ClippedPredictor,
    pub warnings: Vec<String>,
}

/// Fits the propensity model on `(X, A)` and each outcome model on the
/// rows of its treatment arm. An arm without records gets the constant
/// zero outcome model and a warning.
pub fn fit_triple(
    data: &Dataset,
    rows: &[usize],
    learner_pi: &dyn Learner,
    learner_mu: &dyn Learner,
    bounds: &Bounds,
    seed: Seed,
) -> Result<NuisanceTriple> {
    if rows.is_empty() {
        return Err(Error::shape("cannot fit nuisances on an empty fold"));
    }
    let x = data.covariates();
    let (p_lo, p_hi) = bounds.propensity_range();
    let (y_lo, y_hi) = bounds.outcome_range();
    let pi = learner_pi.fit(&TrainingSet::new(x, rows, data.treatment())?, seed.derive(0))?;
    let mut warnings = Vec::new();
    let mut arm = |a: f64, tag: u64| -> Result<ClippedPredictor> {
        let arm_rows: Vec<usize> = rows.iter().copied().filter(|&r| data.treatment()[r] == a).collect();
        let model: Box<dyn Predictor> = if arm_rows.is_empty() {
            warnings.push(format!("no records with a={a} in fold; outcome model set to 0"));
            Box::new(ConstantModel(0.0))
        } else {
            learner_mu.fit(&TrainingSet::new(x, &arm_rows, data.outcome())?, seed.derive(tag))?
        };
        Ok(ClippedPredictor::new(model, y_lo, y_hi))
    };
    let outcome0 = arm(0.0, 1)?;
    let outcome1 = arm(1.0, 2)?;
    Ok(NuisanceTriple { propensity: ClippedPredictor::new(pi, p_lo, p_hi), outcome0, outcome1, warnings })
}
