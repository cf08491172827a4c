//! Differentially private estimation of average treatment effects.
//!
//! The estimators follow a five-step recipe: partition the records into `K`
//! folds, fit non-private nuisance models (propensity and per-arm outcome
//! regressions) on each fold, aggregate for every record the predictions of
//! the `K - 1` models that never saw it, average G-Formula / IPW / AIPW
//! scores, and release the average together with its variance through the
//! Gaussian mechanism. Privacy is tracked in Gaussian differential privacy
//! (GDP) and can be converted to `(epsilon, delta)` guarantees.
//!
//! The crate is organised by stage:
//!
//! - [`dataset`]: records, bounds, clipping and fold assignment.
//! - [`nuisance`]: the learner interface and the built-in bounded learners.
//! - [`aggregate`]: leave-own-fold-out ensembling of nuisance predictions.
//! - [`estimators`]: scores, private ATE / variance releases, asymptotic CIs.
//! - [`privacy`]: GDP accounting, noise calibration and the Gaussian mechanism.
//! - [`intervals`]: fold-based bootstrap and pointwise-variance private CIs.
//! - [`meta`]: combination of independently released private estimates.
//! - [`experiments`]: synthetic generators and the replication harness.
//! - [`pipeline`]: the end-to-end orchestration used by the CLI.

pub mod aggregate;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod intervals;
pub mod meta;
pub mod nuisance;
pub mod pipeline;
pub mod privacy;
pub mod rng;
pub mod stats;

pub use aggregate::{AggregatedNuisance, AggregationScheme, Aggregator, NuisanceMatrix, SamplingMap};
pub use dataset::{Bounds, Dataset, FoldAssignment, Matrix, ValidationReport};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, PrivateEstimate, ScoreVector};
pub use nuisance::{Learner, LearnerSpec, NuisanceTriple, Predictor};
pub use pipeline::{Pipeline, PipelineConfig, PrivacyMode};
pub use privacy::{PrivacyBudget, SensitivityPair};
pub use rng::{NoiseKey, Seed};
