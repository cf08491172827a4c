//! Synthetic generators, the subsample-and-aggregate baseline and the
//! Monte-Carlo replication harness.

use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Bounds, Dataset, FoldAssignment, Matrix};
use crate::error::{Error, Result};
use crate::estimators::{score, EstimatorKind, PopulationModel};
use crate::nuisance::{expit, fit_triple, LearnerPair, NuisanceTriple, Predictor};
use crate::pipeline::{Pipeline, PipelineConfig, PrivacyMode};
use crate::rng::{tags, Seed, SimRng};

pub const GOOD_OVERLAP_BETA_PI: [f64; 10] = [-0.15, 0.225, -0.15, -0.2, 0.1, 0.05, -0.075, 0.225, -0.15, -0.2];
pub const GOOD_OVERLAP_BETA_MU: [f64; 10] = [0.175, 0.1, -0.125, 0.075, -0.1, 0.2, -0.2, 0.175, -0.1, 0.2];
pub const EFFECT_OF_K_BETA_PI: [f64; 20] = [
    -0.17, -0.06, 0.05, 0.14, 0.12, -0.195, -0.205, 0.07, 0.18, 0.14, -0.14, 0.05, 0.01, -0.16, -0.18, -0.1, 0.2,
    0.03, -0.16, -0.1,
];
pub const EFFECT_OF_K_BETA_Y: [f64; 20] = [
    -0.0385, -0.0111, -0.105, -0.0344, 0.1405, 0.0550, 0.0344, -0.0908, -0.0023, -0.0243, -0.0076, -0.0416, 0.0193,
    -0.0846, 0.0582, 0.0824, 0.0184, 0.0064, -0.0895, 0.0241,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    LowOverlap,
    MisspecifiedTrees,
    GoodOverlapBinary,
    EffectOfK,
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "low_overlap" => Ok(GeneratorKind::LowOverlap),
            "misspecified_trees" | "misspecified" => Ok(GeneratorKind::MisspecifiedTrees),
            "good_overlap_binary" | "good_overlap" => Ok(GeneratorKind::GoodOverlapBinary),
            "effect_of_k" => Ok(GeneratorKind::EffectOfK),
            other => Err(Error::param(format!(
                "unknown generator '{other}' (expected low_overlap, misspecified_trees, good_overlap_binary or effect_of_k)"
            ))),
        }
    }
}

impl GeneratorKind {
    pub fn true_ate(self) -> f64 {
        match self {
            GeneratorKind::LowOverlap => 0.1,
            GeneratorKind::MisspecifiedTrees => 0.2,
            GeneratorKind::GoodOverlapBinary => 0.1,
            GeneratorKind::EffectOfK => 0.15,
        }
    }

    pub fn model(self) -> &'static dyn PopulationModel {
        match self {
            GeneratorKind::LowOverlap => &LowOverlap,
            GeneratorKind::MisspecifiedTrees => &Misspecified,
            GeneratorKind::GoodOverlapBinary => &GoodOverlapBinary,
            GeneratorKind::EffectOfK => &EffectOfK,
        }
    }

    pub fn generate(self, n: usize, seed: Seed) -> Result<Dataset> {
        generate(self.model(), n, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, n: usize) -> Self {
        GeneratorSpec { kind, n }
    }

    pub fn true_ate(&self) -> f64 {
        self.kind.true_ate()
    }

    pub fn generate(&self, seed: Seed) -> Result<Dataset> {
        self.kind.generate(self.n, seed)
    }
}

/// Draws `n` records: covariates, then `A ~ Bernoulli(pi(x))`, then `Y`.
pub fn generate(model: &dyn PopulationModel, n: usize, seed: Seed) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::param("generators need n >= 2"));
    }
    let d = model.d();
    let mut rng = seed.rng();
    let mut x = Vec::with_capacity(n * d);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = model.sample_covariates(&mut rng);
        let ai = f64::from(u8::from(rng.random::<f64>() < model.propensity(&xi)));
        y.push(model.sample_outcome(&xi, ai, &mut rng));
        a.push(ai);
        x.extend_from_slice(&xi);
    }
    Dataset::new(Matrix::new(n, d, x)?, a, y)
}

fn standard_normals(d: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(x: &[f64], b: &[f64]) -> f64 {
    x.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn gaussian_outcome(mean: f64, variance: f64, rng: &mut SimRng) -> f64 {
    mean + Normal::new(0.0, variance.sqrt()).expect("valid std").sample(rng)
}

pub struct LowOverlap;

impl PopulationModel for LowOverlap {
    fn d(&self) -> usize {
        1
    }
    fn sample_covariates(&self, rng: &mut SimRng) -> Vec<f64> {
        standard_normals(1, rng)
    }
    fn propensity(&self, x: &[f64]) -> f64 {
        expit(-0.2 + 6.0 * x[0]).clamp(0.004, 0.996)
    }
    fn outcome_mean(&self, x: &[f64], a: f64) -> f64 {
        -0.05 + 0.225 * x[0] + 0.1 * a
    }
    fn outcome_variance(&self, _x: &[f64], _a: f64) -> f64 {
        0.01
    }
    fn sample_outcome(&self, x: &[f64], a: f64, rng: &mut SimRng) -> f64 {
        gaussian_outcome(self.outcome_mean(x, a), 0.01, rng)
    }
}

pub struct Misspecified;

impl Misspecified {
    pub fn gamma(x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        if x1 > 0.0 {
            if x2 > 0.0 { -0.7 } else { 0.1 }
        } else if x2 > 0.05 {
            -0.4
        } else {
            0.6
        }
    }
}

impl PopulationModel for Misspecified {
    fn d(&self) -> usize {
        2
    }
    fn sample_covariates(&self, rng: &mut SimRng) -> Vec<f64> {
        standard_normals(2, rng)
    }
    fn propensity(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        if x2 > 0.0 {
            if x1 > 0.1 { 0.75 } else { 0.6 }
        } else if x1 < -0.05 {
            0.25
        } else {
            0.5
        }
    }
    fn outcome_mean(&self, x: &[f64], a: f64) -> f64 {
        Self::gamma(x) + 0.2 * a
    }
    fn outcome_variance(&self, _x: &[f64], _a: f64) -> f64 {
        0.025
    }
    fn sample_outcome(&self, x: &[f64], a: f64, rng: &mut SimRng) -> f64 {
        gaussian_outcome(self.outcome_mean(x, a), 0.025, rng)
    }
}

pub struct GoodOverlapBinary;

impl PopulationModel for GoodOverlapBinary {
    fn d(&self) -> usize {
        10
    }
    fn sample_covariates(&self, rng: &mut SimRng) -> Vec<f64> {
        standard_normals(10, rng)
    }
    fn propensity(&self, x: &[f64]) -> f64 {
        expit(0.1 + dot(x, &GOOD_OVERLAP_BETA_PI)).clamp(0.1, 0.9)
    }
    fn outcome_mean(&self, x: &[f64], a: f64) -> f64 {
        expit(-0.05 + dot(x, &GOOD_OVERLAP_BETA_MU) + 0.42585 * a)
    }
    fn outcome_variance(&self, x: &[f64], a: f64) -> f64 {
        let p = self.outcome_mean(x, a);
        p * (1.0 - p)
    }
    fn sample_outcome(&self, x: &[f64], a: f64, rng: &mut SimRng) -> f64 {
        f64::from(u8::from(rng.random::<f64>() < self.outcome_mean(x, a)))
    }
}

pub struct EffectOfK;

impl PopulationModel for EffectOfK {
    fn d(&self) -> usize {
        20
    }
    fn sample_covariates(&self, rng: &mut SimRng) -> Vec<f64> {
        standard_normals(20, rng)
    }
    fn propensity(&self, x: &[f64]) -> f64 {
        expit(0.1 + dot(x, &EFFECT_OF_K_BETA_PI)).clamp(0.1, 0.9)
    }
    fn outcome_mean(&self, x: &[f64], a: f64) -> f64 {
        -0.08 + dot(x, &EFFECT_OF_K_BETA_Y) + 0.15 * a
    }
    fn outcome_variance(&self, _x: &[f64], _a: f64) -> f64 {
        0.0025
    }
    fn sample_outcome(&self, x: &[f64], a: f64, rng: &mut SimRng) -> f64 {
        gaussian_outcome(self.outcome_mean(x, a), 0.0025, rng)
    }
}

/// Subsample-and-aggregate baseline: each fold is cut in two halves, models
/// fitted on one half score the other, and the ATE is the mean of all scores.
pub fn subsample_aggregate_estimate(
    data: &Dataset,
    folds: &FoldAssignment,
    learners: LearnerPair<'_>,
    kind: EstimatorKind,
    bounds: &Bounds,
    seed: Seed,
) -> Result<f64> {
    for (fold, size) in folds.sizes().into_iter().enumerate() {
        if size < 4 {
            return Err(Error::FoldTooSmall { fold, size, required: 4 });
        }
    }
    let sums: Vec<f64> = (0..folds.k())
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let members = folds.members(k);
            let (h1, h2) = members.split_at(members.len() / 2);
            let fit = |rows: &[usize], tag: u64| {
                fit_triple(data, rows, learners.propensity, learners.outcome, bounds, seed.derive(k as u64).derive(tag))
            };
            let score_half = |t: &NuisanceTriple, rows: &[usize]| -> f64 {
                rows.iter()
                    .map(|&i| {
                        let x = data.x(i);
                        let p = t.propensity.predict(x);
                        score(kind, data.treatment()[i], data.outcome()[i], p, 1.0 - p, t.outcome0.predict(x), t.outcome1.predict(x))
                    })
                    .sum()
            };
            Ok(score_half(&fit(h1, 0)?, h2) + score_half(&fit(h2, 1)?, h1))
        })
        .collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / data.n() as f64)
}

/// Sensitivity of the baseline: a record moves its own score and every score
/// of the opposite half of its fold, each by at most twice the score bound.
pub fn subsample_aggregate_sensitivity(kind: EstimatorKind, bounds: &Bounds, n: usize, k: usize) -> f64 {
    let fold = n.div_ceil(k);
    let half = fold.div_ceil(2);
    2.0 * kind.score_bound(bounds) * (1 + half) as f64 / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub tau_dp: f64,
    pub v_dp: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub reps: usize,
    pub true_ate: f64,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_v_dp: f64,
}

impl ReplicationSummary {
    pub fn from_rows(rows: &[ReplicationRow], true_ate: f64) -> Self {
        let taus: Vec<f64> = rows.iter().map(|r| r.tau_dp).collect();
        let reps = rows.len();
        let mean = crate::stats::mean(&taus);
        let sd = if reps > 1 { crate::stats::sample_variance(&taus).sqrt() } else { 0.0 };
        let rmse = (taus.iter().map(|t| (t - true_ate).powi(2)).sum::<f64>() / reps as f64).sqrt();
        ReplicationSummary {
            reps,
            true_ate,
            mean,
            sd,
            se: sd / (reps as f64).sqrt(),
            bias: mean - true_ate,
            rmse,
            coverage: rows.iter().filter(|r| r.covered).count() as f64 / reps as f64,
            mean_v_dp: rows.iter().map(|r| r.v_dp).sum::<f64>() / reps as f64,
        }
    }

    /// `|bias| <= z * se`.
    pub fn unbiased_within(&self, z: f64) -> bool {
        self.bias.abs() <= z * self.se
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationTable {
    pub rows: Vec<ReplicationRow>,
    pub summary: ReplicationSummary,
}

impl ReplicationTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Seed of replication `rep`; its data use `derive(DATA)` and its run `derive(PIPELINE)`.
pub fn replication_seed(seed: Seed, rep: usize) -> Seed {
    seed.derive(rep as u64)
}

pub fn run_replications(generator: &GeneratorSpec, config: &PipelineConfig, reps: usize, seed: Seed) -> Result<ReplicationTable> {
    if reps == 0 {
        return Err(Error::param("need at least one replication"));
    }
    let pipeline = Pipeline::new(config.clone())?;
    let truth = generator.true_ate();
    let rows: Vec<ReplicationRow> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = replication_seed(seed, rep);
            let data = generator.generate(s.derive(tags::DATA))?;
            let est = pipeline.run(&data, s.derive(tags::PIPELINE))?.estimate;
            let (ci_lo, ci_hi) = est.ci.unwrap_or((f64::NAN, f64::NAN));
            Ok(ReplicationRow {
                rep,
                tau_dp: est.tau_dp,
                v_dp: est.v_dp,
                ci_lo,
                ci_hi,
                covered: ci_lo <= truth && truth <= ci_hi,
                seed: s.0,
            })
        })
        .collect::<Result<_>>()?;
    let summary = ReplicationSummary::from_rows(&rows, truth);
    Ok(ReplicationTable { rows, summary })
}

/// Cartesian grid over fold counts, budgets, sample sizes and estimators.
/// A budget of 0 means non-private.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub mus: Vec<f64>,
    pub ns: Vec<usize>,
    pub kinds: Vec<EstimatorKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub mu: f64,
    pub n: usize,
    pub kind: EstimatorKind,
}

impl SweepGrid {
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        if self.ks.is_empty() || self.mus.is_empty() || self.ns.is_empty() || self.kinds.is_empty() {
            return Err(Error::param("every sweep dimension needs at least one value"));
        }
        let mut cells = Vec::new();
        for &kind in &self.kinds {
            for &n in &self.ns {
                for &k in &self.ks {
                    for &mu in &self.mus {
                        cells.push(SweepCell { k, mu, n, kind });
                    }
                }
            }
        }
        Ok(cells)
    }
}

pub fn run_sweep(
    generator: GeneratorKind,
    base: &PipelineConfig,
    grid: &SweepGrid,
    reps: usize,
    seed: Seed,
) -> Result<Vec<(SweepCell, ReplicationTable)>> {
    grid.cells()?
        .into_iter()
        .map(|cell| {
            let mut cfg = base.clone();
            cfg.k = cell.k;
            cfg.kind = cell.kind;
            cfg.privacy = if cell.mu == 0.0 { PrivacyMode::NonPrivate } else { PrivacyMode::even(cell.mu)? };
            let table = run_replications(&GeneratorSpec::new(generator, cell.n), &cfg, reps, seed)?;
            Ok((cell, table))
        })
        .collect()
}

/// RMSE of the zero-noise folding estimator and of the subsample-and-aggregate
/// baseline at one fold count, over `reps` datasets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldingComparison {
    pub k: usize,
    pub fold_size: usize,
    pub rmse_folding: f64,
    pub rmse_sa: f64,
}

pub fn compare_folding(
    generator: &GeneratorSpec,
    config: &PipelineConfig,
    reps: usize,
    seed: Seed,
) -> Result<FoldingComparison> {
    let mut cfg = config.clone();
    cfg.privacy = PrivacyMode::NonPrivate;
    let pipeline = Pipeline::new(cfg)?;
    let truth = generator.true_ate();
    let errs: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = replication_seed(seed, rep);
            let data = generator.generate(s.derive(tags::DATA))?;
            let run_seed = s.derive(tags::PIPELINE);
            let out = pipeline.run(&data, run_seed)?;
            let sa = subsample_aggregate_estimate(
                &data,
                &out.folds,
                pipeline.learners(),
                config.kind,
                &config.bounds,
                run_seed.derive(tags::LEARNERS),
            )?;
            Ok((out.estimate.tau_dp - truth, sa - truth))
        })
        .collect::<Result<_>>()?;
    let rmse = |f: fn(&(f64, f64)) -> f64| (errs.iter().map(|e| f(e).powi(2)).sum::<f64>() / reps as f64).sqrt();
    Ok(FoldingComparison {
        k: config.k,
        fold_size: generator.n / config.k,
        rmse_folding: rmse(|e| e.0),
        rmse_sa: rmse(|e| e.1),
    })
}
