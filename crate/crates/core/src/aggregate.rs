//! Leave-own-fold-out aggregation of the K fold models' predictions.

use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceTriple, Predictor};
use crate::rng::Seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationScheme {
    /// Harmonic mean for propensities, arithmetic mean for outcomes.
    #[default]
    CompleteMeans,
    /// One foreign fold drawn per record.
    Sampling,
}

impl FromStr for AggregationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete_means" | "complete-means" | "means" => Ok(AggregationScheme::CompleteMeans),
            "sampling" => Ok(AggregationScheme::Sampling),
            other => Err(Error::param(format!("unknown aggregation scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Treated,
    Control,
}

/// Predictions of every fold model at every record, stored row-major (n x K).
#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceMatrix {
    n: usize,
    k: usize,
    pi: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
}

impl NuisanceMatrix {
    pub fn from_parts(n: usize, k: usize, pi: Vec<f64>, mu0: Vec<f64>, mu1: Vec<f64>) -> Result<Self> {
        if pi.len() != n * k || mu0.len() != n * k || mu1.len() != n * k {
            return Err(Error::shape(format!("prediction matrices must have {n}x{k} entries")));
        }
        Ok(NuisanceMatrix { n, k, pi, mu0, mu1 })
    }

    /// Evaluates each fold's models at every record.
    pub fn from_models(data: &Dataset, models: &[NuisanceTriple]) -> Self {
        let n = data.n();
        let k = models.len();
        let mut pi = vec![0.0; n * k];
        let mut mu0 = vec![0.0; n * k];
        let mut mu1 = vec![0.0; n * k];
        pi.par_chunks_mut(k)
            .zip(mu0.par_chunks_mut(k))
            .zip(mu1.par_chunks_mut(k))
            .enumerate()
            .for_each(|(i, ((p, m0), m1))| {
                let x = data.x(i);
                for (j, t) in models.iter().enumerate() {
                    p[j] = t.propensity.predict(x);
                    m0[j] = t.outcome0.predict(x);
                    m1[j] = t.outcome1.predict(x);
                }
            });
        NuisanceMatrix { n, k, pi, mu0, mu1 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pi_row(&self, i: usize) -> &[f64] {
        &self.pi[i * self.k..(i + 1) * self.k]
    }

    pub fn mu0_row(&self, i: usize) -> &[f64] {
        &self.mu0[i * self.k..(i + 1) * self.k]
    }

    pub fn mu1_row(&self, i: usize) -> &[f64] {
        &self.mu1[i * self.k..(i + 1) * self.k]
    }

    pub fn pi_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.pi[i * self.k + j]
    }

    pub fn mu0_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.mu0[i * self.k + j]
    }

    pub fn mu1_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.mu1[i * self.k + j]
    }

    /// Long-format dump: `record, fold, pi, mu0, mu1`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["record", "fold", "pi", "mu0", "mu1"])?;
        for i in 0..self.n {
            for j in 0..self.k {
                let at = i * self.k + j;
                wtr.write_record([
                    i.to_string(),
                    j.to_string(),
                    self.pi[at].to_string(),
                    self.mu0[at].to_string(),
                    self.mu1[at].to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_row(preds: &[f64], own_fold: usize) -> Result<()> {
    if preds.len() < 2 {
        return Err(Error::param("aggregation needs at least 2 folds"));
    }
    if own_fold >= preds.len() {
        return Err(Error::param(format!("own fold {own_fold} out of range for K={}", preds.len())));
    }
    Ok(())
}

/// Arithmetic mean of the entries other than `own_fold`.
pub fn aggregate_outcome_mean(preds: &[f64], own_fold: usize) -> Result<f64> {
    check_row(preds, own_fold)?;
    let mut sum = 0.0;
    for (j, &v) in preds.iter().enumerate() {
        if j != own_fold {
            sum += v;
        }
    }
    Ok(sum / (preds.len() - 1) as f64)
}

/// Harmonic mean of `p` (treated) or `1 - p` (control) over folds other
/// than `own_fold`. The control arm returns the aggregate of `1 - p`.
pub fn aggregate_propensity_harmonic(preds: &[f64], own_fold: usize, arm: Arm) -> Result<f64> {
    check_row(preds, own_fold)?;
    if let Some(bad) = preds.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::param(format!("propensity {bad} outside (0, 1); clip before aggregating")));
    }
    let mut inv = 0.0;
    for (j, &p) in preds.iter().enumerate() {
        if j != own_fold {
            inv += match arm {
                Arm::Treated => 1.0 / p,
                Arm::Control => 1.0 / (1.0 - p),
            };
        }
    }
    Ok((preds.len() - 1) as f64 / inv)
}

fn draw_other(k: usize, own_fold: usize, seed: Seed) -> usize {
    let j = seed.rng().random_range(0..k - 1);
    if j >= own_fold {
        j + 1
    } else {
        j
    }
}

/// The entry of one fold drawn uniformly among those other than `own_fold`.
pub fn aggregate_sampling(preds: &[f64], own_fold: usize, seed: Seed) -> Result<f64> {
    check_row(preds, own_fold)?;
    Ok(preds[draw_other(preds.len(), own_fold, seed)])
}

/// Foreign fold `l(i)` chosen for each record, drawn once per run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingMap {
    choice: Vec<usize>,
    k: usize,
}

impl SamplingMap {
    /// Record `i` uses `seed.derive(i)`, so the draw matches [`aggregate_sampling`].
    pub fn draw(folds: &FoldAssignment, seed: Seed) -> Self {
        let k = folds.k();
        let choice = (0..folds.n()).map(|i| draw_other(k, folds.fold_of(i), seed.derive(i as u64))).collect();
        SamplingMap { choice, k }
    }

    pub fn choice(&self, i: usize) -> usize {
        self.choice[i]
    }

    /// Largest number of records served by a single fold.
    pub fn max_load(&self) -> usize {
        let mut load = vec![0usize; self.k];
        for &c in &self.choice {
            load[c] += 1;
        }
        load.into_iter().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Aggregator {
    CompleteMeans,
    Sampling(SamplingMap),
}

impl Aggregator {
    pub fn new(scheme: AggregationScheme, folds: &FoldAssignment, seed: Seed) -> Self {
        match scheme {
            AggregationScheme::CompleteMeans => Aggregator::CompleteMeans,
            AggregationScheme::Sampling => Aggregator::Sampling(SamplingMap::draw(folds, seed)),
        }
    }

    pub fn scheme(&self) -> AggregationScheme {
        match self {
            Aggregator::CompleteMeans => AggregationScheme::CompleteMeans,
            Aggregator::Sampling(_) => AggregationScheme::Sampling,
        }
    }

    pub fn max_load(&self) -> usize {
        match self {
            Aggregator::CompleteMeans => 0,
            Aggregator::Sampling(map) => map.max_load(),
        }
    }
}

/// Per-record nuisances, each computed without the record's own fold.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedNuisance {
    pub pi1: Vec<f64>,
    pub one_minus_pi0: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl AggregatedNuisance {
    pub fn n(&self) -> usize {
        self.mu0.len()
    }
}

pub fn build_aggregated(
    matrix: &NuisanceMatrix,
    folds: &FoldAssignment,
    aggregator: &Aggregator,
) -> Result<AggregatedNuisance> {
    if matrix.n() != folds.n() || matrix.k() != folds.k() {
        return Err(Error::shape(format!(
            "prediction matrix is {}x{} but folds cover n={} with K={}",
            matrix.n(),
            matrix.k(),
            folds.n(),
            folds.k()
        )));
    }
    if let Aggregator::Sampling(map) = aggregator {
        if map.choice.len() != folds.n() || map.k != folds.k() {
            return Err(Error::shape("sampling map does not match fold assignment"));
        }
    }
    let n = matrix.n();
    let rows: Vec<[f64; 4]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = folds.fold_of(i);
            match aggregator {
                Aggregator::CompleteMeans => Ok([
                    aggregate_propensity_harmonic(matrix.pi_row(i), own, Arm::Treated)?,
                    aggregate_propensity_harmonic(matrix.pi_row(i), own, Arm::Control)?,
                    aggregate_outcome_mean(matrix.mu0_row(i), own)?,
                    aggregate_outcome_mean(matrix.mu1_row(i), own)?,
                ]),
                Aggregator::Sampling(map) => {
                    let l = map.choice(i);
                    let p = matrix.pi_row(i)[l];
                    Ok([p, 1.0 - p, matrix.mu0_row(i)[l], matrix.mu1_row(i)[l]])
                }
            }
        })
        .collect::<Result<_>>()?;
    Ok(AggregatedNuisance {
        pi1: rows.iter().map(|r| r[0]).collect(),
        one_minus_pi0: rows.iter().map(|r| r[1]).collect(),
        mu0: rows.iter().map(|r| r[2]).collect(),
        mu1: rows.iter().map(|r| r[3]).collect(),
    })
}
