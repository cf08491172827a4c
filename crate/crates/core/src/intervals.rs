//! Fold-based private confidence intervals: within-fold bootstrap and
//! pointwise-variance bounds, released through two Gaussian mechanisms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Bounds, Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::estimators::{score, EstimatorKind};
use crate::nuisance::{fit_triple, LearnerPair, NuisanceTriple, Predictor};
use crate::privacy::add_gaussian_noise;
use crate::rng::{fold_seed, tags, NoiseKey, Seed};
use crate::stats::std_normal_quantile;

/// Per-record lower and upper score bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundScores {
    pub gamma_minus: Vec<f64>,
    pub gamma_plus: Vec<f64>,
}

impl BoundScores {
    pub fn n(&self) -> usize {
        self.gamma_minus.len()
    }
}

/// Element of rank `ceil(q * r)` (1-indexed, clamped to `[1, r]`) of a sorted sample.
pub fn rank_quantile(sorted: &[f64], q: f64) -> f64 {
    let r = sorted.len();
    let rank = ((q * r as f64).ceil() as usize).clamp(1, r);
    sorted[rank - 1]
}

/// Quantile bounds of the debiased replicates `rep_b + base - median(rep)`.
/// Sorts `replicates` in place.
pub fn debiased_quantile_bounds(replicates: &mut [f64], base: f64, alpha: f64) -> (f64, f64) {
    replicates.sort_unstable_by(f64::total_cmp);
    let median = rank_quantile(replicates, 0.5);
    let lo = rank_quantile(replicates, alpha / 2.0);
    let hi = rank_quantile(replicates, 1.0 - alpha / 2.0);
    (base + (lo - median), base + (hi - median))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub r: usize,
    pub alpha: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings { r: 200, alpha: 0.05 }
    }
}

fn triple_score(kind: EstimatorKind, t: &NuisanceTriple, x: &[f64], a: f64, y: f64) -> f64 {
    let p = t.propensity.predict(x);
    score(kind, a, y, p, 1.0 - p, t.outcome0.predict(x), t.outcome1.predict(x))
}

/// Per-fold bootstrap bounds averaged over the folds other than each
/// record's own. Bounds of each (record, fold) pair are clipped to
/// `[-2 b_mu, 2 b_mu]` before averaging.
pub fn bootstrap_bounds(
    data: &Dataset,
    folds: &FoldAssignment,
    learners: LearnerPair<'_>,
    kind: EstimatorKind,
    bounds: &Bounds,
    settings: BootstrapSettings,
    seed: Seed,
) -> Result<BoundScores> {
    let BootstrapSettings { r, alpha } = settings;
    if r < 2 {
        return Err(Error::param(format!("bootstrap needs r >= 2 replications, got {r}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    for (fold, size) in folds.sizes().into_iter().enumerate() {
        if size < 2 {
            return Err(Error::FoldTooSmall { fold, size, required: 2 });
        }
    }
    let n = data.n();
    let k = folds.k();
    let clip = 2.0 * bounds.b_mu;
    let per_fold: Vec<Vec<(usize, f64, f64)>> = (0..k)
        .into_par_iter()
        .map(|fold| -> Result<Vec<(usize, f64, f64)>> {
            let members = folds.members(fold);
            let others: Vec<usize> = (0..n).filter(|&i| folds.fold_of(i) != fold).collect();
            let base_model =
                fit_triple(data, members, learners.propensity, learners.outcome, bounds, fold_seed(seed, fold))?;
            let eval = |t: &NuisanceTriple, i: usize| {
                triple_score(kind, t, data.x(i), data.treatment()[i], data.outcome()[i])
            };
            let mut reps = vec![0.0; others.len() * r];
            let boot_seed = seed.derive(tags::BOOTSTRAP).derive(fold as u64);
            let mut resample = vec![0usize; members.len()];
            for b in 0..r {
                let s = boot_seed.derive(b as u64);
                let mut rng = s.rng();
                for slot in resample.iter_mut() {
                    *slot = members[rng.random_range(0..members.len())];
                }
                let t = fit_triple(data, &resample, learners.propensity, learners.outcome, bounds, s.derive(1))?;
                for (j, &i) in others.iter().enumerate() {
                    reps[j * r + b] = eval(&t, i);
                }
            }
            Ok(others
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let (lo, hi) = debiased_quantile_bounds(&mut reps[j * r..(j + 1) * r], eval(&base_model, i), alpha);
                    (i, lo.clamp(-clip, clip), hi.clamp(-clip, clip))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut gamma_minus = vec![0.0; n];
    let mut gamma_plus = vec![0.0; n];
    for fold in &per_fold {
        for &(i, lo, hi) in fold {
            gamma_minus[i] += lo;
            gamma_plus[i] += hi;
        }
    }
    let denom = (k - 1) as f64;
    gamma_minus.iter_mut().for_each(|v| *v /= denom);
    gamma_plus.iter_mut().for_each(|v| *v /= denom);
    Ok(BoundScores { gamma_minus, gamma_plus })
}

/// A fitted CATE model with a pointwise variance estimate.
pub trait CateVarianceModel: Send + Sync {
    fn cate(&self, x: &[f64]) -> f64;
    fn variance(&self, x: &[f64]) -> f64;
}

pub trait CateVarianceLearner: Send + Sync {
    fn fit(&self, data: &Dataset, rows: &[usize]) -> Result<Box<dyn CateVarianceModel>>;
}

/// Per-arm least squares; the CATE variance is the sum of the two arms'
/// prediction variances `z' sigma^2 (Z'Z)^-1 z`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearCateLearner;

struct ArmFit {
    coef: DVector<f64>,
    cov: DMatrix<f64>,
}

impl ArmFit {
    fn design(x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len() + 1, std::iter::once(1.0).chain(x.iter().copied()))
    }

    fn fit(data: &Dataset, rows: &[usize]) -> Result<Self> {
        let p = data.d() + 1;
        let m = rows.len();
        if m == 0 {
            return Err(Error::shape("linear CATE learner needs records in both arms"));
        }
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        for &r in rows {
            let z = Self::design(data.x(r));
            gram += &z * z.transpose();
            rhs += &z * data.outcome()[r];
        }
        for i in 0..p {
            gram[(i, i)] += 1e-8;
        }
        let inv = gram
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(format!("CATE learner: {e}")))?;
        let coef = &inv * rhs;
        let rss: f64 = rows
            .iter()
            .map(|&r| (data.outcome()[r] - Self::design(data.x(r)).dot(&coef)).powi(2))
            .sum();
        let dof = if m > p { (m - p) as f64 } else { m as f64 };
        Ok(ArmFit { coef, cov: inv * (rss / dof) })
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let z = Self::design(x);
        (z.dot(&self.coef), (z.transpose() * &self.cov * &z)[(0, 0)].max(0.0))
    }
}

struct LinearCate {
    arm0: ArmFit,
    arm1: ArmFit,
}

impl CateVarianceModel for LinearCate {
    fn cate(&self, x: &[f64]) -> f64 {
        self.arm1.predict(x).0 - self.arm0.predict(x).0
    }

    fn variance(&self, x: &[f64]) -> f64 {
        self.arm1.predict(x).1 + self.arm0.predict(x).1
    }
}

impl CateVarianceLearner for LinearCateLearner {
    fn fit(&self, data: &Dataset, rows: &[usize]) -> Result<Box<dyn CateVarianceModel>> {
        let (treated, control): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| data.treatment()[r] == 1.0);
        Ok(Box::new(LinearCate { arm0: ArmFit::fit(data, &control)?, arm1: ArmFit::fit(data, &treated)? }))
    }
}

impl<F: Fn(&[f64]) -> (f64, f64) + Send + Sync> CateVarianceModel for F {
    fn cate(&self, x: &[f64]) -> f64 {
        self(x).0
    }

    fn variance(&self, x: &[f64]) -> f64 {
        self(x).1
    }
}

/// `Phi^-1(1 - alpha / (2 n K))`.
pub fn bonferroni_quantile(alpha: f64, n: usize, k: usize) -> f64 {
    std_normal_quantile(1.0 - alpha / (2.0 * n as f64 * k as f64))
}

/// Bounds `cate_k(x_i) +/- z sqrt(V_k(x_i))` with a Bonferroni quantile,
/// projected on `[-2 b_mu, 2 b_mu]` and averaged over the folds other than
/// each record's own. `models[k]` must be fitted on fold `k`.
pub fn pointwise_variance_bounds(
    data: &Dataset,
    folds: &FoldAssignment,
    models: &[Box<dyn CateVarianceModel>],
    b_mu: f64,
    alpha: f64,
) -> Result<BoundScores> {
    if models.len() != folds.k() || data.n() != folds.n() {
        return Err(Error::shape("need one CATE model per fold"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = data.n();
    let k = folds.k();
    let z = bonferroni_quantile(alpha, n, k);
    let clip = 2.0 * b_mu;
    let rows: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let own = folds.fold_of(i);
            let (mut lo, mut hi) = (0.0, 0.0);
            for (j, m) in models.iter().enumerate() {
                if j == own {
                    continue;
                }
                let v = m.variance(data.x(i));
                if v < 0.0 || v.is_nan() {
                    return Err(Error::param(format!("negative variance estimate {v} at record {i}")));
                }
                let c = m.cate(data.x(i));
                let half = z * v.sqrt();
                lo += (c - half).clamp(-clip, clip);
                hi += (c + half).clamp(-clip, clip);
            }
            Ok((lo / (k - 1) as f64, hi / (k - 1) as f64))
        })
        .collect::<Result<_>>()?;
    Ok(BoundScores {
        gamma_minus: rows.iter().map(|r| r.0).collect(),
        gamma_plus: rows.iter().map(|r| r.1).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivateInterval {
    pub tau_minus: f64,
    pub tau_plus: f64,
    /// Set when independent noise draws pushed the lower end above the upper end.
    pub crossed: bool,
}

/// Noised means of the bound scores, widened by `c (sigma1 + b_mu / (2 sqrt n))`
/// with `c = Phi^-1(1 - beta/2)`. Uses noise releases 0 and 1 of `seed`.
pub fn private_interval(bounds: &BoundScores, sigma1_sq: f64, beta: f64, b_mu: f64, seed: Seed) -> Result<PrivateInterval> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param(format!("beta must lie in (0, 1), got {beta}")));
    }
    let n = bounds.n();
    if n == 0 {
        return Err(Error::param("no bound scores"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let c = std_normal_quantile(1.0 - beta / 2.0);
    let widen = c * (sigma1_sq.sqrt() + b_mu / (2.0 * (n as f64).sqrt()));
    let lo = add_gaussian_noise(mean(&bounds.gamma_minus), sigma1_sq, NoiseKey::new(seed, 0))? - widen;
    let hi = add_gaussian_noise(mean(&bounds.gamma_plus), sigma1_sq, NoiseKey::new(seed, 1))? + widen;
    Ok(PrivateInterval { tau_minus: lo, tau_plus: hi, crossed: lo > hi })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    Bootstrap,
    Pointwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub method: CiMethod,
    pub alpha: f64,
    pub beta: f64,
    pub r: Option<usize>,
    pub tau_minus: f64,
    pub tau_plus: f64,
    pub mu_total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_folds, Matrix};
    use rand::Rng;
    use crate::nuisance::LearnerSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn hand_quantiles() {
        let mut reps = [2.0, 0.0, 1.0];
        assert_eq!(debiased_quantile_bounds(&mut reps, 1.0, 1.0), (1.0, 1.0));
        assert_eq!(debiased_quantile_bounds(&mut reps, 1.0, 0.5), (0.0, 2.0));
        assert_eq!(rank_quantile(&[0.0, 1.0, 2.0], 0.0), 0.0);
        assert_eq!(rank_quantile(&[0.0, 1.0, 2.0], 1.0), 2.0);
    }

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut rng = Seed(seed).rng();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i % 3 != 0))).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.3 * x[i] + 0.2 * a[i] + rng.random_range(-0.1..0.1)).collect();
        Dataset::new(Matrix::new(n, 1, x).unwrap(), a, y).unwrap()
    }

    #[test]
    fn constant_learner_has_no_spread() {
        let data = Dataset::new(
            Matrix::new(60, 1, (0..60).map(f64::from).collect()).unwrap(),
            (0..60).map(|i| f64::from(i % 2)).collect(),
            vec![0.25; 60],
        )
        .unwrap();
        let folds = split_folds(60, 3, Seed(1)).unwrap();
        let bounds = Bounds::new(1.0, 4.0).unwrap();
        let c = LearnerSpec::Constant;
        let pair = LearnerPair { propensity: &c, outcome: &c };
        let b = bootstrap_bounds(&data, &folds, pair, EstimatorKind::G, &bounds, BootstrapSettings { r: 5, alpha: 0.1 }, Seed(2))
            .unwrap();
        assert_eq!(b.gamma_minus, b.gamma_plus);
        assert!(b.gamma_minus.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn bootstrap_validation() {
        let data = toy_data(12, 1);
        let folds = split_folds(12, 3, Seed(1)).unwrap();
        let bounds = Bounds::new(1.0, 4.0).unwrap();
        let c = LearnerSpec::Constant;
        let pair = LearnerPair { propensity: &c, outcome: &c };
        let s = BootstrapSettings { r: 1, alpha: 0.1 };
        assert!(bootstrap_bounds(&data, &folds, pair, EstimatorKind::G, &bounds, s, Seed(2)).is_err());
        let tiny = FoldAssignment::from_labels(vec![0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1], 2).unwrap();
        let s = BootstrapSettings { r: 5, alpha: 0.1 };
        assert!(matches!(
            bootstrap_bounds(&data, &tiny, pair, EstimatorKind::G, &bounds, s, Seed(2)),
            Err(Error::FoldTooSmall { .. })
        ));
    }

    #[test]
    fn bootstrap_nests_point_scores_and_is_deterministic() {
        let data = toy_data(60, 3);
        let folds = split_folds(60, 3, Seed(4)).unwrap();
        let bounds = Bounds::new(1.0, 4.0).unwrap();
        let (c, lin) = (LearnerSpec::Constant, LearnerSpec::linear());
        let pair = LearnerPair { propensity: &c, outcome: &lin };
        let s = BootstrapSettings { r: 30, alpha: 0.1 };
        let b = bootstrap_bounds(&data, &folds, pair, EstimatorKind::G, &bounds, s, Seed(5)).unwrap();
        let models: Vec<NuisanceTriple> = (0..3)
            .map(|k| fit_triple(&data, folds.members(k), &c, &lin, &bounds, fold_seed(Seed(5), k)).unwrap())
            .collect();
        for i in 0..60 {
            let own = folds.fold_of(i);
            let g: f64 = (0..3)
                .filter(|&k| k != own)
                .map(|k| triple_score(EstimatorKind::G, &models[k], data.x(i), 0.0, 0.0))
                .sum::<f64>()
                / 2.0;
            assert!(b.gamma_minus[i] <= g + 1e-12 && g <= b.gamma_plus[i] + 1e-12);
        }
        assert!(b.gamma_minus.iter().zip(&b.gamma_plus).any(|(l, h)| h > l));
        assert_eq!(b, bootstrap_bounds(&data, &folds, pair, EstimatorKind::G, &bounds, s, Seed(5)).unwrap());
    }

    #[test]
    fn pointwise_examples() {
        let data = toy_data(6, 1);
        let folds = split_folds(6, 2, Seed(1)).unwrap();
        let zero_var: Vec<Box<dyn CateVarianceModel>> =
            vec![Box::new(|_: &[f64]| (0.4, 0.0)), Box::new(|_: &[f64]| (3.0, 0.0))];
        let b = pointwise_variance_bounds(&data, &folds, &zero_var, 1.0, 0.05).unwrap();
        for i in 0..6 {
            let expected = if folds.fold_of(i) == 0 { 2.0 } else { 0.4 };
            assert_eq!(b.gamma_minus[i], expected);
            assert_eq!(b.gamma_plus[i], expected);
        }
        assert_relative_eq!(bonferroni_quantile(0.05, 1, 2), 2.241402727604947, max_relative = 1e-12);
        let negative: Vec<Box<dyn CateVarianceModel>> =
            vec![Box::new(|_: &[f64]| (0.0, -1.0)), Box::new(|_: &[f64]| (0.0, -1.0))];
        assert!(pointwise_variance_bounds(&data, &folds, &negative, 1.0, 0.05).is_err());
    }

    #[test]
    fn linear_cate_learner_recovers_effect() {
        let data = toy_data(300, 8);
        let rows: Vec<usize> = (0..300).collect();
        let m = LinearCateLearner.fit(&data, &rows).unwrap();
        assert!((m.cate(&[0.5]) - 0.2).abs() < 0.03);
        assert!(m.variance(&[0.5]) > 0.0 && m.variance(&[0.5]) < 1e-3);
    }

    #[test]
    fn private_interval_examples() {
        let b = BoundScores { gamma_minus: vec![0.1, 0.3], gamma_plus: vec![0.5, 0.7] };
        let iv = private_interval(&b, 0.0, 1.0 - 1e-15, 1.0, Seed(0)).unwrap();
        assert!((iv.tau_minus - 0.2).abs() < 1e-12 && (iv.tau_plus - 0.6).abs() < 1e-12);
        let flat = BoundScores { gamma_minus: vec![0.3; 4], gamma_plus: vec![0.3; 4] };
        let iv = private_interval(&flat, 0.0, 0.05, 1.0, Seed(0)).unwrap();
        assert_relative_eq!(iv.tau_minus, 0.3 - 1.959963984540054 * 0.25, max_relative = 1e-12);
        assert_relative_eq!(iv.tau_plus, 0.3 + 1.959963984540054 * 0.25, max_relative = 1e-12);
        assert!(private_interval(&flat, 0.0, 0.0, 1.0, Seed(0)).is_err());
    }

    proptest! {
        #[test]
        fn width_decomposes(
            lo in proptest::collection::vec(-2.0f64..0.0, 1..20),
            spread in 0.0f64..1.0,
            sigma in 0.0f64..0.5,
            beta in 0.01f64..0.5,
            seed in any::<u64>(),
        ) {
            let n = lo.len();
            let hi: Vec<f64> = lo.iter().map(|v| v + spread).collect();
            let b = BoundScores { gamma_minus: lo.clone(), gamma_plus: hi };
            let s2 = sigma * sigma;
            let iv = private_interval(&b, s2, beta, 1.0, Seed(seed)).unwrap();
            let c = std_normal_quantile(1.0 - beta / 2.0);
            let floor = 2.0 * c * (sigma + 1.0 / (2.0 * (n as f64).sqrt()));
            let z0 = add_gaussian_noise(0.0, s2, NoiseKey::new(Seed(seed), 0)).unwrap();
            let z1 = add_gaussian_noise(0.0, s2, NoiseKey::new(Seed(seed), 1)).unwrap();
            let width = iv.tau_plus - iv.tau_minus;
            prop_assert!((width - (spread + z1 - z0 + floor)).abs() < 1e-9);
            let quiet = private_interval(&b, 0.0, beta, 1.0, Seed(seed)).unwrap();
            prop_assert!(quiet.tau_plus - quiet.tau_minus >= 2.0 * c / (2.0 * (n as f64).sqrt()) - 1e-12);
        }

        #[test]
        fn debiased_bounds_nest_base(reps in proptest::collection::vec(-3.0f64..3.0, 2..50), base in -3.0f64..3.0, alpha in 0.001f64..=1.0) {
            let mut reps = reps;
            let (lo, hi) = debiased_quantile_bounds(&mut reps, base, alpha);
            prop_assert!(lo <= base && base <= hi);
        }
    }
}
