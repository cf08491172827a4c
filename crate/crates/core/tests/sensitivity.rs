//! Brute-force checks of the sensitivity accounting on tiny datasets.

use dpcausal::aggregate::{AggregationScheme, SamplingMap};
use dpcausal::experiments::GeneratorKind;
use dpcausal::privacy::{sqrt_variance_sensitivity, unified_sensitivity};
use dpcausal::rng::tags;
use dpcausal::{Bounds, Dataset, EstimatorKind, LearnerSpec, Pipeline, PipelineConfig, PrivacyMode, SensitivityPair, Seed};

fn base(n: usize, seed: u64) -> Dataset {
    let data = GeneratorKind::MisspecifiedTrees.generate(n, Seed(seed)).unwrap();
    let y: Vec<f64> = data.outcome().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Dataset::new(data.covariates().clone(), data.treatment().to_vec(), y).unwrap()
}

fn neighbours(data: &Dataset) -> Vec<Dataset> {
    const GRID: [f64; 5] = [-1.0, -0.4, 0.0, 0.6, 1.0];
    let mut all = Vec::new();
    for i in 0..data.n() {
        for x0 in GRID {
            for x1 in GRID {
                for a in [0.0, 1.0] {
                    for y in GRID {
                        let mut cov = data.covariates().clone();
                        cov.set(i, 0, 2.0 * x0);
                        cov.set(i, 1, 2.0 * x1);
                        let mut treat = data.treatment().to_vec();
                        let mut out = data.outcome().to_vec();
                        treat[i] = a;
                        out[i] = y;
                        all.push(Dataset::new(cov, treat, out).unwrap());
                    }
                }
            }
        }
    }
    all
}

/// Largest changes of the point estimate and of `sqrt(V)` over all neighbours.
fn worst_change(cfg: PipelineConfig, data: &Dataset, seed: Seed) -> (f64, f64, usize) {
    let pipeline = Pipeline::new(cfg).unwrap();
    let folds = pipeline.folds_for(data, seed).unwrap();
    let run = |d: &Dataset| pipeline.run_with_folds(d, folds.clone(), seed).unwrap().estimate;
    let b = run(data);
    let (mut dt, mut dv) = (0.0f64, 0.0f64);
    for d in neighbours(data) {
        let e = run(&d);
        dt = dt.max((e.tau_dp - b.tau_dp).abs());
        dv = dv.max((e.v_dp.sqrt() - b.v_dp.sqrt()).abs());
    }
    let load = SamplingMap::draw(&folds, seed.derive(tags::SAMPLING)).max_load();
    (dt, dv, load)
}

fn learners(kind: EstimatorKind) -> (LearnerSpec, LearnerSpec) {
    match kind {
        EstimatorKind::G => (LearnerSpec::Constant, LearnerSpec::tree()),
        _ => (LearnerSpec::logistic(), LearnerSpec::linear()),
    }
}

#[test]
fn complete_means_bounds_hold_exhaustively() {
    let (n, k) = (10, 3);
    let bounds = Bounds::new(1.0, 4.0).unwrap();
    let data = base(n, 1);
    for kind in EstimatorKind::ALL {
        let (pi, mu) = learners(kind);
        let cfg = PipelineConfig::new(kind, k, bounds, PrivacyMode::NonPrivate).with_learners(pi, mu);
        let (dt, dv, _) = worst_change(cfg, &data, Seed(2));
        let s = SensitivityPair::for_kind(kind, &bounds, AggregationScheme::CompleteMeans, n, k, 0).unwrap();
        assert!(dt <= unified_sensitivity(&s, n, k), "{kind}: {dt}");
        assert!(dv <= sqrt_variance_sensitivity(&s, n, k).unwrap(), "{kind}: {dv}");
        assert!(dt > 0.0);
    }
}

#[test]
fn sampling_bounds_hold_exhaustively() {
    let (n, k) = (10, 3);
    let bounds = Bounds::new(1.0, 4.0).unwrap();
    let data = base(n, 3);
    for kind in EstimatorKind::ALL {
        let (pi, mu) = learners(kind);
        let cfg = PipelineConfig::new(kind, k, bounds, PrivacyMode::NonPrivate)
            .with_learners(pi, mu)
            .with_scheme(AggregationScheme::Sampling);
        let (dt, dv, load) = worst_change(cfg, &data, Seed(4));
        let s = SensitivityPair::for_kind(kind, &bounds, AggregationScheme::Sampling, n, k, load).unwrap();
        assert!(dt <= unified_sensitivity(&s, n, k), "{kind}: {dt}");
        assert!(dv <= sqrt_variance_sensitivity(&s, n, k).unwrap(), "{kind}: {dv}");
    }
}

#[test]
fn noise_scale_follows_scheme() {
    let data = base(60, 5);
    let bounds = Bounds::new(1.0, 4.0).unwrap();
    let privacy = PrivacyMode::even(1.0).unwrap();
    let cm = Pipeline::new(PipelineConfig::new(EstimatorKind::Aipw, 3, bounds, privacy)).unwrap();
    let est = cm.run(&data, Seed(1)).unwrap().estimate;
    let c = dpcausal::privacy::estimator_constant(EstimatorKind::Aipw, &bounds);
    let (mu_ate, _) = privacy.budgets();
    let expected = dpcausal::privacy::sigma1_squared(c, mu_ate, 60, 3).unwrap();
    assert_eq!(est.sigma1_sq, expected);

    let custom = SensitivityPair::new(1.0, 2.0, 3.0).unwrap();
    let mut cfg = PipelineConfig::new(EstimatorKind::Aipw, 3, bounds, privacy);
    cfg.sensitivity = Some(custom);
    let est = Pipeline::new(cfg).unwrap().run(&data, Seed(1)).unwrap().estimate;
    let sens: f64 = 1.0 / 60.0 + 2.0 / 3.0;
    assert!((est.sigma1_sq - (sens / mu_ate.mu).powi(2)).abs() < 1e-15);
}
