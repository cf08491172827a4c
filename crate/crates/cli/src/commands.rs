use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dpcausal::experiments::{run_sweep, GeneratorKind, SweepGrid};
use dpcausal::intervals::BootstrapSettings;
use dpcausal::meta::{self, StudyRecord, Weighting};
use dpcausal::privacy::{compose, epsilon_for_delta, gdp_to_approx_dp, REPORT_DELTA};
use dpcausal::rng::tags;
use dpcausal::estimators::EstimateReport;
use dpcausal::{
    AggregationScheme, Bounds, Dataset, EstimatorKind, LearnerSpec, Pipeline, PipelineConfig, PrivacyBudget, PrivacyMode,
    Seed,
};
use serde_json::{json, Value};

use crate::config::Config;
use crate::error::CliError;

fn seed(cfg: &Config) -> Result<Seed, CliError> {
    Ok(Seed(cfg.get("seed")?))
}

fn generator(cfg: &Config) -> Result<GeneratorKind, CliError> {
    let name: String = cfg.get("generator")?;
    name.parse().map_err(|e: dpcausal::Error| CliError::Config(e.to_string()))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn with_config(mut value: Value, cfg: &Config) -> Value {
    if let Value::Object(map) = &mut value {
        map.insert("config".into(), cfg.to_json());
    }
    value
}

/// Records from `data`, or generated from `generator` and `n` with the data substream of the seed.
pub fn load_data(cfg: &Config) -> Result<Dataset, CliError> {
    if let Some(path) = cfg.raw("data") {
        let path = PathBuf::from(path);
        if !path.is_file() {
            return Err(CliError::Config(format!("data file {} does not exist", path.display())));
        }
        return Dataset::read_csv_path(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())));
    }
    if cfg.raw("generator").is_some() {
        let n: usize = cfg.get("n")?;
        return Ok(generator(cfg)?.generate(n, seed(cfg)?.derive(tags::DATA))?);
    }
    Err(CliError::Config("set either 'data' or 'generator' and 'n'".into()))
}

pub fn privacy_mode(cfg: &Config) -> Result<PrivacyMode, CliError> {
    if cfg.flag("non_private")? {
        return Ok(PrivacyMode::NonPrivate);
    }
    let mu: f64 = cfg.get("mu")?;
    let total = PrivacyBudget::new(mu)?;
    if total.is_non_private() {
        return Err(CliError::Privacy("mu = 0 without non_private = true; refusing to release".into()));
    }
    let split: f64 = cfg.get("split")?;
    if !(split > 0.0 && split < 1.0) {
        return Err(CliError::Config(format!("split must lie in (0, 1), got {split}")));
    }
    Ok(PrivacyMode::Gdp { mu_ate: mu * split.sqrt(), mu_var: mu * (1.0 - split).sqrt() })
}

pub fn pipeline_config(cfg: &Config) -> Result<PipelineConfig, CliError> {
    let parse_err = |e: dpcausal::Error| CliError::Config(e.to_string());
    let kind: EstimatorKind = cfg.get::<String>("kind")?.parse().map_err(parse_err)?;
    let scheme: AggregationScheme = cfg.get::<String>("scheme")?.parse().map_err(parse_err)?;
    let bounds = Bounds::new(cfg.get("b_mu")?, cfg.get("b_pi")?).map_err(parse_err)?;
    let learner_pi = LearnerSpec::from_name(&cfg.get::<String>("learner_pi")?).map_err(parse_err)?;
    let learner_mu = LearnerSpec::from_name(&cfg.get::<String>("learner_mu")?).map_err(parse_err)?;
    let mut pc = PipelineConfig::new(kind, cfg.get("k")?, bounds, privacy_mode(cfg)?)
        .with_learners(learner_pi, learner_mu)
        .with_scheme(scheme);
    pc.alpha = cfg.get("alpha")?;
    pc.alpha1 = cfg.get("alpha1")?;
    pc.validate().map_err(parse_err)?;
    Ok(pc)
}

pub fn generate(cfg: &Config) -> Result<String, CliError> {
    let out: PathBuf = cfg.get("out")?;
    let data = load_data(&{
        let mut c = cfg.clone();
        c.set("data", "");
        c
    })?;
    data.write_csv_path(&out).map_err(|e| CliError::Io(format!("cannot write {}: {e}", out.display())))?;
    Ok(format!("wrote {} records ({} covariates) to {}\n", data.n(), data.d(), out.display()))
}

pub fn estimate(cfg: &Config) -> Result<(Value, String), CliError> {
    let pc = pipeline_config(cfg)?;
    let data = load_data(cfg)?;
    let run_seed = seed(cfg)?;
    let pipeline = Pipeline::new(pc.clone())?;
    let est = pipeline.run(&data, run_seed)?.estimate;
    let report = est.report(run_seed);
    let mut value = with_config(serde_json::to_value(&report)?, cfg);
    let mut text = String::new();
    writeln!(text, "tau_dp = {:.6}", est.tau_dp).unwrap();
    if let Some(t) = est.tau_nonprivate {
        writeln!(text, "non-private mode: no privacy guarantee (tau_hat = {t:.6})").unwrap();
    }
    let method: String = cfg.get("ci")?;
    match method.as_str() {
        "asymptotic" => {
            if let Some((lo, hi)) = est.ci {
                writeln!(text, "{:.0}% CI (asymptotic) = [{lo:.6}, {hi:.6}]", 100.0 * (1.0 - pc.alpha)).unwrap();
            }
        }
        "bootstrap" => {
            let settings = BootstrapSettings { r: cfg.get("r")?, alpha: pc.alpha };
            let mu_ci = if pc.privacy == PrivacyMode::NonPrivate {
                PrivacyBudget::non_private()
            } else {
                let m = PrivacyBudget::new(cfg.get("mu_ci")?)?;
                if m.is_non_private() {
                    return Err(CliError::Privacy("mu_ci = 0 in private mode; refusing to release".into()));
                }
                m
            };
            let (interval, ci_report) = pipeline.bootstrap_ci(&data, settings, cfg.get("beta")?, mu_ci, run_seed)?;
            writeln!(text, "bootstrap CI = [{:.6}, {:.6}]", interval.tau_minus, interval.tau_plus).unwrap();
            if interval.crossed {
                writeln!(text, "warning: interval end points crossed after noise").unwrap();
            }
            let all = compose(&[est.mu_total(), PrivacyBudget { mu: ci_report.mu_total }]);
            if let Value::Object(map) = &mut value {
                map.insert("bootstrap_ci".into(), serde_json::to_value(&ci_report)?);
                map.insert("mu_total_with_ci".into(), json!(all.mu));
                if !all.is_non_private() {
                    map.insert("epsilon_at_1e-5_with_ci".into(), json!(epsilon_for_delta(all, REPORT_DELTA)?));
                }
            }
        }
        other => return Err(CliError::Config(format!("unknown ci method '{other}' (expected asymptotic or bootstrap)"))),
    }
    match report.epsilon_at_1e_5 {
        Some(eps) => writeln!(text, "privacy: {:.4}-GDP = ({eps:.4}, {REPORT_DELTA:e})-DP", report.mu_total).unwrap(),
        None => writeln!(text, "privacy: none").unwrap(),
    }
    for w in &report.warnings {
        writeln!(text, "warning: {w}").unwrap();
    }
    if let Some(out) = cfg.raw("out") {
        write_json(Path::new(out), &value)?;
    }
    Ok((value, text))
}

pub fn sweep(cfg: &Config) -> Result<String, CliError> {
    let gen = generator(cfg)?;
    let out_dir: PathBuf = cfg.get("out_dir")?;
    let mut base_cfg = cfg.clone();
    base_cfg.set("non_private", "true");
    let base = pipeline_config(&base_cfg)?;
    let kinds = cfg
        .get_list::<String>("kinds")?
        .iter()
        .map(|s| s.parse::<EstimatorKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let grid = SweepGrid { ks: cfg.get_list("ks")?, mus: cfg.get_list("mus")?, ns: cfg.get_list("ns")?, kinds };
    grid.cells().map_err(|e| CliError::Config(e.to_string()))?;
    if grid.mus.iter().any(|m| !(*m >= 0.0)) {
        return Err(CliError::Config("sweep budgets must be >= 0".into()));
    }
    let reps: usize = cfg.get("reps")?;
    let results = run_sweep(gen, &base, &grid, reps, seed(cfg)?)?;
    std::fs::create_dir_all(&out_dir)?;
    let mut summary =
        String::from("kind,n,k,mu,reps,true_ate,mean,sd,se,bias,rmse,coverage,mean_v_dp,table\n");
    for (cell, table) in &results {
        let name = format!("{}_n{}_k{}_mu{}.csv", cell.kind, cell.n, cell.k, cell.mu);
        let file = std::fs::File::create(out_dir.join(&name))?;
        table.write_csv(file)?;
        let s = &table.summary;
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{name}",
            cell.kind, cell.n, cell.k, cell.mu, s.reps, s.true_ate, s.mean, s.sd, s.se, s.bias, s.rmse, s.coverage, s.mean_v_dp
        )
        .unwrap();
    }
    std::fs::write(out_dir.join("summary.csv"), &summary)?;
    write_json(&out_dir.join("sweep.json"), &with_config(json!({ "cells": results.len() }), cfg))?;
    std::fs::write(out_dir.join("run.cfg"), cfg.to_text())?;
    Ok(format!("{} cells x {reps} replications written to {}\n", results.len(), out_dir.display()))
}

fn read_studies(path: &Path) -> Result<Vec<StudyRecord>, CliError> {
    if path.is_dir() {
        return meta::load_studies(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let report: EstimateReport =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(vec![StudyRecord::from_report(&report).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?])
}

pub fn meta(cfg: &Config, paths: &[PathBuf]) -> Result<(Value, String), CliError> {
    let weighting: Weighting = cfg.get::<String>("weighting")?.parse().map_err(|e: dpcausal::Error| CliError::Config(e.to_string()))?;
    let mut studies = Vec::new();
    for p in paths {
        studies.extend(read_studies(p)?);
    }
    let report = meta::report(&studies, weighting)?;
    let text = format!(
        "{} studies: tau_meta = {:.6} (se {:.6}); no additional privacy cost\n",
        report.n_studies, report.tau_meta, report.se
    );
    let mut value = with_config(serde_json::to_value(&report)?, cfg);
    if let Value::Object(map) = &mut value {
        map.insert("inputs".into(), json!(paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>()));
    }
    if let Some(out) = cfg.raw("out") {
        write_json(Path::new(out), &value)?;
    }
    Ok((value, text))
}

pub fn convert_privacy(mu: f64, epsilon: Option<f64>, delta: Option<f64>) -> Result<Value, CliError> {
    let budget = PrivacyBudget::new(mu)?;
    if budget.is_non_private() {
        return Err(CliError::Privacy("mu must be positive".into()));
    }
    Ok(match (epsilon, delta) {
        (Some(_), Some(_)) => return Err(CliError::Config("give at most one of --epsilon and --delta".into())),
        (Some(eps), None) => json!({ "mu": mu, "epsilon": eps, "delta": gdp_to_approx_dp(budget, eps)? }),
        (None, d) => {
            let delta = d.unwrap_or(REPORT_DELTA);
            json!({ "mu": mu, "epsilon": epsilon_for_delta(budget, delta)?, "delta": delta })
        }
    })
}
