//! Flat `key = value` run configuration.
//!
//! Values are resolved in order: built-in defaults, the config file, the
//! `DPCAUSAL_SEED` environment variable (seed only), `--set` overrides and
//! finally dedicated command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

pub const SEED_ENV: &str = "DPCAUSAL_SEED";

/// Every recognized key with its default ("" means unset).
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed (u64)"),
    ("data", "", "input CSV with columns x0..x{d-1}, a, y"),
    ("generator", "", "low_overlap | misspecified_trees | good_overlap_binary | effect_of_k"),
    ("n", "", "number of generated records"),
    ("out", "", "output file"),
    ("out_dir", "", "output directory (sweep)"),
    ("kind", "aipw", "g | ipw | aipw"),
    ("k", "5", "number of folds"),
    ("b_mu", "1", "outcome bound B_mu"),
    ("b_pi", "10", "inverse propensity bound B_pi (>= 2)"),
    ("learner_pi", "logistic", "propensity learner: constant | linear | logistic | tree | forest"),
    ("learner_mu", "linear", "outcome learner: constant | linear | logistic | tree | forest"),
    ("scheme", "complete_means", "complete_means | sampling"),
    ("mu", "1.5", "total GDP budget of the ATE and variance releases"),
    ("split", "0.5", "share of mu^2 spent on the ATE release"),
    ("non_private", "false", "disable noise (mu is ignored)"),
    ("alpha", "0.05", "CI miscoverage"),
    ("alpha1", "0.02", "miscoverage reserved for the variance noise"),
    ("ci", "asymptotic", "asymptotic | bootstrap"),
    ("r", "200", "bootstrap replications"),
    ("beta", "0.05", "bootstrap interval widening level"),
    ("mu_ci", "1", "GDP budget of each bootstrap interval end point"),
    ("reps", "100", "replications per sweep cell"),
    ("ks", "", "sweep fold counts, comma separated"),
    ("mus", "", "sweep budgets, comma separated (0 = non-private)"),
    ("ns", "", "sweep sample sizes, comma separated"),
    ("kinds", "", "sweep estimators, comma separated"),
    ("weighting", "inverse_std_error", "meta weights: inverse_std_error | inverse_variance"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn parse_pair(line: &str) -> Result<(String, String), CliError> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected key=value, got '{line}'")))?;
    let key = k.trim().to_string();
    if !SCHEMA.iter().any(|(name, _, _)| *name == key) {
        return Err(CliError::Config(format!("unknown config key '{key}'")));
    }
    Ok((key, v.trim().to_string()))
}

impl Config {
    pub fn defaults() -> Self {
        Config { values: SCHEMA.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }

    /// Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = parse_pair(line).map_err(|e| CliError::Config(format!("line {}: {e}", no + 1)))?;
            self.values.insert(k, v);
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn apply_set(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = parse_pair(pair)?;
        self.values.insert(k, v);
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(SCHEMA.iter().any(|(name, _, _)| *name == key));
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn resolve(
        file: Option<&Path>,
        env_seed: Option<String>,
        sets: &[String],
        flags: &[(&str, String)],
    ) -> Result<Self, CliError> {
        let mut cfg = Config::defaults();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        if let Some(seed) = env_seed {
            cfg.set("seed", seed);
        }
        for pair in sets {
            cfg.apply_set(pair)?;
        }
        for (k, v) in flags {
            cfg.set(k, v);
        }
        cfg.get::<u64>("seed")?;
        Ok(cfg)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key).ok_or_else(|| CliError::Config(format!("missing required key '{key}'")))?;
        raw.parse().map_err(|e| CliError::Config(format!("bad value for '{key}' ({raw}): {e}")))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.raw(key) else { return Ok(Vec::new()) };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Config(format!("bad entry '{s}' in '{key}': {e}"))))
            .collect()
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key).unwrap_or("false") {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::Config(format!("bad value for '{key}': expected true or false, got '{other}'"))),
        }
    }

    /// The resolved configuration, suitable for embedding in reports.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(self.values.iter().map(|(k, v)| (k.clone(), v.clone().into())).collect())
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn schema_help() -> String {
    let mut s = String::from("config keys (key = value, '#' starts a comment):\n");
    for (k, default, doc) in SCHEMA {
        let d = if default.is_empty() { String::new() } else { format!(" [default: {default}]") };
        s.push_str(&format!("  {k:<12} {doc}{d}\n"));
    }
    s.push_str(&format!("{SEED_ENV} overrides the config-file seed; --seed and --set override both.\n"));
    s
}
