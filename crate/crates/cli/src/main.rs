mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{schema_help, Config, SEED_ENV};
use error::CliError;

#[derive(Parser)]
#[command(name = "dpcausal", version, about = "Differentially private ATE estimation with cross-fitted nuisances")]
#[command(after_help = "Exit codes: 0 success, 1 i/o failure, 2 config error, 3 data error, 4 privacy-contract violation.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat key = value config file (see `dpcausal keys`).
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Master seed; overrides the config file and DPCAUSAL_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to CSV.
    Generate {
        #[arg(long, short = 'g')]
        generator: Option<String>,
        #[arg(long, short = 'n')]
        n: Option<usize>,
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the private pipeline on a CSV file or a generated dataset.
    Estimate {
        #[arg(long, short = 'd')]
        data: Option<PathBuf>,
        #[arg(long, short = 'g')]
        generator: Option<String>,
        #[arg(long, short = 'n')]
        n: Option<usize>,
        /// g, ipw or aipw.
        #[arg(long)]
        kind: Option<String>,
        /// Number of folds.
        #[arg(long, short = 'k')]
        k: Option<usize>,
        /// Total GDP budget.
        #[arg(long)]
        mu: Option<f64>,
        /// Release without noise and without any privacy guarantee.
        #[arg(long)]
        non_private: bool,
        /// asymptotic or bootstrap.
        #[arg(long)]
        ci: Option<String>,
        /// JSON report path; printed to stdout when absent.
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Replicate the pipeline over a grid of K, mu, n and estimators.
    Sweep {
        #[arg(long, short = 'g')]
        generator: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Combine released estimate reports (files or directories of *.json).
    Meta {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// inverse_std_error or inverse_variance.
        #[arg(long)]
        weighting: Option<String>,
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a mu-GDP budget to (epsilon, delta)-DP.
    ConvertPrivacy {
        #[arg(long)]
        mu: f64,
        /// Report delta at this epsilon.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Report the smallest epsilon at this delta (default 1e-5).
        #[arg(long)]
        delta: Option<f64>,
    },
    /// List the config keys and their defaults.
    Keys,
}

fn push<T: ToString>(flags: &mut Vec<(&'static str, String)>, key: &'static str, v: Option<T>) {
    if let Some(v) = v {
        flags.push((key, v.to_string()));
    }
}

fn resolve(common: &Common, mut flags: Vec<(&'static str, String)>) -> Result<Config, CliError> {
    push(&mut flags, "seed", common.seed);
    let env_seed = std::env::var(SEED_ENV).ok();
    Config::resolve(common.config.as_deref(), env_seed, &common.sets, &flags)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { generator, n, out, common } => {
            let mut flags = Vec::new();
            push(&mut flags, "generator", generator);
            push(&mut flags, "n", n);
            push(&mut flags, "out", out.map(|p| p.display().to_string()));
            let cfg = resolve(&common, flags)?;
            print!("{}", commands::generate(&cfg)?);
        }
        Command::Estimate { data, generator, n, kind, k, mu, non_private, ci, out, common } => {
            let mut flags = Vec::new();
            push(&mut flags, "data", data.map(|p| p.display().to_string()));
            push(&mut flags, "generator", generator);
            push(&mut flags, "n", n);
            push(&mut flags, "kind", kind);
            push(&mut flags, "k", k);
            push(&mut flags, "mu", mu);
            push(&mut flags, "non_private", non_private.then_some(true));
            push(&mut flags, "ci", ci);
            push(&mut flags, "out", out.map(|p| p.display().to_string()));
            let cfg = resolve(&common, flags)?;
            let (value, text) = commands::estimate(&cfg)?;
            if cfg.raw("out").is_some() {
                print!("{text}");
            } else {
                eprint!("{text}");
                println!("{}", serde_json::to_string_pretty(&value)?);
            }
        }
        Command::Sweep { generator, reps, out_dir, common } => {
            let mut flags = Vec::new();
            push(&mut flags, "generator", generator);
            push(&mut flags, "reps", reps);
            push(&mut flags, "out_dir", out_dir.map(|p| p.display().to_string()));
            let cfg = resolve(&common, flags)?;
            print!("{}", commands::sweep(&cfg)?);
        }
        Command::Meta { paths, weighting, out, common } => {
            let mut flags = Vec::new();
            push(&mut flags, "weighting", weighting);
            push(&mut flags, "out", out.map(|p| p.display().to_string()));
            let cfg = resolve(&common, flags)?;
            let (value, text) = commands::meta(&cfg, &paths)?;
            if cfg.raw("out").is_some() {
                print!("{text}");
            } else {
                eprint!("{text}");
                println!("{}", serde_json::to_string_pretty(&value)?);
            }
        }
        Command::ConvertPrivacy { mu, epsilon, delta } => {
            println!("{}", commands::convert_privacy(mu, epsilon, delta)?);
        }
        Command::Keys => print!("{}", schema_help()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dpcausal: {e}");
            e.exit_code()
        }
    }
}
