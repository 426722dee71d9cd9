//! Command-line harness: presets, configuration and reporting.
//!
//! Every run writes `config.json` (the resolved configuration) and
//! `summary.json` (results without worker count or timings) to the output
//! directory, next to the preset's CSV files.

pub mod config;
pub mod presets;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use serde_json::json;
use thiserror::Error;

pub use config::{ExperimentConfig, KillingParams, Params, PRESETS};

use crate::construct::profiles::stock_profiles;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownPreset(_) | CliError::ConfigInvalid(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}

/// Result of a preset run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub pass: bool,
    pub summary: serde_json::Value,
    pub out: PathBuf,
}

/// Runs a preset and writes `config.json` and `summary.json` into `cfg.out`.
pub fn run_preset(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.json"), serde_json::to_string_pretty(cfg).expect("serializable"))?;
    let outcome = presets::run(cfg, &cfg.out)?;
    let summary = json!({
        "preset": cfg.preset,
        "config": cfg.reproducible_view(),
        "pass": outcome.pass,
        "results": outcome.results,
    });
    std::fs::write(
        cfg.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
    )?;
    Ok(RunReport { pass: outcome.pass, summary, out: cfg.out.clone() })
}

#[derive(Debug, Parser)]
#[command(name = "cutlab", version, about = "Cut-time experiments for transient birth-death chains and killed walks")]
pub struct Args {
    /// Preset to run (see --help for the list)
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    pub preset: Option<String>,
    /// JSON configuration; flags given alongside override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Comma-separated, strictly increasing
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exponent of the killing profile
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Origin of the killing profile
    #[arg(long)]
    pub origin: Option<usize>,
    /// Exponent of the superdiffusivity statistic
    #[arg(long)]
    pub r: Option<f64>,
    /// Print the built-in decay profiles and exit
    #[arg(long)]
    pub list_profiles: bool,
}

impl Args {
    /// Resolves the configuration from `--config`, `--preset` and overrides.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), preset) => {
                let cfg = ExperimentConfig::load(path)?;
                if let Some(p) = preset {
                    if *p != cfg.preset {
                        return Err(CliError::ConfigInvalid(format!(
                            "--preset {p} conflicts with config preset {}",
                            cfg.preset
                        )));
                    }
                }
                cfg
            }
            (None, Some(p)) => ExperimentConfig::preset_default(p)?,
            (None, None) => {
                return Err(CliError::ConfigInvalid("one of --preset or --config is required".into()))
            }
        };
        if let Some(s) = self.seeds {
            cfg.seeds = s;
        }
        if let Some(s) = self.master_seed {
            cfg.master_seed = s;
        }
        if let Some(h) = &self.horizons {
            cfg.horizons = h.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(g) = self.gamma {
            cfg.killing.gamma = g;
        }
        if let Some(o) = self.origin {
            cfg.killing.origin = Some(o);
        }
        if let Some(r) = self.r {
            cfg.killing.r = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if args.list_profiles {
        for p in stock_profiles() {
            println!("{}\tconvex from {}", p.name(), p.convex_from());
        }
        return 0;
    }
    let cfg = match args.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let start = Instant::now();
    match run_preset(&cfg) {
        Ok(rep) => {
            let verdict = if rep.pass { "PASS" } else { "FAIL" };
            eprintln!(
                "{} {verdict} in {:.1}s, outputs in {}",
                cfg.preset,
                start.elapsed().as_secs_f64(),
                rep.out.display()
            );
            i32::from(!rep.pass)
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
