//! Experiment configuration: preset defaults, JSON loading and flag
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::chains::ChainSpec;

pub const PRESETS: [&str; 8] = [
    "dichotomy",
    "identity-audit",
    "scale-audit",
    "sandwich",
    "killing-survival",
    "vc-audit",
    "visits-geometric",
    "density",
];

/// Killing profile flags shared by the killing presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KillingParams {
    pub gamma: f64,
    /// Origin of the profile; each network's own origin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<usize>,
    /// Exponent of the superdiffusivity statistic.
    pub r: f64,
}

impl Default for KillingParams {
    fn default() -> Self {
        Self { gamma: 3.0, origin: None, r: 2.0 }
    }
}

/// Preset tunables. Each preset fills the fields it uses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Residual budgets: one per chain for cut certification, or a single
    /// permadrop budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<usize>>,
    /// Largest state covered by Green's tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up_to: Option<usize>,
    /// Level pairs or `(n, m)` time pairs, depending on the preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    /// Stop walks once the remaining chance of the tracked event is below this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_range: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_seeds: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_scales: Option<Vec<usize>>,
    /// How far below the last scale each walk is run, in units of `log Z`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overshoots: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    #[serde(default)]
    pub chains: Vec<ChainSpec>,
    #[serde(default)]
    pub horizons: Vec<usize>,
    pub seeds: u64,
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub killing: KillingParams,
    #[serde(default)]
    pub params: Params,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

pub const DEFAULT_MASTER_SEED: u64 = 20240601;

fn constant_quarter() -> ChainSpec {
    ChainSpec::ConstantDrift { p: 0.25 }
}

/// `G(n) = (n + 2)^{-1}` up to normalization.
pub fn polynomial_chain() -> ChainSpec {
    ChainSpec::GreensProfile { profile: "poly".into(), c: Some(1.0), offset: 1.0 }
}

pub fn sharpness_chain() -> ChainSpec {
    ChainSpec::Sharpness { profile: "sqrt_log".into(), c: None, m: None }
}

impl ExperimentConfig {
    /// Default configuration of a preset.
    pub fn preset_default(name: &str) -> Result<Self, CliError> {
        if !PRESETS.contains(&name) {
            return Err(CliError::UnknownPreset(name.to_string()));
        }
        let mut cfg = Self {
            preset: name.to_string(),
            chains: Vec::new(),
            horizons: Vec::new(),
            seeds: 0,
            master_seed: DEFAULT_MASTER_SEED,
            workers: default_workers(),
            out: default_out().join(name),
            killing: KillingParams::default(),
            params: Params::default(),
        };
        let p = &mut cfg.params;
        match name {
            "identity-audit" => {
                cfg.chains = vec![constant_quarter(), polynomial_chain(), sharpness_chain()];
                p.up_to = Some(1000);
            }
            "dichotomy" => {
                cfg.chains = vec![polynomial_chain(), sharpness_chain()];
                cfg.horizons = vec![10_000, 100_000, 1_000_000];
                cfg.seeds = 50;
                p.budgets = Some(vec![0.5, 1e-3]);
                p.up_to = Some(50_000);
            }
            "visits-geometric" => {
                cfg.chains = vec![constant_quarter()];
                cfg.seeds = 10_000;
                p.level = Some(5);
                p.tol = Some(1e-12);
                p.up_to = Some(200);
            }
            "scale-audit" => {
                cfg.chains = vec![constant_quarter()];
                cfg.seeds = 100_000;
                p.pairs = Some(vec![(0, 1), (1, 3), (2, 3)]);
                p.scales = Some((2..=6).collect());
                p.walks = Some(20);
                p.budgets = Some(vec![1e-3]);
                p.tol = Some(1e-12);
                p.up_to = Some(200);
            }
            "sandwich" => {
                cfg.chains = vec![constant_quarter(), polynomial_chain()];
                cfg.seeds = 10_000;
                p.scales = Some((2..=6).collect());
                p.budgets = Some(vec![1e-3]);
                p.up_to = Some(20_000);
                p.n_max = Some(50_000_000);
                p.held_out_seeds = Some(1000);
                p.held_out_scales = Some(vec![2, 3, 4]);
                p.overshoots = Some(vec![8.0, 0.5]);
            }
            "density" => {
                cfg.chains = vec![polynomial_chain()];
                cfg.horizons = vec![10_000, 100_000];
                cfg.seeds = 50;
                p.up_to = Some(20_000);
            }
            "vc-audit" => {
                p.n_max = Some(40);
            }
            "killing-survival" => {
                cfg.chains = vec![constant_quarter()];
                cfg.seeds = 100;
                cfg.horizons = vec![1_000, 10_000, 100_000];
                p.pairs = Some(vec![(4, 2), (2, 4), (6, 3)]);
                p.walks = Some(100_000);
                p.n_range = Some((500, 2000));
                p.band = Some((0.7, 1.3));
            }
            _ => unreachable!(),
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        if !PRESETS.contains(&cfg.preset.as_str()) {
            return Err(CliError::UnknownPreset(cfg.preset));
        }
        Ok(cfg)
    }

    /// Structural checks shared by all presets.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::ConfigInvalid(m));
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizons must be strictly increasing".into());
        }
        if self.horizons.contains(&0) {
            return bad("horizons must be positive".into());
        }
        if !(self.killing.r.is_finite() && self.killing.gamma.is_finite()) {
            return bad("killing parameters must be finite".into());
        }
        Ok(())
    }

    /// The part of the configuration that determines the results.
    pub fn reproducible_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("workers");
            map.remove("out");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_has_defaults_that_round_trip() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset_default(name).unwrap();
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(serde_json::to_string(&back).unwrap(), text);
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(
            ExperimentConfig::preset_default("nope"),
            Err(CliError::UnknownPreset(_))
        ));
    }

    #[test]
    fn view_drops_workers() {
        let cfg = ExperimentConfig::preset_default("density").unwrap();
        let v = cfg.reproducible_view();
        assert!(v.get("workers").is_none() && v.get("out").is_none());
        assert!(v.get("seeds").is_some());
    }
}
