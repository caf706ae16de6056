//! The TOML run configuration. Every table is optional and unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use splatcast::deform::Stage1Config;
use splatcast::distill::Stage2Config;
use splatcast::eval::FUTURE_SPLIT;
use splatcast::forecast::Stage3Config;
use splatcast::io::synthetic::SyntheticSpec;
use splatcast::splat::RenderSettings;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the seed of every stage and of the generator when set.
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Single-threaded execution.
    pub deterministic: bool,
    /// Iterations between progress records.
    pub log_every: u64,
    /// Iterations between checkpoint writes during training; 0 writes only at the end.
    pub save_every: u64,
    /// Observed/future boundary used by `--future-split`.
    pub future_cutoff: f64,
    pub paths: Paths,
    pub generate: SyntheticSpec,
    pub render: RenderConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub stage3: Stage3Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: 0,
            deterministic: false,
            log_every: 100,
            save_every: 0,
            future_cutoff: FUTURE_SPLIT,
            paths: Paths::default(),
            generate: SyntheticSpec::default(),
            render: RenderConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            stage3: Stage3Config::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory holding the train and test manifests.
    pub data: Option<PathBuf>,
    /// Run directory for checkpoints and outputs.
    pub run: Option<PathBuf>,
}

/// Rasteriser settings; the background comes from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub cutoff_sigma: f64,
    pub min_alpha: f64,
    pub tile_size: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        let s = RenderSettings::default();
        Self {
            cutoff_sigma: s.cutoff_sigma,
            min_alpha: s.min_alpha,
            tile_size: s.tile_size,
        }
    }
}

impl RenderConfig {
    pub fn settings(&self, background: [f64; 3]) -> RenderSettings {
        RenderSettings {
            background,
            cutoff_sigma: self.cutoff_sigma,
            min_alpha: self.min_alpha,
            tile_size: self.tile_size,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(text)?;
        c.apply_seed();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.generate.seed = s;
            self.stage1.seed = s;
            self.stage2.seed = s;
            self.stage3.seed = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[stage1]\niteratons = 5\n").unwrap_err();
        assert!(format!("{err:#}").contains("iteratons"), "{err:#}");
        assert!(RunConfig::parse("seeed = 1").is_err());
        assert!(RunConfig::parse("[stage3.arch]\nwindows = 4").is_err());
    }

    #[test]
    fn nested_overrides_and_global_seed() {
        let c =
            RunConfig::parse("seed = 7\n[stage2]\nphase1 = 10\n[stage1.rates]\nposition = 0.5\n")
                .unwrap();
        assert_eq!(c.stage2.phase1, 10);
        assert_eq!(c.stage1.rates.position, 0.5);
        assert_eq!((c.stage1.seed, c.stage3.seed, c.generate.seed), (7, 7, 7));
        assert_eq!(c.stage1.iterations, Stage1Config::default().iterations);
    }
}
