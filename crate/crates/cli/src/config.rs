use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use biocompass::baselines::BaselineConfig;
use biocompass::data::SyntheticSpec;
use biocompass::eval::{AblationConfig, ModelOptions, Protocol};
use biocompass::train::TrainConfig;

pub const SEED_ENV: &str = "BIOCOMPASS_SEED";

/// Everything a run reads, loadable from one TOML file. Command-line flags
/// override individual fields after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Cohort CSV; when absent the synthetic spec below is generated.
    pub data: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub model: ModelOptions,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub protocol: Protocol,
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    /// Weight fold metrics by test-set size when averaging.
    pub weighted: bool,
    pub baselines: BaselineSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Signature definition file; the built-in placeholders when absent.
    pub signatures: Option<PathBuf>,
    pub l2: f64,
    pub pca_components: usize,
    pub per_signature: bool,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let d = BaselineConfig::default();
        Self {
            signatures: None,
            l2: d.l2,
            pca_components: d.pca_components,
            per_signature: d.per_signature,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Seed list: config value, else `BIOCOMPASS_SEED` as a single seed,
    /// else `[0, 1, 2, 3]`.
    pub fn seed_list(&self) -> Result<Vec<u64>> {
        if let Some(s) = &self.seeds {
            if s.is_empty() {
                bail!("seed list is empty");
            }
            return Ok(s.clone());
        }
        Ok(match env_seed()? {
            Some(s) => vec![s],
            None => vec![0, 1, 2, 3],
        })
    }

    /// Single seed for commands that take one: first configured seed, else
    /// `BIOCOMPASS_SEED`, else 0.
    pub fn single_seed(&self) -> Result<u64> {
        if let Some(s) = self.seeds.as_ref().and_then(|s| s.first()) {
            return Ok(*s);
        }
        Ok(env_seed()?.unwrap_or(0))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1).max(1)
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got `{v}`")),
        Err(_) => Ok(None),
    }
}

pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().with_context(|| format!("bad seed `{t}`")))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        bail!("seed list is empty");
    }
    Ok(seeds)
}
