use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::FoldMetrics;
use super::report::{FoldResult, MetricsReport};
use crate::data::{prepare_fold, split_by_group, Dataset, GroupKey, PreparedFold, Schema};
use crate::error::{Error, Result};
use crate::model::{BioCompass, ModelConfig, Pooling};
use crate::train::{model_config_for, train, TrainConfig};

/// Leave-one-group-out protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Leave one cohort out.
    #[default]
    Loco,
    /// Leave one cancer type out.
    Locto,
    /// Leave one treatment target out.
    Loto,
}

impl Protocol {
    pub fn group_key(self) -> GroupKey {
        match self {
            Protocol::Loco => GroupKey::Cohort,
            Protocol::Locto => GroupKey::CancerType,
            Protocol::Loto => GroupKey::Treatment,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Loco => "loco",
            Protocol::Locto => "locto",
            Protocol::Loto => "loto",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loco" => Ok(Protocol::Loco),
            "locto" => Ok(Protocol::Locto),
            "loto" => Ok(Protocol::Loto),
            _ => Err(Error::Config(format!("unknown protocol `{s}` (expected loco, locto or loto)"))),
        }
    }
}

/// One-component-off switches. Gating is removed structurally; the other
/// three set their loss weight to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub disable_gating: bool,
    pub disable_pathway: bool,
    pub disable_aux: bool,
    pub disable_alignment: bool,
}

impl AblationConfig {
    pub fn apply(&self, model: &mut ModelConfig, train: &mut TrainConfig) {
        if self.disable_gating {
            model.gating = false;
        }
        if self.disable_pathway {
            train.weights.pathway = 0.0;
        }
        if self.disable_aux {
            train.weights.aux = 0.0;
        }
        if self.disable_alignment {
            train.weights.align = 0.0;
        }
    }

    /// The full model and the four single-component-off variants, named.
    pub fn table() -> [(&'static str, AblationConfig); 5] {
        let none = AblationConfig::default();
        [
            ("full", none),
            (
                "no_gating",
                AblationConfig {
                    disable_gating: true,
                    ..none
                },
            ),
            (
                "no_pathway",
                AblationConfig {
                    disable_pathway: true,
                    ..none
                },
            ),
            (
                "no_aux",
                AblationConfig {
                    disable_aux: true,
                    ..none
                },
            ),
            (
                "no_alignment",
                AblationConfig {
                    disable_alignment: true,
                    ..none
                },
            ),
        ]
    }

    pub fn all_disabled() -> Self {
        Self {
            disable_gating: true,
            disable_pathway: true,
            disable_aux: true,
            disable_alignment: true,
        }
    }
}

/// Architecture knobs that do not depend on the dataset schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub token_dim: usize,
    pub pooling: Pooling,
    pub hidden_dims: Vec<usize>,
    pub treatment_dim: usize,
    pub pathway_hidden: usize,
    pub classifier_hidden: Option<usize>,
    pub aux_on_gated: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        let d = ModelConfig::new(1, 1, 1, 1, 1);
        Self {
            token_dim: d.encoder.token_dim,
            pooling: d.encoder.pooling,
            hidden_dims: d.encoder.hidden_dims,
            treatment_dim: d.treatment_dim,
            pathway_hidden: d.pathway_hidden,
            classifier_hidden: d.classifier_hidden,
            aux_on_gated: d.aux_on_gated,
        }
    }
}

impl ModelOptions {
    pub fn model_config(&self, schema: &Schema) -> ModelConfig {
        let mut c = model_config_for(schema);
        c.encoder.token_dim = self.token_dim;
        c.encoder.pooling = self.pooling;
        c.encoder.hidden_dims = self.hidden_dims.clone();
        c.treatment_dim = self.treatment_dim;
        c.pathway_hidden = self.pathway_hidden;
        c.classifier_hidden = self.classifier_hidden;
        c.aux_on_gated = self.aux_on_gated;
        c
    }
}

/// Everything a protocol run needs besides the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelOptions,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub ablation: AblationConfig,
    /// Worker threads for the fold×seed grid.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelOptions::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2, 3],
            ablation: AblationConfig::default(),
            jobs: 1,
        }
    }
}

impl RunConfig {
    /// Model and training configuration with the ablation applied.
    pub fn resolved(&self, schema: &Schema) -> (ModelConfig, TrainConfig) {
        let mut model = self.model.model_config(schema);
        let mut train = self.train.clone();
        self.ablation.apply(&mut model, &mut train);
        (model, train)
    }
}

/// Runs `work` over every (fold, seed) pair on `jobs` threads and returns
/// results sorted by fold then seed.
pub(crate) fn run_grid<T, F>(folds: usize, seeds: &[u64], jobs: usize, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    let grid: Vec<(usize, u64)> = (0..folds).flat_map(|f| seeds.iter().map(move |&s| (f, s))).collect();
    let run = |&(f, s): &(usize, u64)| {
        work(f, s).map_err(|e| Error::Protocol(format!("fold {f}, seed {s} failed: {e}")))
    };
    if jobs <= 1 {
        return grid.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| grid.par_iter().map(run).collect())
}

pub(crate) fn prepare_all(dataset: &Dataset, protocol: Protocol) -> Result<Vec<(crate::data::Fold, PreparedFold)>> {
    let plan = split_by_group(dataset, protocol.group_key())?;
    plan.folds
        .into_iter()
        .map(|fold| {
            let prepared = prepare_fold(dataset, &fold.train, &fold.test)?;
            Ok((fold, prepared))
        })
        .collect()
}

/// Fresh model per fold×seed, trained on the training split and scored on
/// the held-out group.
pub fn run_protocol(dataset: &Dataset, protocol: Protocol, config: &RunConfig) -> Result<MetricsReport> {
    let (model_config, train_config) = config.resolved(&dataset.schema);
    let folds = prepare_all(dataset, protocol)?;
    let results = run_grid(folds.len(), &config.seeds, config.jobs, |f, seed| {
        let (fold, prepared) = &folds[f];
        let mut model = BioCompass::new(model_config.clone(), seed)?;
        let curve = train(&mut model, &prepared.train, &train_config, seed)?;
        if let Some(last) = curve.last() {
            log::info!("fold={} group={} seed={} {}", fold.fold_id, fold.group_value, seed, last.log_line());
        }
        let probs = model.predict(&prepared.test.expression, &prepared.test.treatments)?;
        Ok(FoldResult {
            method: None,
            fold_id: fold.fold_id,
            group_value: fold.group_value.clone(),
            seed,
            n_test: fold.test.len(),
            metrics: FoldMetrics::compute(&probs, &prepared.test.labels),
        })
    })?;
    Ok(MetricsReport { results })
}

/// The five-row ablation table: full model plus each component disabled.
/// Results carry the configuration name in `method`.
pub fn run_ablation(dataset: &Dataset, protocol: Protocol, config: &RunConfig) -> Result<MetricsReport> {
    let mut results = Vec::new();
    for (name, ablation) in AblationConfig::table() {
        let cfg = RunConfig {
            ablation,
            ..config.clone()
        };
        let report = run_protocol(dataset, protocol, &cfg)?;
        results.extend(report.results.into_iter().map(|mut r| {
            r.method = Some(name.to_string());
            r
        }));
    }
    Ok(MetricsReport { results })
}
