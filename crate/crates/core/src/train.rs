//! Mini-batch training loop shared by the CLI and the evaluation driver.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PreparedSplit, Schema};
use crate::diffcore::{OptimizerConfig, Tape};
use crate::error::{Error, Result};
use crate::model::{BioCompass, ModelConfig, TrainMode};
use crate::objective::{composite_loss, AlignNorm, LossBreakdown, LossWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub align_norm: AlignNorm,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            epochs: 100,
            weights: LossWeights::default(),
            align_norm: AlignNorm::default(),
            mode: TrainMode::Pft,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let lr = self.optimizer.learning_rate();
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::Config(format!("learning rate must be nonnegative, got {lr}")));
        }
        self.weights.validate()
    }
}

/// Sample-weighted mean loss breakdown over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

impl EpochRecord {
    /// Single-line `key=value` rendering used in logs.
    pub fn log_line(&self) -> String {
        let l = &self.loss;
        format!(
            "epoch={} total={:.6} cls={:.6} pathway={:.6} align={:.6} aux_tide={:.6} aux_ipres={:.6} aux_pheno={:.6}",
            self.epoch, l.total, l.cls, l.pathway, l.align, l.aux_tide, l.aux_ipres, l.aux_pheno
        )
    }
}

/// Model dimensions implied by a dataset schema. Target groups the schema
/// lacks get width 1 and stay fully masked.
pub fn model_config_for(schema: &Schema) -> ModelConfig {
    ModelConfig::new(
        schema.gene_count(),
        schema.biomarker_dim().max(1),
        schema.tide_dim().max(1),
        schema.ipres_dim().max(1),
        schema.pheno_dim().max(1),
    )
}

/// Number of optimizer steps one epoch takes.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Trains in place. Batch order comes from `seed` alone, so the same model,
/// data and seed give bit-identical parameters.
pub fn train(model: &mut BioCompass, data: &PreparedSplit, config: &TrainConfig, seed: u64) -> Result<Vec<EpochRecord>> {
    train_steps(model, data, config, seed, None)
}

/// Like [`train`], stopping early after `max_steps` optimizer steps when
/// given.
pub fn train_steps(
    model: &mut BioCompass,
    data: &PreparedSplit,
    config: &TrainConfig,
    seed: u64,
    max_steps: Option<usize>,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("cannot train on an empty split".into()));
    }
    model.set_mode(config.mode);
    let mut optimizer = config.optimizer.build();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;

    'outer: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 7];
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if max_steps.is_some_and(|m| steps >= m) {
                break 'outer;
            }
            let (x, treatments, targets) = data.batch(chunk);
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &x, &treatments)?;
            let (vars, b) = composite_loss(&mut tape, &out, &targets, &config.weights, config.align_norm)?;
            model.params_mut().zero_grad();
            tape.backward(vars.total, model.params_mut())?;
            optimizer.step(model.params_mut())?;
            steps += 1;

            let w = chunk.len() as f64;
            for (s, v) in sums
                .iter_mut()
                .zip([b.cls, b.pathway, b.align, b.aux_tide, b.aux_ipres, b.aux_pheno, b.total])
            {
                *s += w * v;
            }
            seen += chunk.len();
        }
        let n = seen as f64;
        let record = EpochRecord {
            epoch,
            loss: LossBreakdown {
                cls: sums[0] / n,
                pathway: sums[1] / n,
                align: sums[2] / n,
                aux_tide: sums[3] / n,
                aux_ipres: sums[4] / n,
                aux_pheno: sums[5] / n,
                total: sums[6] / n,
            },
        };
        log::debug!("{}", record.log_line());
        curve.push(record);
    }
    Ok(curve)
}
