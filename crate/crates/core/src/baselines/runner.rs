use serde::{Deserialize, Serialize};

use super::logreg::fit_logreg;
use super::pca::{covariance, top_components};
use super::signature::{SignatureContext, SignatureDef};
use crate::data::{Dataset, Fold};
use crate::error::{Error, Result};
use crate::eval::{prepare_all, run_grid, FoldMetrics, FoldResult, MetricsReport, Protocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub l2: f64,
    /// Principal components fed to the PCA+LR baseline.
    pub pca_components: usize,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    /// Also fit one regression per signature, not only on all of them.
    pub per_signature: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            pca_components: 10,
            seeds: vec![0, 1, 2, 3],
            jobs: 1,
            per_signature: true,
        }
    }
}

/// Feature matrices `[n][k]` for every baseline method of one fold, in a
/// fixed order.
fn fold_features(dataset: &Dataset, fold: &Fold, signatures: &[SignatureDef], config: &BaselineConfig) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let ctx = SignatureContext::new(dataset, &fold.train)?;
    let n = dataset.len();
    let mut methods = Vec::new();

    let mut all_scores: Vec<Vec<f64>> = vec![Vec::new(); n];
    for def in signatures {
        if let Some(scores) = ctx.score(def)? {
            if config.per_signature {
                methods.push((format!("sig:{}", def.name), scores.iter().map(|&s| vec![s]).collect()));
            }
            for (row, s) in all_scores.iter_mut().zip(scores) {
                row.push(s);
            }
        }
    }
    if !all_scores[0].is_empty() {
        methods.push(("signatures_lr".to_string(), all_scores));
    }

    if dataset.schema.biomarker_dim() > 0 {
        if dataset.records.iter().all(|r| r.biomarker_scores.is_some()) {
            let rows = dataset.records.iter().map(|r| r.biomarker_scores.clone().unwrap()).collect();
            methods.push(("biomarkers_lr".to_string(), rows));
        } else {
            log::warn!("biomarkers_lr skipped: some samples lack biomarker scores");
        }
    }

    if config.pca_components > 0 {
        let train_rows: Vec<Vec<f64>> = fold.train.iter().map(|&i| ctx.normalized[i].clone()).collect();
        let (mean, cov) = covariance(&train_rows)?;
        let pcs = top_components(&cov, config.pca_components);
        let rows = ctx
            .normalized
            .iter()
            .map(|r| {
                pcs.iter()
                    .map(|v| r.iter().zip(&mean).zip(v).map(|((x, m), w)| (x - m) * w).sum())
                    .collect()
            })
            .collect();
        methods.push(("pca_lr".to_string(), rows));
    }

    methods.push(("expression_lr".to_string(), ctx.normalized.clone()));
    Ok(methods)
}

/// Every baseline on every fold×seed. The regressions are deterministic, so
/// seeds only replicate rows; they are kept so the report shape matches the
/// main model's.
pub fn run_baselines(dataset: &Dataset, protocol: Protocol, signatures: &[SignatureDef], config: &BaselineConfig) -> Result<MetricsReport> {
    if config.seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    let folds = prepare_all(dataset, protocol)?;
    let per_fold = run_grid(folds.len(), &[0], config.jobs, |f, _| {
        let (fold, _) = &folds[f];
        let mut out = Vec::new();
        for (method, rows) in fold_features(dataset, fold, signatures, config)? {
            let x: Vec<Vec<f64>> = fold.train.iter().map(|&i| rows[i].clone()).collect();
            let model = fit_logreg(&x, &dataset.labels(&fold.train), config.l2)?;
            let probs: Vec<f64> = fold.test.iter().map(|&i| model.predict_proba(&rows[i])).collect();
            out.push((method, FoldMetrics::compute(&probs, &dataset.labels(&fold.test))));
        }
        Ok(out)
    })?;

    let mut results = Vec::new();
    for ((fold, _), methods) in folds.iter().zip(per_fold) {
        for (method, metrics) in methods {
            for &seed in &config.seeds {
                results.push(FoldResult {
                    method: Some(method.clone()),
                    fold_id: fold.fold_id,
                    group_value: fold.group_value.clone(),
                    seed,
                    n_test: fold.test.len(),
                    metrics,
                });
            }
        }
    }
    results.sort_by(|a, b| (a.method.as_deref(), a.fold_id, a.seed).cmp(&(b.method.as_deref(), b.fold_id, b.seed)));
    Ok(MetricsReport { results })
}
