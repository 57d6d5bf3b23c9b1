use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero variance and
/// replaced by 1.
const MIN_STD: f64 = 1e-12;

pub fn log2_tpm(tpm: f64) -> f64 {
    (tpm + 1.0).log2()
}

/// Per-column mean/std z-scoring fitted on a subset of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Fits on the given rows (each of equal length). Columns with zero
    /// variance get std 1, so they map to 0 after centring.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sums: Vec<f64> = Vec::new();
        let mut cached: Vec<&[f64]> = Vec::new();
        for r in rows {
            if sums.is_empty() {
                sums = vec![0.0; r.len()];
            } else if r.len() != sums.len() {
                return Err(Error::shape("standardize", &[sums.len()], &[r.len()]));
            }
            for (s, v) in sums.iter_mut().zip(r) {
                *s += v;
            }
            cached.push(r);
            n += 1;
        }
        if n == 0 {
            return Err(Error::Validation("cannot fit normalization on zero rows".into()));
        }
        let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0; means.len()];
        for r in &cached {
            for ((acc, v), m) in sq.iter_mut().zip(r.iter()).zip(&means) {
                *acc += (v - m) * (v - m);
            }
        }
        let stds = sq
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { means, stds })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }
}

/// `log2(TPM + 1)` followed by per-gene z-scoring with statistics from the
/// training rows of a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub stats: Standardizer,
}

impl Normalizer {
    pub fn fit(dataset: &Dataset, train_indices: &[usize]) -> Result<Self> {
        if train_indices.is_empty() {
            return Err(Error::Validation("normalization needs at least one training row".into()));
        }
        let logged: Vec<Vec<f64>> = train_indices
            .iter()
            .map(|&i| dataset.records[i].expression.iter().map(|&x| log2_tpm(x)).collect())
            .collect();
        let stats = Standardizer::fit(logged.iter().map(Vec::as_slice))?;
        Ok(Self { stats })
    }

    pub fn transform_tpm(&self, tpm: &[f64]) -> Vec<f64> {
        let logged: Vec<f64> = tpm.iter().map(|&x| log2_tpm(x)).collect();
        self.stats.transform_row(&logged)
    }

    /// Normalized expression matrix `[n×G]` for the given rows.
    pub fn transform(&self, dataset: &Dataset, indices: &[usize]) -> Tensor {
        let g = self.stats.dim();
        let data = indices
            .iter()
            .flat_map(|&i| self.transform_tpm(&dataset.records[i].expression))
            .collect();
        Tensor::raw(vec![indices.len(), g], data)
    }
}

/// Fits on `train_indices` and returns the normalized expression of every
/// row of the dataset.
pub fn normalize(dataset: &Dataset, train_indices: &[usize]) -> Result<(Normalizer, Tensor)> {
    let n = Normalizer::fit(dataset, train_indices)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let t = n.transform(dataset, &all);
    Ok((n, t))
}
