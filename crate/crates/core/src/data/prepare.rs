use super::{CohortRecord, Dataset, Normalizer, Standardizer};
use crate::diffcore::Tensor;
use crate::error::Result;
use crate::model::{TreatmentTarget, N_PATHWAYS};
use crate::objective::{BatchTargets, MaskedTarget};

/// Model-ready tensors for one side of a fold.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub indices: Vec<usize>,
    /// Normalized expression, `[n×G]`.
    pub expression: Tensor,
    pub treatments: Vec<TreatmentTarget>,
    pub labels: Vec<u8>,
    pub targets: BatchTargets,
}

impl PreparedSplit {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Sub-batch by positions within this split.
    pub fn batch(&self, positions: &[usize]) -> (Tensor, Vec<TreatmentTarget>, BatchTargets) {
        let sel = |m: &MaskedTarget| MaskedTarget {
            values: m.values.select_rows(positions),
            mask: m.mask.select_rows(positions),
        };
        let t = &self.targets;
        (
            self.expression.select_rows(positions),
            positions.iter().map(|&p| self.treatments[p]).collect(),
            BatchTargets {
                labels: t.labels.select_rows(positions),
                pathways: sel(&t.pathways),
                biomarkers: sel(&t.biomarkers),
                tide: sel(&t.tide),
                ipres: sel(&t.ipres),
                pheno: sel(&t.pheno),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFold {
    pub normalizer: Normalizer,
    pub train: PreparedSplit,
    pub test: PreparedSplit,
}

type Getter = fn(&CohortRecord) -> Option<&Vec<f64>>;

/// Target block with training-fold z-scoring over present rows. Groups
/// absent from the schema become one all-masked column.
fn target_block(dataset: &Dataset, indices: &[usize], dim: usize, get: Getter, scaler: &Option<Standardizer>) -> MaskedTarget {
    let width = dim.max(1);
    let mut values = Vec::with_capacity(indices.len() * width);
    let mut mask = Vec::with_capacity(indices.len() * width);
    for &i in indices {
        match (get(&dataset.records[i]), scaler) {
            (Some(v), Some(s)) => {
                values.extend(s.transform_row(v));
                mask.extend(std::iter::repeat_n(1.0, width));
            }
            _ => {
                values.extend(std::iter::repeat_n(0.0, width));
                mask.extend(std::iter::repeat_n(0.0, width));
            }
        }
    }
    MaskedTarget {
        values: Tensor::raw(vec![indices.len(), width], values),
        mask: Tensor::raw(vec![indices.len(), width], mask),
    }
}

fn fit_scaler(dataset: &Dataset, train: &[usize], dim: usize, get: Getter) -> Result<Option<Standardizer>> {
    if dim == 0 {
        return Ok(None);
    }
    let rows: Vec<&[f64]> = train
        .iter()
        .filter_map(|&i| get(&dataset.records[i]).map(Vec::as_slice))
        .collect();
    if rows.is_empty() {
        return Ok(None);
    }
    Standardizer::fit(rows).map(Some)
}

/// Normalizes expression and z-scores every target group using statistics
/// from `train` only, then builds tensors for both sides.
pub fn prepare_fold(dataset: &Dataset, train: &[usize], test: &[usize]) -> Result<PreparedFold> {
    let normalizer = Normalizer::fit(dataset, train)?;
    let s = &dataset.schema;
    let groups: [(usize, Getter); 5] = [
        (s.pathway_dim(), |r| r.pathway_scores.as_ref()),
        (s.biomarker_dim(), |r| r.biomarker_scores.as_ref()),
        (s.tide_dim(), |r| r.tide.as_ref()),
        (s.ipres_dim(), |r| r.ipres.as_ref()),
        (s.pheno_dim(), |r| r.pheno.as_ref()),
    ];
    let scalers = groups
        .iter()
        .map(|(dim, get)| fit_scaler(dataset, train, *dim, *get))
        .collect::<Result<Vec<_>>>()?;

    let build = |indices: &[usize]| -> PreparedSplit {
        let mut blocks = groups
            .iter()
            .zip(&scalers)
            .map(|((dim, get), sc)| target_block(dataset, indices, *dim, *get, sc));
        let mut pathways = blocks.next().unwrap();
        if s.pathway_dim() == 0 {
            pathways = MaskedTarget {
                values: Tensor::zeros(&[indices.len(), N_PATHWAYS]),
                mask: Tensor::zeros(&[indices.len(), N_PATHWAYS]),
            };
        }
        let labels = dataset.labels(indices);
        PreparedSplit {
            indices: indices.to_vec(),
            expression: normalizer.transform(dataset, indices),
            treatments: indices.iter().map(|&i| dataset.records[i].treatment).collect(),
            targets: BatchTargets {
                labels: Tensor::raw(vec![indices.len()], labels.iter().map(|&y| y as f64).collect()),
                pathways,
                biomarkers: blocks.next().unwrap(),
                tide: blocks.next().unwrap(),
                ipres: blocks.next().unwrap(),
                pheno: blocks.next().unwrap(),
            },
            labels,
        }
    };
    Ok(PreparedFold {
        train: build(train),
        test: build(test),
        normalizer,
    })
}
