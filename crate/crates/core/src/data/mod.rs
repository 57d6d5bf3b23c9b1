//! Cohort schema, CSV ingestion, fold-aware normalization, the synthetic
//! cohort generator and leave-one-group-out fold plans.

mod csv_io;
mod normalize;
mod prepare;
mod split;
mod synth;

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_to};
pub use normalize::{log2_tpm, normalize, Normalizer, Standardizer};
pub use prepare::{prepare_fold, PreparedFold, PreparedSplit};
pub use split::{split_by_group, Fold, FoldPlan, GroupKey};
pub use synth::{generate_synthetic, generate_with_truth, CohortTemplate, PlantedMapping, SyntheticSpec, SyntheticTruth};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TreatmentTarget, N_PATHWAYS};

/// One patient sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub sample_id: String,
    pub cohort_id: String,
    pub cancer_type: String,
    pub treatment: TreatmentTarget,
    /// Expression in TPM, one value per gene.
    pub expression: Vec<f64>,
    pub response: u8,
    pub pathway_scores: Option<Vec<f64>>,
    pub biomarker_scores: Option<Vec<f64>>,
    pub tide: Option<Vec<f64>>,
    pub ipres: Option<Vec<f64>>,
    pub pheno: Option<Vec<f64>>,
}

impl CohortRecord {
    pub fn group_value(&self, key: GroupKey) -> String {
        match key {
            GroupKey::Cohort => self.cohort_id.clone(),
            GroupKey::CancerType => self.cancer_type.clone(),
            GroupKey::Treatment => self.treatment.to_string(),
        }
    }
}

/// Column names of every optional target group. Dimensions are the name
/// counts; pathways are either all 42 present or absent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub gene_names: Vec<String>,
    pub has_pathways: bool,
    pub biomarker_names: Vec<String>,
    pub tide_names: Vec<String>,
    pub ipres_names: Vec<String>,
    pub pheno_names: Vec<String>,
}

impl Schema {
    pub fn gene_count(&self) -> usize {
        self.gene_names.len()
    }

    pub fn pathway_dim(&self) -> usize {
        if self.has_pathways {
            N_PATHWAYS
        } else {
            0
        }
    }

    pub fn biomarker_dim(&self) -> usize {
        self.biomarker_names.len()
    }

    pub fn tide_dim(&self) -> usize {
        self.tide_names.len()
    }

    pub fn ipres_dim(&self) -> usize {
        self.ipres_names.len()
    }

    pub fn pheno_dim(&self) -> usize {
        self.pheno_names.len()
    }

    pub fn gene_index(&self, name: &str) -> Option<usize> {
        self.gene_names.iter().position(|g| g == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<CohortRecord>,
}

fn check_group(name: &str, values: &Option<Vec<f64>>, dim: usize, row: usize) -> Result<()> {
    if let Some(v) = values {
        if v.len() != dim {
            return Err(Error::Schema {
                row,
                column: name.into(),
                message: format!("expected {dim} values, got {}", v.len()),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Schema {
                row,
                column: name.into(),
                message: "non-finite value".into(),
            });
        }
    }
    Ok(())
}

impl Dataset {
    /// Validates every record against the schema.
    pub fn new(schema: Schema, records: Vec<CohortRecord>) -> Result<Self> {
        let ds = Self { schema, records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.schema;
        for (i, r) in self.records.iter().enumerate() {
            let row = i + 1;
            for (column, value) in [
                ("sample_id", &r.sample_id),
                ("cohort_id", &r.cohort_id),
                ("cancer_type", &r.cancer_type),
            ] {
                if value.trim().is_empty() {
                    return Err(Error::Schema {
                        row,
                        column: column.into(),
                        message: "empty group key".into(),
                    });
                }
            }
            if r.response > 1 {
                return Err(Error::Schema {
                    row,
                    column: "response".into(),
                    message: format!("label {} is not binary", r.response),
                });
            }
            if r.expression.len() != s.gene_count() {
                return Err(Error::Schema {
                    row,
                    column: "expr_*".into(),
                    message: format!("expected {} genes, got {}", s.gene_count(), r.expression.len()),
                });
            }
            if let Some(j) = r.expression.iter().position(|&x| !x.is_finite() || x < 0.0) {
                return Err(Error::Schema {
                    row,
                    column: format!("expr_{}", s.gene_names[j]),
                    message: format!("TPM must be finite and nonnegative, got {}", r.expression[j]),
                });
            }
            if r.pathway_scores.is_some() && !s.has_pathways {
                return Err(Error::Schema {
                    row,
                    column: "pw_*".into(),
                    message: "pathway scores present but schema has none".into(),
                });
            }
            check_group("pw_*", &r.pathway_scores, N_PATHWAYS, row)?;
            check_group("bm_*", &r.biomarker_scores, s.biomarker_dim(), row)?;
            check_group("tide_*", &r.tide, s.tide_dim(), row)?;
            check_group("ipres_*", &r.ipres, s.ipres_dim(), row)?;
            check_group("pheno_*", &r.pheno, s.pheno_dim(), row)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct values of a group key in order of first appearance.
    pub fn group_values(&self, key: GroupKey) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.records {
            let v = r.group_value(key);
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
        seen
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.records[i].response).collect()
    }
}
