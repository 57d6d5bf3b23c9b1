use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Grouping column for leave-one-group-out evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Cohort,
    CancerType,
    Treatment,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupKey::Cohort => "cohort",
            GroupKey::CancerType => "cancer_type",
            GroupKey::Treatment => "treatment",
        })
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cohort" => Ok(GroupKey::Cohort),
            "cancer_type" | "cancer" => Ok(GroupKey::CancerType),
            "treatment" => Ok(GroupKey::Treatment),
            _ => Err(Error::Config(format!("unknown group key `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fold_id: usize,
    pub group_value: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct group value: the group is the test set and the
/// complement is the training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub key: GroupKey,
    pub folds: Vec<Fold>,
}

pub fn split_by_group(dataset: &Dataset, key: GroupKey) -> Result<FoldPlan> {
    let groups = dataset.group_values(key);
    if groups.len() < 2 {
        return Err(Error::Protocol(format!(
            "leave-one-{key}-out needs at least 2 distinct groups, found {}",
            groups.len()
        )));
    }
    let values: Vec<String> = dataset.records.iter().map(|r| r.group_value(key)).collect();
    let folds = groups
        .into_iter()
        .enumerate()
        .map(|(fold_id, group_value)| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..values.len()).partition(|&i| values[i] == group_value);
            Fold {
                fold_id,
                group_value,
                train,
                test,
            }
        })
        .collect();
    Ok(FoldPlan { key, folds })
}
