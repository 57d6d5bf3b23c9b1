use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pca::pc1_scores;
use crate::data::{log2_tpm, Dataset, Normalizer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureKind {
    GeneSetMean,
    GenePairRatioSum,
    Pc1,
}

impl fmt::Display for SignatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignatureKind::GeneSetMean => "gene_set_mean",
            SignatureKind::GenePairRatioSum => "gene_pair_ratio_sum",
            SignatureKind::Pc1 => "pc1",
        })
    }
}

impl FromStr for SignatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gene_set_mean" => Ok(SignatureKind::GeneSetMean),
            "gene_pair_ratio_sum" => Ok(SignatureKind::GenePairRatioSum),
            "pc1" => Ok(SignatureKind::Pc1),
            _ => Err(Error::Config(format!("unknown signature kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureDef {
    pub name: String,
    pub kind: SignatureKind,
    /// Genes for `gene_set_mean` and `pc1`.
    pub genes: Vec<String>,
    /// `(a, b)` pairs for `gene_pair_ratio_sum`.
    pub pairs: Vec<(String, String)>,
}

/// Placeholder signatures over the synthetic generator's gene names.
pub const DEFAULT_SIGNATURES: &str = include_str!("../../signatures/default.txt");

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split([',', ' ', '\t']).map(str::trim).filter(|s| !s.is_empty())
}

/// Parses blank-line separated blocks of `key: value` lines with keys
/// `name`, `kind`, and `genes` (comma or space separated) or `pairs`
/// (`A/B` items). `#` starts a comment.
pub fn parse_signatures(text: &str) -> Result<Vec<SignatureDef>> {
    let mut out = Vec::new();
    let mut block: Vec<(usize, &str, &str)> = Vec::new();
    let lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()));
    for (lineno, line) in lines.chain(std::iter::once((0, ""))) {
        if line.is_empty() {
            if !block.is_empty() {
                out.push(parse_block(&block)?);
                block.clear();
            }
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("signature line {lineno}: expected `key: value`")))?;
        block.push((lineno, k.trim(), v.trim()));
    }
    Ok(out)
}

fn parse_block(block: &[(usize, &str, &str)]) -> Result<SignatureDef> {
    let (mut name, mut kind, mut genes, mut pairs) = (None, None, Vec::new(), Vec::new());
    for &(lineno, k, v) in block {
        match k {
            "name" => name = Some(v.to_string()),
            "kind" => kind = Some(v.parse::<SignatureKind>()?),
            "genes" => genes.extend(split_list(v).map(String::from)),
            "pairs" => {
                for item in split_list(v) {
                    let (a, b) = item
                        .split_once('/')
                        .ok_or_else(|| Error::Config(format!("signature line {lineno}: pair `{item}` is not `A/B`")))?;
                    pairs.push((a.to_string(), b.to_string()));
                }
            }
            other => return Err(Error::Config(format!("signature line {lineno}: unknown key `{other}`"))),
        }
    }
    let line = block[0].0;
    let name = name.ok_or_else(|| Error::Config(format!("signature block at line {line} has no name")))?;
    let kind = kind.ok_or_else(|| Error::Config(format!("signature `{name}` has no kind")))?;
    let empty = match kind {
        SignatureKind::GenePairRatioSum => pairs.is_empty(),
        _ => genes.is_empty(),
    };
    if empty {
        return Err(Error::Config(format!("signature `{name}` lists no genes")));
    }
    Ok(SignatureDef {
        name,
        kind,
        genes,
        pairs,
    })
}

/// Per-fold context shared by every signature: normalized and log-only
/// expression for all rows.
pub struct SignatureContext<'a> {
    pub dataset: &'a Dataset,
    pub train: &'a [usize],
    /// Training-fold z-scored log2 expression, `[n][G]`.
    pub normalized: Vec<Vec<f64>>,
}

impl<'a> SignatureContext<'a> {
    pub fn new(dataset: &'a Dataset, train: &'a [usize]) -> Result<Self> {
        let norm = Normalizer::fit(dataset, train)?;
        let normalized = dataset.records.iter().map(|r| norm.transform_tpm(&r.expression)).collect();
        Ok(Self {
            dataset,
            train,
            normalized,
        })
    }

    fn resolve(&self, def: &SignatureDef, genes: &[String]) -> Vec<usize> {
        let schema = &self.dataset.schema;
        let found: Vec<usize> = genes.iter().filter_map(|g| schema.gene_index(g)).collect();
        let missing = genes.len() - found.len();
        if missing > 0 {
            log::warn!("signature `{}`: {missing} of {} genes not in the dataset, dropped", def.name, genes.len());
        }
        found
    }

    /// One score per sample, or `None` when none of the genes is present.
    pub fn score(&self, def: &SignatureDef) -> Result<Option<Vec<f64>>> {
        match def.kind {
            SignatureKind::GeneSetMean => {
                let idx = self.resolve(def, &def.genes);
                if idx.is_empty() {
                    return Ok(skip(def));
                }
                Ok(Some(
                    self.normalized
                        .iter()
                        .map(|r| idx.iter().map(|&j| r[j]).sum::<f64>() / idx.len() as f64)
                        .collect(),
                ))
            }
            SignatureKind::Pc1 => {
                let idx = self.resolve(def, &def.genes);
                if idx.is_empty() {
                    return Ok(skip(def));
                }
                let rows: Vec<Vec<f64>> = self.normalized.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect();
                pc1_scores(&rows, self.train).map(Some)
            }
            SignatureKind::GenePairRatioSum => {
                let schema = &self.dataset.schema;
                let pairs: Vec<(usize, usize)> = def
                    .pairs
                    .iter()
                    .filter_map(|(a, b)| Some((schema.gene_index(a)?, schema.gene_index(b)?)))
                    .collect();
                let dropped = def.pairs.len() - pairs.len();
                if dropped > 0 {
                    log::warn!("signature `{}`: {dropped} of {} pairs reference missing genes, dropped", def.name, def.pairs.len());
                }
                if pairs.is_empty() {
                    return Ok(skip(def));
                }
                Ok(Some(
                    self.dataset
                        .records
                        .iter()
                        .map(|r| {
                            pairs
                                .iter()
                                .filter(|&&(a, b)| log2_tpm(r.expression[a]) > log2_tpm(r.expression[b]))
                                .count() as f64
                        })
                        .collect(),
                ))
            }
        }
    }
}

fn skip(def: &SignatureDef) -> Option<Vec<f64>> {
    log::warn!("signature `{}` skipped: none of its genes are in the dataset", def.name);
    None
}

/// Scores every sample with statistics fitted on `train`. `None` when the
/// signature has no gene in the dataset.
pub fn signature_score(dataset: &Dataset, def: &SignatureDef, train: &[usize]) -> Result<Option<Vec<f64>>> {
    SignatureContext::new(dataset, train)?.score(def)
}
