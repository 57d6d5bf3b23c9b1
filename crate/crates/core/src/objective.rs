//! Composite training objective: response BCE plus pathway-consistency,
//! concept-alignment and auxiliary-task regressions, with per-sample masks
//! for missing targets.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::ForwardOutputs;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub pathway: f64,
    pub align: f64,
    pub aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            pathway: 0.1,
            align: 0.1,
            aux: 0.1,
        }
    }
}

impl LossWeights {
    pub fn classification_only() -> Self {
        Self {
            cls: 1.0,
            pathway: 0.0,
            align: 0.0,
            aux: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("cls", self.cls), ("pathway", self.pathway), ("align", self.align), ("aux", self.aux)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("loss weight `{name}` must be a nonnegative number, got {w}")));
            }
        }
        if self.cls <= 0.0 {
            return Err(Error::Config("loss weight `cls` must be positive".into()));
        }
        Ok(())
    }
}

/// Normalization of the alignment term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignNorm {
    /// `(1/B) Σ_i ‖(CW)_i − B_i‖²`
    #[default]
    BatchMean,
    /// `‖CW − B‖²` summed over the whole batch.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub pathway: f64,
    pub align: f64,
    pub aux_tide: f64,
    pub aux_ipres: f64,
    pub aux_pheno: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn aux(&self) -> f64 {
        self.aux_tide + self.aux_ipres + self.aux_pheno
    }

    /// Weighted total recomputed from the components.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.cls * self.cls + w.pathway * self.pathway + w.align * self.align + w.aux * self.aux()
    }
}

/// A dense target block with a `{0,1}` mask of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTarget {
    pub values: Tensor,
    pub mask: Tensor,
}

impl MaskedTarget {
    pub fn present(values: Tensor) -> Self {
        let mask = Tensor::full(values.shape(), 1.0);
        Self { values, mask }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets {
    /// Binary response labels, shape `[B]`.
    pub labels: Tensor,
    pub pathways: MaskedTarget,
    pub biomarkers: MaskedTarget,
    pub tide: MaskedTarget,
    pub ipres: MaskedTarget,
    pub pheno: MaskedTarget,
}

/// Tape handles of every loss term.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub cls: Var,
    pub pathway: Var,
    pub align: Var,
    pub aux: [Var; 3],
    pub total: Var,
}

pub fn pathway_loss(tape: &mut Tape, predicted: Var, target: &MaskedTarget) -> Result<Var> {
    let t = tape.constant(target.values.clone());
    tape.mse(predicted, t, Some(&target.mask))
}

/// Alignment between projected concepts `C·W` and biomarker scores.
pub fn alignment_loss(tape: &mut Tape, concepts: Var, projection: Var, biomarkers: &MaskedTarget, norm: AlignNorm) -> Result<Var> {
    let w_shape = tape.value(projection).shape().to_vec();
    let b_shape = biomarkers.values.shape();
    if w_shape.len() != 2 || b_shape.len() != 2 || w_shape[1] != b_shape[1] {
        return Err(Error::shape("alignment_loss", &w_shape, b_shape));
    }
    let projected = tape.matmul(concepts, projection)?;
    aligned_mse(tape, projected, biomarkers, norm)
}

fn aligned_mse(tape: &mut Tape, projected: Var, biomarkers: &MaskedTarget, norm: AlignNorm) -> Result<Var> {
    let t = tape.constant(biomarkers.values.clone());
    let l = tape.mse(projected, t, Some(&biomarkers.mask))?;
    match norm {
        AlignNorm::BatchMean => Ok(l),
        AlignNorm::Raw => {
            let b = biomarkers.values.rows() as f64;
            tape.scale(l, b)
        }
    }
}

/// Per-task masked MSE for TIDE, IPRES and immune phenotypes, and their sum.
pub fn auxiliary_loss(tape: &mut Tape, predictions: [Var; 3], targets: [&MaskedTarget; 3]) -> Result<([Var; 3], Var)> {
    let mut terms = [predictions[0]; 3];
    for (k, (p, t)) in predictions.iter().zip(targets).enumerate() {
        let tv = tape.constant(t.values.clone());
        terms[k] = tape.mse(*p, tv, Some(&t.mask))?;
    }
    let s = tape.add(terms[0], terms[1])?;
    let s = tape.add(s, terms[2])?;
    Ok((terms, s))
}

/// Weighted composite loss recorded on `tape`. Terms whose weight is zero
/// are evaluated for reporting but never enter the total, so their
/// exclusive parameters receive exactly zero gradient.
pub fn composite_loss(
    tape: &mut Tape,
    outputs: &ForwardOutputs,
    targets: &BatchTargets,
    weights: &LossWeights,
    align_norm: AlignNorm,
) -> Result<(LossVars, LossBreakdown)> {
    weights.validate()?;
    let cls = tape.bce(outputs.prob, &targets.labels)?;
    let pathway = pathway_loss(tape, outputs.pathways, &targets.pathways)?;
    let align = aligned_mse(tape, outputs.projected, &targets.biomarkers, align_norm)?;
    let (aux, aux_sum) = auxiliary_loss(
        tape,
        [outputs.tide, outputs.ipres, outputs.pheno],
        [&targets.tide, &targets.ipres, &targets.pheno],
    )?;

    let mut total = tape.scale(cls, weights.cls)?;
    for (w, term) in [(weights.pathway, pathway), (weights.align, align), (weights.aux, aux_sum)] {
        if w != 0.0 {
            let scaled = tape.scale(term, w)?;
            total = tape.add(total, scaled)?;
        }
    }

    let v = |var: Var| tape.value(var).item();
    let breakdown = LossBreakdown {
        cls: v(cls),
        pathway: v(pathway),
        align: v(align),
        aux_tide: v(aux[0]),
        aux_ipres: v(aux[1]),
        aux_pheno: v(aux[2]),
        total: v(total),
    };
    Ok((
        LossVars {
            cls,
            pathway,
            align,
            aux,
            total,
        },
        breakdown,
    ))
}
