use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CohortRecord, Dataset, Schema};
use crate::error::{Error, Result};
use crate::model::{BaseTarget, TreatmentTarget, N_PATHWAYS};

/// One synthetic cohort: its group keys and sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortTemplate {
    pub cohort_id: String,
    pub cancer_type: String,
    pub treatment: TreatmentTarget,
    pub size: usize,
}

/// Which latent factors drive response under each base target. A
/// combination treatment uses the union of its members' sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedMapping {
    pub pd1: Vec<usize>,
    pub pdl1: Vec<usize>,
    pub ctla4: Vec<usize>,
}

impl Default for PlantedMapping {
    fn default() -> Self {
        Self {
            pd1: vec![0, 1],
            pdl1: vec![2, 3],
            ctla4: vec![4, 5],
        }
    }
}

impl PlantedMapping {
    pub fn active(&self, treatment: TreatmentTarget) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for t in treatment.targets() {
            let set = match t {
                BaseTarget::Pd1 => &self.pd1,
                BaseTarget::Pdl1 => &self.pdl1,
                BaseTarget::Ctla4 => &self.ctla4,
            };
            out.extend(set);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

const DEFAULT_LAYOUT: [(&str, &str, usize); 8] = [
    ("BLCA", "PD-L1", 120),
    ("KIRC", "PD-L1", 100),
    ("SKCM", "PD-1", 80),
    ("SKCM", "CTLA-4+PD-1", 60),
    ("SKCM", "CTLA-4", 45),
    ("STAD", "PD-1", 40),
    ("SKCM", "CTLA-4", 35),
    ("SKCM", "CTLA-4+PD-1", 30),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub cohorts: Vec<CohortTemplate>,
    pub gene_count: usize,
    pub n_latents: usize,
    pub signal_strength: f64,
    /// Scale of per-sample gene noise on the log2 scale.
    pub noise_scale: f64,
    /// Scale of the Gaussian noise added to the response logit.
    pub label_noise: f64,
    /// Scale of per-cohort, per-gene batch offsets on the log2 scale.
    pub cohort_shift: f64,
    /// Probability that a sample's target group is left missing.
    pub missing_rate: f64,
    pub biomarker_dim: usize,
    pub pheno_dim: usize,
    pub planted: PlantedMapping,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            cohorts: Self::default_cohorts(None),
            gene_count: 512,
            n_latents: 8,
            signal_strength: 3.0,
            noise_scale: 0.5,
            label_noise: 0.5,
            cohort_shift: 0.2,
            missing_rate: 0.0,
            biomarker_dim: 6,
            pheno_dim: 3,
            planted: PlantedMapping::default(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// The eight-cohort layout: four cancer types, four treatment targets
    /// each shared by two cohorts, sizes on both sides of 50. `uniform_size`
    /// overrides every cohort's size.
    pub fn default_cohorts(uniform_size: Option<usize>) -> Vec<CohortTemplate> {
        DEFAULT_LAYOUT
            .iter()
            .enumerate()
            .map(|(i, (cancer, treatment, size))| CohortTemplate {
                cohort_id: format!("cohort_{}", i + 1),
                cancer_type: cancer.to_string(),
                treatment: treatment.parse().expect("valid built-in treatment"),
                size: uniform_size.unwrap_or(*size),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cohorts.is_empty() {
            return bad("synthetic spec needs at least one cohort".into());
        }
        if self.cohorts.iter().any(|c| c.size == 0) {
            return bad("cohort sizes must be positive".into());
        }
        if self.gene_count == 0 || self.n_latents == 0 || self.biomarker_dim == 0 || self.pheno_dim == 0 {
            return bad("gene_count, n_latents, biomarker_dim and pheno_dim must be positive".into());
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("noise_scale", self.noise_scale),
            ("label_noise", self.label_noise),
            ("cohort_shift", self.cohort_shift),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate must lie in [0,1], got {}", self.missing_rate));
        }
        let p = &self.planted;
        if p.pd1.iter().chain(&p.pdl1).chain(&p.ctla4).any(|&j| j >= self.n_latents) {
            return bad("planted mapping refers to a latent beyond n_latents".into());
        }
        Ok(())
    }
}

/// Generator internals for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// Latent factors per sample, `[n][K]`.
    pub latents: Vec<Vec<f64>>,
    /// Noise-free response score `Σ_{j∈active} z_j` per sample.
    pub signal: Vec<f64>,
    /// Primary latent of each gene.
    pub gene_latent: Vec<usize>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| scale * normal(rng)).collect()).collect()
}

fn readout(weights: &[Vec<f64>], z: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    weights
        .iter()
        .map(|w| w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + noise * normal(rng))
        .collect()
}

fn gene_name(g: usize, latent: usize) -> String {
    format!("z{latent}_g{g:03}")
}

/// Same seed, same dataset. Genes are named `z<latent>_g<index>` after the
/// latent they load on.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_with_truth(spec).map(|(d, _)| d)
}

pub fn generate_with_truth(spec: &SyntheticSpec) -> Result<(Dataset, SyntheticTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.n_latents;
    let g = spec.gene_count;

    let gene_latent: Vec<usize> = (0..g).map(|i| i % k).collect();
    let base: Vec<f64> = (0..g).map(|_| rng.random_range(2.0..6.0)).collect();
    let loading: Vec<f64> = (0..g).map(|_| rng.random_range(0.5..1.5)).collect();
    let readout_scale = 1.0 / (k as f64).sqrt();
    let w_path = normal_matrix(&mut rng, N_PATHWAYS, k, readout_scale);
    let w_bm = normal_matrix(&mut rng, spec.biomarker_dim, k, readout_scale);
    let w_tide = normal_matrix(&mut rng, 1, k, readout_scale);
    let w_ipres = normal_matrix(&mut rng, 1, k, readout_scale);
    let w_pheno = normal_matrix(&mut rng, spec.pheno_dim, k, readout_scale);
    let target_noise = 0.3;

    let schema = Schema {
        gene_names: (0..g).map(|i| gene_name(i, gene_latent[i])).collect(),
        has_pathways: true,
        biomarker_names: (1..=spec.biomarker_dim).map(|i| format!("b{i}")).collect(),
        tide_names: vec!["score".into()],
        ipres_names: vec!["score".into()],
        pheno_names: (1..=spec.pheno_dim).map(|i| format!("p{i}")).collect(),
    };

    let mut records = Vec::new();
    let mut truth = SyntheticTruth {
        latents: Vec::new(),
        signal: Vec::new(),
        gene_latent: gene_latent.clone(),
    };
    for cohort in &spec.cohorts {
        let shift: Vec<f64> = (0..g).map(|_| spec.cohort_shift * normal(&mut rng)).collect();
        let active = spec.planted.active(cohort.treatment);
        for s in 0..cohort.size {
            let z: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
            let expression = (0..g)
                .map(|i| {
                    let x = base[i] + loading[i] * z[gene_latent[i]] + shift[i] + spec.noise_scale * normal(&mut rng);
                    (x.exp2() - 1.0).max(0.0)
                })
                .collect();
            let signal: f64 = active.iter().map(|&j| z[j]).sum();
            let logit = spec.signal_strength * signal + spec.label_noise * normal(&mut rng);
            let p = 1.0 / (1.0 + (-logit).exp());
            let response = u8::from(rng.random::<f64>() < p);

            let group = |w: &[Vec<f64>], rng: &mut ChaCha8Rng| {
                let v = readout(w, &z, target_noise, rng);
                (rng.random::<f64>() >= spec.missing_rate).then_some(v)
            };
            records.push(CohortRecord {
                sample_id: format!("{}_s{:03}", cohort.cohort_id, s + 1),
                cohort_id: cohort.cohort_id.clone(),
                cancer_type: cohort.cancer_type.clone(),
                treatment: cohort.treatment,
                expression,
                response,
                pathway_scores: group(&w_path, &mut rng),
                biomarker_scores: group(&w_bm, &mut rng),
                tide: group(&w_tide, &mut rng),
                ipres: group(&w_ipres, &mut rng),
                pheno: group(&w_pheno, &mut rng),
            });
            truth.latents.push(z);
            truth.signal.push(signal);
        }
    }
    Ok((Dataset::new(schema, records)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            cohorts: SyntheticSpec::default_cohorts(Some(12)),
            gene_count: 24,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(generate_synthetic(&small(3)).unwrap(), generate_synthetic(&small(3)).unwrap());
        assert_ne!(generate_synthetic(&small(3)).unwrap(), generate_synthetic(&small(4)).unwrap());
    }

    #[test]
    fn default_layout_mixes_sizes_and_keys() {
        let c = SyntheticSpec::default_cohorts(None);
        assert_eq!(c.len(), 8);
        assert!(c.iter().any(|t| t.size < 50) && c.iter().any(|t| t.size > 50));
        let mut cancers: Vec<&str> = c.iter().map(|t| t.cancer_type.as_str()).collect();
        cancers.sort_unstable();
        cancers.dedup();
        assert_eq!(cancers.len(), 4);
        let mut treatments: Vec<String> = c.iter().map(|t| t.treatment.to_string()).collect();
        treatments.sort();
        treatments.dedup();
        assert_eq!(treatments.len(), 4);
    }

    #[test]
    fn combination_uses_union_of_latents() {
        let m = PlantedMapping::default();
        assert_eq!(m.active("CTLA-4+PD-1".parse().unwrap()), vec![0, 1, 4, 5]);
        assert_eq!(m.active("PD-L1".parse().unwrap()), vec![2, 3]);
    }

    #[test]
    fn missing_rate_one_drops_every_target_group() {
        let spec = SyntheticSpec {
            missing_rate: 1.0,
            ..small(1)
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert!(ds.records.iter().all(|r| r.pathway_scores.is_none() && r.tide.is_none()));
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = SyntheticSpec {
            signal_strength: -1.0,
            ..small(0)
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }
}
