//! Treatment-gated concept bottleneck network.
//!
//! Dataflow for one batch:
//!
//! ```text
//! expression ─▶ encoder ─▶ E ─▶ mean ─┬─▶ pathway head ─▶ p̂ (42)
//!                                     └─▶ bottleneck ─▶ c (44) ─┬─▶ projection ─▶ CW
//!                                                               ├─▶ aux heads ─▶ TIDE / IPRES / pheno
//!  treatment ─▶ embedding ─▶ gating net ─▶ g ───────────────── ⊙ ─▶ c' ─▶ classifier ─▶ p(response)
//! ```
//!
//! The encoder is a small stand-in: gene tokens are learned gene embeddings
//! scaled by normalized expression, optionally mixed by one self-attention
//! block and a position-wise feed-forward stack.

mod checkpoint;
mod treatment;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use treatment::{BaseTarget, TreatmentTarget, N_BASE_TARGETS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Width of the concept bottleneck.
pub const N_CONCEPTS: usize = 44;
/// Number of CTLA-4/PD-1 pathway features predicted from the embeddings.
pub const N_PATHWAYS: usize = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Encoder frozen; bottleneck and heads trained.
    #[default]
    Pft,
    /// Everything trained.
    Fft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub gene_count: usize,
    pub token_dim: usize,
    #[serde(default)]
    pub pooling: Pooling,
    /// Widths of the position-wise feed-forward stack; empty means tokens
    /// pass through unchanged.
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Treatment embedding width `d_h`.
    pub treatment_dim: usize,
    pub pathway_hidden: usize,
    pub classifier_hidden: Option<usize>,
    pub biomarker_dim: usize,
    pub tide_dim: usize,
    pub ipres_dim: usize,
    pub pheno_dim: usize,
    /// When false the classifier reads the raw concepts.
    pub gating: bool,
    /// Aux heads read gated rather than raw concepts.
    pub aux_on_gated: bool,
}

impl ModelConfig {
    pub fn new(gene_count: usize, biomarker_dim: usize, tide_dim: usize, ipres_dim: usize, pheno_dim: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                gene_count,
                token_dim: 32,
                pooling: Pooling::Mean,
                hidden_dims: Vec::new(),
            },
            treatment_dim: 16,
            pathway_hidden: 32,
            classifier_hidden: None,
            biomarker_dim,
            tide_dim,
            ipres_dim,
            pheno_dim,
            gating: true,
            aux_on_gated: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("gene_count", self.encoder.gene_count),
            ("token_dim", self.encoder.token_dim),
            ("treatment_dim", self.treatment_dim),
            ("pathway_hidden", self.pathway_hidden),
            ("biomarker_dim", self.biomarker_dim),
            ("tide_dim", self.tide_dim),
            ("ipres_dim", self.ipres_dim),
            ("pheno_dim", self.pheno_dim),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.encoder.hidden_dims.contains(&0) || self.classifier_hidden == Some(0) {
            return Err(Error::Config("hidden layer widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Named parameter handles; every learnable symbol maps to one field.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamIds {
    pub gene_embedding: ParamId,
    pub attention: Option<[ParamId; 3]>,
    pub encoder_ff: Vec<ParamId>,
    pub concept_w: ParamId,
    pub concept_b: ParamId,
    pub treatment_embedding: ParamId,
    pub gate_w1: ParamId,
    pub gate_b1: ParamId,
    pub gate_w2: ParamId,
    pub gate_b2: ParamId,
    pub path_w1: ParamId,
    pub path_b1: ParamId,
    pub path_w2: ParamId,
    pub path_b2: ParamId,
    pub align_w: ParamId,
    pub tide_w: ParamId,
    pub tide_b: ParamId,
    pub ipres_w: ParamId,
    pub ipres_b: ParamId,
    pub pheno_w: ParamId,
    pub pheno_b: ParamId,
    pub cls_hidden: Option<(ParamId, ParamId)>,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
}

impl ParamIds {
    pub fn encoder(&self) -> Vec<ParamId> {
        let mut ids = vec![self.gene_embedding];
        if let Some(a) = self.attention {
            ids.extend(a);
        }
        ids.extend(&self.encoder_ff);
        ids
    }

    pub fn gating(&self) -> Vec<ParamId> {
        vec![self.treatment_embedding, self.gate_w1, self.gate_b1, self.gate_w2, self.gate_b2]
    }

    pub fn pathway_head(&self) -> Vec<ParamId> {
        vec![self.path_w1, self.path_b1, self.path_w2, self.path_b2]
    }

    pub fn aux_heads(&self) -> Vec<ParamId> {
        vec![self.tide_w, self.tide_b, self.ipres_w, self.ipres_b, self.pheno_w, self.pheno_b]
    }
}

/// Per-concept view of one sample's bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVector {
    pub raw: Vec<f64>,
    pub gates: Vec<f64>,
    pub gated: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxOutputs {
    pub tide: Tensor,
    pub ipres: Tensor,
    pub pheno: Tensor,
}

/// Tape handles for every intermediate of one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutputs {
    /// Stacked per-sample embeddings, `[(B·G)×d_e]`.
    pub embeddings: Var,
    /// `mean_rows(E_i)` per sample, `[B×d_e]`.
    pub pooled: Var,
    pub concepts: Var,
    pub gates: Option<Var>,
    pub gated: Var,
    pub pathways: Var,
    pub projected: Var,
    pub tide: Var,
    pub ipres: Var,
    pub pheno: Var,
    pub prob: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BioCompass {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

struct Init<'a> {
    rng: ChaCha8Rng,
    store: &'a mut ParamStore,
}

impl Init<'_> {
    /// Weight of shape `[fan_in × fan_out]` and optional bias, both drawn
    /// from U(-1/√fan_in, 1/√fan_in).
    fn layer(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> (ParamId, Option<ParamId>) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(name, &[fan_in, fan_out], bound);
        let b = bias.then(|| self.uniform(&format!("{}_bias", name.trim_end_matches("_weight")), &[fan_out], bound));
        (w, b)
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        let t = Tensor::raw(shape.to_vec(), data);
        self.store.add(name, t)
    }
}

impl BioCompass {
    /// Seeded initialization. Layers use U(-1/√fan_in, 1/√fan_in). Gene
    /// embeddings use U(-√(3G), √(3G)) so that the mean-pooled embedding of
    /// standardized expression has unit variance per dimension.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            store: &mut store,
        };
        let g = config.encoder.gene_count;
        let de = config.encoder.token_dim;
        let dh = config.treatment_dim;

        let gene_embedding = init.uniform("encoder.gene_embedding", &[g, de], (3.0 * g as f64).sqrt());
        let attention = match config.encoder.pooling {
            Pooling::Mean => None,
            Pooling::Attention => Some([
                init.layer("encoder.attn.query_weight", de, de, false).0,
                init.layer("encoder.attn.key_weight", de, de, false).0,
                init.layer("encoder.attn.value_weight", de, de, false).0,
            ]),
        };
        let mut encoder_ff = Vec::new();
        if !config.encoder.hidden_dims.is_empty() {
            let mut widths = vec![de];
            widths.extend(&config.encoder.hidden_dims);
            widths.push(de);
            for (i, pair) in widths.windows(2).enumerate() {
                encoder_ff.push(init.layer(&format!("encoder.ff.{i}_weight"), pair[0], pair[1], false).0);
            }
        }

        let (concept_w, concept_b) = init.layer("bottleneck.concept_weight", de, N_CONCEPTS, true);
        let treatment_embedding = init.uniform("gating.treatment_embedding", &[N_BASE_TARGETS, dh], 1.0);
        let (gate_w1, gate_b1) = init.layer("gating.w1_weight", dh, dh, true);
        let (gate_w2, gate_b2) = init.layer("gating.w2_weight", dh, N_CONCEPTS, true);
        let (path_w1, path_b1) = init.layer("pathway.hidden_weight", de, config.pathway_hidden, true);
        let (path_w2, path_b2) = init.layer("pathway.out_weight", config.pathway_hidden, N_PATHWAYS, true);
        let (align_w, _) = init.layer("alignment.projection_weight", N_CONCEPTS, config.biomarker_dim, false);
        let (tide_w, tide_b) = init.layer("aux.tide_weight", N_CONCEPTS, config.tide_dim, true);
        let (ipres_w, ipres_b) = init.layer("aux.ipres_weight", N_CONCEPTS, config.ipres_dim, true);
        let (pheno_w, pheno_b) = init.layer("aux.pheno_weight", N_CONCEPTS, config.pheno_dim, true);
        let (cls_hidden, cls_in) = match config.classifier_hidden {
            Some(h) => {
                let (w, b) = init.layer("classifier.hidden_weight", N_CONCEPTS, h, true);
                (Some((w, b.unwrap())), h)
            }
            None => (None, N_CONCEPTS),
        };
        let (cls_w, cls_b) = init.layer("classifier.out_weight", cls_in, 1, true);

        let ids = ParamIds {
            gene_embedding,
            attention,
            encoder_ff,
            concept_w,
            concept_b: concept_b.unwrap(),
            treatment_embedding,
            gate_w1,
            gate_b1: gate_b1.unwrap(),
            gate_w2,
            gate_b2: gate_b2.unwrap(),
            path_w1,
            path_b1: path_b1.unwrap(),
            path_w2,
            path_b2: path_b2.unwrap(),
            align_w,
            tide_w,
            tide_b: tide_b.unwrap(),
            ipres_w,
            ipres_b: ipres_b.unwrap(),
            pheno_w,
            pheno_b: pheno_b.unwrap(),
            cls_hidden,
            cls_w,
            cls_b: cls_b.unwrap(),
        };
        Ok(Self { config, params: store, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn ids(&self) -> &ParamIds {
        &self.ids
    }

    /// Overwrites a parameter's value, keeping its shape.
    pub fn set_param(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = self.params.get_mut(id);
        if p.tensor.shape() != value.shape() {
            return Err(Error::shape("set_param", p.tensor.shape(), value.shape()));
        }
        p.tensor = value;
        Ok(())
    }

    /// Marks encoder parameters frozen (PFT) or trainable (FFT).
    pub fn set_mode(&mut self, mode: TrainMode) {
        for id in self.ids.encoder() {
            self.params.set_trainable(id, mode == TrainMode::Fft);
        }
    }

    /// Enables or disables the gating module structurally.
    pub fn set_gating(&mut self, enabled: bool) {
        self.config.gating = enabled;
    }

    pub fn encoder_values(&self) -> Vec<f64> {
        self.ids
            .encoder()
            .into_iter()
            .flat_map(|id| self.params.get(id).tensor.data().to_vec())
            .collect()
    }

    fn check_expression(&self, expression: &Tensor) -> Result<()> {
        let g = self.config.encoder.gene_count;
        if expression.shape().len() != 2 || expression.cols() != g {
            return Err(Error::Schema {
                row: 0,
                column: "expression".into(),
                message: format!("expected {g} genes, got shape {:?}", expression.shape()),
            });
        }
        Ok(())
    }

    /// Encoder on the tape: returns the stacked embeddings `[(B·G)×d_e]`
    /// and their per-sample row means `[B×d_e]`.
    pub fn encode_on(&self, tape: &mut Tape, expression: &Tensor) -> Result<(Var, Var)> {
        self.check_expression(expression)?;
        let batch = expression.rows();
        let g = self.config.encoder.gene_count;
        let x = tape.constant(expression.clone());
        let emb = tape.param(&self.params, self.ids.gene_embedding);
        let mut e = tape.expr_tokens(x, emb)?;

        if let Some([wq, wk, wv]) = self.ids.attention {
            let (wq, wk, wv) = (
                tape.param(&self.params, wq),
                tape.param(&self.params, wk),
                tape.param(&self.params, wv),
            );
            let inv_sqrt_d = 1.0 / (self.config.encoder.token_dim as f64).sqrt();
            let mut blocks = Vec::with_capacity(batch);
            for b in 0..batch {
                let t = tape.slice_rows(e, b * g, g)?;
                let q = tape.matmul(t, wq)?;
                let k = tape.matmul(t, wk)?;
                let v = tape.matmul(t, wv)?;
                let kt = tape.transpose(k)?;
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, inv_sqrt_d)?;
                let attn = tape.softmax_rows(scores)?;
                let mixed = tape.matmul(attn, v)?;
                blocks.push(tape.add(t, mixed)?);
            }
            e = tape.concat_rows(&blocks)?;
        }

        let n_ff = self.ids.encoder_ff.len();
        for (i, id) in self.ids.encoder_ff.iter().enumerate() {
            let w = tape.param(&self.params, *id);
            e = tape.matmul(e, w)?;
            if i + 1 < n_ff {
                e = tape.relu(e)?;
            }
        }

        let pooled = tape.block_mean_rows(e, batch)?;
        Ok((e, pooled))
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let wv = tape.param(&self.params, w);
        let y = tape.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = tape.param(&self.params, b);
                tape.add_bias(y, bv)
            }
            None => Ok(y),
        }
    }

    /// `softplus(pooled · W_c + b_c)`, `[B×44]`.
    pub fn concepts_on(&self, tape: &mut Tape, pooled: Var) -> Result<Var> {
        let z = self.linear(tape, pooled, self.ids.concept_w, Some(self.ids.concept_b))?;
        tape.softplus(z)
    }

    /// Gates `σ(W2 · ReLU(W1 · e_t + b1) + b2)` for a `[B×3]` multi-hot
    /// treatment matrix, `[B×44]`.
    pub fn gates_on(&self, tape: &mut Tape, treatments: &Tensor) -> Result<Var> {
        let t = tape.constant(treatments.clone());
        let emb = tape.param(&self.params, self.ids.treatment_embedding);
        let e_t = tape.matmul(t, emb)?;
        let h = self.linear(tape, e_t, self.ids.gate_w1, Some(self.ids.gate_b1))?;
        let h = tape.relu(h)?;
        let z = self.linear(tape, h, self.ids.gate_w2, Some(self.ids.gate_b2))?;
        tape.sigmoid(z)
    }

    /// Response probability, shape `[B]`.
    pub fn classify_on(&self, tape: &mut Tape, gated: Var) -> Result<Var> {
        let mut h = gated;
        if let Some((w, b)) = self.ids.cls_hidden {
            h = self.linear(tape, h, w, Some(b))?;
            h = tape.relu(h)?;
        }
        let logit = self.linear(tape, h, self.ids.cls_w, Some(self.ids.cls_b))?;
        let p = tape.sigmoid(logit)?;
        let batch = tape.value(p).rows();
        tape.reshape(p, vec![batch])
    }

    pub fn pathways_on(&self, tape: &mut Tape, pooled: Var) -> Result<Var> {
        let h = self.linear(tape, pooled, self.ids.path_w1, Some(self.ids.path_b1))?;
        let h = tape.relu(h)?;
        self.linear(tape, h, self.ids.path_w2, Some(self.ids.path_b2))
    }

    /// `C · W`, `[B×d_b]`.
    pub fn project_on(&self, tape: &mut Tape, concepts: Var) -> Result<Var> {
        self.linear(tape, concepts, self.ids.align_w, None)
    }

    pub fn aux_on(&self, tape: &mut Tape, concepts: Var) -> Result<(Var, Var, Var)> {
        Ok((
            self.linear(tape, concepts, self.ids.tide_w, Some(self.ids.tide_b))?,
            self.linear(tape, concepts, self.ids.ipres_w, Some(self.ids.ipres_b))?,
            self.linear(tape, concepts, self.ids.pheno_w, Some(self.ids.pheno_b))?,
        ))
    }

    /// One tape-recorded pass over a batch. `expression` is `[B×G]`
    /// normalized expression. Encoder trainability follows the last
    /// [`BioCompass::set_mode`].
    pub fn forward(&self, tape: &mut Tape, expression: &Tensor, treatments: &[TreatmentTarget]) -> Result<ForwardOutputs> {
        if treatments.len() != expression.rows() {
            return Err(Error::shape(
                "forward",
                expression.shape(),
                &[treatments.len(), N_BASE_TARGETS],
            ));
        }
        let (embeddings, pooled) = self.encode_on(tape, expression)?;
        let concepts = self.concepts_on(tape, pooled)?;
        let (gates, gated) = if self.config.gating {
            let g = self.gates_on(tape, &treatment_matrix(treatments))?;
            (Some(g), tape.mul(concepts, g)?)
        } else {
            (None, concepts)
        };
        let prob = self.classify_on(tape, gated)?;
        let pathways = self.pathways_on(tape, pooled)?;
        let projected = self.project_on(tape, concepts)?;
        let aux_input = if self.config.aux_on_gated { gated } else { concepts };
        let (tide, ipres, pheno) = self.aux_on(tape, aux_input)?;
        Ok(ForwardOutputs {
            embeddings,
            pooled,
            concepts,
            gates,
            gated,
            pathways,
            projected,
            tide,
            ipres,
            pheno,
            prob,
        })
    }

    /// Forward-only response probabilities.
    pub fn predict(&self, expression: &Tensor, treatments: &[TreatmentTarget]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, expression, treatments)?;
        Ok(tape.value(out.prob).data().to_vec())
    }

    /// Gene-token embedding matrix `E ∈ R^{G×d_e}` for one sample.
    pub fn encode(&self, expression: &[f64]) -> Result<Tensor> {
        let x = row_tensor(expression);
        let mut tape = Tape::new();
        let (e, _) = self.encode_on(&mut tape, &x)?;
        Ok(tape.value(e).clone())
    }

    /// Raw concept scores for an embedding matrix `E`.
    pub fn concepts(&self, embeddings: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pooled = self.pool(&mut tape, embeddings)?;
        let c = self.concepts_on(&mut tape, pooled)?;
        Ok(tape.value(c).data().to_vec())
    }

    pub fn gate(&self, concepts: &[f64], treatment: TreatmentTarget) -> Result<ConceptVector> {
        let mut tape = Tape::new();
        let c = tape.constant(concept_row(concepts)?);
        let g = self.gates_on(&mut tape, &treatment_matrix(&[treatment]))?;
        let gated = tape.mul(c, g)?;
        Ok(ConceptVector {
            raw: concepts.to_vec(),
            gates: tape.value(g).data().to_vec(),
            gated: tape.value(gated).data().to_vec(),
        })
    }

    pub fn classify(&self, gated: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let c = tape.constant(concept_row(gated)?);
        let p = self.classify_on(&mut tape, c)?;
        Ok(tape.value(p).item())
    }

    pub fn predict_pathways(&self, embeddings: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pooled = self.pool(&mut tape, embeddings)?;
        let p = self.pathways_on(&mut tape, pooled)?;
        Ok(tape.value(p).data().to_vec())
    }

    pub fn project_concepts(&self, concepts: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let c = tape.constant(concepts.clone());
        let p = self.project_on(&mut tape, c)?;
        Ok(tape.value(p).clone())
    }

    pub fn predict_aux(&self, concepts: &[f64]) -> Result<AuxOutputs> {
        let mut tape = Tape::new();
        let c = tape.constant(concept_row(concepts)?);
        let (t, i, p) = self.aux_on(&mut tape, c)?;
        Ok(AuxOutputs {
            tide: tape.value(t).clone(),
            ipres: tape.value(i).clone(),
            pheno: tape.value(p).clone(),
        })
    }

    fn pool(&self, tape: &mut Tape, embeddings: &Tensor) -> Result<Var> {
        let e = tape.constant(embeddings.clone());
        let m = tape.mean_rows(e)?;
        let d = tape.value(m).len();
        tape.reshape(m, vec![1, d])
    }
}

/// `[B×3]` multi-hot matrix for a list of treatments.
pub fn treatment_matrix(treatments: &[TreatmentTarget]) -> Tensor {
    let data = treatments.iter().flat_map(|t| t.multi_hot()).collect();
    Tensor::raw(vec![treatments.len(), N_BASE_TARGETS], data)
}

fn row_tensor(values: &[f64]) -> Tensor {
    Tensor::raw(vec![1, values.len()], values.to_vec())
}

fn concept_row(values: &[f64]) -> Result<Tensor> {
    if values.len() != N_CONCEPTS {
        return Err(Error::shape("concepts", &[values.len()], &[N_CONCEPTS]));
    }
    Ok(row_tensor(values))
}
