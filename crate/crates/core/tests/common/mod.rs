//! Independent oracles shared by the integration tests: central finite
//! differences, an all-pairs AUC, confusion counts and small fixtures.
#![allow(dead_code)]

use biocompass::diffcore::{Tape, Tensor, Var};
use biocompass::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU inputs never sit on the kink.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates skipped because the two one-sided differences disagree,
    /// i.e. a kink lies within one step.
    pub kinks: usize,
    /// Largest relative error over derivatives of magnitude at least 1e-3.
    pub worst_rel: f64,
    /// Largest absolute error over the remaining, near-zero derivatives.
    pub worst_abs: f64,
    pub failures: Vec<String>,
}

impl GradCheck {
    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
        self.worst_abs = self.worst_abs.max(other.worst_abs);
        self.failures.extend(other.failures);
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    /// Compares one analytic derivative against `f` evaluated at the three
    /// points `x − h`, `x`, `x + h`.
    pub fn compare(&mut self, label: &str, analytic: f64, f_minus: f64, f0: f64, f_plus: f64) {
        let fwd = (f_plus - f0) / FD_STEP;
        let bwd = (f0 - f_minus) / FD_STEP;
        if (fwd - bwd).abs() > 1e-3 * (1.0 + fwd.abs() + bwd.abs()) {
            self.kinks += 1;
            return;
        }
        let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
        let diff = (analytic - numeric).abs();
        self.checked += 1;
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        if scale >= 1e-3 {
            self.worst_rel = self.worst_rel.max(rel);
        } else {
            self.worst_abs = self.worst_abs.max(diff);
        }
        if diff > ABS_TOL && rel > REL_TOL {
            self.failures.push(format!("{label}: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})"));
        }
    }
}

/// Checks `d/dx_i sum(W ⊙ op(x_1..x_k))` for a random fixed weight tensor
/// `W`, against central differences on every coordinate of every input.
pub fn check_op<F>(name: &str, inputs: &[Tensor], seed: u64, build: F) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut r = rng(seed ^ 0x5eed);
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars).expect("forward");
        let shape = tape.value(out).shape().to_vec();
        random_tensor(&mut r, &shape, 1.0)
    };
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars).expect("forward");
        tape.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).expect("forward");
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).expect("mul");
    let loss = tape.sum(prod).expect("sum");
    let grads = tape.gradients(loss).expect("backward");

    let mut report = GradCheck::default();
    let f0 = eval(inputs);
    for (k, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[k].shape());
        let g = grads.get(*var).unwrap_or(&zeros).clone();
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            report.compare(&format!("{name} input {k}[{i}]"), g.data()[i], eval(&minus), f0, eval(&plus));
        }
    }
    report
}

/// All-pairs AUC with half credit for ties.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0u64;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// `(tp, fp, tn, fn)` by direct counting.
pub fn confusion(preds: &[u8], labels: &[u8]) -> (u64, u64, u64, u64) {
    let count = |p: u8, y: u8| preds.iter().zip(labels).filter(|&(&a, &b)| a == p && b == y).count() as u64;
    (count(1, 1), count(1, 0), count(0, 0), count(0, 1))
}

/// Two-sided 0.975 Student-t quantiles from a printed table, by degrees of
/// freedom 1..=5.
pub const T_TABLE: [f64; 5] = [12.7062, 4.3027, 3.1824, 2.7764, 2.5706];

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One gradient check per differentiable primitive, with shapes and inputs
/// drawn from `seed`.
pub fn primitive_suite(seed: u64) -> Vec<(&'static str, GradCheck)> {
    let mut r = rng(seed);
    let m = 2 + (seed % 3) as usize;
    let k = 2 + (seed % 2) as usize;
    let n = 3;
    let mut t = |shape: &[usize]| random_tensor(&mut r, shape, 1.5);
    let (a, b, c) = (t(&[m, k]), t(&[k, n]), t(&[m, k]));
    let (bias, tokens) = (t(&[k]), t(&[m * 2, k]));
    let (expr, emb) = (t(&[m, k]), t(&[k, n]));
    let target = t(&[m, k]);
    let logits = t(&[m]);
    let mut r2 = rng(seed ^ 0xabc);
    let kinked = random_away_from_zero(&mut r2, &[m, k]);
    let probs = Tensor::new(vec![m], (0..m).map(|_| r2.random_range(0.05..0.95)).collect()).unwrap();
    let labels = Tensor::new(vec![m], (0..m).map(|i| (i % 2) as f64).collect()).unwrap();
    let mask = Tensor::new(vec![m, k], (0..m * k).map(|_| if r2.random::<f64>() < 0.7 { 1.0 } else { 0.0 }).collect()).unwrap();
    let factor = r2.random_range(-2.0..2.0);

    let cases: Vec<(&'static str, Vec<Tensor>, Build)> = vec![
        ("matmul", vec![a.clone(), b.clone()], Box::new(|tp, v| tp.matmul(v[0], v[1]))),
        ("add_bias", vec![a.clone(), bias], Box::new(|tp, v| tp.add_bias(v[0], v[1]))),
        ("add", vec![a.clone(), c.clone()], Box::new(|tp, v| tp.add(v[0], v[1]))),
        ("sub", vec![a.clone(), c.clone()], Box::new(|tp, v| tp.sub(v[0], v[1]))),
        ("mul", vec![a.clone(), c.clone()], Box::new(|tp, v| tp.mul(v[0], v[1]))),
        ("scale", vec![a.clone()], Box::new(move |tp, v| tp.scale(v[0], factor))),
        ("relu", vec![kinked], Box::new(|tp, v| tp.relu(v[0]))),
        ("sigmoid", vec![a.clone()], Box::new(|tp, v| tp.sigmoid(v[0]))),
        ("softplus", vec![a.clone()], Box::new(|tp, v| tp.softplus(v[0]))),
        ("mean_rows", vec![a.clone()], Box::new(|tp, v| tp.mean_rows(v[0]))),
        ("block_mean_rows", vec![tokens.clone()], Box::new(move |tp, v| tp.block_mean_rows(v[0], m))),
        ("expr_tokens", vec![expr, emb], Box::new(|tp, v| tp.expr_tokens(v[0], v[1]))),
        ("transpose", vec![a.clone()], Box::new(|tp, v| tp.transpose(v[0]))),
        ("softmax_rows", vec![a.clone()], Box::new(|tp, v| tp.softmax_rows(v[0]))),
        ("slice_rows", vec![tokens], Box::new(move |tp, v| tp.slice_rows(v[0], 1, m))),
        ("concat_rows", vec![a.clone(), c.clone()], Box::new(|tp, v| tp.concat_rows(&[v[0], v[1]]))),
        ("reshape", vec![a.clone()], Box::new(move |tp, v| tp.reshape(v[0], vec![k, m]))),
        ("sum", vec![a.clone()], Box::new(|tp, v| tp.sum(v[0]))),
        ("mse", vec![a.clone(), target.clone()], Box::new(|tp, v| tp.mse(v[0], v[1], None))),
        ("mse_masked", vec![a.clone(), target], Box::new(move |tp, v| tp.mse(v[0], v[1], Some(&mask)))),
        ("bce", vec![probs], {
            let l = labels.clone();
            Box::new(move |tp, v| tp.bce(v[0], &l))
        }),
        ("bce_with_logits", vec![logits], Box::new(move |tp, v| tp.bce_with_logits(v[0], &labels))),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, inputs, build))| (name, check_op(name, &inputs, seed.wrapping_mul(31).wrapping_add(i as u64), build)))
        .collect()
}

use biocompass::model::{BaseTarget, BioCompass, ModelConfig, Pooling, TrainMode, TreatmentTarget};
use biocompass::objective::{composite_loss, AlignNorm, BatchTargets, LossWeights, MaskedTarget};

/// Small full-model fixture: configuration, batch and loss settings drawn
/// from `seed`, with the encoder trainable.
pub struct CompositeFixture {
    pub model: BioCompass,
    pub expression: Tensor,
    pub treatments: Vec<TreatmentTarget>,
    pub targets: BatchTargets,
    pub weights: LossWeights,
    pub norm: AlignNorm,
}

fn masked(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> MaskedTarget {
    let values = random_tensor(r, &[rows, cols], 1.0);
    let mask = Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| if r.random::<f64>() < 0.75 { 1.0 } else { 0.0 }).collect()).unwrap();
    MaskedTarget { values, mask }
}

impl CompositeFixture {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed.wrapping_add(1000));
        let (genes, batch) = (6, 3);
        let mut cfg = ModelConfig::new(genes, 2, 1, 1, 3);
        cfg.encoder.token_dim = 3;
        cfg.treatment_dim = 2;
        cfg.pathway_hidden = 2;
        if seed % 2 == 1 {
            cfg.encoder.pooling = Pooling::Attention;
        }
        if seed.is_multiple_of(3) {
            cfg.encoder.hidden_dims = vec![4, 3];
        }
        if seed % 4 == 1 {
            cfg.classifier_hidden = Some(3);
        }
        cfg.gating = seed % 5 != 4;
        cfg.aux_on_gated = seed % 7 == 3;
        let mut model = BioCompass::new(cfg, seed).unwrap();
        model.set_mode(TrainMode::Fft);

        let options = [
            TreatmentTarget::single(BaseTarget::Pd1),
            TreatmentTarget::single(BaseTarget::Pdl1),
            TreatmentTarget::single(BaseTarget::Ctla4),
            TreatmentTarget::combination(&[BaseTarget::Ctla4, BaseTarget::Pd1]).unwrap(),
        ];
        let treatments = (0..batch).map(|_| options[r.random_range(0..options.len())]).collect();
        let expression = random_tensor(&mut r, &[batch, genes], 1.0);
        let labels = Tensor::new(vec![batch], (0..batch).map(|i| (i % 2) as f64).collect()).unwrap();
        let targets = BatchTargets {
            labels,
            pathways: masked(&mut r, batch, 42),
            biomarkers: masked(&mut r, batch, 2),
            tide: masked(&mut r, batch, 1),
            ipres: masked(&mut r, batch, 1),
            pheno: masked(&mut r, batch, 3),
        };
        let weights = LossWeights {
            cls: 1.0,
            pathway: r.random_range(0.0..1.0),
            align: r.random_range(0.0..1.0),
            aux: r.random_range(0.0..1.0),
        };
        let norm = if seed.is_multiple_of(2) { AlignNorm::BatchMean } else { AlignNorm::Raw };
        Self {
            model,
            expression,
            treatments,
            targets,
            weights,
            norm,
        }
    }

    pub fn loss(&self, model: &BioCompass) -> f64 {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &self.expression, &self.treatments).unwrap();
        composite_loss(&mut tape, &out, &self.targets, &self.weights, self.norm).unwrap().1.total
    }

    /// Analytic gradients of the total loss, one flat vector per parameter.
    pub fn analytic(&self) -> Vec<Vec<f64>> {
        let mut model = self.model.clone();
        model.params_mut().zero_grad();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &self.expression, &self.treatments).unwrap();
        let (vars, _) = composite_loss(&mut tape, &out, &self.targets, &self.weights, self.norm).unwrap();
        tape.backward(vars.total, model.params_mut()).unwrap();
        model.params().iter().map(|(_, p)| p.grad.data().to_vec()).collect()
    }
}

/// Composite-loss check on every coordinate of every parameter.
#[allow(clippy::needless_range_loop)]
pub fn composite_suite(seed: u64) -> GradCheck {
    let fx = CompositeFixture::new(seed);
    let analytic = fx.analytic();
    let f0 = fx.loss(&fx.model);
    let mut report = GradCheck::default();
    let mut probe = fx.model.clone();
    let ids: Vec<_> = fx.model.params().ids().collect();
    for (p, id) in ids.into_iter().enumerate() {
        let name = fx.model.params().get(id).name.clone();
        for i in 0..analytic[p].len() {
            let x = fx.model.params().get(id).tensor.data()[i];
            probe.params_mut().get_mut(id).tensor.data_mut()[i] = x + FD_STEP;
            let plus = fx.loss(&probe);
            probe.params_mut().get_mut(id).tensor.data_mut()[i] = x - FD_STEP;
            let minus = fx.loss(&probe);
            probe.params_mut().get_mut(id).tensor.data_mut()[i] = x;
            report.compare(&format!("seed {seed} {name}[{i}]"), analytic[p][i], minus, f0, plus);
        }
    }
    report
}

/// Largest absolute deviation between the library and a hand computation on
/// a one-sample batch: `(pathway, alignment, aux, gates)`.
#[derive(Debug, Clone, Copy)]
pub struct HandBatchErrors {
    pub pathway: f64,
    pub align: f64,
    pub aux: f64,
    pub gates: f64,
}

impl HandBatchErrors {
    pub fn max(&self) -> f64 {
        self.pathway.max(self.align).max(self.aux).max(self.gates)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn pattern(shape: &[usize], offset: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| 0.3 * ((i as f64) * 0.7 + offset).sin()).collect()).unwrap()
}

/// Tiny model (`G = 2`, `d_e = 2`, `d_h = 2`, mean pooling) with every
/// parameter set to a fixed sinusoidal pattern.
pub fn patterned_model() -> BioCompass {
    let mut cfg = ModelConfig::new(2, 2, 1, 1, 2);
    cfg.encoder.token_dim = 2;
    cfg.treatment_dim = 2;
    cfg.pathway_hidden = 2;
    let mut model = BioCompass::new(cfg, 0).unwrap();
    let ids: Vec<_> = model.params().ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let shape = model.params().get(id).tensor.shape().to_vec();
        model.set_param(id, pattern(&shape, k as f64 * 1.3)).unwrap();
    }
    model
}

/// The one-sample batch used with [`patterned_model`].
pub fn hand_batch() -> (Tensor, Vec<TreatmentTarget>, BatchTargets) {
    let x = Tensor::new(vec![1, 2], vec![0.8, -1.1]).unwrap();
    let t = vec![TreatmentTarget::combination(&[BaseTarget::Pd1, BaseTarget::Ctla4]).unwrap()];
    let mut path_mask = Tensor::full(&[1, 42], 1.0);
    path_mask.data_mut()[5] = 0.0;
    path_mask.data_mut()[17] = 0.0;
    let targets = BatchTargets {
        labels: Tensor::new(vec![1], vec![1.0]).unwrap(),
        pathways: MaskedTarget {
            values: pattern(&[1, 42], 0.4),
            mask: path_mask,
        },
        biomarkers: MaskedTarget::present(Tensor::new(vec![1, 2], vec![0.25, -0.6]).unwrap()),
        tide: MaskedTarget::present(Tensor::new(vec![1, 1], vec![0.9]).unwrap()),
        ipres: MaskedTarget {
            values: Tensor::new(vec![1, 1], vec![-0.3]).unwrap(),
            mask: Tensor::new(vec![1, 1], vec![0.0]).unwrap(),
        },
        pheno: MaskedTarget::present(Tensor::new(vec![1, 2], vec![0.1, 0.7]).unwrap()),
    };
    (x, t, targets)
}

/// Row-major `v · W` for `W: [rows×cols]`.
fn vec_mat(v: &[f64], w: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(v.len(), rows);
    (0..cols).map(|j| (0..rows).map(|i| v[i] * w.data()[i * cols + j]).sum()).collect()
}

fn plus(a: &[f64], b: &Tensor) -> Vec<f64> {
    a.iter().zip(b.data()).map(|(x, y)| x + y).collect()
}

fn masked_sq(pred: &[f64], t: &MaskedTarget) -> f64 {
    pred.iter()
        .zip(t.values.data())
        .zip(t.mask.data())
        .map(|((p, y), m)| m * (p - y) * (p - y))
        .sum()
}

/// Plain-loop forward pass and losses for the patterned model, compared
/// against the library.
pub fn hand_batch_errors() -> HandBatchErrors {
    let model = patterned_model();
    let (x, treatments, targets) = hand_batch();
    let ids = model.ids().clone();
    let p = |id| model.params().get(id).tensor.clone();

    let emb = p(ids.gene_embedding);
    let pooled: Vec<f64> = (0..2).map(|d| (0..2).map(|g| x.data()[g] * emb.data()[g * 2 + d]).sum::<f64>() / 2.0).collect();
    let concepts: Vec<f64> = plus(&vec_mat(&pooled, &p(ids.concept_w)), &p(ids.concept_b)).into_iter().map(softplus).collect();
    let e_t = vec_mat(&treatments[0].multi_hot(), &p(ids.treatment_embedding));
    let h: Vec<f64> = plus(&vec_mat(&e_t, &p(ids.gate_w1)), &p(ids.gate_b1)).into_iter().map(|v| v.max(0.0)).collect();
    let gates: Vec<f64> = plus(&vec_mat(&h, &p(ids.gate_w2)), &p(ids.gate_b2)).into_iter().map(sigmoid).collect();
    let ph: Vec<f64> = plus(&vec_mat(&pooled, &p(ids.path_w1)), &p(ids.path_b1)).into_iter().map(|v| v.max(0.0)).collect();
    let pathways = plus(&vec_mat(&ph, &p(ids.path_w2)), &p(ids.path_b2));
    let projected = vec_mat(&concepts, &p(ids.align_w));
    let tide = plus(&vec_mat(&concepts, &p(ids.tide_w)), &p(ids.tide_b));
    let ipres = plus(&vec_mat(&concepts, &p(ids.ipres_w)), &p(ids.ipres_b));
    let pheno = plus(&vec_mat(&concepts, &p(ids.pheno_w)), &p(ids.pheno_b));

    let hand_path = masked_sq(&pathways, &targets.pathways);
    let hand_align = masked_sq(&projected, &targets.biomarkers);
    let hand_aux = masked_sq(&tide, &targets.tide) + masked_sq(&ipres, &targets.ipres) + masked_sq(&pheno, &targets.pheno);

    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &x, &treatments).unwrap();
    let (_, b) = composite_loss(&mut tape, &out, &targets, &LossWeights::default(), AlignNorm::BatchMean).unwrap();
    let lib_gates = tape.value(out.gates.unwrap()).data().to_vec();
    assert_eq!(lib_gates.len(), 44);
    HandBatchErrors {
        pathway: (b.pathway - hand_path).abs(),
        align: (b.align - hand_align).abs(),
        aux: (b.aux() - hand_aux).abs(),
        gates: lib_gates.iter().zip(&gates).map(|(a, h)| (a - h).abs()).fold(0.0, f64::max),
    }
}

use biocompass::data::{generate_synthetic, Dataset, SyntheticSpec};
use biocompass::eval::{ModelOptions, RunConfig};

/// Eight default-layout cohorts of `size` samples over `genes` genes.
pub fn small_dataset(size: usize, genes: usize, signal: f64, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        cohorts: SyntheticSpec::default_cohorts(Some(size)),
        gene_count: genes,
        signal_strength: signal,
        seed,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap()
}

/// A run configuration small enough for unit-speed protocol tests.
pub fn quick_run(seeds: Vec<u64>) -> RunConfig {
    let mut cfg = RunConfig {
        model: ModelOptions {
            token_dim: 4,
            treatment_dim: 4,
            pathway_hidden: 4,
            ..ModelOptions::default()
        },
        seeds,
        ..RunConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 16;
    cfg
}
