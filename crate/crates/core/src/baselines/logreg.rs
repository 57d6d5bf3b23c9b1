use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::diffcore::{ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_ITER: usize = 5000;

/// Logistic regression on z-standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Feature statistics from the training rows.
    pub standardizer: Standardizer,
    pub l2: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Gradient norm at the returned parameters.
    pub grad_norm: f64,
}

impl LinearModel {
    pub fn logit(&self, features: &[f64]) -> f64 {
        let z = self.standardizer.transform_row(features);
        self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict_proba(&self, features: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.logit(features)).exp())
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

struct Problem {
    x: Tensor,
    y: Tensor,
    l2: f64,
}

impl Problem {
    /// Objective `mean BCE(σ(Xw + b), y) + (l2 / 2n)·‖w‖²` and its gradient
    /// with respect to `θ = [w; b]`, via the tape.
    fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = theta.len() - 1;
        let n = self.y.len();
        let mut store = ParamStore::new();
        let wid = store.add("w", Tensor::raw(vec![d, 1], theta[..d].to_vec()));
        let bid = store.add("b", Tensor::raw(vec![1], vec![theta[d]]));
        let mut tape = Tape::new();
        let x = tape.constant(self.x.clone());
        let w = tape.param(&store, wid);
        let b = tape.param(&store, bid);
        let xw = tape.matmul(x, w)?;
        let logits = tape.add_bias(xw, b)?;
        let logits = tape.reshape(logits, vec![n])?;
        let data = tape.bce_with_logits(logits, &self.y)?;
        let sq = tape.mul(w, w)?;
        let sq = tape.sum(sq)?;
        let pen = tape.scale(sq, self.l2 / (2.0 * n as f64))?;
        let loss = tape.add(data, pen)?;
        tape.backward(loss, &mut store)?;
        let mut grad = store.get(wid).grad.data().to_vec();
        grad.push(store.get(bid).grad.item());
        Ok((tape.value(loss).item(), grad))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// L2-regularized logistic regression by accelerated gradient descent with
/// backtracking and gradient-based restarts. Stops at gradient norm
/// `≤ 1e-6` or after 5000 iterations; `converged` records which.
pub fn fit_logreg(features: &[Vec<f64>], labels: &[u8], l2: f64) -> Result<LinearModel> {
    if features.len() != labels.len() {
        return Err(Error::shape("fit_logreg", &[features.len()], &[labels.len()]));
    }
    if !l2.is_finite() || l2 < 0.0 {
        return Err(Error::Config(format!("l2 must be nonnegative, got {l2}")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Fit("logistic regression needs both classes in the training labels".into()));
    }
    let standardizer = Standardizer::fit(features.iter().map(Vec::as_slice))?;
    let d = standardizer.dim();
    let n = features.len();
    let x: Vec<f64> = features.iter().flat_map(|r| standardizer.transform_row(r)).collect();
    let problem = Problem {
        x: Tensor::raw(vec![n, d], x),
        y: Tensor::raw(vec![n], labels.iter().map(|&v| v as f64).collect()),
        l2,
    };

    let mut x_cur = vec![0.0; d + 1];
    let (mut f_cur, mut g_cur) = problem.eval(&x_cur)?;
    let mut y = x_cur.clone();
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut iterations = 0;
    let mut converged = norm(&g_cur) <= GRAD_TOL;

    while !converged && iterations < MAX_ITER {
        iterations += 1;
        let (fy, gy) = problem.eval(&y)?;
        let gy_sq: f64 = gy.iter().map(|g| g * g).sum();
        let (x_new, f_new, g_new) = loop {
            let cand: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - g / lip).collect();
            let (fc, gc) = problem.eval(&cand)?;
            if fc <= fy - 0.5 * gy_sq / lip + 1e-15 * fy.abs() || lip > 1e12 {
                break (cand, fc, gc);
            }
            lip *= 2.0;
        };
        // Restart momentum when the step moves against the previous
        // direction or the objective went up.
        let along: f64 = y.iter().zip(&x_new).zip(&x_cur).map(|((yv, xn), xc)| (yv - xn) * (xn - xc)).sum();
        if along > 0.0 || f_new > f_cur {
            t = 1.0;
            y = x_new.clone();
        } else {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            y = x_new.iter().zip(&x_cur).map(|(xn, xc)| xn + beta * (xn - xc)).collect();
            t = t_next;
        }
        x_cur = x_new;
        f_cur = f_new;
        g_cur = g_new;
        lip = (lip * 0.9).max(1e-8);
        converged = norm(&g_cur) <= GRAD_TOL;
    }
    if !converged {
        log::warn!("logistic regression stopped after {iterations} iterations, gradient norm {}", norm(&g_cur));
    }
    Ok(LinearModel {
        weights: x_cur[..d].to_vec(),
        bias: x_cur[d],
        standardizer,
        l2,
        converged,
        iterations,
        grad_norm: norm(&g_cur),
    })
}
