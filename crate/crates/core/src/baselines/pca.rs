use crate::error::{Error, Result};

const MAX_ITER: usize = 10_000;
const TOL: f64 = 1e-12;

/// Sample covariance (divisor `n − 1`, or `n` when `n == 1`) of the given
/// rows, together with the column means.
#[allow(clippy::needless_range_loop)]
pub fn covariance(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Validation("covariance of zero rows".into()));
    }
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        if r.len() != d {
            return Err(Error::shape("covariance", &[d], &[r.len()]));
        }
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let denom = n.saturating_sub(1).max(1) as f64;
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i][j] += c[i] * c[j] / denom;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i][j] = cov[j][i];
        }
    }
    Ok((mean, cov))
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Leading eigenpair of a symmetric positive semi-definite matrix by power
/// iteration from a deterministic start. The returned vector has unit norm;
/// its sign is left to the caller.
pub fn power_iteration(m: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let d = m.len();
    if d == 0 {
        return (0.0, Vec::new());
    }
    // A start vector with distinct entries avoids being orthogonal to the
    // leading eigenvector in symmetric toy cases.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..MAX_ITER {
        let w = mat_vec(m, &v);
        let nw = norm(&w);
        if nw == 0.0 {
            return (0.0, v);
        }
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        lambda = nw;
        if delta < TOL {
            break;
        }
    }
    (lambda, v)
}

/// Top `k` eigenvectors by power iteration with deflation.
pub fn top_components(cov: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let mut m = cov.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k.min(cov.len()) {
        let (lambda, v) = power_iteration(&m);
        if lambda <= 0.0 {
            break;
        }
        for i in 0..m.len() {
            for j in 0..m.len() {
                m[i][j] -= lambda * v[i] * v[j];
            }
        }
        out.push(v);
    }
    out
}

/// PC1 fitted on `train` rows and applied to every row. The sign makes the
/// training-row scores correlate positively with the first column.
pub fn pc1_scores(rows: &[Vec<f64>], train: &[usize]) -> Result<Vec<f64>> {
    let fit: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
    let (mean, cov) = covariance(&fit)?;
    let (_, mut v) = power_iteration(&cov);
    let project = |r: &[f64]| -> f64 { r.iter().zip(&mean).zip(&v).map(|((x, m), w)| (x - m) * w).sum() };
    let train_scores: Vec<f64> = fit.iter().map(|r| project(r)).collect();
    let first_mean = mean[0];
    let cross: f64 = fit.iter().zip(&train_scores).map(|(r, s)| (r[0] - first_mean) * s).sum();
    if cross < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let project = |r: &[f64]| -> f64 { r.iter().zip(&mean).zip(&v).map(|((x, m), w)| (x - m) * w).sum() };
    Ok(rows.iter().map(|r| project(r)).collect())
}
