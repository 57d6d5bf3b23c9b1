use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean with a two-sided 95% Student-t interval across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub mean: f64,
    /// `t_{0.975, n−1} · s / √n`, before any clipping.
    pub half_width: f64,
    /// Interval bounds clipped to `[0, 1]`.
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    /// Set when `n == 1` and the interval collapses onto the mean.
    pub degenerate: bool,
}

/// 0.975 quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// `None` for an empty slice.
pub fn aggregate_seeds(values: &[f64]) -> Option<SeedAggregate> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        log::warn!("single seed: confidence interval is degenerate");
        return Some(SeedAggregate {
            mean,
            half_width: 0.0,
            ci_low: mean,
            ci_high: mean,
            n,
            degenerate: true,
        });
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let half_width = t_quantile(n - 1) * var.sqrt() / (n as f64).sqrt();
    Some(SeedAggregate {
        mean,
        half_width,
        ci_low: (mean - half_width).clamp(0.0, 1.0).min(mean),
        ci_high: (mean + half_width).clamp(0.0, 1.0).max(mean),
        n,
        degenerate: false,
    })
}
