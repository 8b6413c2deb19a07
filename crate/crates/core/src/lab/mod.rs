//! Finite-size experiments: instances, solvers, metrics and replicated runs.

pub mod fit;
pub mod instance;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fit::{fit, objective, separating_direction, FitResult, FitStatus, SolverConfig};
pub use instance::{generate_instance, generate_instance_with, Instance};

use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::system::Correlation;

/// `|<x_hat, x0>| / (||x_hat|| ||x0||)`; zero and flagged degenerate when either
/// vector vanishes.
pub fn correlation(x_hat: &[f64], x0: &[f64]) -> Correlation {
    let dot: f64 = x_hat.iter().zip(x0).map(|(a, b)| a * b).sum();
    let na = x_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        value: (dot.abs() / (na * nb)).min(1.0),
        degenerate: false,
    }
}

/// `||x_hat - mu x0 / ||x0|| ||^2`, the finite-size counterpart of `alpha^2`.
pub fn bias_norm(x_hat: &[f64], x0: &[f64], mu: f64) -> f64 {
    let nb = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    x_hat
        .iter()
        .zip(x0)
        .map(|(a, b)| (a - mu * b / nb).powi(2))
        .sum()
}

/// Result of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    /// `converged`, `max_iter`, `unbounded_separable` or `error`.
    pub status: String,
    pub correlation: Option<f64>,
    /// `<x_hat, x0>` and `||x_hat||^2`, enough to evaluate the bias norm for any `mu`.
    pub projection: Option<f64>,
    pub norm_sq: Option<f64>,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub loss: String,
    pub n: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub r: f64,
    pub trials: usize,
    pub base_seed: u64,
    /// Mean correlation over trials with a finite estimate (converged or max_iter).
    pub mean_correlation: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two finite estimates.
    pub std_correlation: Option<f64>,
    pub converged: usize,
    pub max_iter: usize,
    pub unbounded: usize,
    pub failed: usize,
    /// Excluded from equality comparisons' meaning; not written to records.
    pub wall_time_secs: f64,
    pub outcomes: Vec<TrialOutcome>,
}

impl ReplicateSummary {
    fn finite(&self) -> impl Iterator<Item = &TrialOutcome> {
        self.outcomes.iter().filter(|o| o.correlation.is_some())
    }

    /// Mean and sample standard deviation of `||x_hat - mu x0||^2` over trials
    /// with a finite estimate.
    pub fn bias_norm_stats(&self, mu: f64) -> (Option<f64>, Option<f64>) {
        let v: Vec<f64> = self
            .finite()
            .map(|o| o.norm_sq.unwrap() - 2.0 * mu * o.projection.unwrap() + mu * mu)
            .collect();
        mean_std(&v)
    }

    pub fn unbounded_fraction(&self) -> f64 {
        self.unbounded as f64 / self.trials as f64
    }
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (Some(mean), None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn run_trial(loss: &Loss, n: usize, delta: f64, epsilon: f64, r: f64, seed: u64, cfg: &SolverConfig) -> TrialOutcome {
    let result = generate_instance(n, delta, epsilon, seed).and_then(|inst| {
        let res = fit(&inst, loss, r, cfg)?;
        Ok((inst, res))
    });
    match result {
        Ok((inst, res)) => {
            let finite = !matches!(res.status, FitStatus::UnboundedSeparable { .. });
            let x0 = inst.x0.as_slice();
            TrialOutcome {
                seed,
                status: res.status.label().into(),
                correlation: finite.then(|| correlation(&res.x_hat, x0).value),
                projection: finite.then(|| res.x_hat.iter().zip(x0).map(|(a, b)| a * b).sum()),
                norm_sq: finite.then(|| res.x_hat.iter().map(|v| v * v).sum()),
                iterations: res.iterations,
                error: None,
            }
        }
        Err(e) => TrialOutcome {
            seed,
            status: "error".into(),
            correlation: None,
            projection: None,
            norm_sq: None,
            iterations: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Run `trials` independent instances with seeds `base_seed + k`. Per-trial
/// failures are counted, never propagated; the summary depends only on the
/// arguments (trials are reduced in seed order).
#[allow(clippy::too_many_arguments)]
pub fn run_replicates(
    loss: &Loss,
    n: usize,
    delta: f64,
    epsilon: f64,
    r: f64,
    trials: usize,
    base_seed: u64,
    cfg: &SolverConfig,
) -> Result<ReplicateSummary> {
    if trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    if n < 2 || !(delta > 0.0) || !(0.0..=0.5).contains(&epsilon) || !(r >= 0.0) {
        return Err(Error::domain(format!(
            "invalid experiment (n = {n}, delta = {delta}, eps = {epsilon}, r = {r})"
        )));
    }
    let start = Instant::now();
    let outcomes: Vec<TrialOutcome> = (0..trials as u64)
        .into_par_iter()
        .map(|k| run_trial(loss, n, delta, epsilon, r, base_seed.wrapping_add(k), cfg))
        .collect();
    let count = |s: &str| outcomes.iter().filter(|o| o.status == s).count();
    let corr: Vec<f64> = outcomes.iter().filter_map(|o| o.correlation).collect();
    let (mean, std) = mean_std(&corr);
    Ok(ReplicateSummary {
        loss: loss.to_string(),
        n,
        delta,
        epsilon,
        r,
        trials,
        base_seed,
        mean_correlation: mean,
        std_correlation: std,
        converged: count("converged"),
        max_iter: count("max_iter"),
        unbounded: count("unbounded_separable"),
        failed: count("error"),
        wall_time_secs: start.elapsed().as_secs_f64(),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_examples() {
        let x0 = [1.0, 0.0, 0.0];
        assert_eq!(correlation(&x0, &x0).value, 1.0);
        assert_eq!(correlation(&[0.0, 2.0, -1.0], &x0).value, 0.0);
        assert_eq!(correlation(&[-3.0, 0.0, 0.0], &x0).value, 1.0);
        let d = correlation(&[0.0; 3], &x0);
        assert!(d.degenerate && d.value == 0.0);
    }

    #[test]
    fn bias_norm_examples() {
        let x0 = [1.0, 0.0];
        assert_eq!(bias_norm(&[0.7, 0.0], &x0, 0.7), 0.0);
        assert_eq!(bias_norm(&[0.0, 0.0], &x0, 1.0), 1.0);
        assert!((bias_norm(&[2.0, 0.0], &[2.0, 0.0], 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn replicates_are_deterministic() {
        let cfg = SolverConfig::default();
        let a = run_replicates(&Loss::LeastSquares, 16, 3.0, 0.1, 0.0, 4, 9, &cfg).unwrap();
        let b = run_replicates(&Loss::LeastSquares, 16, 3.0, 0.1, 0.0, 4, 9, &cfg).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.mean_correlation, b.mean_correlation);
        assert_eq!(a.converged, 4);
        let seeds: Vec<u64> = a.outcomes.iter().map(|o| o.seed).collect();
        assert_eq!(seeds, vec![9, 10, 11, 12]);
    }

    #[test]
    fn single_trial_has_no_spread() {
        let s = run_replicates(&Loss::LeastSquares, 8, 3.0, 0.0, 0.0, 1, 0, &SolverConfig::default()).unwrap();
        assert!(s.mean_correlation.is_some() && s.std_correlation.is_none());
        assert!(run_replicates(&Loss::LeastSquares, 8, 3.0, 0.0, 0.0, 0, 0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn separable_hinge_is_counted() {
        let s = run_replicates(&Loss::Hinge, 32, 2.0, 0.0, 0.0, 5, 1, &SolverConfig::default()).unwrap();
        assert_eq!(s.unbounded, 5);
        assert!(s.mean_correlation.is_none());
    }
}
