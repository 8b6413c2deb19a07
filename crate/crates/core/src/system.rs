//! The scalar system in `(mu, alpha, lambda)` that predicts the estimator's
//! bias scale, residual norm and envelope parameter.
//!
//! With `M' = dM/dx` evaluated at `alpha G + mu S Y` and parameter `lambda`:
//!
//! ```text
//! R1 = E[Y S M'] + 2 r mu
//! R2 = lambda^2 delta E[M'^2] - alpha^2
//! R3 = lambda delta E[G M'] - alpha (1 - 2 r lambda delta)
//! ```
//!
//! A solution has all three residuals equal to zero. The predicted correlation
//! of the estimate with the signal is `mu / sqrt(mu^2 + alpha^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expectation::{Channel, ExpectationEngine};
use crate::loss::{Loss, Smoothness};
use crate::roots::monotone_root;

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;

/// Solution of the scalar system, as emitted in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleSolution {
    pub mu: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// `alpha / mu`.
    pub sigma_ell: f64,
    /// Predicted limiting correlation.
    pub correlation: f64,
    pub delta: f64,
    pub r: f64,
    /// `max |R_i|` at the reported point.
    pub residual_norm: f64,
    pub residuals: [f64; 3],
    pub iterations: usize,
    /// `fixed-point`, `ao-saddle` or `closed-form`.
    pub solver: String,
    pub engine: String,
    /// Set when a multi-start check ran; `true` means another start converged
    /// elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_start_disagreement: Option<bool>,
}

impl SaddleSolution {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        mu: f64,
        alpha: f64,
        lambda: f64,
        delta: f64,
        r: f64,
        residuals: [f64; 3],
        iterations: usize,
        solver: &str,
        engine: String,
    ) -> Self {
        let corr = predicted_correlation_raw(mu, alpha);
        SaddleSolution {
            mu,
            alpha,
            lambda,
            sigma_ell: alpha / mu,
            correlation: corr.value,
            delta,
            r,
            residual_norm: residuals.iter().fold(0.0, |m, v| m.max(v.abs())),
            residuals,
            iterations,
            solver: solver.to_string(),
            engine,
            multi_start_disagreement: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Which equation pins down `lambda`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaEquation {
    /// `lambda delta E[G M'] = alpha (1 - 2 r lambda delta)`.
    #[default]
    Envelope,
    /// Integrated by parts for C2 losses:
    /// `lambda delta E[l''(p) / (1 + lambda l''(p))] = 1 - 2 r lambda delta`.
    SecondDerivative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    /// Damping `beta` in `v <- (1 - beta) v + beta F(v)`.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub lambda_equation: LambdaEquation,
    /// Re-solve from perturbed starts and flag disagreement.
    pub multi_start: bool,
    /// Starting point `(mu, alpha, lambda)`; defaults to the least-squares solution.
    pub init: Option<[f64; 3]>,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            damping: 0.5,
            tol: 1e-8,
            max_iter: 500,
            lambda_equation: LambdaEquation::Envelope,
            multi_start: false,
            init: None,
        }
    }
}

/// Expectations that enter the residuals.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Moments {
    /// `E[Y S M']`
    pub ys_m: f64,
    /// `E[M'^2]`
    pub m2: f64,
    /// `E[G M']`
    pub g_m: f64,
}

pub(crate) fn moments(
    loss: &Loss,
    channel: &Channel,
    engine: &ExpectationEngine,
    mu: f64,
    alpha: f64,
    lambda: f64,
) -> Result<Moments> {
    let [ys_m, m2, g_m] = engine.expect_margin(channel, |g, z| {
        let d = loss.env_dx(alpha * g + mu * z, lambda)?;
        Ok([z * d, d * d, g * d])
    })?;
    Ok(Moments { ys_m, m2, g_m })
}

/// `E[M'']` for C2 losses.
fn mean_curvature(
    loss: &Loss,
    channel: &Channel,
    engine: &ExpectationEngine,
    mu: f64,
    alpha: f64,
    lambda: f64,
) -> Result<f64> {
    let [v] = engine.expect_margin(channel, |g, z| Ok([loss.env_dxx(alpha * g + mu * z, lambda)?]))?;
    Ok(v)
}

fn residuals_from(m: &Moments, mu: f64, alpha: f64, lambda: f64, delta: f64, r: f64) -> [f64; 3] {
    [
        m.ys_m + 2.0 * r * mu,
        lambda * lambda * delta * m.m2 - alpha * alpha,
        lambda * delta * m.g_m - alpha * (1.0 - 2.0 * r * lambda * delta),
    ]
}

/// Residuals `(R1, R2, R3)` of the system at `sol`'s `(mu, alpha, lambda)`,
/// using `sol.delta` and `sol.r`.
pub fn system_residuals(
    sol: &SaddleSolution,
    loss: &Loss,
    channel: &Channel,
    engine: &ExpectationEngine,
) -> Result<[f64; 3]> {
    residuals_at(loss, channel, engine, sol.mu, sol.alpha, sol.lambda, sol.delta, sol.r)
}

#[allow(clippy::too_many_arguments)]
pub fn residuals_at(
    loss: &Loss,
    channel: &Channel,
    engine: &ExpectationEngine,
    mu: f64,
    alpha: f64,
    lambda: f64,
    delta: f64,
    r: f64,
) -> Result<[f64; 3]> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    let m = moments(loss, channel, engine, mu, alpha, lambda)?;
    Ok(residuals_from(&m, mu, alpha, lambda, delta, r))
}

/// `E[M'^2] / E[G M']^2` at a point. Equals `delta` at any unregularised solution.
pub fn delta_identity(
    sol: &SaddleSolution,
    loss: &Loss,
    channel: &Channel,
    engine: &ExpectationEngine,
) -> Result<f64> {
    let m = moments(loss, channel, engine, sol.mu, sol.alpha, sol.lambda)?;
    Ok(m.m2 / (m.g_m * m.g_m))
}

fn check_problem(delta: f64, r: f64) -> Result<()> {
    if !(delta > 1.0) || !delta.is_finite() {
        return Err(Error::domain(format!(
            "oversampling ratio must satisfy delta > 1, got {delta}"
        )));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::domain(format!("ridge coefficient must be >= 0, got {r}")));
    }
    Ok(())
}

/// Damped fixed-point iteration.
///
/// Each sweep updates `lambda` from the third equation, then `alpha` from the
/// second at the new `lambda`, then `mu` as the root of the first equation with
/// `(alpha, lambda)` held fixed (`R1` is nondecreasing in `mu`), each step damped.
/// Starts from the least-squares solution unless `cfg.init` is set.
pub fn solve_fixed_point(
    loss: &Loss,
    channel: &Channel,
    delta: f64,
    r: f64,
    engine: &ExpectationEngine,
    cfg: &FixedPointConfig,
) -> Result<SaddleSolution> {
    check_problem(delta, r)?;
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(Error::domain(format!("damping must be in (0, 1], got {}", cfg.damping)));
    }
    if cfg.lambda_equation == LambdaEquation::SecondDerivative && loss.smoothness() < Smoothness::C2 {
        return Err(Error::Capability {
            loss: loss.to_string(),
            order: "second",
            smoothness: loss.smoothness(),
        });
    }
    // Below the separability threshold a loss that vanishes at +inf has no
    // finite minimiser, and the iteration would only chase it to infinity.
    if r == 0.0 && loss.vanishes_at_infinity() {
        let threshold = match channel.epsilon() {
            Some(e) => crate::bounds::separability_threshold(e, engine)?,
            None => crate::bounds::separability_threshold_for(channel, engine)?,
        };
        if threshold.infinite || delta <= threshold.value {
            return Err(Error::Unbounded(format!(
                "{loss} has no finite minimiser: delta = {delta} is below the separability threshold {}",
                threshold.value
            )));
        }
    }
    let start = match cfg.init {
        Some(v) => v,
        None => {
            let mean_sy = engine.expect(channel, |_, s, y| s * y)?;
            [mean_sy, 1.0, 1.0 / (2.0 * (delta - 1.0))]
        }
    };
    let mut sol = iterate(loss, channel, delta, r, engine, cfg, start)?;

    if cfg.multi_start {
        let [m0, a0, l0] = start;
        let m0 = if m0 == 0.0 { 0.5 } else { m0 };
        let alternatives = [[0.5 * m0, 2.0 * a0, 2.0 * l0], [2.0 * m0, 0.5 * a0, 0.5 * l0]];
        let mut disagree = false;
        for alt in alternatives {
            if let Ok(other) = iterate(loss, channel, delta, r, engine, cfg, alt) {
                let scale = sol.mu.abs().max(sol.alpha).max(1e-12);
                if (other.mu - sol.mu).abs() > 1e-4 * scale
                    || (other.alpha - sol.alpha).abs() > 1e-4 * scale
                {
                    disagree = true;
                }
            }
        }
        sol.multi_start_disagreement = Some(disagree);
    }
    Ok(sol)
}

const BLOWUP: f64 = 1e6;
const COLLAPSE: f64 = 1e-12;
const BLOWUP_STREAK: usize = 10;

fn iterate(
    loss: &Loss,
    channel: &Channel,
    delta: f64,
    r: f64,
    engine: &ExpectationEngine,
    cfg: &FixedPointConfig,
    start: [f64; 3],
) -> Result<SaddleSolution> {
    let beta = cfg.damping;
    let [mut mu, mut alpha, mut lambda] = start;
    let mut trajectory = Vec::new();
    let mut streak = 0;
    let mut last_residual = f64::INFINITY;

    for it in 0..cfg.max_iter {
        let m = moments(loss, channel, engine, mu, alpha, lambda)?;
        let mut res = residuals_from(&m, mu, alpha, lambda, delta, r);
        let curvature = if cfg.lambda_equation == LambdaEquation::SecondDerivative {
            let c = mean_curvature(loss, channel, engine, mu, alpha, lambda)?;
            res[2] = alpha * (lambda * delta * c - (1.0 - 2.0 * r * lambda * delta));
            Some(c)
        } else {
            None
        };
        last_residual = res.iter().fold(0.0, |a, v| a.max(v.abs()));
        if last_residual < cfg.tol {
            return Ok(SaddleSolution::new(
                mu,
                alpha,
                lambda,
                delta,
                r,
                res,
                it,
                "fixed-point",
                engine.config().fingerprint(),
            ));
        }

        let lambda_target = match curvature {
            Some(c) => 1.0 / (delta * (c + 2.0 * r)),
            None => alpha / (delta * (m.g_m + 2.0 * r * alpha)),
        };
        if !(lambda_target > 0.0) || !lambda_target.is_finite() {
            return Err(Error::Unbounded(format!(
                "lambda update left (0, inf) at iteration {it}: {lambda_target}"
            )));
        }
        lambda = (1.0 - beta) * lambda + beta * lambda_target;

        let m = moments(loss, channel, engine, mu, alpha, lambda)?;
        let alpha_target = lambda * (delta * m.m2).sqrt();
        alpha = (1.0 - beta) * alpha + beta * alpha_target;

        let r1 = |x: f64| -> f64 {
            match moments(loss, channel, engine, x, alpha, lambda) {
                Ok(mm) => mm.ys_m + 2.0 * r * x,
                Err(_) => f64::NAN,
            }
        };
        let step = (0.05 * mu.abs()).max(1e-3);
        let mu_target = match monotone_root(r1, mu, step, BLOWUP, 1e-13 * (1.0 + mu.abs())) {
            Ok(v) => v,
            Err(Error::Bracket(msg)) => {
                return Err(Error::Unbounded(format!(
                    "first equation has no root in mu at iteration {it}: {msg}"
                )))
            }
            Err(e) => return Err(e),
        };
        mu = (1.0 - beta) * mu + beta * mu_target;

        trajectory.push([mu, alpha, lambda]);
        let out_of_range = |v: f64| !(COLLAPSE..=BLOWUP).contains(&v);
        if out_of_range(alpha) || out_of_range(lambda) {
            streak += 1;
            if streak >= BLOWUP_STREAK {
                return Err(Error::Unbounded(format!(
                    "alpha = {alpha:e}, lambda = {lambda:e} outside [{COLLAPSE:e}, {BLOWUP:e}] \
                     for {BLOWUP_STREAK} iterations"
                )));
            }
        } else {
            streak = 0;
        }
    }
    Err(Error::Diverged {
        iterations: cfg.max_iter,
        residual: last_residual,
        trajectory,
    })
}

/// Closed-form solution for `loss(t) = (t - 1)^2`, `r = 0`, sign channel.
pub fn ls_closed_form(delta: f64, epsilon: f64) -> Result<SaddleSolution> {
    check_problem(delta, 0.0)?;
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::domain(format!("flip probability must lie in [0, 0.5], got {epsilon}")));
    }
    let b = 1.0 - 2.0 * epsilon;
    let mu = b * FRAC_2_PI.sqrt();
    let alpha = ((1.0 - b * b * FRAC_2_PI) / (delta - 1.0)).sqrt();
    let lambda = 1.0 / (2.0 * (delta - 1.0));
    Ok(SaddleSolution::new(
        mu,
        alpha,
        lambda,
        delta,
        0.0,
        [0.0; 3],
        0,
        "closed-form",
        "analytic".to_string(),
    ))
}

/// Predicted correlation with a degeneracy flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    /// `mu == 0`: the labels carry no information about the direction.
    pub degenerate: bool,
}

fn predicted_correlation_raw(mu: f64, alpha: f64) -> Correlation {
    if mu.abs() <= 1e-12 * alpha.abs().max(1.0) {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    let ratio = alpha / mu;
    Correlation {
        value: (1.0 / (1.0 + ratio * ratio)).sqrt(),
        degenerate: false,
    }
}

/// `sqrt(1 / (1 + (alpha / mu)^2))`, or `0` flagged degenerate when `mu = 0`.
pub fn predicted_correlation(sol: &SaddleSolution) -> Correlation {
    predicted_correlation_raw(sol.mu, sol.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expectation::EngineConfig;

    fn engine(n: usize) -> ExpectationEngine {
        ExpectationEngine::new(EngineConfig::gauss_hermite(n)).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let s = ls_closed_form(2.0, 0.0).unwrap();
        assert!((s.mu - 0.797_884_560_802_865_4).abs() < 1e-15);
        assert!((s.alpha * s.alpha - (1.0 - FRAC_2_PI)).abs() < 1e-15);
        assert_eq!(s.lambda, 0.5);
        assert_eq!(ls_closed_form(3.7, 0.5).unwrap().mu, 0.0);
        let far = ls_closed_form(1e9, 0.0).unwrap();
        assert!(far.alpha < 1e-4 && far.correlation > 1.0 - 1e-8);
        assert!(matches!(ls_closed_form(1.0, 0.1), Err(Error::Domain(_))));
        assert!(matches!(ls_closed_form(0.5, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn residuals_vanish_at_closed_form() {
        let e = engine(256);
        let ch = Channel::bsc(0.0).unwrap();
        let s = ls_closed_form(2.0, 0.0).unwrap();
        let r = system_residuals(&s, &Loss::LeastSquares, &ch, &e).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-6), "{r:?}");

        let mut p = s.clone();
        p.mu *= 2.0;
        let r = system_residuals(&p, &Loss::LeastSquares, &ch, &e).unwrap();
        assert!(r[0].abs() > 0.1);

        // eps = 1/2: mu = 0, alpha^2 = 1 / (delta - 1)
        let ch = Channel::bsc(0.5).unwrap();
        let s = ls_closed_form(3.0, 0.5).unwrap();
        assert!((s.alpha * s.alpha - 0.5).abs() < 1e-15);
        let r = system_residuals(&s, &Loss::LeastSquares, &ch, &e).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-6), "{r:?}");
    }

    #[test]
    fn fixed_point_reproduces_least_squares() {
        let e = engine(128);
        let ch = Channel::bsc(0.1).unwrap();
        let s = solve_fixed_point(&Loss::LeastSquares, &ch, 4.0, 0.0, &e, &Default::default()).unwrap();
        let mu = 0.8 * FRAC_2_PI.sqrt();
        let a2 = (1.0 - 0.64 * FRAC_2_PI) / 3.0;
        assert!((s.mu / mu - 1.0).abs() < 1e-3);
        assert!((s.alpha * s.alpha / a2 - 1.0).abs() < 1e-3);
        assert!(s.residual_norm < 1e-8);

        let ch = Channel::bsc(0.0).unwrap();
        let s = solve_fixed_point(&Loss::LeastSquares, &ch, 2.0, 0.0, &e, &Default::default()).unwrap();
        assert!((s.lambda - 0.5).abs() < 1e-3);
    }

    #[test]
    fn noiseless_hinge_is_unbounded() {
        let e = engine(64);
        let ch = Channel::bsc(0.0).unwrap();
        let r = solve_fixed_point(&Loss::Hinge, &ch, 5.0, 0.0, &e, &Default::default());
        assert!(
            matches!(r, Err(Error::Unbounded(_)) | Err(Error::Diverged { .. })),
            "{r:?}"
        );
    }

    #[test]
    fn fixed_point_rejects_bad_domain() {
        let e = engine(16);
        let ch = Channel::bsc(0.1).unwrap();
        let cfg = FixedPointConfig::default();
        assert!(matches!(
            solve_fixed_point(&Loss::LeastSquares, &ch, 1.0, 0.0, &e, &cfg),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            solve_fixed_point(&Loss::LeastSquares, &ch, 2.0, -1.0, &e, &cfg),
            Err(Error::Domain(_))
        ));
        let c2 = FixedPointConfig {
            lambda_equation: LambdaEquation::SecondDerivative,
            ..cfg
        };
        assert!(matches!(
            solve_fixed_point(&Loss::LeastAbsDev, &ch, 2.0, 0.0, &e, &c2),
            Err(Error::Capability { .. })
        ));
    }

    #[test]
    fn iteration_cap_reports_trajectory() {
        let e = engine(32);
        let ch = Channel::bsc(0.1).unwrap();
        let cfg = FixedPointConfig {
            max_iter: 3,
            ..Default::default()
        };
        match solve_fixed_point(&Loss::LeastAbsDev, &ch, 3.0, 0.0, &e, &cfg) {
            Err(Error::Diverged { iterations, trajectory, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(trajectory.len(), 3);
            }
            other => panic!("expected Diverged, got {other:?}"),
        }
    }

    #[test]
    fn correlation_formula() {
        let s = ls_closed_form(2.0, 0.0).unwrap();
        let c = predicted_correlation(&s);
        assert!((c.value - FRAC_2_PI.sqrt()).abs() < 1e-15 && !c.degenerate);
        let mut p = s.clone();
        p.alpha = 0.0;
        assert_eq!(predicted_correlation(&p).value, 1.0);
        let d = predicted_correlation(&ls_closed_form(2.0, 0.5).unwrap());
        assert!(d.degenerate && d.value == 0.0);
    }

    #[test]
    fn second_derivative_form_agrees() {
        let e = engine(96);
        let ch = Channel::bsc(0.1).unwrap();
        for loss in [Loss::LeastSquares, Loss::Logistic] {
            let a = solve_fixed_point(&loss, &ch, 6.0, 0.0, &e, &Default::default()).unwrap();
            let cfg = FixedPointConfig {
                lambda_equation: LambdaEquation::SecondDerivative,
                ..Default::default()
            };
            let b = solve_fixed_point(&loss, &ch, 6.0, 0.0, &e, &cfg).unwrap();
            for (x, y) in [(a.mu, b.mu), (a.alpha, b.alpha), (a.lambda, b.lambda)] {
                assert!((x / y - 1.0).abs() < 1e-3, "{loss}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn json_record_is_flat() {
        let s = ls_closed_form(2.0, 0.1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        for key in ["mu", "alpha", "lambda", "sigma_ell", "residual_norm", "iterations"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: SaddleSolution = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
