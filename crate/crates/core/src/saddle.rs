//! Direct numerical solution of the deterministic scalar min-max problem
//!
//! ```text
//! min_{alpha >= 0, mu, tau > 0} max_{gamma >= 0}
//!     gamma tau / 2 - alpha gamma / sqrt(delta) + r mu^2 + r alpha^2
//!     + E[ M(alpha G + mu Y S; tau / gamma) ]
//! ```
//!
//! whose stationarity conditions are the scalar system solved in
//! [`crate::system`]. It shares no code with the fixed-point solver beyond the
//! envelope evaluation and the expectation engine, and uses function values only,
//! so it serves as an independent oracle.
//!
//! The objective is concave in `gamma` (the envelope with parameter `tau/gamma` is
//! an infimum of functions affine in `gamma`) and, after the inner maximisation,
//! jointly convex in `(alpha, mu, tau)` (the envelope is jointly convex in its two
//! arguments). It is `+inf` whenever `tau > 2 alpha / sqrt(delta)`, so the outer
//! search uses `tau = (2 alpha / sqrt(delta)) * logistic(t)`, `alpha = exp(a)`.

use std::cell::{Cell, RefCell};

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expectation::{Channel, ExpectationEngine};
use crate::loss::Loss;
use crate::roots::brent_min;
use crate::system::{residuals_at, SaddleSolution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleConfig {
    /// Nelder–Mead stops when the sample standard deviation of the simplex
    /// values drops below this.
    pub value_tol: f64,
    /// Iteration cap per Nelder–Mead run.
    pub max_iter: u64,
    /// Number of Nelder–Mead runs, each restarted from the previous best point.
    pub restarts: usize,
    /// Tolerance on `log gamma` for the inner maximisation.
    pub inner_tol: f64,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig {
            value_tol: 1e-13,
            max_iter: 3000,
            restarts: 3,
            inner_tol: 1e-9,
        }
    }
}

const LOG_GAMMA_RANGE: f64 = 40.0;
/// Iterates this many times larger than the least-squares start count as escaping.
const ESCAPE_FACTOR: f64 = 1e3;

struct Problem<'a> {
    loss: &'a Loss,
    channel: &'a Channel,
    engine: &'a ExpectationEngine,
    delta: f64,
    r: f64,
    inner_tol: f64,
    /// Iterates with `|mu|` or `alpha` beyond this abort the search as unbounded.
    escape: f64,
    /// Warm start for the inner search.
    log_gamma: Cell<f64>,
    failure: &'a RefCell<Option<Error>>,
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

impl Problem<'_> {
    fn unpack(&self, p: &[f64]) -> (f64, f64, f64) {
        let mu = p[0];
        let alpha = p[1].exp();
        let tau = 2.0 * alpha / self.delta.sqrt() * logistic(p[2]);
        (mu, alpha, tau)
    }

    /// Inner objective without the `r` terms, at `gamma = exp(u)`.
    fn inner(&self, mu: f64, alpha: f64, tau: f64, u: f64) -> Result<f64> {
        let gamma = u.exp();
        let lambda = tau / gamma;
        let loss = self.loss;
        let m = self.engine.expect_margin(self.channel, |g, z| {
            Ok([loss.moreau_env(alpha * g + mu * z, lambda)?.env_value])
        })?[0];
        Ok(gamma * (0.5 * tau - alpha / self.delta.sqrt()) + m)
    }

    /// `max_gamma` of the inner objective and the maximising `log gamma`.
    fn maximise(&self, mu: f64, alpha: f64, tau: f64) -> Result<(f64, f64)> {
        let err: RefCell<Option<Error>> = RefCell::new(None);
        let f = |u: f64| -> f64 {
            match self.inner(mu, alpha, tau, u) {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            }
        };
        let check = |v: f64| -> Result<f64> {
            match err.borrow_mut().take() {
                Some(e) => Err(e),
                None if v.is_finite() => Ok(v),
                None => Err(Error::Oracle(format!("inner objective is {v}"))),
            }
        };

        // Bracket the maximum of the concave function by walking uphill.
        let u0 = self.log_gamma.get();
        let mut step = 0.5;
        let (mut a, mut b, mut c) = (u0 - step, u0, u0 + step);
        let (mut fa, mut fb, mut fc) = (check(f(a))?, check(f(b))?, check(f(c))?);
        loop {
            if fb >= fa && fb >= fc {
                break;
            }
            step *= 2.0;
            if fa > fc {
                if a <= -LOG_GAMMA_RANGE {
                    // Supremum approached as gamma -> 0.
                    return Ok((fa, a));
                }
                (c, fc, b, fb) = (b, fb, a, fa);
                a = (b - step).max(-LOG_GAMMA_RANGE);
                fa = check(f(a))?;
            } else {
                if c >= LOG_GAMMA_RANGE {
                    return Err(Error::Oracle(format!(
                        "inner maximum escapes to gamma = inf at mu = {mu}, alpha = {alpha}, tau = {tau}"
                    )));
                }
                (a, fa, b, fb) = (b, fb, c, fc);
                c = (b + step).min(LOG_GAMMA_RANGE);
                fc = check(f(c))?;
            }
        }
        let _ = (fa, fc);
        let (u, neg) = brent_min(|u| -f(u), a, c, self.inner_tol, 200);
        let v = check(-neg)?;
        if v < fb {
            return Ok((fb, b));
        }
        Ok((v, u))
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        if p.iter().any(|v| !v.is_finite()) || p[1].abs() > 50.0 || p[2].abs() > 50.0 {
            return Ok(f64::INFINITY);
        }
        let (mu, alpha, tau) = self.unpack(p);
        if mu.abs() > self.escape || alpha > self.escape {
            let e = Error::Unbounded(format!(
                "saddle iterates escape to infinity (mu = {mu:.3e}, alpha = {alpha:.3e})"
            ));
            self.failure.borrow_mut().get_or_insert(e);
            return Err(argmin::core::Error::msg("unbounded"));
        }
        match self.maximise(mu, alpha, tau) {
            Ok((v, u)) => {
                self.log_gamma.set(u);
                Ok(v + self.r * (mu * mu + alpha * alpha))
            }
            // The inner search failing to find a finite maximum means the point
            // is outside the effective domain; anything else is a real failure.
            Err(e @ Error::Oracle(_)) => {
                self.failure.borrow_mut().get_or_insert(e);
                Ok(f64::INFINITY)
            }
            Err(e) => {
                let msg = e.to_string();
                self.failure.borrow_mut().get_or_insert(e);
                Err(argmin::core::Error::msg(msg))
            }
        }
    }
}

/// Solve the deterministic min-max problem by nested optimisation: Nelder–Mead
/// over `(mu, log alpha, t)` outside, a bracketed Brent search over `log gamma`
/// inside. Returns `(mu, alpha, lambda = tau / gamma)` with the system residuals
/// evaluated at that point.
pub fn solve_ao_saddle(
    loss: &Loss,
    channel: &Channel,
    delta: f64,
    r: f64,
    engine: &ExpectationEngine,
    cfg: &SaddleConfig,
) -> Result<SaddleSolution> {
    if !(delta > 1.0) || !delta.is_finite() {
        return Err(Error::domain(format!(
            "oversampling ratio must satisfy delta > 1, got {delta}"
        )));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::domain(format!("ridge coefficient must be >= 0, got {r}")));
    }

    // Start from the least-squares solution for this channel.
    let mean_sy = engine.expect(channel, |_, s, y| s * y)?;
    let alpha0 = ((1.0 - mean_sy * mean_sy) / (delta - 1.0)).sqrt();
    let mut best = vec![mean_sy, alpha0.ln(), 0.0];
    let mut scale = [0.1 * mean_sy.abs().max(0.1), 0.2, 0.5];

    let escape = ESCAPE_FACTOR * (1.0 + mean_sy.abs() + alpha0);

    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..cfg.restarts.max(1) {
        let failure = RefCell::new(None);
        let problem = Problem {
            loss,
            channel,
            engine,
            delta,
            r,
            inner_tol: cfg.inner_tol,
            escape,
            log_gamma: Cell::new(0.0),
            failure: &failure,
        };
        let mut simplex = vec![best.clone()];
        for (k, h) in scale.iter().enumerate() {
            let mut v = best.clone();
            v[k] += h;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(cfg.value_tol)
            .map_err(|e| Error::Oracle(e.to_string()))?;
        let res = match Executor::new(problem, solver)
            .configure(|s| s.max_iters(cfg.max_iter))
            .run()
        {
            Ok(res) => res,
            Err(e) => return Err(failure.into_inner().unwrap_or_else(|| Error::Oracle(e.to_string()))),
        };
        let state = res.state();
        iterations += state.get_iter() as usize;
        let cost = state.get_best_cost();
        let param = state
            .get_best_param()
            .ok_or_else(|| Error::Oracle("optimizer returned no point".into()))?
            .clone();
        if !cost.is_finite() {
            let cause = failure
                .borrow_mut()
                .take()
                .map(|e| e.to_string())
                .unwrap_or_else(|| "objective is infinite at every vertex".into());
            return Err(Error::Oracle(cause));
        }
        converged = matches!(
            state.get_termination_status(),
            TerminationStatus::Terminated(TerminationReason::SolverConverged)
        );
        let moved = param
            .iter()
            .zip(&best)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        best = param;
        if converged && moved < 1e-6 {
            break;
        }
        scale = [
            (10.0 * moved).clamp(1e-4, 0.05) * best[0].abs().max(0.1),
            (10.0 * moved).clamp(1e-4, 0.05),
            (10.0 * moved).clamp(1e-4, 0.05),
        ];
    }
    if !converged {
        return Err(Error::Oracle(format!(
            "Nelder-Mead hit its iteration cap ({} per run)",
            cfg.max_iter
        )));
    }

    let failure = RefCell::new(None);
    let probe = Problem {
        loss,
        channel,
        engine,
        delta,
        r,
        inner_tol: cfg.inner_tol * 1e-2,
        escape: f64::INFINITY,
        log_gamma: Cell::new(0.0),
        failure: &failure,
    };
    let (mu, alpha, tau) = probe.unpack(&best);
    let (_, u) = probe.maximise(mu, alpha, tau)?;
    let gamma = u.exp();
    if u <= -LOG_GAMMA_RANGE {
        return Err(Error::Unbounded("inner maximiser at gamma = 0 (lambda = inf)".into()));
    }
    let lambda = tau / gamma;
    let residuals = residuals_at(loss, channel, engine, mu, alpha, lambda, delta, r)?;
    Ok(SaddleSolution::new(
        mu,
        alpha,
        lambda,
        delta,
        r,
        residuals,
        iterations,
        "ao-saddle",
        engine.config().fingerprint(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expectation::EngineConfig;
    use crate::system::{ls_closed_form, solve_fixed_point};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn least_squares_matches_closed_form() {
        let e = ExpectationEngine::new(EngineConfig::gauss_hermite(48)).unwrap();
        let ch = Channel::bsc(0.0).unwrap();
        let s = solve_ao_saddle(&Loss::LeastSquares, &ch, 2.0, 0.0, &e, &Default::default()).unwrap();
        let c = ls_closed_form(2.0, 0.0).unwrap();
        assert!(rel(s.mu, c.mu) < 1e-2, "{} {}", s.mu, c.mu);
        assert!(rel(s.alpha, c.alpha) < 1e-2, "{} {}", s.alpha, c.alpha);
        assert!(rel(s.lambda, c.lambda) < 1e-2, "{} {}", s.lambda, c.lambda);
    }

    #[test]
    fn lad_agrees_with_fixed_point() {
        let e = ExpectationEngine::new(EngineConfig::gauss_hermite(64)).unwrap();
        let ch = Channel::bsc(0.0).unwrap();
        let fp = solve_fixed_point(&Loss::LeastAbsDev, &ch, 4.0, 0.0, &e, &Default::default()).unwrap();
        let ao = solve_ao_saddle(&Loss::LeastAbsDev, &ch, 4.0, 0.0, &e, &Default::default()).unwrap();
        assert!(rel(ao.mu, fp.mu) < 1e-2, "{} {}", ao.mu, fp.mu);
        assert!(rel(ao.alpha, fp.alpha) < 1e-2, "{} {}", ao.alpha, fp.alpha);
    }

    #[test]
    fn regularised_least_squares_satisfies_system() {
        let e = ExpectationEngine::new(EngineConfig::gauss_hermite(48)).unwrap();
        let ch = Channel::bsc(0.25).unwrap();
        let s = solve_ao_saddle(&Loss::LeastSquares, &ch, 8.0, 0.1, &e, &Default::default()).unwrap();
        assert!(s.residual_norm < 1e-2, "{:?}", s.residuals);
    }

    #[test]
    fn rejects_bad_domain() {
        let e = ExpectationEngine::new(EngineConfig::gauss_hermite(8)).unwrap();
        let ch = Channel::bsc(0.1).unwrap();
        let cfg = SaddleConfig::default();
        assert!(matches!(
            solve_ao_saddle(&Loss::LeastSquares, &ch, 0.9, 0.0, &e, &cfg),
            Err(Error::Domain(_))
        ));
    }
}
