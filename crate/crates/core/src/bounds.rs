//! Fisher-information bounds and the separability threshold.
//!
//! For every continuously differentiable loss the performance ratio
//! `sigma = alpha / mu` satisfies `sigma^2 I(sigma G + S Y) >= 1/delta`, where
//! `I` is the location Fisher information. Since `sigma^2 I(sigma G + S Y)` increases
//! from 0 towards 1, the smallest admissible `sigma` is the root of
//! `sigma^2 I = 1/delta`, and `1 / sqrt(1 + sigma_min^2)` bounds the achievable
//! correlation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::expectation::{Channel, ExpectationEngine};
use crate::quadrature::adaptive_gk;
use crate::record::fmt_float;
use crate::roots::{brent_root, golden_section_min};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn phi(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn big_phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::domain(format!(
            "flip probability must lie in [0, 0.5], got {epsilon}"
        )));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 1.0) || !delta.is_finite() {
        return Err(Error::domain(format!(
            "oversampling ratio must satisfy delta > 1, got {delta}"
        )));
    }
    Ok(())
}

/// Density of `Z = S Y` under the binary symmetric channel:
/// `2 (1 - eps) phi(z)` for `z > 0` and `2 eps phi(z)` for `z < 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyDensity {
    pub epsilon: f64,
}

impl SyDensity {
    pub fn new(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(SyDensity { epsilon })
    }

    pub fn pdf(&self, z: f64) -> f64 {
        let mass = if z > 0.0 {
            1.0 - self.epsilon
        } else if z < 0.0 {
            self.epsilon
        } else {
            0.5
        };
        2.0 * mass * phi(z)
    }
}

/// Density of `W = scale * (sigma G + S Y)` and its derivative on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityTable {
    pub grid: Vec<f64>,
    pub p: Vec<f64>,
    pub dp: Vec<f64>,
    pub sigma: f64,
    pub epsilon: f64,
    pub scale: f64,
}

/// Number of grid points.
pub const DENSITY_GRID: usize = 8192;
/// Densities are floored here before dividing by them.
pub const DENSITY_FLOOR: f64 = 1e-300;

impl DensityTable {
    /// Tabulate the density of `sigma G + S Y` on `[-8(1 + sigma), 8(1 + sigma)]`.
    pub fn build(sigma: f64, epsilon: f64) -> Result<Self> {
        Self::build_scaled(sigma, epsilon, 1.0)
    }

    /// Tabulate the density of `c (sigma G + S Y)` on `c [-8(1 + sigma), 8(1 + sigma)]`.
    ///
    /// `p(w) = int k(w - z) q(z) dz` and `p'(w) = int k'(w - z) q(z) dz`, with `k` the
    /// `N(0, (c sigma)^2)` density and `q` the density of `c S Y`, are computed by
    /// adaptive quadrature split at the kink of `q` (z = 0) and the kernel centre.
    pub fn build_scaled(sigma: f64, epsilon: f64, c: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::domain(format!("scale must be positive, got {c}")));
        }
        let sy = SyDensity::new(epsilon)?;
        let kappa = c * sigma;
        let half = 8.0 * (1.0 + sigma) * c;
        let h = 2.0 * half / (DENSITY_GRID - 1) as f64;
        let grid: Vec<f64> = (0..DENSITY_GRID).map(|i| -half + i as f64 * h).collect();

        let values: Vec<(f64, f64)> = grid
            .par_iter()
            .map(|&w| {
                let lo = (-10.0 * c).max(w - 12.0 * kappa);
                let hi = (10.0 * c).min(w + 12.0 * kappa);
                if lo >= hi {
                    return (0.0, 0.0);
                }
                let ([p, dp], _) = adaptive_gk(
                    |z: f64| {
                        let u = (w - z) / kappa;
                        let k = phi(u) / kappa;
                        let q = sy.pdf(z / c) / c;
                        [k * q, -u / kappa * k * q]
                    },
                    lo,
                    hi,
                    &[0.0, w],
                    1e-300,
                    1e-11,
                    400,
                );
                (p, dp)
            })
            .collect();
        let mut p = Vec::with_capacity(DENSITY_GRID);
        let mut dp = Vec::with_capacity(DENSITY_GRID);
        for (i, (pv, dv)) in values.into_iter().enumerate() {
            if !pv.is_finite() || !dv.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite density at w = {} (sigma = {sigma}, eps = {epsilon})",
                    grid[i]
                )));
            }
            p.push(pv.max(DENSITY_FLOOR));
            dp.push(dv);
        }
        Ok(DensityTable {
            grid,
            p,
            dp,
            sigma,
            epsilon,
            scale: c,
        })
    }

    fn step(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    fn trapezoid(&self, f: impl Fn(usize) -> f64) -> f64 {
        let n = self.grid.len();
        let inner: f64 = (1..n - 1).map(&f).sum();
        self.step() * (inner + 0.5 * (f(0) + f(n - 1)))
    }

    /// Trapezoid integral of `p`; should be 1.
    pub fn mass(&self) -> f64 {
        self.trapezoid(|i| self.p[i])
    }

    /// `int p'(w)^2 / p(w) dw` by the trapezoid rule.
    pub fn fisher_info(&self) -> f64 {
        self.trapezoid(|i| self.dp[i] * self.dp[i] / self.p[i])
    }

    /// CSV with columns `w,p,dp`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["w", "p", "dp"])?;
        for i in 0..self.grid.len() {
            w.write_record([fmt_float(self.grid[i]), fmt_float(self.p[i]), fmt_float(self.dp[i])])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fisher information of `sigma G + S Y` for the binary symmetric channel.
pub fn fisher_info(sigma: f64, epsilon: f64) -> Result<f64> {
    let v = DensityTable::build(sigma, epsilon)?.fisher_info();
    if !v.is_finite() {
        return Err(Error::Numeric(format!(
            "Fisher information is {v} at sigma = {sigma}, eps = {epsilon}"
        )));
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    Numeric,
    AnalyticNoiseless,
}

impl std::fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundMethod::Numeric => "numeric",
            BoundMethod::AnalyticNoiseless => "analytic_noiseless",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub delta: f64,
    pub epsilon: f64,
    /// Smallest `sigma` with `sigma^2 I(sigma G + S Y) >= 1/delta`.
    pub sigma_min: f64,
    /// `1 / sqrt(1 + sigma_min^2)`.
    pub corr_upper: f64,
    pub method: BoundMethod,
}

const SIGMA_LO: f64 = 1e-6;
const SIGMA_HI: f64 = 1e3;

/// Root tolerance in `log sigma`; well above the quadrature noise in `h`.
const BOUND_XTOL: f64 = 1e-10;

/// A tight bracket for the root of `h` in `log sigma`, inside `(SIGMA_LO, SIGMA_HI)`.
///
/// `I(W) >= 1 / Var(W) = 1 / (sigma^2 + 1)` (Cramér–Rao, equality for Gaussian
/// `W`), so `h >= 0` already at `sigma^2 = 1 / (delta - 1)`; the top is set just
/// above that and the bottom is halved until `h < 0`. Evaluating `h` far out at
/// `SIGMA_LO` is slow and pointless, the density there being a near-delta comb
/// the grid cannot resolve. `None` if the bracket cannot be confirmed.
fn bracket(h: &impl Fn(f64) -> f64, delta: f64) -> Option<(f64, f64)> {
    let top = (1.01 / (delta - 1.0).sqrt()).clamp(SIGMA_LO, SIGMA_HI);
    if !(h(top.ln()) >= 0.0) {
        return None;
    }
    let mut bottom = top;
    while bottom > SIGMA_LO {
        bottom = (0.5 * bottom).max(SIGMA_LO);
        let v = h(bottom.ln());
        if v < 0.0 {
            return Some((bottom.ln(), top.ln()));
        }
        if v.is_nan() {
            return None;
        }
    }
    None
}

/// Upper bound on the correlation achievable by any continuously differentiable
/// loss: solves `sigma^2 I(sigma G + S Y) = 1/delta` for `sigma` on
/// `(1e-6, 1e3)`, using that the left side increases in `sigma`.
///
/// The root is found with Brent's method in `log sigma` (bracketed, so it
/// inherits bisection's guarantee), starting from the bracket of [`bracket`].
pub fn correlation_upper_bound(delta: f64, epsilon: f64) -> Result<BoundResult> {
    check_delta(delta)?;
    check_epsilon(epsilon)?;
    let target = 1.0 / delta;
    let failure = std::cell::RefCell::new(None);
    let h = |log_sigma: f64| -> f64 {
        let s = log_sigma.exp();
        match fisher_info(s, epsilon) {
            Ok(i) => s * s * i - target,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let (lo, hi) = bracket(&h, delta).unwrap_or((SIGMA_LO.ln(), SIGMA_HI.ln()));
    let (h_lo, h_hi) = (h(lo), h(hi));
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    if h_lo > 0.0 || h_hi < 0.0 {
        return Err(Error::Bracket(format!(
            "sigma^2 I - 1/delta does not change sign on [{SIGMA_LO:e}, {SIGMA_HI:e}]: ({h_lo:e}, {h_hi:e})"
        )));
    }
    let root = brent_root(h, lo, hi, BOUND_XTOL, 200);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let sigma_min = root?.exp();
    Ok(BoundResult {
        delta,
        epsilon,
        sigma_min,
        corr_upper: 1.0 / (1.0 + sigma_min * sigma_min).sqrt(),
        method: BoundMethod::Numeric,
    })
}

/// The noiseless closed form `sigma_min^2 = 1 / (2 (delta - 1))`, i.e.
/// correlation `<= 1 / sqrt(1 + 1 / (2 (delta - 1)))`.
///
/// It rests on the inequality `I(sigma G + |S|) <= 2 / (1 + 2 sigma^2)`, which
/// fails numerically (by Cramér–Rao, `I >= 1 / Var = 1 / (sigma^2 + 1 - 2/pi)`
/// already exceeds it). Use [`correlation_upper_bound`] as the bound; this one
/// is exposed for comparison.
pub fn analytic_noiseless_bound(delta: f64) -> Result<BoundResult> {
    check_delta(delta)?;
    let s2 = 1.0 / (2.0 * (delta - 1.0));
    Ok(BoundResult {
        delta,
        epsilon: 0.0,
        sigma_min: s2.sqrt(),
        corr_upper: 1.0 / (1.0 + s2).sqrt(),
        method: BoundMethod::AnalyticNoiseless,
    })
}

/// Separability threshold: below `delta*`, data are linearly separable and losses
/// vanishing at `+inf` have unbounded minimisers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub epsilon: f64,
    /// `delta*`, `+inf` when `infinite`.
    #[serde(with = "crate::record::json_float")]
    pub value: f64,
    pub infinite: bool,
    /// Minimiser of `psi(c) = E[(G + c S Y)_-^2]`.
    #[serde(with = "crate::record::json_float")]
    pub c_star: f64,
    /// `psi(c_star)`.
    pub psi_min: f64,
}

/// `E[(G + a)_-^2] = (1 + a^2) Phi(-a) - a phi(a)` for `G ~ N(0, 1)`.
fn negative_part_sq_mean(a: f64) -> f64 {
    (1.0 + a * a) * big_phi(-a) - a * phi(a)
}

/// `delta* = 1 / min_{c >= 0} E[(G + c S Y)_-^2]`.
///
/// `psi(c)` is convex: `(g + c z)_-^2` is a convex nondecreasing function of the
/// affine map `c -> -(g + c z)`, and expectations preserve convexity. The
/// average over `G` is done in closed form; the engine integrates over `S Y`.
/// The minimum over `c in [0, 100]` is located by golden-section search to 1e-6.
pub fn separability_threshold(epsilon: f64, engine: &ExpectationEngine) -> Result<Threshold> {
    check_epsilon(epsilon)?;
    if epsilon == 0.0 {
        return Ok(Threshold {
            epsilon,
            value: f64::INFINITY,
            infinite: true,
            c_star: f64::INFINITY,
            psi_min: 0.0,
        });
    }
    let channel = Channel::bsc(epsilon)?;
    separability_threshold_for(&channel, engine)
}

/// [`separability_threshold`] for an arbitrary channel.
pub fn separability_threshold_for(channel: &Channel, engine: &ExpectationEngine) -> Result<Threshold> {
    let mut failure = None;
    let psi = |c: f64| -> f64 {
        match engine.expect_margin(channel, |_, z| Ok([negative_part_sq_mean(c * z)])) {
            Ok([v]) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let (c_star, psi_min) = golden_section_min(psi, 0.0, 100.0, 1e-6);
    if let Some(e) = failure {
        return Err(e);
    }
    let epsilon = channel.epsilon().unwrap_or(f64::NAN);
    if !(psi_min > 0.0) {
        return Ok(Threshold {
            epsilon,
            value: f64::INFINITY,
            infinite: true,
            c_star,
            psi_min,
        });
    }
    Ok(Threshold {
        epsilon,
        value: 1.0 / psi_min,
        infinite: false,
        c_star,
        psi_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expectation::EngineConfig;

    /// Closed form of the density of `sigma G + S Y` and its derivative.
    pub(crate) fn exact_density(w: f64, sigma: f64, eps: f64) -> (f64, f64) {
        let v = (1.0 + sigma * sigma).sqrt();
        let a = w / (sigma * v);
        let base = phi(w / v) / v;
        let mix = (1.0 - eps) * big_phi(a) + eps * big_phi(-a);
        let p = 2.0 * base * mix;
        let dp = 2.0 * (-w / (v * v)) * base * mix + 2.0 * base * (1.0 - 2.0 * eps) * phi(a) / (sigma * v);
        (p, dp)
    }

    #[test]
    fn sy_density_values() {
        let d = SyDensity::new(0.5).unwrap();
        for z in [-2.0, -0.3, 0.7, 3.0] {
            assert!((d.pdf(z) - phi(z)).abs() < 1e-16);
        }
        let d = SyDensity::new(0.0).unwrap();
        assert!((d.pdf(1.0) - 0.483_941_449_038_286_7).abs() < 1e-12);
        assert_eq!(d.pdf(-1.0), 0.0);
        assert!(SyDensity::new(0.7).is_err());
    }

    #[test]
    fn density_table_matches_closed_form() {
        for (sigma, eps) in [(0.3, 0.0), (1.0, 0.1), (2.5, 0.25)] {
            let t = DensityTable::build(sigma, eps).unwrap();
            assert!((t.mass() - 1.0).abs() < 1e-4);
            for i in (0..t.grid.len()).step_by(97) {
                let (p, dp) = exact_density(t.grid[i], sigma, eps);
                assert!((t.p[i] - p).abs() < 1e-9 * (1.0 + p), "p at {}", t.grid[i]);
                assert!((t.dp[i] - dp).abs() < 1e-8 * (1.0 + dp.abs()), "dp at {}", t.grid[i]);
            }
            let h = t.grid[1] - t.grid[0];
            for i in (100..t.grid.len() - 100).step_by(131) {
                let fd = (t.p[i + 1] - t.p[i - 1]) / (2.0 * h);
                assert!((fd - t.dp[i]).abs() < 1e-4);
            }
            assert!(t.p.iter().all(|&v| v >= DENSITY_FLOOR));
        }
    }

    #[test]
    fn gaussian_case_fisher_information() {
        let i = fisher_info(1.0, 0.5).unwrap();
        assert!((i - 0.5).abs() < 1e-4, "{i}");
        for eps in [0.0, 0.25, 0.5] {
            assert!(fisher_info(10.0, eps).unwrap() <= 0.01 + 1e-4);
        }
        let v = 0.25 * fisher_info(0.5, 0.0).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn fisher_information_is_scale_covariant() {
        for (sigma, eps, c) in [(0.7, 0.1, 2.0), (1.5, 0.0, 0.5)] {
            let i = DensityTable::build(sigma, eps).unwrap().fisher_info();
            let ic = DensityTable::build_scaled(sigma, eps, c).unwrap().fisher_info();
            assert!((ic * c * c / i - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gaussian_case_bound() {
        let b = correlation_upper_bound(2.0, 0.5).unwrap();
        assert!((b.sigma_min - 1.0).abs() < 1e-3);
        assert!((b.corr_upper - 0.5f64.sqrt()).abs() < 1e-3);
        assert_eq!(b.method, BoundMethod::Numeric);
        let near = correlation_upper_bound(1.01, 0.1).unwrap();
        assert!(near.sigma_min > 5.0 && near.corr_upper < 0.2);
        assert!(correlation_upper_bound(1.0, 0.1).is_err());
    }

    #[test]
    fn bound_dominates_least_squares() {
        let b = correlation_upper_bound(4.0, 0.0).unwrap();
        let ls = (1.0 / (1.0 + (std::f64::consts::FRAC_PI_2 - 1.0) / 3.0)).sqrt();
        assert!(b.corr_upper >= ls);
    }

    #[test]
    fn analytic_bound_values() {
        let b = analytic_noiseless_bound(2.0).unwrap();
        assert!((b.corr_upper - 1.0 / 1.5f64.sqrt()).abs() < 1e-15);
        assert!((analytic_noiseless_bound(3.0).unwrap().sigma_min.powi(2) - 0.25).abs() < 1e-15);
        assert_eq!(b.method, BoundMethod::AnalyticNoiseless);
        assert!(analytic_noiseless_bound(1.0).is_err());
        for delta in [1.5, 2.0, 4.0, 8.0] {
            let ls = (std::f64::consts::FRAC_PI_2 - 1.0) / (delta - 1.0);
            assert!(ls >= analytic_noiseless_bound(delta).unwrap().sigma_min.powi(2));
        }
    }

    #[test]
    fn threshold_values() {
        let e = ExpectationEngine::new(EngineConfig::gauss_hermite(128)).unwrap();
        let t = separability_threshold(0.5, &e).unwrap();
        assert!((t.value - 2.0).abs() < 1e-3, "{t:?}");
        let t0 = separability_threshold(0.0, &e).unwrap();
        assert!(t0.infinite && t0.value.is_infinite());
        let t1 = separability_threshold(0.1, &e).unwrap();
        assert!(t1.value > 2.0 && t1.value.is_finite());
        let t25 = separability_threshold(0.25, &e).unwrap();
        assert!(t1.value > t25.value && t25.value > t.value);
        assert!(separability_threshold(0.6, &e).is_err());
    }

    #[test]
    fn closed_form_negative_part() {
        // E[(G + a)_-^2] by quadrature.
        for a in [-1.5, 0.0, 0.4, 2.0] {
            let r = crate::quadrature::gauss_legendre(200, -14.0, -a);
            let q: f64 = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(g, w)| w * phi(*g) * (g + a).min(0.0).powi(2))
                .sum();
            assert!((q - negative_part_sq_mean(a)).abs() < 1e-11, "{a}");
        }
    }
}
