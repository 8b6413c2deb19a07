//! Scalar convex losses, their proximal operators and Moreau envelopes.
//!
//! Every loss is a convex function of the margin `t = y a^T x`. The Moreau
//! envelope with parameter `lambda > 0` is
//!
//! ```text
//! M(x; lambda) = min_v (x - v)^2 / (2 lambda) + loss(v)
//! ```
//!
//! and its minimiser is the proximal operator. Both partial derivatives of the
//! envelope are read off the prox point:
//! `dM/dx = (x - prox) / lambda` and `dM/dlambda = -(x - prox)^2 / (2 lambda^2)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bracket tolerance of the generic prox solver.
const PROX_TOL: f64 = 1e-12;
/// Iteration cap of the generic prox solver.
const PROX_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    LeastSquares,
    LeastAbsDev,
    Hinge,
    Logistic,
    Exponential,
    Custom,
}

/// Differentiability class of a loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Smoothness {
    Nonsmooth,
    C1,
    C2,
}

/// Parametric families available as custom losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CustomFamily {
    /// `scale * (t - 1)^2`. `scale = 0.5` is the half-scaled least squares.
    ScaledSquare { scale: f64 },
    /// Huber function of the residual `1 - t` with quadratic zone `|1 - t| <= width`.
    Huber { width: f64 },
    /// `max(1 - t, 0)^2`.
    SquaredHinge,
}

/// How a custom loss evaluates its proximal operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProxMethod {
    /// Closed form of the family.
    ClosedForm,
    /// Generic safeguarded Newton / bisection solver.
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomLoss {
    pub family: CustomFamily,
    pub prox: ProxMethod,
}

/// A convex margin loss.
///
/// `LeastSquares` is `(t - 1)^2` (not the half-scaled variant, which is
/// available as `Custom` with `ScaledSquare { scale: 0.5 }`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Loss {
    LeastSquares,
    LeastAbsDev,
    Hinge,
    Logistic,
    Exponential,
    Custom(CustomLoss),
}

/// Moreau envelope of a loss at a point, with both partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeEval {
    pub x: f64,
    pub lambda: f64,
    pub prox_point: f64,
    pub env_value: f64,
    pub env_dx: f64,
    pub env_dlambda: f64,
}

#[inline]
fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{-z})`.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Loss {
    pub fn custom(family: CustomFamily, prox: ProxMethod) -> Self {
        Loss::Custom(CustomLoss { family, prox })
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Loss::LeastSquares => LossKind::LeastSquares,
            Loss::LeastAbsDev => LossKind::LeastAbsDev,
            Loss::Hinge => LossKind::Hinge,
            Loss::Logistic => LossKind::Logistic,
            Loss::Exponential => LossKind::Exponential,
            Loss::Custom(_) => LossKind::Custom,
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            Loss::LeastSquares | Loss::Logistic | Loss::Exponential => Smoothness::C2,
            Loss::LeastAbsDev | Loss::Hinge => Smoothness::Nonsmooth,
            Loss::Custom(c) => match c.family {
                CustomFamily::ScaledSquare { .. } => Smoothness::C2,
                CustomFamily::Huber { .. } | CustomFamily::SquaredHinge => Smoothness::C1,
            },
        }
    }

    /// True for nonnegative losses with `loss(t) -> 0` as `t -> +inf`. Such losses
    /// have unbounded minimisers on linearly separable data.
    pub fn vanishes_at_infinity(&self) -> bool {
        match self {
            Loss::Hinge | Loss::Logistic | Loss::Exponential => true,
            Loss::Custom(c) => matches!(c.family, CustomFamily::SquaredHinge),
            _ => false,
        }
    }

    /// A global minimiser, when one exists.
    pub fn minimizer(&self) -> Option<f64> {
        match self {
            Loss::Logistic | Loss::Exponential => None,
            _ => Some(1.0),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Loss::LeastSquares => (t - 1.0) * (t - 1.0),
            Loss::LeastAbsDev => (t - 1.0).abs(),
            Loss::Hinge => (1.0 - t).max(0.0),
            Loss::Logistic => softplus(-t),
            Loss::Exponential => (-t).exp(),
            Loss::Custom(c) => match c.family {
                CustomFamily::ScaledSquare { scale } => scale * (t - 1.0) * (t - 1.0),
                CustomFamily::Huber { width } => {
                    let u = (1.0 - t).abs();
                    if u <= width {
                        0.5 * u * u / width
                    } else {
                        u - 0.5 * width
                    }
                }
                CustomFamily::SquaredHinge => {
                    let u = (1.0 - t).max(0.0);
                    u * u
                }
            },
        }
    }

    /// Right derivative. Equals the derivative wherever the loss is differentiable.
    pub fn right_derivative(&self, t: f64) -> f64 {
        match self {
            Loss::LeastAbsDev => {
                if t >= 1.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Loss::Hinge => {
                if t >= 1.0 {
                    0.0
                } else {
                    -1.0
                }
            }
            _ => self.first_derivative_unchecked(t),
        }
    }

    fn first_derivative_unchecked(&self, t: f64) -> f64 {
        match self {
            Loss::LeastSquares => 2.0 * (t - 1.0),
            Loss::LeastAbsDev | Loss::Hinge => self.right_derivative(t),
            Loss::Logistic => -sigmoid(-t),
            Loss::Exponential => -(-t).exp(),
            Loss::Custom(c) => match c.family {
                CustomFamily::ScaledSquare { scale } => 2.0 * scale * (t - 1.0),
                CustomFamily::Huber { width } => -((1.0 - t) / width).clamp(-1.0, 1.0),
                CustomFamily::SquaredHinge => -2.0 * (1.0 - t).max(0.0),
            },
        }
    }

    fn second_derivative_unchecked(&self, t: f64) -> Option<f64> {
        match self {
            Loss::LeastSquares => Some(2.0),
            Loss::Logistic => Some(sigmoid(t) * sigmoid(-t)),
            Loss::Exponential => Some((-t).exp()),
            Loss::Custom(CustomLoss {
                family: CustomFamily::ScaledSquare { scale },
                ..
            }) => Some(2.0 * scale),
            _ => None,
        }
    }

    /// `loss'(t)` for C1 losses.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        if self.smoothness() < Smoothness::C1 {
            return Err(self.capability("first"));
        }
        Ok(self.first_derivative_unchecked(t))
    }

    /// `loss''(t)` for C2 losses.
    pub fn second_derivative(&self, t: f64) -> Result<f64> {
        if self.smoothness() < Smoothness::C2 {
            return Err(self.capability("second"));
        }
        self.second_derivative_unchecked(t)
            .ok_or_else(|| self.capability("second"))
    }

    /// `(loss'(t), loss''(t))`; the second entry is `None` for C1 losses.
    pub fn derivatives(&self, t: f64) -> Result<(f64, Option<f64>)> {
        let d1 = self.derivative(t)?;
        let d2 = if self.smoothness() >= Smoothness::C2 {
            self.second_derivative_unchecked(t)
        } else {
            None
        };
        Ok((d1, d2))
    }

    fn capability(&self, order: &'static str) -> Error {
        Error::Capability {
            loss: self.to_string(),
            order,
            smoothness: self.smoothness(),
        }
    }

    /// Proximal operator `argmin_v (x - v)^2 / (2 lambda) + loss(v)`.
    pub fn prox(&self, x: f64, lambda: f64) -> Result<f64> {
        check_prox_args(x, lambda)?;
        Ok(match self {
            Loss::LeastSquares => (x + 2.0 * lambda) / (1.0 + 2.0 * lambda),
            Loss::LeastAbsDev => 1.0 + soft_threshold(x - 1.0, lambda),
            Loss::Hinge => 1.0 + soft_threshold(x + 0.5 * lambda - 1.0, 0.5 * lambda),
            Loss::Logistic | Loss::Exponential => return self.prox_numeric(x, lambda),
            Loss::Custom(c) => match (c.prox, c.family) {
                (ProxMethod::Numeric, _) => return self.prox_numeric(x, lambda),
                (ProxMethod::ClosedForm, CustomFamily::ScaledSquare { scale }) => {
                    (x + 2.0 * scale * lambda) / (1.0 + 2.0 * scale * lambda)
                }
                (ProxMethod::ClosedForm, CustomFamily::Huber { width }) => {
                    let u = 1.0 - x;
                    let pu = if u.abs() <= width + lambda {
                        u * width / (width + lambda)
                    } else {
                        u - lambda.copysign(u)
                    };
                    1.0 - pu
                }
                (ProxMethod::ClosedForm, CustomFamily::SquaredHinge) => {
                    if x >= 1.0 {
                        x
                    } else {
                        (x + 2.0 * lambda) / (1.0 + 2.0 * lambda)
                    }
                }
            },
        })
    }

    /// Generic prox: safeguarded Newton on `v + lambda loss'(v) = x` for C2
    /// losses, bisection on the right derivative otherwise.
    pub fn prox_numeric(&self, x: f64, lambda: f64) -> Result<f64> {
        check_prox_args(x, lambda)?;
        self.prox_numeric_capped(x, lambda, PROX_MAX_ITER)
    }

    pub(crate) fn prox_numeric_capped(&self, x: f64, lambda: f64, max_iter: usize) -> Result<f64> {
        // g(v) = v - x + lambda * loss'_+(v) is strictly increasing; the prox is
        // the point where it crosses zero.
        let d = self.right_derivative(x);
        if d == 0.0 {
            return Ok(x);
        }
        let far = x - lambda * d;
        if !far.is_finite() {
            return Err(Error::Numeric(format!(
                "prox bracket overflow for {self} at x={x}, lambda={lambda}"
            )));
        }
        let g = |v: f64| v - x + lambda * self.right_derivative(v);
        let (mut lo, mut hi) = if d > 0.0 { (far, x) } else { (x, far) };
        if d > 0.0 && g(lo) >= 0.0 {
            return Ok(lo);
        }

        if self.smoothness() == Smoothness::C2 {
            let mut v = 0.5 * (lo + hi);
            let mut last_step = hi - lo;
            for _ in 0..max_iter {
                let gv = g(v);
                // `g` cannot be evaluated more accurately than rounding in its terms.
                if gv.abs() <= 4.0 * f64::EPSILON * (x.abs() + v.abs() + 1.0) {
                    return Ok(v);
                }
                if gv < 0.0 {
                    lo = v;
                } else {
                    hi = v;
                }
                let curv = self.second_derivative_unchecked(v).unwrap_or(0.0);
                let step = gv / (1.0 + lambda * curv);
                let mut next = v - step;
                // Bisect when Newton leaves the bracket or stops halving its step,
                // which rules out two-cycles far from the root.
                if !(next > lo && next < hi) || step.abs() > 0.5 * last_step {
                    next = 0.5 * (lo + hi);
                }
                last_step = (next - v).abs();
                if (next - v).abs() <= 4.0 * f64::EPSILON * (1.0 + v.abs()) || hi - lo <= PROX_TOL {
                    return Ok(next);
                }
                v = next;
            }
        } else {
            for _ in 0..max_iter {
                let mid = 0.5 * (lo + hi);
                if hi - lo <= PROX_TOL || mid <= lo || mid >= hi {
                    return Ok(hi);
                }
                if g(mid) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        Err(Error::Numeric(format!(
            "prox solver for {self} did not converge at x={x}, lambda={lambda}"
        )))
    }

    /// Moreau envelope value, prox point and both partial derivatives.
    pub fn moreau_env(&self, x: f64, lambda: f64) -> Result<EnvelopeEval> {
        let p = self.prox(x, lambda)?;
        Ok(self.envelope_from_prox(x, lambda, p))
    }

    pub(crate) fn envelope_from_prox(&self, x: f64, lambda: f64, p: f64) -> EnvelopeEval {
        let gap = x - p;
        let env_dx = gap / lambda;
        EnvelopeEval {
            x,
            lambda,
            prox_point: p,
            env_value: gap * gap / (2.0 * lambda) + self.value(p),
            env_dx,
            env_dlambda: -gap * gap / (2.0 * lambda * lambda),
        }
    }

    /// `dM/dx` only; the hot path of the expectation engines.
    #[inline]
    pub fn env_dx(&self, x: f64, lambda: f64) -> Result<f64> {
        Ok((x - self.prox(x, lambda)?) / lambda)
    }

    /// `d^2M/dx^2 = loss''(p) / (1 + lambda loss''(p))` at `p = prox(x)`, for C2 losses.
    pub fn env_dxx(&self, x: f64, lambda: f64) -> Result<f64> {
        let c = self.second_derivative(self.prox(x, lambda)?)?;
        Ok(c / (1.0 + lambda * c))
    }
}

fn check_prox_args(x: f64, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!(
            "prox parameter must be positive and finite, got {lambda}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::domain(format!("prox argument must be finite, got {x}")));
    }
    Ok(())
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Loss::LeastSquares => write!(f, "ls"),
            Loss::LeastAbsDev => write!(f, "lad"),
            Loss::Hinge => write!(f, "hinge"),
            Loss::Logistic => write!(f, "logistic"),
            Loss::Exponential => write!(f, "exp"),
            Loss::Custom(c) => {
                match c.family {
                    CustomFamily::ScaledSquare { scale } if scale == 0.5 => write!(f, "half-ls")?,
                    CustomFamily::ScaledSquare { scale } => write!(f, "scaled-ls:{scale}")?,
                    CustomFamily::Huber { width } => write!(f, "huber:{width}")?,
                    CustomFamily::SquaredHinge => write!(f, "sq-hinge")?,
                }
                if c.prox == ProxMethod::Numeric {
                    write!(f, "/numeric")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Loss {
    type Err = Error;

    /// Accepts `ls`, `lad`, `hinge`, `logistic`, `exp`, and the custom families
    /// `half-ls`, `scaled-ls:<scale>`, `huber:<width>`, `sq-hinge`, each
    /// optionally suffixed with `/numeric` to force the generic prox.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (body, prox) = match s.strip_suffix("/numeric") {
            Some(b) => (b, ProxMethod::Numeric),
            None => (s.as_str(), ProxMethod::ClosedForm),
        };
        let (name, param) = match body.split_once(':') {
            Some((n, p)) => {
                let v: f64 = p
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad loss parameter in '{s}'")))?;
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Parse(format!("loss parameter must be positive in '{s}'")));
                }
                (n, Some(v))
            }
            None => (body, None),
        };
        let builtin = |l: Loss| {
            if param.is_some() || prox == ProxMethod::Numeric {
                Err(Error::Parse(format!(
                    "builtin loss '{name}' takes no parameter or prox override; use a custom family"
                )))
            } else {
                Ok(l)
            }
        };
        let need = |p: Option<f64>| {
            p.ok_or_else(|| Error::Parse(format!("loss '{name}' needs a parameter, e.g. {name}:0.5")))
        };
        match name {
            "ls" | "least-squares" | "leastsquares" => builtin(Loss::LeastSquares),
            "lad" | "least-abs-dev" | "leastabsdev" => builtin(Loss::LeastAbsDev),
            "hinge" => builtin(Loss::Hinge),
            "logistic" => builtin(Loss::Logistic),
            "exp" | "exponential" | "adaboost" => builtin(Loss::Exponential),
            "half-ls" => Ok(Loss::custom(CustomFamily::ScaledSquare { scale: 0.5 }, prox)),
            "scaled-ls" => Ok(Loss::custom(
                CustomFamily::ScaledSquare { scale: need(param)? },
                prox,
            )),
            "huber" => Ok(Loss::custom(CustomFamily::Huber { width: need(param)? }, prox)),
            "sq-hinge" | "squared-hinge" => Ok(Loss::custom(CustomFamily::SquaredHinge, prox)),
            _ => Err(Error::Parse(format!("unknown loss '{name}'"))),
        }
    }
}

impl TryFrom<String> for Loss {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Loss> for String {
    fn from(l: Loss) -> String {
        l.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roots::golden_section_min;
    use proptest::prelude::*;

    fn all_losses() -> Vec<Loss> {
        vec![
            Loss::LeastSquares,
            Loss::LeastAbsDev,
            Loss::Hinge,
            Loss::Logistic,
            Loss::Exponential,
            "half-ls".parse().unwrap(),
            "huber:0.7".parse().unwrap(),
            "sq-hinge".parse().unwrap(),
        ]
    }

    #[test]
    fn prox_examples() {
        assert!((Loss::LeastSquares.prox(0.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(Loss::LeastAbsDev.prox(1.0, 0.7).unwrap(), 1.0);
        assert_eq!(Loss::Hinge.prox(5.0, 1.0).unwrap(), 5.0);
    }

    #[test]
    fn logistic_prox_matches_golden_section() {
        let obj = |v: f64| v * v / 2.0 + Loss::Logistic.value(v);
        let (vstar, _) = golden_section_min(obj, -5.0, 5.0, 1e-11);
        let p = Loss::Logistic.prox(0.0, 1.0).unwrap();
        // A value-based search resolves the minimiser to about sqrt(machine eps).
        assert!((p - vstar).abs() < 1e-7, "{p} vs {vstar}");
        // optimality: v = e^{-v} / (1 + e^{-v})
        assert!((p - (-p).exp() / (1.0 + (-p).exp())).abs() < 1e-12);
    }

    #[test]
    fn envelope_examples() {
        let e = Loss::LeastSquares.moreau_env(3.0, 1.0).unwrap();
        assert!((e.env_value - 4.0 / 3.0).abs() < 1e-14);
        assert!((e.prox_point - 5.0 / 3.0).abs() < 1e-14);
        assert!((e.env_dx - 4.0 / 3.0).abs() < 1e-14);

        for l in all_losses() {
            if let Some(m) = l.minimizer() {
                assert!(l.moreau_env(m, 1.0).unwrap().env_dx.abs() < 1e-12, "{l}");
            }
        }

        let e = Loss::LeastAbsDev.moreau_env(10.0, 1.0).unwrap();
        assert_eq!(e.env_dx, 1.0);
        let h = 1e-5;
        let fd = (Loss::LeastAbsDev.moreau_env(10.0 + h, 1.0).unwrap().env_value
            - Loss::LeastAbsDev.moreau_env(10.0 - h, 1.0).unwrap().env_value)
            / (2.0 * h);
        assert!((fd - 1.0).abs() < 1e-8);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(Loss::LeastSquares.derivatives(1.0).unwrap(), (0.0, Some(2.0)));
        let (d1, d2) = Loss::Logistic.derivatives(0.0).unwrap();
        assert!((d1 + 0.5).abs() < 1e-15 && (d2.unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(Loss::Exponential.derivatives(0.0).unwrap(), (-1.0, Some(1.0)));
        let (_, d2) = "huber:1".parse::<Loss>().unwrap().derivatives(0.5).unwrap();
        assert!(d2.is_none());
        assert!(matches!(
            Loss::Hinge.derivatives(0.0),
            Err(Error::Capability { .. })
        ));
        assert!(matches!(
            Loss::LeastAbsDev.second_derivative(0.0),
            Err(Error::Capability { .. })
        ));
    }

    #[test]
    fn prox_rejects_bad_lambda() {
        for lam in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(Loss::Hinge.prox(0.0, lam), Err(Error::Domain(_))));
        }
        assert!(matches!(Loss::Logistic.prox(f64::NAN, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn newton_failure_is_reported() {
        assert!(matches!(
            Loss::Logistic.prox_numeric_capped(3.0, 2.0, 1),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn numeric_prox_reproduces_closed_forms() {
        let closed = [
            Loss::LeastSquares,
            Loss::LeastAbsDev,
            Loss::Hinge,
            "half-ls".parse().unwrap(),
            "huber:0.7".parse().unwrap(),
            "sq-hinge".parse().unwrap(),
        ];
        for l in closed {
            for i in 0..=400 {
                let x = -10.0 + 0.05 * i as f64;
                for lam in [0.01, 0.1, 1.0, 10.0] {
                    let a = l.prox(x, lam).unwrap();
                    let b = l.prox_numeric(x, lam).unwrap();
                    assert!((a - b).abs() < 1e-9, "{l} x={x} lam={lam}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let h = 1e-6;
        for l in all_losses() {
            for lam in [0.1, 1.0, 10.0] {
                for i in 0..=200 {
                    let x = -10.0 + 0.1 * i as f64 + 0.013;
                    let e = l.moreau_env(x, lam).unwrap();
                    let fd = (l.moreau_env(x + h, lam).unwrap().env_value
                        - l.moreau_env(x - h, lam).unwrap().env_value)
                        / (2.0 * h);
                    assert!((fd - e.env_dx).abs() < 1e-5, "{l} x={x} lam={lam}");
                    let fdl = (l.moreau_env(x, lam + h).unwrap().env_value
                        - l.moreau_env(x, lam - h).unwrap().env_value)
                        / (2.0 * h);
                    assert!((fdl - e.env_dlambda).abs() < 1e-5, "{l} x={x} lam={lam}");
                }
            }
        }
    }

    #[test]
    fn loss_derivative_matches_finite_differences() {
        for l in all_losses().into_iter().filter(|l| l.smoothness() >= Smoothness::C1) {
            for i in 0..=100 {
                let t = -5.0 + 0.1 * i as f64 + 0.0071;
                let h = 1e-6;
                let fd = (l.value(t + h) - l.value(t - h)) / (2.0 * h);
                let d = l.derivative(t).unwrap();
                assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "{l} t={t}");
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for l in all_losses() {
            let again: Loss = l.to_string().parse().unwrap();
            assert_eq!(again, l);
        }
        let n: Loss = "huber:0.25/numeric".parse().unwrap();
        assert_eq!(n.to_string(), "huber:0.25/numeric");
        assert!("ls:2".parse::<Loss>().is_err());
        assert!("huber".parse::<Loss>().is_err());
        assert!("nope".parse::<Loss>().is_err());
    }

    fn loss_strategy() -> impl Strategy<Value = Loss> {
        prop::sample::select(all_losses())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn prox_is_nonexpansive(l in loss_strategy(), x in -20.0..20.0f64, y in -20.0..20.0f64,
                                lam in 0.01..20.0f64) {
            let px = l.prox(x, lam).unwrap();
            let py = l.prox(y, lam).unwrap();
            prop_assert!((px - py).abs() <= (x - y).abs() + 1e-12);
        }

        #[test]
        fn envelope_identities(l in loss_strategy(), x in -20.0..20.0f64, lam in 0.01..20.0f64) {
            let e = l.moreau_env(x, lam).unwrap();
            prop_assert!(e.env_value <= l.value(x) + 1e-12);
            prop_assert_eq!(e.env_dx, (x - e.prox_point) / lam);
            let half_sq = -0.5 * e.env_dx * e.env_dx;
            prop_assert!((e.env_dlambda - half_sq).abs() <= 1e-12 * half_sq.abs().max(1.0));
            if l.smoothness() >= Smoothness::C1 {
                let d = l.derivative(e.prox_point).unwrap();
                prop_assert!((e.env_dx - d).abs() <= 1e-9 * d.abs().max(1.0));
            }
        }

        #[test]
        fn value_is_midpoint_convex(l in loss_strategy(), a in -30.0..30.0f64, b in -30.0..30.0f64) {
            let mid = l.value(0.5 * (a + b));
            let avg = 0.5 * (l.value(a) + l.value(b));
            prop_assert!(mid <= avg + 1e-9 * avg.abs().max(1.0));
        }
    }
}
