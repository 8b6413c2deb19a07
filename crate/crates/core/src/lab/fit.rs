//! Solvers for `min_x (1/m) sum_i loss(y_i a_i^T x) + r ||x||^2`.
//!
//! * Differentiable losses: accelerated gradient descent with backtracking and
//!   function-value restarts (every accepted iterate lowers the objective).
//! * Nonsmooth losses: ADMM on the splitting `z = B x`, `B = diag(y) A`, with a
//!   cached Cholesky factor for the `x`-update and the loss prox for the `z`-update.
//!   ADMM's tail is slow on these piecewise-linear objectives, so its iterate is
//!   finished exactly: by simplex-style crossover to an optimal vertex when
//!   `r = 0`, by solving the KKT system of the current active set when `r > 0`.
//!   Either way the returned point carries an optimality certificate.
//!
//! Losses that vanish at `+inf` have no minimiser on separable data when `r = 0`;
//! this is detected up front with a finite Newton method on the squared-hinge
//! margin problem, which returns a separating direction as a witness.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lab::instance::Instance;
use crate::loss::{Loss, Smoothness};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative stopping tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Iterates with a larger norm are declared unbounded.
    pub divergence_norm: f64,
    /// Run the separability check for losses vanishing at `+inf` when `r = 0`.
    pub check_separability: bool,
    /// Keep the objective value of every iterate in [`FitResult::history`].
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 5000,
            rho: 1.0,
            divergence_norm: 1e6,
            check_separability: true,
            record_history: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// The data are linearly separable: `min_i y_i a_i^T witness > 0`, and the
    /// objective has no minimiser.
    UnboundedSeparable { witness: Vec<f64> },
    MaxIter,
}

impl FitStatus {
    pub fn label(&self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::UnboundedSeparable { .. } => "unbounded_separable",
            FitStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub x_hat: Vec<f64>,
    pub status: FitStatus,
    pub iterations: usize,
    pub objective: f64,
    /// Stationarity measure at `x_hat`: gradient norm (gradient solvers) or the
    /// larger ADMM residual, relative to `1 + ||x_hat||`.
    pub optimality: f64,
    /// `agd`, `admm`, `admm+polish` or `separability`.
    pub solver: String,
    /// Objective after each iteration, when requested.
    pub history: Vec<f64>,
}

/// `(1/m) sum_i loss((B x)_i) + r ||x||^2`.
pub fn objective(b: &DMatrix<f64>, loss: &Loss, r: f64, x: &DVector<f64>) -> f64 {
    let margins = b * x;
    let m = b.nrows() as f64;
    margins.iter().map(|t| loss.value(*t)).sum::<f64>() / m + r * x.norm_squared()
}

/// Minimise the empirical risk of `loss` with ridge `r` on `inst`.
pub fn fit(inst: &Instance, loss: &Loss, r: f64, cfg: &SolverConfig) -> Result<FitResult> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::domain(format!("ridge coefficient must be >= 0, got {r}")));
    }
    let b = inst.signed_rows();
    if cfg.check_separability && r == 0.0 && loss.vanishes_at_infinity() {
        if let Some(witness) = separating_direction(&b)? {
            return Ok(unbounded(&b, loss, r, witness));
        }
    }
    let res = if loss.smoothness() >= Smoothness::C1 {
        accelerated_gradient(&b, loss, r, cfg)?
    } else {
        admm(&b, loss, r, cfg)?
    };
    if res.status == FitStatus::MaxIter && res.x_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("solver produced non-finite iterate".into()));
    }
    Ok(res)
}

fn unbounded(b: &DMatrix<f64>, loss: &Loss, r: f64, witness: DVector<f64>) -> FitResult {
    FitResult {
        objective: objective(b, loss, r, &witness),
        x_hat: witness.as_slice().to_vec(),
        status: FitStatus::UnboundedSeparable {
            witness: witness.as_slice().to_vec(),
        },
        iterations: 0,
        optimality: f64::NAN,
        solver: "separability".into(),
        history: Vec::new(),
    }
}

/// Escalate a blown-up iterate: attach a separating witness when one exists.
fn diverged(b: &DMatrix<f64>, loss: &Loss, r: f64, iterations: usize) -> Result<FitResult> {
    match separating_direction(b)? {
        Some(w) => {
            let mut res = unbounded(b, loss, r, w);
            res.iterations = iterations;
            Ok(res)
        }
        None => Err(Error::Unbounded(format!(
            "iterate norm exceeded the divergence threshold after {iterations} iterations \
             but the data are not separable"
        ))),
    }
}

/// Finite Newton method for `min_x 1/2 sum_i (1 - (B x)_i)_+^2`. The minimum is
/// zero exactly when some `x` has every margin `>= 1`; that `x` is returned.
pub fn separating_direction(b: &DMatrix<f64>) -> Result<Option<DVector<f64>>> {
    let (m, n) = b.shape();
    let value = |x: &DVector<f64>| -> f64 {
        let t = b * x;
        0.5 * t.iter().map(|v| (1.0 - v).max(0.0).powi(2)).sum::<f64>()
    };
    let scale = b.norm_squared() / n as f64;
    let mut x = DVector::zeros(n);
    let mut f = value(&x);
    for _ in 0..500 {
        let t = b * &x;
        if t.iter().all(|v| *v >= 1.0 - 1e-9) {
            return Ok((t.min() > 0.0).then_some(x));
        }
        let active: Vec<usize> = (0..m).filter(|&i| t[i] < 1.0).collect();
        let ba = b.select_rows(&active);
        let resid = DVector::from_iterator(active.len(), active.iter().map(|&i| 1.0 - t[i]));
        let grad = -ba.tr_mul(&resid);
        if grad.norm() <= 1e-12 * (1.0 + scale) * (1.0 + x.norm()) {
            // Stationary with positive value: not separable.
            return Ok(None);
        }
        let mut h = ba.tr_mul(&ba);
        for k in 0..n {
            h[(k, k)] += 1e-10 * scale;
        }
        let chol = Cholesky::new(h)
            .ok_or_else(|| Error::Numeric("separability Newton system is not positive definite".into()))?;
        let d = chol.solve(&(-&grad));
        // Armijo backtracking on the piecewise quadratic.
        let slope = grad.dot(&d);
        let mut step = 1.0;
        loop {
            let cand = &x + step * &d;
            let fc = value(&cand);
            if fc <= f + 1e-4 * step * slope || step < 1e-12 {
                x = cand;
                if (f - fc).abs() <= 1e-15 * (1.0 + f) && fc > 0.0 && step < 1e-12 {
                    return Ok(None);
                }
                f = fc;
                break;
            }
            step *= 0.5;
        }
        if f <= 0.0 {
            let t = b * &x;
            return Ok((t.min() > 0.0).then_some(x));
        }
    }
    Ok(None)
}

fn gradient(b: &DMatrix<f64>, loss: &Loss, r: f64, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let m = b.nrows() as f64;
    let margins = b * x;
    let mut value = 0.0;
    let mut d = DVector::zeros(margins.len());
    for (i, t) in margins.iter().enumerate() {
        value += loss.value(*t);
        d[i] = loss.derivative(*t)?;
    }
    let g = b.tr_mul(&d) / m + 2.0 * r * x;
    Ok((value / m + r * x.norm_squared(), g))
}

/// Relative slack in objective comparisons. Near the optimum `f - f*` is of the
/// order of the squared gradient, far below the rounding error of a sum over `m`
/// terms; without slack, rounding noise triggers endless restarts before the
/// gradient test can fire.
const F_SLACK: f64 = 1e-13;

fn accelerated_gradient(b: &DMatrix<f64>, loss: &Loss, r: f64, cfg: &SolverConfig) -> Result<FitResult> {
    let n = b.ncols();
    let mut x = DVector::zeros(n);
    let (mut fx, mut gx) = gradient(b, loss, r, &x)?;
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    // Initial curvature estimate: loss''(1) ||B||_F^2 / (m n) + 2 r.
    let mut lip = (b.norm_squared() / (b.nrows() * n) as f64).max(1e-8) + 2.0 * r;
    let mut history = Vec::new();
    for it in 1..=cfg.max_iter {
        let (fy, gy) = gradient(b, loss, r, &y)?;
        lip *= 0.9;
        let (x_new, f_new) = loop {
            let cand = &y - &gy / lip;
            let diff = &cand - &y;
            let f_cand = objective(b, loss, r, &cand);
            if f_cand.is_finite() && f_cand <= fy + gy.dot(&diff) + 0.5 * lip * diff.norm_squared() + F_SLACK * fy.abs() {
                break (cand, f_cand);
            }
            lip *= 2.0;
            if lip > 1e300 {
                return Err(Error::Numeric("line search failed to find a descent step".into()));
            }
        };
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if f_new > fx + F_SLACK * fx.abs() {
            // Momentum overshot: restart from x with a plain gradient step.
            t = 1.0;
            y = x.clone();
            continue;
        }
        let momentum = (t - 1.0) / t_new;
        y = &x_new + momentum * (&x_new - &x);
        x = x_new;
        fx = f_new;
        t = t_new;
        if cfg.record_history {
            history.push(fx);
        }
        if x.norm() > cfg.divergence_norm {
            return diverged(b, loss, r, it);
        }
        gx = gradient(b, loss, r, &x)?.1;
        let opt = gx.norm() / (1.0 + x.norm());
        if opt < cfg.tol {
            return Ok(FitResult {
                x_hat: x.as_slice().to_vec(),
                status: FitStatus::Converged,
                iterations: it,
                objective: fx,
                optimality: opt,
                solver: "agd".into(),
                history,
            });
        }
    }
    Ok(FitResult {
        x_hat: x.as_slice().to_vec(),
        status: FitStatus::MaxIter,
        iterations: cfg.max_iter,
        objective: fx,
        optimality: gx.norm() / (1.0 + x.norm()),
        solver: "agd".into(),
        history,
    })
}

/// Factor `2 m r I + rho B^T B`.
fn factor(btb: &DMatrix<f64>, m: f64, r: f64, rho: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut k = rho * btb;
    for i in 0..k.nrows() {
        k[(i, i)] += 2.0 * m * r;
    }
    Cholesky::new(k).ok_or_else(|| {
        Error::Numeric("x-update system is singular (fewer measurements than unknowns with r = 0?)".into())
    })
}

/// Margin at which LAD and hinge have their kink.
const KINK: f64 = 1.0;
/// ADMM iterations between polishing attempts.
const POLISH_EVERY: usize = 10;
/// Slack allowed when certifying a polished point.
const POLISH_TOL: f64 = 1e-8;
/// First ADMM iteration at which crossover is attempted; later attempts double it.
const FIRST_CROSSOVER: usize = 50;
/// Pivot budget per crossover attempt, in multiples of `n`.
const CROSSOVER_PIVOTS: usize = 4;

/// Guess the rows on the kink. Without the ridge term the minimiser is
/// generically a vertex, so take the `n` margins closest to the kink; with it,
/// take the rows the prox placed exactly on the kink.
fn active_set(bx: &DVector<f64>, z: &DVector<f64>, r: f64, n: usize) -> Vec<usize> {
    let m = z.len();
    if r > 0.0 {
        return (0..m).filter(|&i| z[i] == KINK).collect();
    }
    let mut order: Vec<usize> = (0..m).collect();
    // Rows the prox put on the kink have an interior dual value; rank them first.
    let key = |i: usize| (z[i] != KINK, (bx[i] - KINK).abs());
    order.sort_by(|&i, &j| {
        let (a, b) = (key(i), key(j));
        a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(i.cmp(&j))
    });
    order.truncate(n.min(m));
    order.sort_unstable();
    order
}

/// Vertex refinement for `r = 0`: the objective is piecewise linear, so a
/// minimiser sits where `n` rows are on the kink. Starting from the guess
/// `active`, pivot like the simplex method: compute the subgradient weights `s`
/// that the kink rows would need for stationarity; if one is outside the
/// subdifferential, move that row off the kink along the edge that keeps the
/// others on it, as far as the directional derivative stays negative (passing
/// breakpoints of inactive rows), and let the row where it turns non-negative
/// enter. Each pivot lowers the objective. Returns the certified vertex and the
/// largest subdifferential violation, or `None` if the budget runs out.
fn crossover(b: &DMatrix<f64>, loss: &Loss, mut active: Vec<usize>, max_pivots: usize) -> Option<(DVector<f64>, f64)> {
    let (m, n) = b.shape();
    if active.len() != n {
        return None;
    }
    let (below, above) = (loss.right_derivative(KINK - 1.0), loss.right_derivative(KINK + 1.0));
    let mut is_active = vec![false; m];
    for &i in &active {
        is_active[i] = true;
    }
    for _ in 0..=max_pivots {
        let ba = b.select_rows(&active);
        let lu = ba.clone().lu();
        let x = lu.solve(&DVector::from_element(n, KINK))?;
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let t = b * &x;
        let slopes = DVector::from_fn(m, |i, _| match (is_active[i], t[i] < KINK) {
            (true, _) => 0.0,
            (false, true) => below,
            (false, false) => above,
        });
        let g = b.tr_mul(&slopes);
        let s = ba.transpose().lu().solve(&(-g))?;
        let (j, violation) = s
            .iter()
            .map(|&v| (below - v).max(v - above))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
        if violation <= POLISH_TOL {
            return Some((x, violation.max(0.0)));
        }
        // Leave the kink upwards (sigma = +1) if s_j exceeds the upper slope.
        let sigma = if s[j] > above { 1.0 } else { -1.0 };
        let mut e = DVector::zeros(n);
        e[j] = sigma;
        let d = lu.solve(&e)?;
        let c = b * &d;
        let mut crossings: Vec<(f64, usize)> = (0..m)
            .filter(|&i| !is_active[i])
            .filter(|&i| (t[i] < KINK && c[i] > 0.0) || (t[i] >= KINK && c[i] < 0.0))
            .map(|i| (((KINK - t[i]) / c[i]).max(0.0), i))
            .collect();
        crossings.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut slope = -violation;
        let mut entering = None;
        for (_, i) in crossings {
            slope += c[i].abs() * (above - below);
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        // No breakpoint stops the descent: the objective is unbounded below.
        let i = entering?;
        is_active[active[j]] = false;
        is_active[i] = true;
        active[j] = i;
    }
    None
}

/// Exact minimiser with the ridge term for a loss that is linear on both sides
/// of a kink at margin 1, given the rows `active` that sit on the kink and, for the others, which
/// side `z` puts them on. Solves the KKT system
///
/// ```text
/// 2 m r x + B_A^T s = -sum_{i not in A} loss'(z_i) b_i,    B_A x = 1
/// ```
///
/// and accepts the result only if every `s_i` lies in the subdifferential at the
/// kink and no inactive row changes side, which certifies optimality. Returns
/// the point and the KKT residual relative to `1 + ||x||`.
fn polish(b: &DMatrix<f64>, loss: &Loss, r: f64, active: &[usize], z: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let (m, n) = b.shape();
    let k = active.len();
    if k == 0 || k > n + m {
        return None;
    }
    let (below, above) = (loss.right_derivative(KINK - 1.0), loss.right_derivative(KINK + 1.0));
    let mut is_active = vec![false; m];
    for &i in active {
        is_active[i] = true;
    }
    let slopes = DVector::from_fn(m, |i, _| match (is_active[i], z[i] < KINK) {
        (true, _) => 0.0,
        (false, true) => below,
        (false, false) => above,
    });
    let g = b.tr_mul(&slopes);
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    for j in 0..n {
        kkt[(j, j)] = 2.0 * m as f64 * r;
    }
    for (a, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(j, n + a)] = b[(i, j)];
            kkt[(n + a, j)] = b[(i, j)];
        }
    }
    let mut rhs = DVector::from_element(dim, KINK);
    rhs.rows_mut(0, n).copy_from(&(-&g));
    let sol = kkt.clone().lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if (n..dim).any(|j| sol[j] < below - POLISH_TOL || sol[j] > above + POLISH_TOL) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let margins = b * &x;
    let same_side = (0..m).filter(|&i| !is_active[i]).all(|i| {
        if z[i] < KINK {
            margins[i] <= KINK + POLISH_TOL
        } else {
            margins[i] >= KINK - POLISH_TOL
        }
    });
    if !same_side {
        return None;
    }
    let residual = (&kkt * &sol - &rhs).norm() / (1.0 + x.norm());
    Some((x, residual))
}

fn admm(b: &DMatrix<f64>, loss: &Loss, r: f64, cfg: &SolverConfig) -> Result<FitResult> {
    let (m, n) = b.shape();
    let mf = m as f64;
    let bt = b.transpose();
    let btb = &bt * b;
    let mut rho = cfg.rho;
    let mut chol = factor(&btb, mf, r, rho)?;
    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    let mut history = Vec::new();
    let mut opt = f64::INFINITY;
    let polishable = matches!(loss, Loss::LeastAbsDev | Loss::Hinge);
    let mut last_active: Vec<usize> = Vec::new();
    let mut next_crossover = FIRST_CROSSOVER;

    for it in 1..=cfg.max_iter {
        // x = argmin m r ||x||^2 + rho/2 ||B x - z + u||^2
        x = chol.solve(&(rho * (&bt * (&z - &u))));
        let bx = b * &x;
        let z_old = z.clone();
        let v = &bx + &u;
        for i in 0..m {
            z[i] = loss.prox(v[i], 1.0 / rho)?;
        }
        // Try to finish exactly: with the ridge term, whenever the active set
        // changes; without it, by crossover at geometrically spaced iterations.
        let finished = if !polishable {
            None
        } else if r > 0.0 && it % POLISH_EVERY == 0 {
            let active = active_set(&bx, &z, r, n);
            let res = if active != last_active {
                polish(b, loss, r, &active, &z).map(|(x, res)| (x, res, "admm+polish"))
            } else {
                None
            };
            last_active = active;
            res
        } else if r == 0.0 && it >= next_crossover {
            next_crossover *= 2;
            crossover(b, loss, active_set(&bx, &z, r, n), CROSSOVER_PIVOTS * n)
                .map(|(x, res)| (x, res, "admm+crossover"))
        } else {
            None
        };
        if let Some((xp, certificate, solver)) = finished {
            return Ok(FitResult {
                objective: objective(b, loss, r, &xp),
                x_hat: xp.as_slice().to_vec(),
                status: FitStatus::Converged,
                iterations: it,
                optimality: certificate,
                solver: solver.into(),
                history,
            });
        }
        let primal = &bx - &z;
        u += &primal;
        let dual = rho * (&bt * (&z - &z_old));

        if cfg.record_history {
            history.push(objective(b, loss, r, &x));
        }
        if x.norm() > cfg.divergence_norm {
            return diverged(b, loss, r, it);
        }
        let rp = primal.norm();
        let rd = dual.norm();
        let eps_pri = cfg.tol * ((mf).sqrt() + bx.norm().max(z.norm()));
        let eps_dual = cfg.tol * ((n as f64).sqrt() + rho * (&bt * &u).norm());
        opt = (rp / eps_pri).max(rd / eps_dual) * cfg.tol;
        if rp <= eps_pri && rd <= eps_dual {
            return Ok(FitResult {
                objective: objective(b, loss, r, &x),
                x_hat: x.as_slice().to_vec(),
                status: FitStatus::Converged,
                iterations: it,
                optimality: opt,
                solver: "admm".into(),
                history,
            });
        }
        // Residual balancing.
        if it % 10 == 0 {
            let ratio = (rp / eps_pri) / (rd / eps_dual).max(1e-300);
            let factor_change = if ratio > 10.0 {
                2.0
            } else if ratio < 0.1 {
                0.5
            } else {
                1.0
            };
            if factor_change != 1.0 {
                rho *= factor_change;
                u /= factor_change;
                chol = factor(&btb, mf, r, rho)?;
            }
        }
    }
    Ok(FitResult {
        objective: objective(b, loss, r, &x),
        x_hat: x.as_slice().to_vec(),
        status: FitStatus::MaxIter,
        iterations: cfg.max_iter,
        optimality: opt,
        solver: "admm".into(),
        history,
    })
}
