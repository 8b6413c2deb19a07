//! Quadrature rules and deterministic summation.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a one-dimensional rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Hermite rule for the standard normal density: `sum w_i f(x_i) ~ E[f(G)]`.
/// Weights sum to one.
///
/// Nodes start from the eigenvalues of the Jacobi matrix (Golub–Welsch) and are
/// polished by Newton steps on the normalised Hermite functions
/// `h_k(z) e^{-z^2/2}`, which stay bounded for large `n`; weights come from the
/// same recurrence.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1, "rule needs at least one node");
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^{-1/4}
    let nf = n as f64;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let mut start: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    start.sort_by(f64::total_cmp);

    // Returns (h_n(z), derivative of h_n, without the Gaussian factor's derivative).
    let recurrence = |z: f64| -> (f64, f64) {
        let mut p1 = PIM4 * (-0.5 * z * z).exp();
        let mut p2 = 0.0;
        for j in 0..n {
            let p3 = p2;
            p2 = p1;
            let jf = j as f64;
            p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
        }
        (p1, (2.0 * nf).sqrt() * p2)
    };

    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for z0 in start {
        let mut z = z0;
        for _ in 0..100 {
            let (p, dp) = recurrence(z);
            let z1 = z;
            z -= p / dp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, dp) = recurrence(z);
        nodes.push(z * std::f64::consts::SQRT_2);
        weights.push(2.0 * (-z * z).exp() / (dp * dp) / std::f64::consts::PI.sqrt());
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

/// Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Rule {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let xm = 0.5 * (b + a);
    let xl = 0.5 * (b - a);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = xm - xl * z;
        nodes[n - 1 - i] = xm + xl * z;
        weights[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    Rule { nodes, weights }
}

/// Rule for `E[f(|G|)] = int_0^inf 2 phi(s) f(s) ds`, `G ~ N(0, 1)`.
///
/// Gauss–Legendre on `[0, 10]` with the half-normal density folded into the
/// weights; the mass beyond 10 is below 1e-22.
pub fn half_normal(n: usize) -> Rule {
    let gl = gauss_legendre(n, 0.0, 10.0);
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let weights = gl
        .nodes
        .iter()
        .zip(&gl.weights)
        .map(|(s, w)| w * c * (-0.5 * s * s).exp())
        .collect();
    Rule {
        nodes: gl.nodes,
        weights,
    }
}

/// Pairwise (cascade) summation. The result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

// 15-point Kronrod extension of the 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<const K: usize, F: FnMut(f64) -> [f64; K]>(f: &mut F, a: f64, b: f64) -> ([f64; K], f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    let fc = f(c);
    for k in 0..K {
        kron[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for k in 0..K {
            let s = f1[k] + f2[k];
            kron[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut err: f64 = 0.0;
    for k in 0..K {
        kron[k] *= h;
        gauss[k] *= h;
        err = err.max((kron[k] - gauss[k]).abs());
    }
    (kron, err)
}

/// Globally adaptive Gauss–Kronrod (7/15) integration of a vector integrand over
/// `[a, b]`, with the interval split at each of `breaks` first. Refines the worst
/// subinterval until the summed error estimate is below
/// `max(abs_tol, rel_tol * max_k |integral_k|)` or `max_intervals` is reached.
/// Returns `(integral, error_estimate)`.
pub fn adaptive_gk<const K: usize, F>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> ([f64; K], f64)
where
    F: FnMut(f64) -> [f64; K],
{
    let mut edges = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    edges.extend(inner);
    edges.push(b);

    let mut parts: Vec<(f64, f64, [f64; K], f64)> = edges
        .windows(2)
        .map(|e| {
            let (v, err) = gk15(&mut f, e[0], e[1]);
            (e[0], e[1], v, err)
        })
        .collect();
    loop {
        let total_err: f64 = parts.iter().map(|p| p.3).sum();
        let mut sum = [0.0; K];
        for p in &parts {
            for k in 0..K {
                sum[k] += p.2[k];
            }
        }
        let scale = sum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if total_err <= abs_tol.max(rel_tol * scale) || parts.len() >= max_intervals {
            return (sum, total_err);
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expect(rule: &Rule, f: impl Fn(f64) -> f64) -> f64 {
        rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * f(*x)).sum()
    }

    #[test]
    fn hermite_moments() {
        for n in [1, 2, 5, 16, 64, 128, 256, 512] {
            let r = gauss_hermite(n);
            assert!((expect(&r, |_| 1.0) - 1.0).abs() < 1e-13, "n={n}");
            assert!(expect(&r, |x| x).abs() < 1e-13);
            if n >= 2 {
                assert!((expect(&r, |x| x * x) - 1.0).abs() < 1e-12, "n={n}");
            }
            if n >= 3 {
                assert!((expect(&r, |x| x.powi(4)) - 3.0).abs() < 1e-11, "n={n}");
            }
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
        }
        let r = gauss_hermite(128);
        let m = expect(&r, |x| (0.3 * x).cos());
        assert!((m - (-0.045f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(10, -1.0, 2.0);
        let i = expect(&r, |x| x.powi(7) - 3.0 * x * x);
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (8.0 + 1.0);
        assert!((i - exact).abs() < 1e-12);
    }

    #[test]
    fn half_normal_mean_is_exact() {
        let r = half_normal(128);
        let m = expect(&r, |s| s);
        assert!((m - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((expect(&r, |s| s * s) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_kinks_and_vectors() {
        let ([a, b], err) = adaptive_gk(
            |x: f64| [x.abs(), (-x * x).exp()],
            -1.0,
            2.0,
            &[0.0],
            1e-13,
            0.0,
            200,
        );
        assert!((a - 2.5).abs() < 1e-13);
        let exact = 1.628_905_523_574_848_7; // int_{-1}^{2} e^{-x^2} dx
        assert!((b - exact).abs() < 1e-12, "{b} {exact} {err}");
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }
}
