//! Expectations over `(G, S, Y)` with `G, S` iid standard normal and `Y` drawn
//! from a label channel given `S`.
//!
//! The label is always averaged analytically:
//! `E[h(G, S, Y)] = E_{G,S}[ f(S) h(G, S, 1) + (1 - f(S)) h(G, S, -1) ]`
//! with `f(s) = P(Y = 1 | S = s)`. Only `(G, S)` is integrated numerically, and
//! the nodes or draws are fixed when the engine is built, so every evaluation
//! inside a solver sees the same discretisation.
//!
//! The quadrature engine folds `S` onto the half line. For the sign channel
//! `Y S = +-|S|` has a kink at the origin which costs a plain Hermite rule three
//! digits; on `[0, inf)` the integrand is smooth again.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite, half_normal, pairwise_sum};

/// Label-generation model.
#[derive(Clone)]
pub enum Channel {
    /// `Y = sign(S)` flipped with probability `epsilon`.
    Bsc { epsilon: f64 },
    /// `P(Y = 1 | S = s) = f(s)` for a general link `f`.
    Link {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Bsc { epsilon } => write!(f, "Bsc {{ epsilon: {epsilon} }}"),
            Channel::Link { name, .. } => write!(f, "Link {{ name: {name:?} }}"),
        }
    }
}

impl Channel {
    pub fn bsc(epsilon: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&epsilon) {
            return Err(Error::domain(format!(
                "flip probability must lie in [0, 0.5], got {epsilon}"
            )));
        }
        Ok(Channel::Bsc { epsilon })
    }

    /// General link; rejected if it leaves `[0, 1]` on a grid over `[-10, 10]`.
    pub fn link<F>(name: impl Into<String>, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        for i in 0..=2000 {
            let t = -10.0 + 0.01 * i as f64;
            let v = f(t);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("link value {v} at {t} is not a probability")));
            }
        }
        Ok(Channel::Link {
            name: name.into(),
            f: Arc::new(f),
        })
    }

    /// `P(Y = 1 | S) = 1 / (1 + exp(-beta S))`.
    pub fn logistic_link(beta: f64) -> Result<Self> {
        Self::link(format!("logistic:{beta}"), move |t| 1.0 / (1.0 + (-beta * t).exp()))
    }

    /// The sign channel written as a general link,
    /// `f(t) = 1/2 + (1 - 2 eps)/2 sign(t)`.
    pub fn bsc_as_link(epsilon: f64) -> Result<Self> {
        Self::bsc(epsilon)?;
        Self::link(format!("bsc-link:{epsilon}"), move |t| {
            0.5 + 0.5 * (1.0 - 2.0 * epsilon) * sign(t)
        })
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Channel::Bsc { epsilon } => Some(*epsilon),
            Channel::Link { .. } => None,
        }
    }

    /// `P(Y = 1 | S = s)`.
    #[inline]
    pub fn prob_positive(&self, s: f64) -> f64 {
        match self {
            Channel::Bsc { epsilon } => 0.5 + 0.5 * (1.0 - 2.0 * epsilon) * sign(s),
            Channel::Link { f, .. } => f(s),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Channel::Bsc { epsilon } => format!("bsc:{epsilon}"),
            Channel::Link { name, .. } => name.clone(),
        }
    }
}

#[inline]
fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineMethod {
    #[serde(alias = "gh")]
    GaussHermite,
    #[serde(alias = "mc")]
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub method: EngineMethod,
    /// Nodes per axis for quadrature.
    pub nodes: usize,
    /// Number of `(G, S)` draws for Monte Carlo.
    pub samples: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            method: EngineMethod::GaussHermite,
            nodes: 128,
            samples: 100_000,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn gauss_hermite(nodes: usize) -> Self {
        EngineConfig {
            method: EngineMethod::GaussHermite,
            nodes,
            ..Default::default()
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        EngineConfig {
            method: EngineMethod::MonteCarlo,
            samples,
            seed,
            ..Default::default()
        }
    }

    /// Short identifier recorded next to results.
    pub fn fingerprint(&self) -> String {
        match self.method {
            EngineMethod::GaussHermite => format!("gh:{}", self.nodes),
            EngineMethod::MonteCarlo => format!("mc:{}:{}", self.samples, self.seed),
        }
    }
}

/// Fixed `(g, s, weight)` atoms.
#[derive(Clone, Debug)]
pub struct ExpectationEngine {
    config: EngineConfig,
    g: Vec<f64>,
    s: Vec<f64>,
    w: Vec<f64>,
}

const CHUNK: usize = 1024;

impl ExpectationEngine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        match config.method {
            EngineMethod::GaussHermite => {
                if config.nodes < 2 {
                    return Err(Error::domain("quadrature needs at least 2 nodes per axis"));
                }
                let gr = gauss_hermite(config.nodes);
                let sr = half_normal(config.nodes);
                let n = config.nodes * config.nodes;
                let (mut g, mut s, mut w) =
                    (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
                for (gi, wi) in gr.nodes.iter().zip(&gr.weights) {
                    for (sj, wj) in sr.nodes.iter().zip(&sr.weights) {
                        g.push(*gi);
                        s.push(*sj);
                        w.push(wi * wj);
                    }
                }
                Ok(ExpectationEngine { config, g, s, w })
            }
            EngineMethod::MonteCarlo => {
                if config.samples < 2 {
                    return Err(Error::domain("Monte Carlo needs at least 2 samples"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                let n = config.samples;
                let mut g = Vec::with_capacity(n);
                let mut s = Vec::with_capacity(n);
                for _ in 0..n {
                    g.push(StandardNormal.sample(&mut rng));
                    s.push(StandardNormal.sample(&mut rng));
                }
                let w = vec![1.0 / n as f64; n];
                Ok(ExpectationEngine { config, g, s, w })
            }
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Label-averaged value of `h` at atom `i`, i.e. `E[h(g, s, Y) | g, s]`.
    #[inline]
    fn atom<const K: usize, H>(&self, channel: &Channel, h: &H, i: usize) -> Result<[f64; K]>
    where
        H: Fn(f64, f64, f64) -> Result<[f64; K]>,
    {
        let (g, s) = (self.g[i], self.s[i]);
        let mut out = [0.0; K];
        match self.config.method {
            // s > 0 node stands for both s and -s, each with half the weight.
            EngineMethod::GaussHermite => {
                for (sv, half) in [(s, 0.5), (-s, 0.5)] {
                    let p = channel.prob_positive(sv);
                    accumulate(&mut out, g, sv, p * half, 1.0, h)?;
                    accumulate(&mut out, g, sv, (1.0 - p) * half, -1.0, h)?;
                }
            }
            EngineMethod::MonteCarlo => {
                let p = channel.prob_positive(s);
                accumulate(&mut out, g, s, p, 1.0, h)?;
                accumulate(&mut out, g, s, 1.0 - p, -1.0, h)?;
            }
        }
        Ok(out)
    }

    /// `E[h(G, S, Y)]` for a vector-valued integrand.
    pub fn expect_many<const K: usize, H>(&self, channel: &Channel, h: H) -> Result<[f64; K]>
    where
        H: Fn(f64, f64, f64) -> Result<[f64; K]> + Sync,
    {
        self.reduce(|i| self.atom(channel, &h, i))
    }

    pub fn expect<H>(&self, channel: &Channel, h: H) -> Result<f64>
    where
        H: Fn(f64, f64, f64) -> f64 + Sync,
    {
        let [v] = self.expect_many(channel, |g, s, y| Ok([h(g, s, y)]))?;
        Ok(v)
    }

    /// `E[h(G, Z)]` for integrands that depend on `S` and `Y` only through `Z = S Y`.
    /// Same value as [`expect_many`](Self::expect_many), with half the evaluations
    /// for quadrature.
    pub fn expect_margin<const K: usize, H>(&self, channel: &Channel, h: H) -> Result<[f64; K]>
    where
        H: Fn(f64, f64) -> Result<[f64; K]> + Sync,
    {
        self.reduce(|i| {
            let (g, s) = (self.g[i], self.s[i]);
            let mut out = [0.0; K];
            let hz = |g: f64, z: f64, _y: f64| h(g, z);
            match self.config.method {
                EngineMethod::GaussHermite => {
                    // (s, +1) and (-s, -1) both give z = s.
                    let pp = channel.prob_positive(s);
                    let pm = channel.prob_positive(-s);
                    accumulate(&mut out, g, s, 0.5 * (pp + 1.0 - pm), 1.0, &hz)?;
                    accumulate(&mut out, g, -s, 0.5 * (1.0 - pp + pm), 1.0, &hz)?;
                }
                EngineMethod::MonteCarlo => {
                    let p = channel.prob_positive(s);
                    accumulate(&mut out, g, s, p, 1.0, &hz)?;
                    accumulate(&mut out, g, -s, 1.0 - p, 1.0, &hz)?;
                }
            }
            Ok(out)
        })
    }

    /// Estimate and standard error. The error is zero for quadrature; for Monte
    /// Carlo it is the sample standard deviation of the label-averaged integrand
    /// over `sqrt(N)`.
    pub fn expect_with_stderr<const K: usize, H>(
        &self,
        channel: &Channel,
        h: H,
    ) -> Result<([f64; K], [f64; K])>
    where
        H: Fn(f64, f64, f64) -> Result<[f64; K]> + Sync,
    {
        let mean = self.expect_many(channel, &h)?;
        if self.config.method == EngineMethod::GaussHermite {
            return Ok((mean, [0.0; K]));
        }
        let n = self.len() as f64;
        let sq = self.reduce(|i| {
            let v = self.atom(channel, &h, i)?;
            let mut out = [0.0; K];
            for k in 0..K {
                let d = v[k] - mean[k];
                out[k] = d * d;
            }
            Ok(out)
        })?;
        let mut se = [0.0; K];
        for k in 0..K {
            // sq carries the 1/n weights: it is the biased sample variance
            se[k] = (sq[k] * n / (n - 1.0) / n).sqrt();
        }
        Ok((mean, se))
    }

    /// Weighted sum of per-atom values with a fixed chunking and pairwise
    /// summation, so the result is independent of thread scheduling.
    fn reduce<const K: usize, A>(&self, atom: A) -> Result<[f64; K]>
    where
        A: Fn(usize) -> Result<[f64; K]> + Sync,
    {
        let n = self.len();
        let chunk_sums: Vec<[f64; K]> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut cols = vec![Vec::with_capacity(hi - lo); K];
                for i in lo..hi {
                    let v = atom(i)?;
                    for k in 0..K {
                        cols[k].push(self.w[i] * v[k]);
                    }
                }
                let mut out = [0.0; K];
                for k in 0..K {
                    out[k] = pairwise_sum(&cols[k]);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut out = [0.0; K];
        let mut col = Vec::with_capacity(chunk_sums.len());
        for k in 0..K {
            col.clear();
            col.extend(chunk_sums.iter().map(|c| c[k]));
            out[k] = pairwise_sum(&col);
        }
        Ok(out)
    }
}

#[inline]
fn accumulate<const K: usize, H>(
    out: &mut [f64; K],
    g: f64,
    s: f64,
    weight: f64,
    y: f64,
    h: &H,
) -> Result<()>
where
    H: Fn(f64, f64, f64) -> Result<[f64; K]>,
{
    if weight <= 0.0 {
        return Ok(());
    }
    let v = h(g, s, y)?;
    for k in 0..K {
        if !v[k].is_finite() {
            return Err(Error::NonFinite { g, s, y });
        }
        out[k] += weight * v[k];
    }
    Ok(())
}
