//! Finite-size problem instances and their on-disk containers.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::expectation::Channel;
use crate::record::{fmt_float, parse_float};

/// ChaCha stream carrying the measurement matrix.
const MATRIX_STREAM: u64 = 0;
/// ChaCha stream carrying the label noise.
const LABEL_STREAM: u64 = 1;

/// One draw of the measurement model: `m` Gaussian rows, signal `x0 = e1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub m: usize,
    /// `m x n`, entries iid `N(0, 1)`.
    pub a: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// Labels in `{-1, +1}`.
    pub y: DVector<f64>,
    /// Flip probability; `NaN` for a general link.
    pub epsilon: f64,
    pub seed: u64,
}

/// `y_i = BSC_eps(sign(a_i^T e1))` with `m = round(delta n)` rows.
pub fn generate_instance(n: usize, delta: f64, epsilon: f64, seed: u64) -> Result<Instance> {
    let channel = Channel::bsc(epsilon)?;
    generate_instance_with(n, delta, &channel, seed)
}

/// Instance whose labels are `+1` with probability `f(a_i^T e1)`.
pub fn generate_instance_with(n: usize, delta: f64, channel: &Channel, seed: u64) -> Result<Instance> {
    if n < 2 {
        return Err(Error::domain(format!("signal dimension must be >= 2, got {n}")));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    let m = (delta * n as f64).round() as usize;
    if m == 0 {
        return Err(Error::domain(format!("delta = {delta} gives no measurements at n = {n}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MATRIX_STREAM);
    let mut entries = Vec::with_capacity(m * n);
    for _ in 0..m * n {
        entries.push(rng.sample::<f64, _>(StandardNormal));
    }
    let a = DMatrix::from_row_slice(m, n, &entries);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LABEL_STREAM);
    let y = DVector::from_iterator(
        m,
        (0..m).map(|i| {
            let u: f64 = rng.random();
            if u < channel.prob_positive(a[(i, 0)]) {
                1.0
            } else {
                -1.0
            }
        }),
    );
    let mut x0 = DVector::zeros(n);
    x0[0] = 1.0;
    Ok(Instance {
        n,
        m,
        a,
        x0,
        y,
        epsilon: channel.epsilon().unwrap_or(f64::NAN),
        seed,
    })
}

const MAGIC: &[u8; 8] = b"ONEBIT01";

impl Instance {
    /// Rows `y_i a_i^T`: the margin of row `i` at `x` is `(B x)_i`.
    pub fn signed_rows(&self) -> DMatrix<f64> {
        let mut b = self.a.clone();
        for (i, mut row) in b.row_iter_mut().enumerate() {
            row *= self.y[i];
        }
        b
    }

    /// Fraction of labels that differ from `sign(a_i^T x0)`.
    pub fn flip_rate(&self) -> f64 {
        let clean = &self.a * &self.x0;
        let flips = (0..self.m)
            .filter(|&i| (clean[i] >= 0.0) != (self.y[i] > 0.0))
            .count();
        flips as f64 / self.m as f64
    }

    /// CSV container: a header line `n,m,epsilon,seed` and its values, then `m`
    /// rows of `A`, then `m` lines holding one label each.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["n", "m", "epsilon", "seed"])?;
        w.write_record([
            self.n.to_string(),
            self.m.to_string(),
            fmt_float(self.epsilon),
            self.seed.to_string(),
        ])?;
        for row in self.a.row_iter() {
            w.write_record(row.iter().map(|v| fmt_float(*v)))?;
        }
        for v in self.y.iter() {
            w.write_record([if *v > 0.0 { "1" } else { "-1" }])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(true)
            .from_reader(input);
        let mut rows = rd.records();
        let mut next = || -> Result<csv::StringRecord> {
            rows.next()
                .ok_or_else(|| Error::Parse("instance file truncated".into()))?
                .map_err(Error::from)
        };
        let head = next()?;
        let int = |s: &str| -> Result<u64> {
            s.parse().map_err(|e| Error::Parse(format!("bad integer {s:?}: {e}")))
        };
        if head.len() != 4 {
            return Err(Error::Parse("instance header must have 4 fields".into()));
        }
        let n = int(&head[0])? as usize;
        let m = int(&head[1])? as usize;
        let epsilon = parse_float(&head[2])?;
        let seed = int(&head[3])?;
        let mut entries = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = next()?;
            if row.len() != n {
                return Err(Error::Parse(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            for v in row.iter() {
                entries.push(parse_float(v)?);
            }
        }
        let mut y = Vec::with_capacity(m);
        for _ in 0..m {
            let v = parse_float(&next()?[0])?;
            if v != 1.0 && v != -1.0 {
                return Err(Error::Parse(format!("label {v} is not +-1")));
            }
            y.push(v);
        }
        Self::assemble(n, m, entries, y, epsilon, seed)
    }

    /// Binary container: magic `ONEBIT01`, then little-endian `n: u64`, `m: u64`,
    /// `epsilon: f64`, `seed: u64`, `A` row-major as `f64`, and `y` as `i8`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.n as u64).to_le_bytes())?;
        out.write_all(&(self.m as u64).to_le_bytes())?;
        out.write_all(&self.epsilon.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for row in self.a.row_iter() {
            for v in row.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        let labels: Vec<u8> = self.y.iter().map(|v| if *v > 0.0 { 1i8 } else { -1i8 } as u8).collect();
        out.write_all(&labels)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not an instance file (bad magic)".into()));
        }
        let mut word = [0u8; 8];
        let mut read_word = |input: &mut R| -> Result<[u8; 8]> {
            input.read_exact(&mut word)?;
            Ok(word)
        };
        let n = u64::from_le_bytes(read_word(&mut input)?) as usize;
        let m = u64::from_le_bytes(read_word(&mut input)?) as usize;
        let epsilon = f64::from_le_bytes(read_word(&mut input)?);
        let seed = u64::from_le_bytes(read_word(&mut input)?);
        let mut entries = Vec::with_capacity(m * n);
        for _ in 0..m * n {
            entries.push(f64::from_le_bytes(read_word(&mut input)?));
        }
        let mut labels = vec![0u8; m];
        input.read_exact(&mut labels)?;
        let y = labels
            .into_iter()
            .map(|b| match b as i8 {
                1 => Ok(1.0),
                -1 => Ok(-1.0),
                other => Err(Error::Parse(format!("label {other} is not +-1"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::assemble(n, m, entries, y, epsilon, seed)
    }

    fn assemble(n: usize, m: usize, entries: Vec<f64>, y: Vec<f64>, epsilon: f64, seed: u64) -> Result<Self> {
        if n < 1 || m < 1 {
            return Err(Error::Parse(format!("empty instance ({m} x {n})")));
        }
        let mut x0 = DVector::zeros(n);
        x0[0] = 1.0;
        Ok(Instance {
            n,
            m,
            a: DMatrix::from_row_slice(m, n, &entries),
            x0,
            y: DVector::from_vec(y),
            epsilon,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_labels_follow_first_column() {
        let inst = generate_instance(4, 2.0, 0.0, 7).unwrap();
        assert_eq!(inst.m, 8);
        for i in 0..inst.m {
            assert_eq!(inst.y[i], if inst.a[(i, 0)] >= 0.0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn flip_rate_is_binomial() {
        let inst = generate_instance(128, 4.0, 0.25, 1).unwrap();
        assert_eq!(inst.m, 512);
        let band = 4.0 * (0.25f64 * 0.75 / 512.0).sqrt();
        assert!((inst.flip_rate() - 0.25).abs() < band);
        let mean = inst.a.iter().sum::<f64>() / (inst.m * inst.n) as f64;
        let var = inst.a.iter().map(|v| v * v).sum::<f64>() / (inst.m * inst.n) as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03);
    }

    #[test]
    fn labels_are_independent_at_half() {
        let inst = generate_instance(100, 4.0, 0.5, 3).unwrap();
        let clean = &inst.a * &inst.x0;
        let c: f64 = (0..inst.m).map(|i| inst.y[i] * clean[i].signum()).sum::<f64>() / inst.m as f64;
        assert!(c.abs() < 4.0 / (inst.m as f64).sqrt());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_instance(16, 3.0, 0.1, 42).unwrap(),
            generate_instance(16, 3.0, 0.1, 42).unwrap()
        );
        assert_ne!(
            generate_instance(16, 3.0, 0.1, 42).unwrap().a,
            generate_instance(16, 3.0, 0.1, 43).unwrap().a
        );
    }

    #[test]
    fn containers_round_trip() {
        let inst = generate_instance(5, 2.4, 0.2, 11).unwrap();
        let mut buf = Vec::new();
        inst.write_csv(&mut buf).unwrap();
        assert_eq!(Instance::read_csv(buf.as_slice()).unwrap(), inst);
        let mut buf = Vec::new();
        inst.write_binary(&mut buf).unwrap();
        assert_eq!(Instance::read_binary(buf.as_slice()).unwrap(), inst);
        assert!(Instance::read_binary(&b"garbage!"[..]).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_instance(1, 2.0, 0.1, 0).is_err());
        assert!(generate_instance(4, 0.0, 0.1, 0).is_err());
        assert!(generate_instance(4, 2.0, 0.7, 0).is_err());
    }

    #[test]
    fn link_channel_instances() {
        let ch = Channel::logistic_link(2.0).unwrap();
        let inst = generate_instance_with(32, 4.0, &ch, 5).unwrap();
        assert!(inst.y.iter().all(|v| *v == 1.0 || *v == -1.0));
        assert!(inst.epsilon.is_nan());
    }
}
