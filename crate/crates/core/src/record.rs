//! Self-describing experiment records and their CSV/JSON encodings.
//!
//! CSV floats are written with 17 significant digits (`{:.16e}`), which is enough
//! for every `f64` to survive a write/parse round trip bit-for-bit; `inf`, `-inf`
//! and `nan` are written literally and missing values as empty cells.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundMethod, BoundResult, Threshold};
use crate::error::{Error, Result};

/// Format a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub fn parse_float(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad float {s:?}: {e}")))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_float(s).map(Some)
    }
}

/// JSON encoding of `f64` that keeps infinities: finite values are numbers,
/// non-finite values the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod json_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&super::fmt_float(*x))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A type that maps to one CSV row under a fixed header.
pub trait CsvRecord: Sized {
    fn header() -> Vec<&'static str>;
    fn to_row(&self) -> Vec<String>;
    fn from_row(row: &HashMap<String, String>) -> Result<Self>;
}

fn field<'a>(row: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    row.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Parse(format!("missing column {key:?}")))
}

pub fn write_csv<T: CsvRecord, W: Write>(records: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(T::header())?;
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: CsvRecord, R: Read>(input: R) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let map: HashMap<String, String> = header
            .iter()
            .cloned()
            .zip(row.iter().map(str::to_string))
            .collect();
        out.push(T::from_row(&map)?);
    }
    Ok(out)
}

/// One `(loss, delta, epsilon, r)` cell: theory, bound and simulation side by side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub loss: String,
    pub delta: f64,
    pub epsilon: f64,
    pub r: f64,
    /// `ok`, or the failure category of the theory solve (`unbounded`,
    /// `diverged`, `error`).
    pub status: String,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub residual_norm: Option<f64>,
    pub theory_corr: Option<f64>,
    pub bound_corr: Option<f64>,
    pub empirical_mean: Option<f64>,
    pub empirical_std: Option<f64>,
    pub empirical_bias_norm: Option<f64>,
    pub n: Option<usize>,
    pub trials: usize,
    pub unbounded_count: usize,
    pub failed_count: usize,
    /// First and last seed, `"first:last"`, empty when no simulation ran.
    pub seeds: String,
    pub engine: String,
    pub version: String,
}

impl ExperimentRecord {
    pub fn new(loss: impl Into<String>, delta: f64, epsilon: f64, r: f64) -> Self {
        ExperimentRecord {
            loss: loss.into(),
            delta,
            epsilon,
            r,
            status: "ok".into(),
            mu: None,
            alpha: None,
            lambda: None,
            residual_norm: None,
            theory_corr: None,
            bound_corr: None,
            empirical_mean: None,
            empirical_std: None,
            empirical_bias_norm: None,
            n: None,
            trials: 0,
            unbounded_count: 0,
            failed_count: 0,
            seeds: String::new(),
            engine: String::new(),
            version: crate::VERSION.into(),
        }
    }

    /// `theory_corr <= bound_corr + tol` when both are present.
    pub fn dominated(&self, tol: f64) -> bool {
        match (self.theory_corr, self.bound_corr) {
            (Some(t), Some(b)) => t <= b + tol,
            _ => true,
        }
    }
}

impl CsvRecord for ExperimentRecord {
    fn header() -> Vec<&'static str> {
        vec![
            "loss",
            "delta",
            "epsilon",
            "r",
            "status",
            "mu",
            "alpha",
            "lambda",
            "residual_norm",
            "theory_corr",
            "bound_corr",
            "empirical_mean",
            "empirical_std",
            "empirical_bias_norm",
            "n",
            "trials",
            "unbounded_count",
            "failed_count",
            "seeds",
            "engine",
            "version",
        ]
    }

    fn to_row(&self) -> Vec<String> {
        vec![
            self.loss.clone(),
            fmt_float(self.delta),
            fmt_float(self.epsilon),
            fmt_float(self.r),
            self.status.clone(),
            fmt_opt(self.mu),
            fmt_opt(self.alpha),
            fmt_opt(self.lambda),
            fmt_opt(self.residual_norm),
            fmt_opt(self.theory_corr),
            fmt_opt(self.bound_corr),
            fmt_opt(self.empirical_mean),
            fmt_opt(self.empirical_std),
            fmt_opt(self.empirical_bias_norm),
            self.n.map(|v| v.to_string()).unwrap_or_default(),
            self.trials.to_string(),
            self.unbounded_count.to_string(),
            self.failed_count.to_string(),
            self.seeds.clone(),
            self.engine.clone(),
            self.version.clone(),
        ]
    }

    fn from_row(row: &HashMap<String, String>) -> Result<Self> {
        let int = |k: &str| -> Result<usize> {
            field(row, k)?
                .parse()
                .map_err(|e| Error::Parse(format!("bad integer in {k}: {e}")))
        };
        let n = field(row, "n")?;
        Ok(ExperimentRecord {
            loss: field(row, "loss")?.into(),
            delta: parse_float(field(row, "delta")?)?,
            epsilon: parse_float(field(row, "epsilon")?)?,
            r: parse_float(field(row, "r")?)?,
            status: field(row, "status")?.into(),
            mu: parse_opt(field(row, "mu")?)?,
            alpha: parse_opt(field(row, "alpha")?)?,
            lambda: parse_opt(field(row, "lambda")?)?,
            residual_norm: parse_opt(field(row, "residual_norm")?)?,
            theory_corr: parse_opt(field(row, "theory_corr")?)?,
            bound_corr: parse_opt(field(row, "bound_corr")?)?,
            empirical_mean: parse_opt(field(row, "empirical_mean")?)?,
            empirical_std: parse_opt(field(row, "empirical_std")?)?,
            empirical_bias_norm: parse_opt(field(row, "empirical_bias_norm")?)?,
            n: if n.is_empty() {
                None
            } else {
                Some(n.parse().map_err(|e| Error::Parse(format!("bad n: {e}")))?)
            },
            trials: int("trials")?,
            unbounded_count: int("unbounded_count")?,
            failed_count: int("failed_count")?,
            seeds: field(row, "seeds")?.into(),
            engine: field(row, "engine")?.into(),
            version: field(row, "version")?.into(),
        })
    }
}

impl CsvRecord for BoundResult {
    fn header() -> Vec<&'static str> {
        vec!["delta", "epsilon", "sigma_min", "corr_upper", "method"]
    }

    fn to_row(&self) -> Vec<String> {
        vec![
            fmt_float(self.delta),
            fmt_float(self.epsilon),
            fmt_float(self.sigma_min),
            fmt_float(self.corr_upper),
            self.method.to_string(),
        ]
    }

    fn from_row(row: &HashMap<String, String>) -> Result<Self> {
        let method = match field(row, "method")? {
            "numeric" => BoundMethod::Numeric,
            "analytic_noiseless" => BoundMethod::AnalyticNoiseless,
            other => return Err(Error::Parse(format!("unknown bound method {other:?}"))),
        };
        Ok(BoundResult {
            delta: parse_float(field(row, "delta")?)?,
            epsilon: parse_float(field(row, "epsilon")?)?,
            sigma_min: parse_float(field(row, "sigma_min")?)?,
            corr_upper: parse_float(field(row, "corr_upper")?)?,
            method,
        })
    }
}

impl CsvRecord for Threshold {
    fn header() -> Vec<&'static str> {
        vec!["epsilon", "delta_star", "infinite", "c_star", "psi_min"]
    }

    fn to_row(&self) -> Vec<String> {
        vec![
            fmt_float(self.epsilon),
            fmt_float(self.value),
            self.infinite.to_string(),
            fmt_float(self.c_star),
            fmt_float(self.psi_min),
        ]
    }

    fn from_row(row: &HashMap<String, String>) -> Result<Self> {
        Ok(Threshold {
            epsilon: parse_float(field(row, "epsilon")?)?,
            value: parse_float(field(row, "delta_star")?)?,
            infinite: field(row, "infinite")?
                .parse()
                .map_err(|e| Error::Parse(format!("bad flag: {e}")))?,
            c_star: parse_float(field(row, "c_star")?)?,
            psi_min: parse_float(field(row, "psi_min")?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert_eq!(parse_float("inf").unwrap(), f64::INFINITY);
        assert!(parse_float("nan").unwrap().is_nan());
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            prop_assert_eq!(parse_float(&fmt_float(x)).unwrap().to_bits(), x.to_bits());
        }
    }

    fn sample() -> ExperimentRecord {
        let mut r = ExperimentRecord::new("ls", 2.0, 0.1, 0.0);
        r.mu = Some(0.638_308_319_799_122_1);
        r.alpha = Some(1.0 / 3.0);
        r.theory_corr = Some(0.9);
        r.bound_corr = Some(0.95);
        r.trials = 25;
        r.seeds = "1:25".into();
        r.engine = "gh128".into();
        r
    }

    #[test]
    fn experiment_records_round_trip() {
        let recs = vec![sample(), ExperimentRecord::new("hinge", 5.0, 0.0, 0.0)];
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let back: Vec<ExperimentRecord> = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
        let js = serde_json::to_string(&recs).unwrap();
        let back: Vec<ExperimentRecord> = serde_json::from_str(&js).unwrap();
        assert_eq!(back, recs);
        assert!(recs[0].dominated(1e-3));
    }

    #[test]
    fn threshold_round_trips_with_infinity() {
        let t = vec![Threshold {
            epsilon: 0.0,
            value: f64::INFINITY,
            infinite: true,
            c_star: f64::INFINITY,
            psi_min: 0.0,
        }];
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().contains(",inf,"));
        let back: Vec<Threshold> = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let js = serde_json::to_string(&t).unwrap();
        assert!(js.contains("\"inf\""));
        let back: Vec<Threshold> = serde_json::from_str(&js).unwrap();
        assert_eq!(back, t);
    }
}
