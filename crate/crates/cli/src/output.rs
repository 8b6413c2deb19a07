//! Record serialisation to files or stdout.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use onebit_core::record::{fmt_float, parse_float, write_csv, CsvRecord};
use onebit_core::Result as CoreResult;
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::CliError;

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

/// Encode records as CSV (17 significant digits) or a pretty JSON array.
pub fn encode<T: CsvRecord + Serialize>(records: &[T], format: Format) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(records, &mut buf).map_err(|e| CliError::Numeric(e.to_string()))?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, records).map_err(|e| CliError::Numeric(e.to_string()))?;
            buf.push(b'\n');
        }
    }
    Ok(buf)
}

/// Write to `out` (creating parent directories) or to stdout.
pub fn emit<T: CsvRecord + Serialize>(records: &[T], format: Format, out: Option<&Path>) -> Result<(), CliError> {
    let bytes = encode(records, format)?;
    match out {
        Some(path) => write_file(path, &bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(&bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Usage(format!("cannot write to stdout: {e}")))
        }
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// Parse records back from CSV.
#[cfg(test)]
pub fn decode_csv<T: CsvRecord>(bytes: &[u8]) -> CoreResult<Vec<T>> {
    onebit_core::record::read_csv(bytes)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn parse_opt(row: &HashMap<String, String>, key: &str) -> CoreResult<Option<f64>> {
    match row.get(key).map(String::as_str) {
        None | Some("") => Ok(None),
        Some(s) => parse_float(s).map(Some),
    }
}

fn required(row: &HashMap<String, String>, key: &str) -> CoreResult<String> {
    row.get(key)
        .cloned()
        .ok_or_else(|| onebit_core::Error::Parse(format!("missing column {key:?}")))
}

/// One row of `bound`: the numeric bound, plus the closed-form noiseless one at
/// `eps = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub delta: f64,
    pub epsilon: f64,
    pub status: String,
    pub sigma_min: Option<f64>,
    pub corr_upper: Option<f64>,
    pub analytic_corr_upper: Option<f64>,
}

impl CsvRecord for BoundRow {
    fn header() -> Vec<&'static str> {
        vec!["delta", "epsilon", "status", "sigma_min", "corr_upper", "analytic_corr_upper"]
    }

    fn to_row(&self) -> Vec<String> {
        vec![
            fmt_float(self.delta),
            fmt_float(self.epsilon),
            self.status.clone(),
            opt(self.sigma_min),
            opt(self.corr_upper),
            opt(self.analytic_corr_upper),
        ]
    }

    fn from_row(row: &HashMap<String, String>) -> CoreResult<Self> {
        Ok(BoundRow {
            delta: parse_float(&required(row, "delta")?)?,
            epsilon: parse_float(&required(row, "epsilon")?)?,
            status: required(row, "status")?,
            sigma_min: parse_opt(row, "sigma_min")?,
            corr_upper: parse_opt(row, "corr_upper")?,
            analytic_corr_upper: parse_opt(row, "analytic_corr_upper")?,
        })
    }
}

/// One point of the `sigma^2 I(sigma G + S Y)` curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub epsilon: f64,
    pub sigma: f64,
    pub fisher_info: f64,
    pub sigma2_fisher: f64,
}

impl CsvRecord for SigmaRow {
    fn header() -> Vec<&'static str> {
        vec!["epsilon", "sigma", "fisher_info", "sigma2_fisher"]
    }

    fn to_row(&self) -> Vec<String> {
        vec![
            fmt_float(self.epsilon),
            fmt_float(self.sigma),
            fmt_float(self.fisher_info),
            fmt_float(self.sigma2_fisher),
        ]
    }

    fn from_row(row: &HashMap<String, String>) -> CoreResult<Self> {
        Ok(SigmaRow {
            epsilon: parse_float(&required(row, "epsilon")?)?,
            sigma: parse_float(&required(row, "sigma")?)?,
            fisher_info: parse_float(&required(row, "fisher_info")?)?,
            sigma2_fisher: parse_float(&required(row, "sigma2_fisher")?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_rows_round_trip() {
        let rows = vec![
            BoundRow {
                delta: 2.0,
                epsilon: 0.0,
                status: "ok".into(),
                sigma_min: Some(0.1 + 0.2),
                corr_upper: Some(std::f64::consts::FRAC_1_SQRT_2),
                analytic_corr_upper: Some(0.816496580927726),
            },
            BoundRow {
                delta: 3.0,
                epsilon: 0.25,
                status: "error".into(),
                sigma_min: None,
                corr_upper: None,
                analytic_corr_upper: None,
            },
        ];
        let bytes = encode(&rows, Format::Csv).unwrap();
        assert_eq!(decode_csv::<BoundRow>(&bytes).unwrap(), rows);
        let json = encode(&rows, Format::Json).unwrap();
        assert_eq!(serde_json::from_slice::<Vec<BoundRow>>(&json).unwrap(), rows);
    }
}
