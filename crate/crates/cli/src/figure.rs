//! Figure bundles: one file per curve plus `manifest.json`.
//!
//! Only the manifest carries a timestamp, so rerunning a figure with the same
//! flags reproduces every curve file byte for byte.

use std::path::{Path, PathBuf};

use onebit_core::record::CsvRecord;
use onebit_core::{fisher_info, separability_threshold, ExperimentRecord, Loss, Threshold};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::{
    audit, bound_table, default_threshold_grid, lookup, make_engine, simulate_record, theory_record, threshold_rows,
    Failures,
};
use crate::config::{FigureName, Format, SolverKind, Spec};
use crate::output::{encode, write_file, BoundRow, SigmaRow};
use crate::CliError;

/// Default figure abscissae: log-spaced points up to `GRID_STOP`.
const GRID_POINTS: usize = 40;
const GRID_START: f64 = 1.1;
const GRID_STOP: f64 = 30.0;
/// Offset above `delta*` where curves of losses that vanish at infinity start.
const THRESHOLD_MARGIN: f64 = 0.25;
/// The sigma figure: log-spaced points on `[SIGMA_LO, SIGMA_HI]`.
const SIGMA_POINTS: usize = 60;
const SIGMA_LO: f64 = 0.01;
const SIGMA_HI: f64 = 100.0;
/// Flip-probability grid of the threshold figure.
const THRESHOLD_POINTS: usize = 51;

/// Where bundles go when neither `--out` nor the environment names a directory.
pub const DEFAULT_FIGURE_DIR: &str = "figures";

pub fn log_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start];
    }
    let (a, b) = (start.ln(), stop.ln());
    (0..points)
        .map(|k| match k {
            0 => start,
            k if k == points - 1 => stop,
            k => (a + (b - a) * k as f64 / (points - 1) as f64).exp(),
        })
        .collect()
}

/// `count` indices spread evenly over `0..len`, endpoints included.
fn spread(len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    if count == 1 {
        return vec![len / 2];
    }
    let mut idx: Vec<usize> = (0..count)
        .map(|k| ((k * (len - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// File-name-safe form of a loss name (`huber:0.5` -> `huber-0.5`).
fn slug(loss: &Loss) -> String {
    loss.to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '-' })
        .collect()
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

/// One curve of the bundle, as listed in the manifest.
#[derive(Serialize)]
struct Curve {
    file: String,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    rows: usize,
}

struct Bundle<'a> {
    dir: &'a Path,
    format: Format,
    curves: Vec<Curve>,
}

impl Bundle<'_> {
    fn write<T: CsvRecord + Serialize>(
        &mut self,
        stem: &str,
        kind: &'static str,
        loss: Option<&Loss>,
        epsilon: Option<f64>,
        rows: &[T],
    ) -> Result<(), CliError> {
        let file = format!("{stem}.{}", ext(self.format));
        write_file(&self.dir.join(&file), &encode(rows, self.format)?)?;
        self.curves.push(Curve {
            file,
            kind,
            loss: loss.map(ToString::to_string),
            epsilon,
            rows: rows.len(),
        });
        Ok(())
    }
}

pub fn figure(name: FigureName, spec: &Spec) -> Result<Failures, CliError> {
    // Curves run up to the separability threshold, where the fixed point needs
    // more than its iteration budget; let those cells fall back to the min-max
    // solver unless a solver was requested.
    let mut spec = spec.clone();
    if !spec.solver_explicit {
        spec.solver = SolverKind::Auto;
    }
    let spec = &spec;
    let dir: PathBuf = spec.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_FIGURE_DIR));
    let mut bundle = Bundle {
        dir: &dir,
        format: spec.format,
        curves: Vec::new(),
    };
    let (details, failures) = match name {
        FigureName::Fig2 => delta_figure(&mut bundle, spec, 0.0, &[Loss::LeastSquares, Loss::LeastAbsDev], false)?,
        FigureName::Fig3 => delta_figure(&mut bundle, spec, 0.1, &[Loss::LeastSquares, Loss::LeastAbsDev, Loss::Hinge], true)?,
        FigureName::Fig4 => delta_figure(&mut bundle, spec, 0.25, &[Loss::LeastSquares, Loss::LeastAbsDev, Loss::Hinge], true)?,
        FigureName::Sigma => sigma_figure(&mut bundle, spec)?,
        FigureName::Threshold => threshold_figure(&mut bundle, spec)?,
    };
    let mut manifest = json!({
        "figure": name.as_str(),
        "generated_at": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        "version": onebit_core::VERSION,
        "format": ext(spec.format),
        "engine": spec.engine.fingerprint(),
        "curves": bundle.curves,
        "failures": failures,
    });
    if let (Value::Object(m), Value::Object(d)) = (&mut manifest, details) {
        m.extend(d);
    }
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Numeric(e.to_string()))?;
    bytes.push(b'\n');
    write_file(&dir.join("manifest.json"), &bytes)?;
    Ok(failures)
}

/// Correlation against delta at one flip probability: theory and empirical
/// curves per loss, the bound, and the threshold marker when `marker` is set.
fn delta_figure(
    bundle: &mut Bundle,
    spec: &Spec,
    default_eps: f64,
    default_losses: &[Loss],
    marker: bool,
) -> Result<(Value, Failures), CliError> {
    let engine = make_engine(spec)?;
    let epsilon = match spec.epsilons.as_deref() {
        None => default_eps,
        Some([e]) => *e,
        Some(_) => return Err(CliError::Usage("figures take a single --eps".into())),
    };
    let losses: Vec<Loss> = if spec.losses_explicit { spec.losses.clone() } else { default_losses.to_vec() };
    let threshold = separability_threshold(epsilon, &engine).map_err(|e| CliError::Numeric(e.to_string()))?;
    let mut failures = Failures::new();

    // Each curve gets its own default grid: losses that vanish at infinity have
    // no finite minimiser below delta*, so their curves start just above it.
    let grid_for = |loss: Option<&Loss>| -> Option<Vec<f64>> {
        if let Some(d) = &spec.deltas {
            return Some(d.clone());
        }
        let start = match loss {
            Some(l) if l.vanishes_at_infinity() => {
                if threshold.infinite {
                    return None;
                }
                GRID_START.max(threshold.value + THRESHOLD_MARGIN)
            }
            _ => GRID_START,
        };
        (start < GRID_STOP).then(|| log_grid(start, GRID_STOP, GRID_POINTS))
    };
    let bound_grid = grid_for(None).unwrap_or_default();
    let curves: Vec<(Loss, Vec<f64>)> = losses
        .iter()
        .filter_map(|l| match grid_for(Some(l)) {
            Some(g) => Some((*l, g)),
            None => {
                eprintln!("note: {l} has no finite minimiser at eps={epsilon}; curve omitted");
                None
            }
        })
        .collect();

    let bounds = if spec.r == 0.0 {
        let keys: Vec<(f64, f64)> = bound_grid
            .iter()
            .chain(curves.iter().flat_map(|(_, g)| g.iter()))
            .map(|&d| (d, epsilon))
            .collect();
        bound_table(&keys)
    } else {
        Default::default()
    };

    let mut violations = 0;
    for (loss, grid) in &curves {
        let theory: Vec<ExperimentRecord> = grid
            .par_iter()
            .map(|&d| theory_record(loss, d, epsilon, spec, &engine, lookup(&bounds, d, epsilon)))
            .collect();
        let (f, v) = audit(&theory);
        failures.extend(f);
        violations += v;
        bundle.write(&format!("theory_{}", slug(loss)), "theory", Some(loss), Some(epsilon), &theory)?;

        let points: Vec<f64> = spread(grid.len(), spec.empirical_points).into_iter().map(|k| grid[k]).collect();
        let empirical: Vec<ExperimentRecord> = points
            .par_iter()
            .map(|&d| simulate_record(loss, d, epsilon, spec, &engine, lookup(&bounds, d, epsilon)))
            .collect();
        failures.extend(audit(&empirical).0.into_iter().filter(|f| !f.contains(": unbounded")));
        bundle.write(&format!("empirical_{}", slug(loss)), "empirical", Some(loss), Some(epsilon), &empirical)?;
    }

    if spec.r == 0.0 {
        let rows: Vec<BoundRow> = bound_grid
            .iter()
            .map(|&d| bounds[&(d.to_bits(), epsilon.to_bits())].clone())
            .collect();
        failures.extend(
            rows.iter()
                .filter(|r| r.status != "ok")
                .map(|r| format!("bound delta={}: {}", r.delta, r.status)),
        );
        bundle.write("bound", "bound", None, Some(epsilon), &rows)?;
    }
    if marker {
        bundle.write("threshold", "threshold", None, Some(epsilon), &[threshold])?;
    }

    let details = json!({
        "epsilon": epsilon,
        "r": spec.r,
        "solver": format!("{:?}", spec.solver).to_lowercase(),
        "grid": {
            "rule": if spec.deltas.is_some() {
                "user-supplied --delta".to_string()
            } else {
                format!(
                    "{GRID_POINTS} log-spaced points from {GRID_START} to {GRID_STOP}; losses vanishing at \
                     infinity start at max({GRID_START}, delta* + {THRESHOLD_MARGIN})"
                )
            },
            "bound_points": bound_grid,
        },
        "empirical": {
            "n": spec.n,
            "trials": spec.trials,
            "seed": spec.seed,
            "points_per_curve": spec.empirical_points,
        },
        "threshold": threshold_value(&threshold),
        "dominance_violations": violations,
    });
    Ok((details, failures))
}

/// `delta*` for JSON, where infinity has no number.
fn threshold_value(t: &Threshold) -> Value {
    if t.infinite {
        json!("inf")
    } else {
        json!(t.value)
    }
}

/// `sigma^2 I(sigma G + S Y)` against sigma, one curve per flip probability.
fn sigma_figure(bundle: &mut Bundle, spec: &Spec) -> Result<(Value, Failures), CliError> {
    let epsilons = spec.epsilons.clone().unwrap_or_else(|| vec![0.0, 0.1, 0.25]);
    let sigmas = log_grid(SIGMA_LO, SIGMA_HI, SIGMA_POINTS);
    let mut failures = Failures::new();
    let mut non_monotone = Vec::new();
    for &e in &epsilons {
        let results: Vec<(f64, onebit_core::Result<f64>)> =
            sigmas.par_iter().map(|&s| (s, fisher_info(s, e))).collect();
        let mut rows = Vec::new();
        for (sigma, r) in results {
            match r {
                Ok(fisher) => rows.push(SigmaRow {
                    epsilon: e,
                    sigma,
                    fisher_info: fisher,
                    sigma2_fisher: sigma * sigma * fisher,
                }),
                Err(err) => failures.push(format!("fisher_info sigma={sigma} eps={e}: {err}")),
            }
        }
        if rows.windows(2).any(|w| w[1].sigma2_fisher <= w[0].sigma2_fisher) {
            non_monotone.push(e);
        }
        bundle.write(&format!("sigma_eps{e}"), "sigma", None, Some(e), &rows)?;
    }
    let details = json!({
        "epsilons": epsilons,
        "grid": {
            "rule": format!("{SIGMA_POINTS} log-spaced sigma from {SIGMA_LO} to {SIGMA_HI}"),
        },
        "non_monotone_epsilons": non_monotone,
    });
    Ok((details, failures))
}

/// `delta*` against the flip probability.
fn threshold_figure(bundle: &mut Bundle, spec: &Spec) -> Result<(Value, Failures), CliError> {
    let engine = make_engine(spec)?;
    let epsilons = spec.epsilons.clone().unwrap_or_else(|| {
        let step = 0.5 / (THRESHOLD_POINTS - 1) as f64;
        (0..THRESHOLD_POINTS).map(|k| step * k as f64).collect()
    });
    let (rows, failures) = threshold_rows(&epsilons, &engine);
    bundle.write("threshold", "threshold", None, None, &rows)?;
    let details = json!({
        "grid": {
            "rule": if spec.epsilons.is_some() {
                "user-supplied --eps".to_string()
            } else {
                format!("{THRESHOLD_POINTS} evenly spaced flip probabilities on [0, 0.5]")
            },
            "coarse_default_of_threshold_command": default_threshold_grid(),
        },
    });
    Ok((details, failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints_are_exact() {
        let g = log_grid(1.1, 30.0, 40);
        assert_eq!(g.len(), 40);
        assert_eq!((g[0], g[39]), (1.1, 30.0));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let ratio = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - ratio).abs() < 1e-12));
    }

    #[test]
    fn spread_covers_both_ends() {
        assert_eq!(spread(40, 8), vec![0, 6, 11, 17, 22, 28, 33, 39]);
        assert_eq!(spread(3, 8), vec![0, 1, 2]);
        assert_eq!(spread(5, 1), vec![2]);
    }

    #[test]
    fn slugs_are_file_safe() {
        let l: Loss = "huber:0.5".parse().unwrap();
        assert!(!slug(&l).contains(':'));
    }
}
