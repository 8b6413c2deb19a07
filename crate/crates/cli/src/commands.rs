//! `theory`, `bound`, `threshold` and `simulate`, plus the per-cell helpers the
//! figure bundles reuse.

use std::collections::HashMap;

use onebit_core::{
    analytic_noiseless_bound, correlation_upper_bound, predicted_correlation, run_replicates,
    separability_threshold, solve_ao_saddle, solve_fixed_point, Channel, Error, ExpectationEngine,
    ExperimentRecord, Loss, SaddleSolution, SolverConfig, Threshold,
};
use rayon::prelude::*;

use crate::config::{SolverKind, Spec};
use crate::output::{emit, BoundRow};
use crate::CliError;

/// Cells that failed numerically, as human-readable descriptions.
pub type Failures = Vec<String>;

/// Status label for a failed theory solve.
pub fn status_of(e: &Error) -> &'static str {
    match e {
        Error::Unbounded(_) => "unbounded",
        Error::Diverged { .. } => "diverged",
        _ => "error",
    }
}

/// Statuses that count as numeric failures under `--strict`. `unbounded` is a
/// legitimate answer (no finite minimiser exists), not a failure.
pub fn is_failure(status: &str) -> bool {
    !matches!(status, "ok" | "unbounded")
}

pub fn make_engine(spec: &Spec) -> Result<ExpectationEngine, CliError> {
    ExpectationEngine::new(spec.engine.clone()).map_err(|e| CliError::Usage(e.to_string()))
}

fn solve(
    loss: &Loss,
    channel: &Channel,
    delta: f64,
    r: f64,
    engine: &ExpectationEngine,
    solver: SolverKind,
) -> onebit_core::Result<SaddleSolution> {
    match solver {
        SolverKind::Fp => solve_fixed_point(loss, channel, delta, r, engine, &Default::default()),
        SolverKind::Ao => solve_ao_saddle(loss, channel, delta, r, engine, &Default::default()),
        SolverKind::Auto => match solve_fixed_point(loss, channel, delta, r, engine, &Default::default()) {
            Err(e) if !matches!(e, Error::Unbounded(_)) => {
                solve_ao_saddle(loss, channel, delta, r, engine, &Default::default())
            }
            other => other,
        },
    }
}

/// Theory columns of one cell; failures are recorded in `status`, never raised.
pub fn theory_record(
    loss: &Loss,
    delta: f64,
    epsilon: f64,
    spec: &Spec,
    engine: &ExpectationEngine,
    bound: Option<f64>,
) -> ExperimentRecord {
    let mut rec = ExperimentRecord::new(loss.to_string(), delta, epsilon, spec.r);
    rec.engine = engine.config().fingerprint();
    rec.bound_corr = bound;
    let result = Channel::bsc(epsilon).and_then(|ch| solve(loss, &ch, delta, spec.r, engine, spec.solver));
    match result {
        Ok(sol) => {
            rec.mu = Some(sol.mu);
            rec.alpha = Some(sol.alpha);
            rec.lambda = Some(sol.lambda);
            rec.residual_norm = Some(sol.residual_norm);
            rec.theory_corr = Some(predicted_correlation(&sol).value);
        }
        Err(e) => rec.status = status_of(&e).into(),
    }
    rec
}

/// Numeric bound at one `(delta, eps)`, with the analytic column at `eps = 0`.
pub fn bound_row(delta: f64, epsilon: f64) -> BoundRow {
    let mut row = BoundRow {
        delta,
        epsilon,
        status: "ok".into(),
        sigma_min: None,
        corr_upper: None,
        analytic_corr_upper: None,
    };
    match correlation_upper_bound(delta, epsilon) {
        Ok(b) => {
            row.sigma_min = Some(b.sigma_min);
            row.corr_upper = Some(b.corr_upper);
        }
        Err(_) => row.status = "error".into(),
    }
    if epsilon == 0.0 {
        row.analytic_corr_upper = analytic_noiseless_bound(delta).ok().map(|b| b.corr_upper);
    }
    row
}

/// Bound for every distinct `(delta, eps)`, computed in parallel.
pub fn bound_table(cells: &[(f64, f64)]) -> HashMap<(u64, u64), BoundRow> {
    let mut keys: Vec<(f64, f64)> = cells.to_vec();
    keys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    keys.dedup();
    keys.par_iter()
        .map(|&(d, e)| ((d.to_bits(), e.to_bits()), bound_row(d, e)))
        .collect()
}

pub fn lookup(table: &HashMap<(u64, u64), BoundRow>, delta: f64, epsilon: f64) -> Option<f64> {
    table.get(&(delta.to_bits(), epsilon.to_bits())).and_then(|b| b.corr_upper)
}

/// The bound applies to unregularised estimators only.
fn bound_applies(spec: &Spec) -> bool {
    spec.r == 0.0
}

/// Theory plus empirical columns for one cell.
pub fn simulate_record(
    loss: &Loss,
    delta: f64,
    epsilon: f64,
    spec: &Spec,
    engine: &ExpectationEngine,
    bound: Option<f64>,
) -> ExperimentRecord {
    let mut rec = theory_record(loss, delta, epsilon, spec, engine, bound);
    rec.n = Some(spec.n);
    rec.trials = spec.trials;
    rec.seeds = format!("{}:{}", spec.seed, spec.seed + spec.trials as u64 - 1);
    match run_replicates(loss, spec.n, delta, epsilon, spec.r, spec.trials, spec.seed, &SolverConfig::default()) {
        Ok(s) => {
            rec.empirical_mean = s.mean_correlation;
            rec.empirical_std = s.std_correlation;
            rec.empirical_bias_norm = rec.mu.and_then(|mu| s.bias_norm_stats(mu).0);
            rec.unbounded_count = s.unbounded;
            // Trials without a certified solution: solver errors and iteration caps.
            rec.failed_count = s.failed + s.max_iter;
        }
        Err(_) => rec.failed_count = spec.trials,
    }
    rec
}

/// Cells in output order: loss, then delta, then eps.
fn cells(spec: &Spec) -> Vec<(Loss, f64, f64)> {
    let deltas = spec.deltas.clone().unwrap_or_else(|| vec![2.0]);
    let epsilons = spec.epsilons.clone().unwrap_or_else(|| vec![0.0]);
    let mut out = Vec::new();
    for loss in &spec.losses {
        for &d in &deltas {
            for &e in &epsilons {
                out.push((*loss, d, e));
            }
        }
    }
    out
}

/// Describe failed records and warn about dominance violations.
pub fn audit(records: &[ExperimentRecord]) -> (Failures, usize) {
    let mut failures = Vec::new();
    let mut violations = 0;
    for r in records {
        if is_failure(&r.status) {
            failures.push(format!("{} delta={} eps={}: {}", r.loss, r.delta, r.epsilon, r.status));
        }
        if r.failed_count > 0 {
            failures.push(format!(
                "{} delta={} eps={}: {} of {} trials failed",
                r.loss, r.delta, r.epsilon, r.failed_count, r.trials
            ));
        }
        if !r.dominated(1e-3) {
            violations += 1;
            eprintln!(
                "warning: {} delta={} eps={}: predicted correlation {:?} exceeds the bound {:?}",
                r.loss, r.delta, r.epsilon, r.theory_corr, r.bound_corr
            );
        }
    }
    (failures, violations)
}

fn with_bounds(spec: &Spec, cells: &[(Loss, f64, f64)]) -> HashMap<(u64, u64), BoundRow> {
    if !bound_applies(spec) {
        return HashMap::new();
    }
    let keys: Vec<(f64, f64)> = cells.iter().map(|&(_, d, e)| (d, e)).collect();
    bound_table(&keys)
}

pub fn theory(spec: &Spec) -> Result<Failures, CliError> {
    let engine = make_engine(spec)?;
    let cells = cells(spec);
    let bounds = with_bounds(spec, &cells);
    let records: Vec<ExperimentRecord> = cells
        .par_iter()
        .map(|(loss, d, e)| theory_record(loss, *d, *e, spec, &engine, lookup(&bounds, *d, *e)))
        .collect();
    emit(&records, spec.format, spec.out.as_deref())?;
    Ok(audit(&records).0)
}

pub fn simulate(spec: &Spec) -> Result<Failures, CliError> {
    let engine = make_engine(spec)?;
    let cells = cells(spec);
    let bounds = with_bounds(spec, &cells);
    let records: Vec<ExperimentRecord> = cells
        .par_iter()
        .map(|(loss, d, e)| simulate_record(loss, *d, *e, spec, &engine, lookup(&bounds, *d, *e)))
        .collect();
    emit(&records, spec.format, spec.out.as_deref())?;
    Ok(audit(&records).0)
}

pub fn bound(spec: &Spec) -> Result<Failures, CliError> {
    let deltas = spec.deltas.clone().unwrap_or_else(|| vec![2.0]);
    let epsilons = spec.epsilons.clone().unwrap_or_else(|| vec![0.0]);
    // Rows ordered by eps, then delta: one curve per eps.
    let keys: Vec<(f64, f64)> = epsilons
        .iter()
        .flat_map(|&e| deltas.iter().map(move |&d| (d, e)))
        .collect();
    let rows: Vec<BoundRow> = keys.par_iter().map(|&(d, e)| bound_row(d, e)).collect();
    emit(&rows, spec.format, spec.out.as_deref())?;
    Ok(rows
        .iter()
        .filter(|r| is_failure(&r.status))
        .map(|r| format!("bound delta={} eps={}: {}", r.delta, r.epsilon, r.status))
        .collect())
}

/// Default flip-probability grid for `threshold`.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=10).map(|k| 0.05 * k as f64).collect()
}

pub fn threshold_rows(epsilons: &[f64], engine: &ExpectationEngine) -> (Vec<Threshold>, Failures) {
    let results: Vec<(f64, onebit_core::Result<Threshold>)> = epsilons
        .par_iter()
        .map(|&e| (e, separability_threshold(e, engine)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in results {
        match r {
            Ok(t) => rows.push(t),
            Err(err) => failures.push(format!("threshold eps={e}: {err}")),
        }
    }
    (rows, failures)
}

pub fn threshold(spec: &Spec) -> Result<Failures, CliError> {
    let engine = make_engine(spec)?;
    let epsilons = spec.epsilons.clone().unwrap_or_else(default_threshold_grid);
    let (rows, failures) = threshold_rows(&epsilons, &engine);
    emit(&rows, spec.format, spec.out.as_deref())?;
    Ok(failures)
}
