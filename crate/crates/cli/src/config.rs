//! Command-line flags, the optional TOML config file, and their merge into a
//! validated run specification.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use onebit_core::{EngineConfig, Loss};

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ONEBIT_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "onebit",
    version,
    about = "Asymptotic theory, bounds and simulations for convex estimators from one-bit measurements",
    after_help = "Any flag may also be given in a TOML file passed with --config; flags on the \
                  command line take precedence. Output goes to --out, else to $ONEBIT_OUT_DIR, \
                  else to stdout (figures: ./figures)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the scalar system per (loss, delta, eps) cell and report the predicted correlation.
    Theory(Opts),
    /// Fisher-information upper bound on the correlation of any convex loss.
    Bound(Opts),
    /// Separability threshold delta* over a grid of flip probabilities.
    Threshold(Opts),
    /// Monte-Carlo replicates at finite n, merged with theory and bound columns.
    Simulate(Opts),
    /// Regenerate the data behind one figure as a bundle of CSV files plus manifest.json.
    Figure {
        #[arg(value_enum)]
        name: FigureName,
        #[command(flatten)]
        opts: Opts,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Theory(_) => "theory",
            Command::Bound(_) => "bound",
            Command::Threshold(_) => "threshold",
            Command::Simulate(_) => "simulate",
            Command::Figure { .. } => "figure",
        }
    }

    pub fn opts(&self) -> &Opts {
        match self {
            Command::Theory(o) | Command::Bound(o) | Command::Threshold(o) | Command::Simulate(o) => o,
            Command::Figure { opts, .. } => opts,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FigureName {
    Fig2,
    Fig3,
    Fig4,
    Sigma,
    Threshold,
}

impl FigureName {
    pub fn as_str(self) -> &'static str {
        match self {
            FigureName::Fig2 => "fig2",
            FigureName::Fig3 => "fig3",
            FigureName::Fig4 => "fig4",
            FigureName::Sigma => "sigma",
            FigureName::Threshold => "threshold",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineKind {
    /// Gauss-Hermite quadrature in G, exact average over S.
    Gh,
    /// Monte Carlo with a fixed seed.
    Mc,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    /// Damped fixed-point iteration.
    Fp,
    /// Direct solution of the deterministic min-max problem.
    Ao,
    /// Fixed point, falling back to the min-max solver when it fails.
    Auto,
}

/// Flags shared by every subcommand. All are optional so that the config file
/// can fill the gaps.
#[derive(Args, Debug, Default, Clone)]
pub struct Opts {
    /// TOML file supplying defaults for any of the flags below.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Loss names, comma separated: ls, lad, hinge, logistic, exp, half-ls,
    /// scaled-ls:<s>, huber:<w>, sq-hinge (append /numeric to force the generic prox).
    #[arg(long)]
    pub loss: Option<String>,
    /// Oversampling ratio m/n: a value, a comma list, or start:stop:count (linear).
    #[arg(long)]
    pub delta: Option<String>,
    /// Label flip probability in [0, 1/2]: a value, a comma list, or start:stop:count.
    #[arg(long)]
    pub eps: Option<String>,
    /// Ridge coefficient r >= 0.
    #[arg(long)]
    pub r: Option<f64>,
    /// Signal dimension for simulations.
    #[arg(long)]
    pub n: Option<usize>,
    /// Independent replicates per simulated cell.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed; replicate k uses seed + k, the MC engine uses seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Expectation engine.
    #[arg(long, value_enum)]
    pub engine: Option<EngineKind>,
    /// Gauss-Hermite nodes.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Monte-Carlo samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Theory solver.
    #[arg(long, value_enum)]
    pub solver: Option<SolverKind>,
    /// Empirical points per simulated figure curve.
    #[arg(long)]
    pub empirical_points: Option<usize>,
    /// Output file (a directory for `figure`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format for records.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Exit with status 3 when any cell fails numerically.
    #[arg(long)]
    pub strict: bool,
}

/// Keys accepted in the config file (flag names; `_` and `-` are interchangeable).
const CONFIG_KEYS: &[&str] = &[
    "loss",
    "delta",
    "eps",
    "r",
    "n",
    "trials",
    "seed",
    "engine",
    "nodes",
    "samples",
    "solver",
    "empirical-points",
    "out",
    "format",
    "strict",
];

/// Config file contents, flattened to the strings a flag would have carried.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
        let mut values = BTreeMap::new();
        for (key, value) in table {
            let key = key.replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(format!("unknown key {key:?}"));
            }
            values.insert(key, flatten(&value)?);
        }
        Ok(ConfigFile { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("config key {key}: {e}")))
            })
            .transpose()
    }

    fn get_enum<T: ValueEnum>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.values
            .get(key)
            .map(|s| T::from_str(s, true).map_err(|e| CliError::Usage(format!("config key {key}: {e}"))))
            .transpose()
    }
}

fn flatten(value: &toml::Value) -> Result<String, String> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items.iter().map(flatten).collect::<Result<Vec<_>, _>>()?.join(","),
        other => return Err(format!("unsupported value {other}")),
    })
}

/// Fully resolved and validated parameters.
#[derive(Debug, Clone)]
pub struct Spec {
    pub losses: Vec<Loss>,
    /// Whether `losses` came from a flag or the config rather than the default.
    pub losses_explicit: bool,
    pub deltas: Option<Vec<f64>>,
    pub epsilons: Option<Vec<f64>>,
    pub r: f64,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub engine: EngineConfig,
    pub solver: SolverKind,
    /// Whether `solver` came from a flag or the config rather than the default.
    pub solver_explicit: bool,
    pub empirical_points: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub strict: bool,
}

impl Spec {
    /// Merge flags over the config file over built-in defaults and validate.
    pub fn resolve(opts: &Opts, env_out_dir: Option<PathBuf>, command: &str) -> Result<Spec, CliError> {
        let cfg = match &opts.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let pick_str = |flag: &Option<String>, key: &str| flag.clone().or_else(|| cfg.values.get(key).cloned());

        let loss_arg = pick_str(&opts.loss, "loss");
        let losses_explicit = loss_arg.is_some();
        let losses = parse_losses(&loss_arg.unwrap_or_else(|| "ls".into()))?;
        let deltas = pick_str(&opts.delta, "delta").map(|s| parse_grid(&s, "delta")).transpose()?;
        let epsilons = pick_str(&opts.eps, "eps").map(|s| parse_grid(&s, "eps")).transpose()?;
        let r = opts.r.map_or_else(|| cfg.get("r"), |v| Ok(Some(v)))?.unwrap_or(0.0);
        let n = opts.n.map_or_else(|| cfg.get("n"), |v| Ok(Some(v)))?.unwrap_or(128);
        let trials = opts.trials.map_or_else(|| cfg.get("trials"), |v| Ok(Some(v)))?.unwrap_or(25);
        let seed = opts.seed.map_or_else(|| cfg.get("seed"), |v| Ok(Some(v)))?.unwrap_or(1);
        let engine_kind = opts
            .engine
            .map_or_else(|| cfg.get_enum("engine"), |v| Ok(Some(v)))?
            .unwrap_or(EngineKind::Gh);
        let nodes = opts.nodes.map_or_else(|| cfg.get("nodes"), |v| Ok(Some(v)))?.unwrap_or(128);
        let samples = opts.samples.map_or_else(|| cfg.get("samples"), |v| Ok(Some(v)))?.unwrap_or(100_000);
        let solver_arg = opts.solver.map_or_else(|| cfg.get_enum("solver"), |v| Ok(Some(v)))?;
        let solver_explicit = solver_arg.is_some();
        let solver = solver_arg.unwrap_or(SolverKind::Fp);
        let empirical_points = opts
            .empirical_points
            .map_or_else(|| cfg.get("empirical-points"), |v| Ok(Some(v)))?
            .unwrap_or(8);
        let format = opts
            .format
            .map_or_else(|| cfg.get_enum("format"), |v| Ok(Some(v)))?
            .unwrap_or(Format::Csv);
        let strict = opts.strict || cfg.get::<bool>("strict")?.unwrap_or(false);
        let out = opts
            .out
            .clone()
            .or_else(|| cfg.values.get("out").map(PathBuf::from))
            .or_else(|| env_out_dir.map(|dir| default_out(&dir, command, format)));

        if !(r >= 0.0) || !r.is_finite() {
            return Err(CliError::Usage(format!("--r must be a finite value >= 0, got {r}")));
        }
        if n < 2 {
            return Err(CliError::Usage(format!("--n must be at least 2, got {n}")));
        }
        if trials == 0 {
            return Err(CliError::Usage("--trials must be at least 1".into()));
        }
        if empirical_points == 0 {
            return Err(CliError::Usage("--empirical-points must be at least 1".into()));
        }
        if let Some(ds) = &deltas {
            if let Some(d) = ds.iter().find(|d| !(**d > 1.0)) {
                return Err(CliError::Usage(format!(
                    "oversampling ratio must satisfy delta > 1 (the estimator is not consistent otherwise), got {d}"
                )));
            }
        }
        if let Some(es) = &epsilons {
            if let Some(e) = es.iter().find(|e| !(0.0..=0.5).contains(*e)) {
                return Err(CliError::Usage(format!("flip probability must lie in [0, 1/2], got {e}")));
            }
        }
        let engine = match engine_kind {
            EngineKind::Gh if nodes == 0 => return Err(CliError::Usage("--nodes must be positive".into())),
            EngineKind::Mc if samples == 0 => return Err(CliError::Usage("--samples must be positive".into())),
            EngineKind::Gh => EngineConfig::gauss_hermite(nodes),
            EngineKind::Mc => EngineConfig::monte_carlo(samples, seed),
        };

        Ok(Spec {
            losses,
            losses_explicit,
            deltas,
            epsilons,
            r,
            n,
            trials,
            seed,
            engine,
            solver,
            solver_explicit,
            empirical_points,
            out,
            format,
            strict,
        })
    }
}

/// `$ONEBIT_OUT_DIR/<command>.<ext>`; figures get a directory instead.
fn default_out(dir: &Path, command: &str, format: Format) -> PathBuf {
    if command == "figure" {
        return dir.to_path_buf();
    }
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    dir.join(format!("{command}.{ext}"))
}

pub fn parse_losses(s: &str) -> Result<Vec<Loss>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<Loss>().map_err(|e| CliError::Usage(format!("unknown loss {t:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(CliError::Usage("--loss is empty".into()))
            } else {
                Ok(v)
            }
        })
}

/// `x`, `x,y,z`, or `start:stop:count` (linear, endpoints included); items may be mixed.
pub fn parse_grid(s: &str, name: &str) -> Result<Vec<f64>, CliError> {
    let bad = |msg: String| CliError::Usage(format!("--{name} {s:?}: {msg}"));
    let num = |t: &str| -> Result<f64, CliError> {
        let v: f64 = t.trim().parse().map_err(|e| bad(format!("{t:?} is not a number ({e})")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad(format!("{t:?} is not finite")))
        }
    };
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [v] => out.push(num(v)?),
            [a, b, c] => {
                let (a, b) = (num(a)?, num(b)?);
                let count: usize = c
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("count {c:?} is not a positive integer")))?;
                match count {
                    0 => return Err(bad("count must be positive".into())),
                    1 => out.push(a),
                    _ => out.extend((0..count).map(|k| a + (b - a) * k as f64 / (count - 1) as f64)),
                }
            }
            _ => return Err(bad(format!("{item:?} is neither a number nor start:stop:count"))),
        }
    }
    if out.is_empty() {
        return Err(bad("empty grid".into()));
    }
    Ok(out)
}
