use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde_json::Map;

use crate::error::CliError;
use crate::io::write_text;
use crate::report::{ConfigEcho, Report};

/// Flags shared by every solver subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Convergence tolerance.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Iteration cap. The default depends on the solver and is echoed in the report.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Seed for randomized methods.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker count. The solvers currently run on one thread whatever the value.
    #[arg(long, env = "OTKIT_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Record wall time in `runtime_ms` (otherwise null, keeping reports reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Write the JSON report to this file instead of standard output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Store a plottable series in the report for `plotdata`.
    #[arg(long)]
    pub emit_plot: bool,
}

impl CommonArgs {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(CliError::Usage(format!("--tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == Some(0) {
            return Err(CliError::Usage("--max-iter must be positive".into()));
        }
        if self.threads == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        Ok(())
    }

    pub fn echo(&self, max_iter: Option<usize>) -> ConfigEcho {
        ConfigEcho {
            tol: self.tol,
            max_iter,
            seed: self.seed,
            threads: self.threads,
            extra: Map::new(),
        }
    }
}

/// Wall clock started only when timing was requested.
pub struct Stopwatch(Option<Instant>);

impl Stopwatch {
    pub fn start(common: &CommonArgs) -> Self {
        Stopwatch(common.timing.then(Instant::now))
    }

    pub fn stop(&self, report: &mut Report) {
        report.runtime_ms = self.0.map(|t| t.elapsed().as_secs_f64() * 1e3);
    }
}

pub fn require_positive(flag: &str, value: Option<f64>) -> Result<f64, CliError> {
    match value {
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(v) => Err(CliError::Usage(format!("{flag} must be positive, got {v}"))),
        None => Err(CliError::Usage(format!("{flag} is required for this method"))),
    }
}

/// Writes the report and returns whether the run converged.
pub fn emit(common: &CommonArgs, report: &Report) -> Result<bool, CliError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    match &common.report {
        Some(path) => write_text(path, &text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })?;
        }
    }
    Ok(report.converged)
}
