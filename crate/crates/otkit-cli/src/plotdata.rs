use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;

use crate::error::CliError;
use crate::io::{number, write_text};
use crate::report::Report;

#[derive(Debug, Clone, Args)]
pub struct PlotdataArgs {
    /// JSON report of a run made with `--emit-plot`.
    pub run: PathBuf,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(args: &PlotdataArgs) -> Result<(), CliError> {
    let bad = |message: String| CliError::Input {
        path: args.run.clone(),
        message,
    };
    let text = fs::read_to_string(&args.run).map_err(|source| CliError::Io {
        path: args.run.clone(),
        source,
    })?;
    let report: Report = serde_json::from_str(&text).map_err(|e| bad(format!("not a run report: {e}")))?;
    let series = report
        .series
        .ok_or_else(|| bad("report has no series; rerun with --emit-plot".into()))?;
    let mut csv = series.columns.join(",");
    csv.push('\n');
    for row in &series.rows {
        if row.len() != series.columns.len() {
            return Err(bad(format!("series row has {} values for {} columns", row.len(), series.columns.len())));
        }
        let fields: Vec<String> = row.iter().map(|&x| number(x)).collect();
        let _ = writeln!(csv, "{}", fields.join(","));
    }
    match &args.output {
        Some(path) => write_text(path, &csv),
        None => std::io::stdout().lock().write_all(csv.as_bytes()).map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}
