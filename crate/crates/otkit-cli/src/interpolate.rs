use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use otkit::dynamic_bb::{benamou_brenier, interpolation_path, BbOptions};
use otkit::exact_lp::network_simplex_with_limit;
use otkit::{build_cost, validate_plan};

use crate::common::{CommonArgs, Stopwatch};
use crate::error::CliError;
use crate::io::{format_points, format_raster, read_points, read_raster, write_text};
use crate::report::{MarginalResiduals, Report, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpolationMethod {
    /// Displacement of the atoms of an exact plan between point clouds.
    Mccann,
    /// Benamou–Brenier flow between grid densities.
    Dynamic,
}

#[derive(Debug, Clone, Args)]
pub struct InterpolateArgs {
    /// Start measure: point CSV for `mccann`, raster or histogram CSV for `dynamic`.
    pub source: PathBuf,
    /// End measure, same format as the source.
    pub target: PathBuf,
    #[arg(long, value_enum, default_value_t = InterpolationMethod::Mccann)]
    pub method: InterpolationMethod,
    /// Number of time steps T; T + 1 snapshots at t = k / T are written.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Exponent of the Euclidean ground cost for `mccann`.
    #[arg(long, default_value_t = 2.0)]
    pub power: f64,
    /// Directory receiving `snapshot_KKKK.csv` files.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn snapshot_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("snapshot_{k:04}.csv"))
}

pub fn run(args: &InterpolateArgs) -> Result<Report, CliError> {
    args.common.validate()?;
    if args.steps == 0 {
        return Err(CliError::Usage("--steps must be positive".into()));
    }
    fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    let mut report = match args.method {
        InterpolationMethod::Mccann => mccann(args)?,
        InterpolationMethod::Dynamic => dynamic(args)?,
    };
    let names: Vec<String> = (0..=args.steps)
        .map(|k| format!("snapshot_{k:04}.csv"))
        .collect();
    report.detail("snapshots", names);
    report.config.extra.insert("steps".into(), args.steps.into());
    Ok(report)
}

fn mccann(args: &InterpolateArgs) -> Result<Report, CliError> {
    if !(args.power >= 1.0 && args.power.is_finite()) {
        return Err(CliError::Usage(format!("--power must be >= 1, got {}", args.power)));
    }
    let alpha = read_points(&args.source)?;
    let beta = read_points(&args.target)?;
    if alpha.dim() != beta.dim() {
        return Err(CliError::Usage(format!(
            "source points have {} coordinates, target points {}",
            alpha.dim(),
            beta.dim()
        )));
    }
    let clock = Stopwatch::start(&args.common);
    let cost = build_cost(&alpha, &beta, args.power)?;
    let (a, b) = (alpha.weights(), beta.weights());
    let max_iter = args.common.max_iter.unwrap_or(100 * a.len() * b.len() + 1000);
    let sol = network_simplex_with_limit(a, b, &cost, max_iter)?;
    let times: Vec<f64> = (0..=args.steps).map(|k| k as f64 / args.steps as f64).collect();
    let path = interpolation_path(&sol.plan, &alpha, &beta, &times)?;

    let mut echo = args.common.echo(Some(max_iter));
    echo.extra.insert("power".into(), args.power.into());
    let mut report = Report::new("interpolate", "mccann", echo);
    report.value = sol.value;
    report.iterations = sol.pivots;
    let r = validate_plan(&sol.plan, a, b)?;
    report.marginal_residuals = Some(MarginalResiduals { row: r.row, col: r.col });
    if args.common.emit_plot {
        let mut columns = vec!["t".to_string()];
        columns.extend((0..alpha.dim()).map(|k| format!("x{k}")));
        columns.push("mass".into());
        let names: Vec<&str> = columns.iter().map(String::as_str).collect();
        let mut series = Series::new(&names);
        for (t, measure) in &path {
            for (x, &w) in measure.points().rows().into_iter().zip(measure.weights().weights()) {
                let mut row = vec![*t];
                row.extend(x.iter());
                row.push(w);
                series.rows.push(row);
            }
        }
        report.series = Some(series);
    }
    clock.stop(&mut report);
    for (k, (_, measure)) in path.iter().enumerate() {
        write_text(&snapshot_path(&args.out_dir, k), &format_points(measure))?;
    }
    Ok(report)
}

fn dynamic(args: &InterpolateArgs) -> Result<Report, CliError> {
    let alpha0 = read_raster(&args.source)?;
    let alpha1 = read_raster(&args.target)?;
    if alpha0.shape() != alpha1.shape() {
        return Err(CliError::Input {
            path: args.target.clone(),
            message: format!("grid shape {:?} differs from {:?}", alpha1.shape(), alpha0.shape()),
        });
    }
    let defaults = BbOptions::default();
    let opts = BbOptions {
        time_steps: args.steps,
        iterations: args.common.max_iter.unwrap_or(defaults.iterations),
        ..defaults
    };
    let clock = Stopwatch::start(&args.common);
    let sol = benamou_brenier(&alpha0, &alpha1, &opts)?;

    let mut echo = args.common.echo(Some(opts.iterations));
    echo.extra.insert("gamma".into(), opts.gamma.into());
    echo.extra.insert("relaxation".into(), opts.relaxation.into());
    let mut report = Report::new("interpolate", "dynamic", echo);
    report.value = sol.value;
    report.iterations = opts.iterations;
    let start = (&sol.field.slice(0) - &alpha0).mapv(f64::abs).sum();
    let end = (&sol.field.slice(args.steps) - &alpha1).mapv(f64::abs).sum();
    report.marginal_residuals = Some(MarginalResiduals { row: start, col: end });
    report.detail("grid_shape", alpha0.shape().to_vec());
    if args.common.emit_plot {
        let mut series = Series::new(&["iteration", "objective"]);
        series.rows = sol
            .objective_trace
            .iter()
            .enumerate()
            .map(|(k, &e)| vec![(k + 1) as f64, e])
            .collect();
        report.series = Some(series);
    }
    clock.stop(&mut report);
    for k in 0..=args.steps {
        write_text(&snapshot_path(&args.out_dir, k), &format_raster(&sol.field.slice(k)))?;
    }
    Ok(report)
}
