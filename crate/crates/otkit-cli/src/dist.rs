use std::path::PathBuf;

use clap::{Args, ValueEnum};
use otkit::entropic::{default_max_iter, sinkhorn, sinkhorn_log, SinkhornOptions};
use otkit::exact_lp::network_simplex_with_limit;
use otkit::semidiscrete::{cell_masses, laguerre_assign, maximize_semidual, AscentOptions, QuadratureSource};
use otkit::weak_losses::{default_direction_count, entropic_gw_with, sliced_w, GwOptions, MetricMeasureSpace};
use otkit::{build_cost, validate_plan, CostMatrix, DiscreteMeasure, Histogram, TransportPlan};

use crate::common::{require_positive, CommonArgs, Stopwatch};
use crate::error::CliError;
use crate::io::{format_triplets, read_cost, read_histogram, read_points, write_text};
use crate::report::{MarginalResiduals, Report, Series};

/// Plan entries at or below this mass are left out of `--emit-plan`.
const PLAN_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistMethod {
    /// Network simplex.
    Exact,
    /// Entropic scaling iterations.
    Sinkhorn,
    /// Entropic iterations on log-potentials.
    SinkhornLog,
    /// Source points as a quadrature of a continuous measure.
    Semidiscrete,
    /// Entropic Gromov–Wasserstein on Euclidean distance matrices.
    Gw,
    /// Sliced Wasserstein with seeded random directions.
    Sliced,
}

impl DistMethod {
    fn name(self) -> &'static str {
        match self {
            DistMethod::Exact => "exact",
            DistMethod::Sinkhorn => "sinkhorn",
            DistMethod::SinkhornLog => "sinkhorn-log",
            DistMethod::Semidiscrete => "semidiscrete",
            DistMethod::Gw => "gw",
            DistMethod::Sliced => "sliced",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DistArgs {
    /// Source measure: histogram CSV with `--cost`, point CSV otherwise.
    pub source: PathBuf,
    /// Target measure, same format as the source.
    pub target: PathBuf,
    #[arg(long, value_enum, default_value_t = DistMethod::Exact)]
    pub method: DistMethod,
    /// Dense cost matrix; makes both inputs histograms.
    #[arg(long)]
    pub cost: Option<PathBuf>,
    /// Exponent of the Euclidean ground cost between points.
    #[arg(long, default_value_t = 2.0)]
    pub power: f64,
    /// Entropic regularization (sinkhorn, sinkhorn-log, gw; optional for semidiscrete).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Number of projection directions for `sliced` (default 64 per dimension).
    #[arg(long)]
    pub directions: Option<usize>,
    /// Write the plan as `i,j,mass` triplets.
    #[arg(long)]
    pub emit_plan: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

enum Inputs {
    Histograms(Histogram, Histogram, CostMatrix),
    Points(DiscreteMeasure, DiscreteMeasure),
}

impl Inputs {
    fn read(args: &DistArgs) -> Result<Self, CliError> {
        match &args.cost {
            Some(cost_path) => {
                let a = read_histogram(&args.source)?;
                let b = read_histogram(&args.target)?;
                let cost = read_cost(cost_path)?;
                if cost.shape() != (a.len(), b.len()) {
                    return Err(CliError::Input {
                        path: cost_path.clone(),
                        message: format!("cost is {:?}, histograms have {} and {} entries", cost.shape(), a.len(), b.len()),
                    });
                }
                Ok(Inputs::Histograms(a, b, cost))
            }
            None => {
                let alpha = read_points(&args.source)?;
                let beta = read_points(&args.target)?;
                if alpha.dim() != beta.dim() {
                    return Err(CliError::Usage(format!(
                        "source points have {} coordinates, target points {}",
                        alpha.dim(),
                        beta.dim()
                    )));
                }
                Ok(Inputs::Points(alpha, beta))
            }
        }
    }

    fn discrete_problem(self, power: f64) -> Result<(Histogram, Histogram, CostMatrix), CliError> {
        match self {
            Inputs::Histograms(a, b, c) => Ok((a, b, c)),
            Inputs::Points(alpha, beta) => {
                let cost = build_cost(&alpha, &beta, power)?;
                Ok((alpha.weights().clone(), beta.weights().clone(), cost))
            }
        }
    }

    fn points(self, method: DistMethod) -> Result<(DiscreteMeasure, DiscreteMeasure), CliError> {
        match self {
            Inputs::Points(alpha, beta) => Ok((alpha, beta)),
            Inputs::Histograms(..) => Err(CliError::Usage(format!(
                "--method {} needs point clouds, not --cost",
                method.name()
            ))),
        }
    }
}

pub fn run(args: &DistArgs) -> Result<Report, CliError> {
    args.common.validate()?;
    if !(args.power >= 1.0 && args.power.is_finite()) {
        return Err(CliError::Usage(format!("--power must be >= 1, got {}", args.power)));
    }
    let inputs = Inputs::read(args)?;
    let clock = Stopwatch::start(&args.common);
    let mut report = match args.method {
        DistMethod::Exact => exact(args, inputs)?,
        DistMethod::Sinkhorn | DistMethod::SinkhornLog => entropic(args, inputs)?,
        DistMethod::Semidiscrete => semidiscrete(args, inputs)?,
        DistMethod::Gw => gromov(args, inputs)?,
        DistMethod::Sliced => sliced(args, inputs)?,
    };
    clock.stop(&mut report);
    Ok(report)
}

fn new_report(args: &DistArgs, max_iter: Option<usize>) -> Report {
    let mut echo = args.common.echo(max_iter);
    echo.extra.insert("power".into(), args.power.into());
    echo.extra.insert("epsilon".into(), args.epsilon.into());
    Report::new("dist", args.method.name(), echo)
}

fn residuals(plan: &TransportPlan, a: &Histogram, b: &Histogram) -> Result<MarginalResiduals, CliError> {
    let r = validate_plan(plan, a, b)?;
    Ok(MarginalResiduals { row: r.row, col: r.col })
}

fn write_plan(args: &DistArgs, plan: &TransportPlan) -> Result<(), CliError> {
    match &args.emit_plan {
        Some(path) => write_text(path, &format_triplets(plan.matrix(), PLAN_THRESHOLD)),
        None => Ok(()),
    }
}

fn exact(args: &DistArgs, inputs: Inputs) -> Result<Report, CliError> {
    let (a, b, cost) = inputs.discrete_problem(args.power)?;
    let max_iter = args.common.max_iter.unwrap_or(100 * a.len() * b.len() + 1000);
    let sol = network_simplex_with_limit(&a, &b, &cost, max_iter)?;
    let mut report = new_report(args, Some(max_iter));
    report.value = sol.value;
    report.iterations = sol.pivots;
    report.marginal_residuals = Some(residuals(&sol.plan, &a, &b)?);
    report.detail("dual_objective", sol.duals.objective(&a, &b));
    if args.common.emit_plot {
        let mut series = Series::new(&["pivot", "objective"]);
        series.rows = sol.objective_trace.iter().enumerate().map(|(k, &v)| vec![k as f64, v]).collect();
        report.series = Some(series);
    }
    write_plan(args, &sol.plan)?;
    Ok(report)
}

fn entropic(args: &DistArgs, inputs: Inputs) -> Result<Report, CliError> {
    let epsilon = require_positive("--epsilon", args.epsilon)?;
    let (a, b, cost) = inputs.discrete_problem(args.power)?;
    let max_iter = args.common.max_iter.unwrap_or_else(|| default_max_iter(cost.sup_norm(), epsilon));
    let opts = SinkhornOptions {
        tol: args.common.tol,
        max_iter: Some(max_iter),
        record_trace: args.common.emit_plot,
    };
    let sol = if args.method == DistMethod::Sinkhorn {
        sinkhorn(&a, &b, &cost, epsilon, &opts)?
    } else {
        sinkhorn_log(&a, &b, &cost, epsilon, &opts)?
    };
    let rep = &sol.report;
    let mut report = new_report(args, Some(max_iter));
    report.value = rep.transport_cost;
    report.iterations = rep.iterations;
    report.converged = rep.converged;
    report.marginal_residuals = Some(residuals(&sol.plan, &a, &b)?);
    report.detail("regularized_cost", rep.regularized_cost);
    report.detail("dual_objective", rep.dual_objective);
    report.detail("entropy", rep.entropy);
    if args.common.emit_plot {
        let mut series = Series::new(&["iteration", "log10_residual"]);
        series.rows = rep
            .trace
            .iter()
            .enumerate()
            .map(|(k, &r)| vec![(k + 1) as f64, r.log10()])
            .collect();
        report.series = Some(series);
    }
    write_plan(args, &sol.plan)?;
    Ok(report)
}

fn semidiscrete(args: &DistArgs, inputs: Inputs) -> Result<Report, CliError> {
    let epsilon = match args.epsilon {
        None => 0.0,
        Some(e) if e >= 0.0 && e.is_finite() => e,
        Some(e) => return Err(CliError::Usage(format!("--epsilon must be >= 0, got {e}"))),
    };
    let (alpha, beta) = inputs.points(args.method)?;
    let source = QuadratureSource::from_histogram(alpha.points().clone(), alpha.weights())?;
    let max_iter = args.common.max_iter.unwrap_or(AscentOptions::default().max_iter);
    let opts = AscentOptions {
        tol: args.common.tol,
        max_iter,
    };
    let sol = maximize_semidual(&source, beta.points(), beta.weights(), args.power, epsilon, &opts)?;
    let masses = cell_masses(&sol.dual, &source, beta.points(), beta.weights(), args.power, epsilon)?;
    let mismatch: f64 = (&masses - beta.weights().weights()).mapv(f64::abs).sum();
    let mut echo_args = args.clone();
    echo_args.epsilon = Some(epsilon);
    let mut report = new_report(&echo_args, Some(max_iter));
    report.value = sol.energy;
    report.iterations = sol.iterations;
    report.converged = sol.converged;
    report.marginal_residuals = Some(MarginalResiduals { row: 0.0, col: mismatch });
    report.detail("gradient_norm", sol.gradient_norm);
    if args.common.emit_plot {
        let cells = laguerre_assign(&sol.dual, alpha.points(), beta.points(), args.power)?;
        let mut columns: Vec<String> = (0..alpha.dim()).map(|k| format!("node_x{k}")).collect();
        columns.push("cell_index".into());
        let names: Vec<&str> = columns.iter().map(String::as_str).collect();
        let mut series = Series::new(&names);
        series.rows = alpha
            .points()
            .rows()
            .into_iter()
            .zip(cells)
            .map(|(x, j)| {
                let mut row = x.to_vec();
                row.push(j as f64);
                row
            })
            .collect();
        report.series = Some(series);
    }
    Ok(report)
}

fn gromov(args: &DistArgs, inputs: Inputs) -> Result<Report, CliError> {
    let epsilon = require_positive("--epsilon", args.epsilon)?;
    let (alpha, beta) = inputs.points(args.method)?;
    let x = MetricMeasureSpace::from_points(alpha.points(), alpha.weights().clone())?;
    let y = MetricMeasureSpace::from_points(beta.points(), beta.weights().clone())?;
    let max_iter = args.common.max_iter.unwrap_or(200);
    let sol = entropic_gw_with(&x, &y, &GwOptions::new(epsilon, max_iter))?;
    let mut report = new_report(args, Some(max_iter));
    report.value = sol.energy;
    report.iterations = sol.accepted_steps + sol.polish_steps;
    report.marginal_residuals = Some(residuals(&sol.plan, alpha.weights(), beta.weights())?);
    report.detail("accepted_steps", sol.accepted_steps);
    report.detail("polish_steps", sol.polish_steps);
    if args.common.emit_plot {
        let mut series = Series::new(&["outer_iter", "energy"]);
        series.rows = sol.energy_trace.iter().enumerate().map(|(k, &e)| vec![k as f64, e]).collect();
        report.series = Some(series);
    }
    write_plan(args, &sol.plan)?;
    Ok(report)
}

fn sliced(args: &DistArgs, inputs: Inputs) -> Result<Report, CliError> {
    let (alpha, beta) = inputs.points(args.method)?;
    let directions = args.directions.unwrap_or_else(|| default_direction_count(alpha.dim()));
    let value = sliced_w(&alpha, &beta, args.power, directions, args.common.seed)?;
    let mut report = new_report(args, None);
    report.value = value;
    report.config.extra.insert("directions".into(), directions.into());
    Ok(report)
}
