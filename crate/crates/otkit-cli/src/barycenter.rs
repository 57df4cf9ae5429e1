use std::path::PathBuf;

use clap::Args;
use ndarray::{Array2, ArrayD, IxDyn};
use otkit::barycenter::{
    barycenter_transport_cost, entropic_barycenter, uniform_weights, BarycenterOptions, BarycenterProblem,
};
use otkit::{build_cost, CostMatrix, DiscreteMeasure, Histogram};

use crate::common::{require_positive, CommonArgs, Stopwatch};
use crate::error::CliError;
use crate::io::{format_raster, read_cost, read_raster, write_text};
use crate::report::{MarginalResiduals, Report, Series};

#[derive(Debug, Clone, Args)]
pub struct BarycenterArgs {
    /// Histogram or raster CSVs on one shared grid.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Barycentric weights, comma separated; uniform when omitted.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Entropic regularization.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Dense square cost between grid cells; defaults to distances between cell centres of the unit cube.
    #[arg(long)]
    pub cost: Option<PathBuf>,
    /// Exponent of the Euclidean ground cost on the grid.
    #[arg(long, default_value_t = 2.0)]
    pub power: f64,
    /// Where to write the barycenter, in the format of the inputs.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Cell centres of the grid `shape` on `[0, 1]^d`, in row-major order.
fn cell_centres(shape: &[usize]) -> Array2<f64> {
    let cells: usize = shape.iter().product();
    let mut points = Array2::zeros((cells, shape.len()));
    for (k, mut row) in points.rows_mut().into_iter().enumerate() {
        let mut rest = k;
        for d in (0..shape.len()).rev() {
            row[d] = ((rest % shape[d]) as f64 + 0.5) / shape[d] as f64;
            rest /= shape[d];
        }
    }
    points
}

fn grid_cost(shape: &[usize], power: f64) -> Result<CostMatrix, CliError> {
    let centres = DiscreteMeasure::uniform(cell_centres(shape))?;
    Ok(build_cost(&centres, &centres, power)?)
}

pub fn run(args: &BarycenterArgs) -> Result<Report, CliError> {
    args.common.validate()?;
    let epsilon = require_positive("--epsilon", args.epsilon)?;
    if !(args.power >= 1.0 && args.power.is_finite()) {
        return Err(CliError::Usage(format!("--power must be >= 1, got {}", args.power)));
    }
    let rasters = args.inputs.iter().map(|p| read_raster(p)).collect::<Result<Vec<_>, _>>()?;
    let shape = rasters[0].shape().to_vec();
    for (raster, path) in rasters.iter().zip(&args.inputs) {
        if raster.shape() != shape.as_slice() {
            return Err(CliError::Input {
                path: path.clone(),
                message: format!("grid shape {:?} differs from {:?}", raster.shape(), shape),
            });
        }
    }
    let lambda = match &args.weights {
        Some(w) => w.clone(),
        None => uniform_weights(rasters.len()),
    };
    if lambda.len() != rasters.len() {
        return Err(CliError::Usage(format!(
            "{} weights given for {} inputs",
            lambda.len(),
            rasters.len()
        )));
    }
    let cells: usize = shape.iter().product();
    let cost = match &args.cost {
        Some(path) => {
            let cost = read_cost(path)?;
            if cost.shape() != (cells, cells) {
                return Err(CliError::Input {
                    path: path.clone(),
                    message: format!("cost is {:?}, the grid has {cells} cells", cost.shape()),
                });
            }
            cost
        }
        None => grid_cost(&shape, args.power)?,
    };
    let inputs = rasters
        .into_iter()
        .map(|r| Histogram::probability(r.into_iter().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    let problem = BarycenterProblem::shared_cost(inputs, cost, lambda.clone(), epsilon).map_err(|e| match e {
        otkit::Error::InvalidArgument(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;
    let max_cycles = args.common.max_iter.unwrap_or(BarycenterOptions::default().max_cycles);
    let opts = BarycenterOptions {
        tol: args.common.tol,
        max_cycles,
    };

    let clock = Stopwatch::start(&args.common);
    let sol = entropic_barycenter(&problem, &opts)?;
    let mut echo = args.common.echo(Some(max_cycles));
    echo.extra.insert("epsilon".into(), epsilon.into());
    echo.extra.insert("power".into(), args.power.into());
    echo.extra.insert("lambda".into(), lambda.into());
    let mut report = Report::new("barycenter", "entropic", echo);
    report.value = barycenter_transport_cost(&problem, &sol.plans);
    report.iterations = sol.report.cycles;
    report.converged = sol.report.converged;
    report.marginal_residuals = Some(MarginalResiduals {
        row: sol.report.marginal_disagreement,
        col: sol.report.column_residual,
    });
    report.detail("marginal_disagreement", sol.report.marginal_disagreement);
    report.detail("grid_shape", shape.clone());
    if args.common.emit_plot {
        let mut series = Series::new(&["cell_index", "mass"]);
        series.rows = sol
            .barycenter
            .weights()
            .iter()
            .enumerate()
            .map(|(k, &w)| vec![k as f64, w])
            .collect();
        report.series = Some(series);
    }
    clock.stop(&mut report);

    let grid = ArrayD::from_shape_vec(IxDyn(&shape), sol.barycenter.into_inner().to_vec())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    write_text(&args.output, &format_raster(&grid))?;
    Ok(report)
}
