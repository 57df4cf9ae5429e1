//! Text formats read and written by the command-line tool.
//!
//! * Histogram: one weight per line.
//! * Point cloud: `d` coordinate columns followed by a weight column.
//! * Cost: dense row-major matrix, one row per line.
//! * Raster: dense row-major grid values preceded by a `# shape: n1,n2` line.
//!
//! Fields are separated by commas or whitespace. Blank lines and lines
//! starting with `#` are ignored, except the `# normalize` directive (weights
//! are rescaled to unit mass instead of being required to sum to 1) and the
//! raster `# shape:` header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use otkit::{CostMatrix, DiscreteMeasure, Histogram};

use crate::error::CliError;

struct Table {
    path: PathBuf,
    rows: Vec<Vec<f64>>,
    normalize: bool,
    shape: Option<Vec<usize>>,
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |line: usize, message: String| CliError::Input {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut table = Table {
        path: path.to_path_buf(),
        rows: Vec::new(),
        normalize: false,
        shape: None,
    };
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if comment.eq_ignore_ascii_case("normalize") {
                table.normalize = true;
            } else if let Some(dims) = comment.strip_prefix("shape:") {
                let shape = dims
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| bad(k + 1, format!("bad shape header: {e}")))?;
                if shape.is_empty() || shape.contains(&0) {
                    return Err(bad(k + 1, "shape must have positive extents".into()));
                }
                table.shape = Some(shape);
            }
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(k + 1, format!("not a finite number: {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        table.rows.push(row);
    }
    if table.rows.is_empty() {
        return Err(CliError::Input {
            path: path.to_path_buf(),
            message: "file contains no data".into(),
        });
    }
    Ok(table)
}

impl Table {
    fn input_error(&self, message: impl Into<String>) -> CliError {
        CliError::Input {
            path: self.path.clone(),
            message: message.into(),
        }
    }

    fn histogram(&self, weights: Vec<f64>) -> Result<Histogram, CliError> {
        let weights = Array1::from(weights);
        let hist = if self.normalize {
            Histogram::normalized(weights)
        } else {
            Histogram::probability(weights)
        };
        hist.map_err(|e| self.input_error(e.to_string()))
    }

    fn rectangular(&self) -> Result<(usize, Vec<f64>), CliError> {
        let width = self.rows[0].len();
        if let Some(k) = self.rows.iter().position(|r| r.len() != width) {
            return Err(self.input_error(format!(
                "row {} has {} fields, expected {width}",
                k + 1,
                self.rows[k].len()
            )));
        }
        Ok((width, self.rows.concat()))
    }
}

pub fn read_histogram(path: &Path) -> Result<Histogram, CliError> {
    let table = read_table(path)?;
    if let Some(k) = table.rows.iter().position(|r| r.len() != 1) {
        return Err(table.input_error(format!("line with {} fields in a histogram (row {})", table.rows[k].len(), k + 1)));
    }
    let weights = table.rows.iter().map(|r| r[0]).collect();
    table.histogram(weights)
}

pub fn read_points(path: &Path) -> Result<DiscreteMeasure, CliError> {
    let table = read_table(path)?;
    let (width, _) = table.rectangular()?;
    if width < 2 {
        return Err(table.input_error("point rows need coordinates and a weight"));
    }
    let n = table.rows.len();
    let dim = width - 1;
    let points = Array2::from_shape_fn((n, dim), |(i, k)| table.rows[i][k]);
    let weights = table.histogram(table.rows.iter().map(|r| r[dim]).collect())?;
    DiscreteMeasure::new(points, weights).map_err(|e| table.input_error(e.to_string()))
}

pub fn read_cost(path: &Path) -> Result<CostMatrix, CliError> {
    let table = read_table(path)?;
    let (width, values) = table.rectangular()?;
    let entries = Array2::from_shape_vec((table.rows.len(), width), values).map_err(|e| table.input_error(e.to_string()))?;
    CostMatrix::new(entries).map_err(|e| table.input_error(e.to_string()))
}

/// Grid density. A file without a shape header is read as a 1-D histogram.
pub fn read_raster(path: &Path) -> Result<ArrayD<f64>, CliError> {
    let table = read_table(path)?;
    let values: Vec<f64> = table.rows.concat();
    let shape = table.shape.clone().unwrap_or_else(|| vec![values.len()]);
    let expected: usize = shape.iter().product();
    if expected != values.len() {
        return Err(table.input_error(format!("shape {shape:?} needs {expected} values, found {}", values.len())));
    }
    let hist = table.histogram(values)?;
    ArrayD::from_shape_vec(IxDyn(&shape), hist.into_inner().to_vec()).map_err(|e| table.input_error(e.to_string()))
}

/// Shortest round-trip decimal, in exponent form for very small or large
/// magnitudes; `NaN` and `inf` are spelled out.
pub fn number(x: f64) -> String {
    if !x.is_finite() {
        format!("{x}")
    } else if x != 0.0 && (x.abs() < 1e-5 || x.abs() >= 1e16) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn format_raster(values: &ArrayD<f64>) -> String {
    let shape = values.shape();
    let mut out = String::new();
    if shape.len() > 1 {
        let dims: Vec<String> = shape.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(out, "# shape: {}", dims.join(","));
    }
    // 1-D rasters are written one value per line, as histograms.
    let width = if shape.len() > 1 { shape[shape.len() - 1] } else { 1 };
    let flat: Vec<f64> = values.iter().copied().collect();
    for row in flat.chunks(width.max(1)) {
        let fields: Vec<String> = row.iter().map(|&x| number(x)).collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn format_points(measure: &DiscreteMeasure) -> String {
    let mut out = String::new();
    for (row, w) in measure.points().rows().into_iter().zip(measure.weights().weights()) {
        let mut fields: Vec<String> = row.iter().map(|&x| number(x)).collect();
        fields.push(number(*w));
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

/// `i,j,mass` triplets of the entries above `threshold`.
pub fn format_triplets(plan: &Array2<f64>, threshold: f64) -> String {
    let mut out = String::from("i,j,mass\n");
    for ((i, j), &mass) in plan.indexed_iter() {
        if mass > threshold {
            let _ = writeln!(out, "{i},{j},{}", number(mass));
        }
    }
    out
}
