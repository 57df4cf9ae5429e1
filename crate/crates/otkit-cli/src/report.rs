use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MarginalResiduals {
    pub row: f64,
    pub col: f64,
}

/// Columns of numbers for `plotdata`, one inner vector per row. Non-finite
/// entries are stored as JSON null and read back as NaN.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Series {
    pub columns: Vec<String>,
    #[serde(deserialize_with = "rows_with_nulls")]
    pub rows: Vec<Vec<f64>>,
}

fn rows_with_nulls<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<Vec<f64>>, D::Error> {
    let rows = Vec::<Vec<Option<f64>>>::deserialize(deserializer)?;
    Ok(rows
        .into_iter()
        .map(|row| row.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
        .collect())
}

impl Series {
    pub fn new(columns: &[&str]) -> Self {
        Series {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Settings every run echoes, resolved to the values actually used.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConfigEcho {
    pub tol: f64,
    /// Null for methods without an iteration count.
    pub max_iter: Option<usize>,
    pub seed: u64,
    pub threads: usize,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    pub method: String,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_residuals: Option<MarginalResiduals>,
    /// Wall time, present only when `--timing` is given.
    pub runtime_ms: Option<f64>,
    pub config: ConfigEcho,
    /// Solver-specific scalars.
    pub details: Map<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub series: Option<Series>,
}

impl Report {
    pub fn new(command: &str, method: &str, config: ConfigEcho) -> Self {
        Report {
            schema: SCHEMA_VERSION,
            command: command.into(),
            method: method.into(),
            value: f64::NAN,
            iterations: 0,
            converged: true,
            marginal_residuals: None,
            runtime_ms: None,
            config,
            details: Map::new(),
            series: None,
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Into<Value>) {
        self.details.insert(key.into(), value.into());
    }
}
