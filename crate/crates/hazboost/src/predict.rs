//! Hazard evaluation at arbitrary query points.
//!
//! The fitted hazard is piecewise constant on the grid-induced partition:
//! a query is mapped to its cell codes with the same left-open boundary
//! rules as training (a value exactly at a candidate belongs to the cell
//! ending there), routed through every tree, and exponentiated.

use std::path::Path;

use thiserror::Error;

use crate::boosting::BoostedModel;
use crate::preprocess::remap_query;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("query {row} has {got} covariates, model expects {expected}")]
    DimensionMismatch { row: usize, got: usize, expected: usize },
    #[error("query {row} has invalid time {got}: must be finite and nonnegative")]
    BadTime { row: usize, got: f64 },
    #[error("query {row}, covariate {column:?}: infinite values are not allowed")]
    InfiniteCovariate { row: usize, column: String },
    #[error("failed to {action} {path}: {source}")]
    Io { action: &'static str, path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path} is missing column {name:?}")]
    MissingColumn { path: String, name: String },
    #[error("{path} line {line}: cannot parse {value:?} in column {column:?} as a number")]
    Parse { path: String, line: u64, column: String, value: String },
}

/// A batch of `(t, x)` points to evaluate the hazard at. Missing covariate
/// values are `NaN` and follow each split's default direction.
#[derive(Debug, Clone, Default)]
pub struct QueryBatch {
    times: Vec<f64>,
    /// Row-major, `num_covariates` per query.
    covariates: Vec<f64>,
    num_covariates: usize,
}

impl QueryBatch {
    pub fn new(num_covariates: usize) -> QueryBatch {
        QueryBatch { times: Vec::new(), covariates: Vec::new(), num_covariates }
    }

    /// Appends one query point, validating its shape and values.
    pub fn push(&mut self, t: f64, x: &[f64]) -> Result<(), PredictError> {
        let row = self.times.len();
        if x.len() != self.num_covariates {
            return Err(PredictError::DimensionMismatch {
                row,
                got: x.len(),
                expected: self.num_covariates,
            });
        }
        if !t.is_finite() || t < 0.0 {
            return Err(PredictError::BadTime { row, got: t });
        }
        if let Some(k) = x.iter().position(|v| v.is_infinite()) {
            return Err(PredictError::InfiniteCovariate { row, column: format!("x{k}") });
        }
        self.times.push(t);
        self.covariates.extend_from_slice(x);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.num_covariates..(i + 1) * self.num_covariates]
    }
}

/// Batch predictions plus the out-of-range diagnostics for the batch.
#[derive(Debug, Clone)]
pub struct Predictions {
    /// One strictly positive hazard per query, in input order.
    pub hazards: Vec<f64>,
    /// Queries that exceeded the grid on at least one axis and were clamped
    /// into its top cell. Nonzero values deserve a warning: the estimator
    /// has no training signal out there.
    pub out_of_range_queries: u64,
}

/// Evaluates the fitted hazard `exp(F_M)` at every point of `batch`.
pub fn predict_hazard(
    model: &BoostedModel,
    batch: &QueryBatch,
) -> Result<Predictions, PredictError> {
    let p = model.grid.num_covariates();
    if batch.num_covariates() != p {
        return Err(PredictError::DimensionMismatch {
            row: 0,
            got: batch.num_covariates(),
            expected: p,
        });
    }
    let mut hazards = Vec::with_capacity(batch.len());
    let mut out_of_range = 0u64;
    for i in 0..batch.len() {
        let q = remap_query(&model.grid, batch.time(i), batch.covariates(i));
        if q.clamped_axes > 0 {
            out_of_range += 1;
        }
        let f = model.log_hazard_codes(|axis| {
            if axis == 0 {
                q.time_code
            } else {
                q.cov_codes[axis - 1]
            }
        });
        hazards.push(f.exp());
    }
    Ok(Predictions { hazards, out_of_range_queries: out_of_range })
}

/// Reads a query batch from a CSV file with a time column (default `"t"`)
/// and the model's covariate columns, matched by name. Empty covariate
/// fields are missing values.
pub fn load_query_csv(
    path: &Path,
    time_col: &str,
    covariate_names: &[String],
) -> Result<QueryBatch, PredictError> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&path_str, e))?;
    let headers = reader.headers().map_err(|e| csv_error(&path_str, e))?.clone();
    let col = |name: &str| -> Result<usize, PredictError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PredictError::MissingColumn { path: path_str.clone(), name: name.into() })
    };
    let t_col = col(time_col)?;
    let cov_cols: Vec<usize> =
        covariate_names.iter().map(|n| col(n)).collect::<Result<_, _>>()?;

    let mut batch = QueryBatch::new(covariate_names.len());
    let mut x = vec![0.0f64; covariate_names.len()];
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&path_str, e))?;
        let line = (idx + 2) as u64;
        let parse = |ci: usize, name: &str| -> Result<f64, PredictError> {
            let raw = record.get(ci).unwrap_or("");
            if raw.is_empty() {
                return Ok(f64::NAN);
            }
            raw.parse::<f64>().map_err(|_| PredictError::Parse {
                path: path_str.clone(),
                line,
                column: name.into(),
                value: raw.into(),
            })
        };
        let t = parse(t_col, time_col)?;
        if t.is_nan() {
            return Err(PredictError::BadTime { row: idx, got: t });
        }
        for (k, &ci) in cov_cols.iter().enumerate() {
            x[k] = parse(ci, &covariate_names[k])?;
        }
        batch.push(t, &x)?;
    }
    Ok(batch)
}

/// Writes queries and their hazards as CSV: the time column, the covariate
/// columns, and an appended `hazard` column. Missing covariates become
/// empty fields.
pub fn write_hazard_csv(
    path: &Path,
    batch: &QueryBatch,
    hazards: &[f64],
    time_col: &str,
    covariate_names: &[String],
) -> Result<(), PredictError> {
    assert_eq!(batch.len(), hazards.len());
    let path_str = path.display().to_string();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(&path_str, e))?;
    let mut header: Vec<&str> = vec![time_col];
    header.extend(covariate_names.iter().map(|s| s.as_str()));
    header.push("hazard");
    writer.write_record(&header).map_err(|e| csv_error(&path_str, e))?;
    let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
    for i in 0..batch.len() {
        let mut record = vec![fmt(batch.time(i))];
        record.extend(batch.covariates(i).iter().map(|&v| fmt(v)));
        record.push(fmt(hazards[i]));
        writer.write_record(&record).map_err(|e| csv_error(&path_str, e))?;
    }
    writer
        .flush()
        .map_err(|source| PredictError::Io { action: "write", path: path_str, source })
}

fn csv_error(path: &str, e: csv::Error) -> PredictError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => {
                PredictError::Io { action: "read", path: path.to_string(), source }
            }
            _ => unreachable!("is_io_error guarantees an io kind"),
        }
    } else {
        PredictError::Csv { path: path.to_string(), source: e }
    }
}
