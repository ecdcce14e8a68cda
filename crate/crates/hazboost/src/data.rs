//! Counting-process data: subjects observed over epochs.
//!
//! An epoch is a half-open interval `(t_start, t_end]` during which one
//! subject is at risk and its covariates are constant; `delta` records
//! whether an event occurred exactly at `t_end`. A subject may contribute any
//! number of epochs, with gaps (off-risk periods) between them, so the format
//! covers right-censored data, time-dependent covariates, and recurring
//! events uniformly.
//!
//! Missing covariate values are encoded as `f64::NAN` in memory and as empty
//! fields in CSV.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

/// Borrowed view of one epoch of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow<'a> {
    pub subject: &'a str,
    pub t_start: f64,
    pub t_end: f64,
    /// Covariate values at the start of the epoch; `NaN` means missing.
    pub covariates: &'a [f64],
    /// 1 if an event occurred at `t_end`, else 0.
    pub delta: u8,
}

/// Owned epoch used to build a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawEpoch {
    pub subject: String,
    pub t_start: f64,
    pub t_end: f64,
    pub covariates: Vec<f64>,
    pub delta: u8,
}

/// A validated, normalized collection of epochs.
///
/// Rows are stored sorted by `(subject, t_start)`, so any input row order
/// produces the same `Dataset` and therefore the same downstream results.
/// Covariates live in one row-major block.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subject_ids: Vec<String>,
    /// Row offsets per subject: subject `s` owns rows
    /// `subject_offsets[s]..subject_offsets[s + 1]`.
    subject_offsets: Vec<u32>,
    subject_idx: Vec<u32>,
    t_start: Vec<f64>,
    t_end: Vec<f64>,
    delta: Vec<u8>,
    covariates: Vec<f64>,
    covariate_names: Vec<String>,
    num_covariates: usize,
}

/// One way a dataset fails its invariants.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("row {row}: t_start {t_start} is not finite or t_end {t_end} is not finite")]
    NonFiniteTime { row: usize, t_start: f64, t_end: f64 },
    #[error("row {row}: epoch ({t_start}, {t_end}] has non-positive duration")]
    NonPositiveDuration { row: usize, t_start: f64, t_end: f64 },
    #[error("row {row}: delta is {delta}, expected 0 or 1")]
    BadDelta { row: usize, delta: i64 },
    #[error("row {row}: covariate {index} is infinite (use an empty field for missing)")]
    InfiniteCovariate { row: usize, index: usize },
    #[error("row {row}: has {found} covariates, dataset has {expected}")]
    CovariateCountMismatch { row: usize, found: usize, expected: usize },
    #[error("subject {subject}: epochs overlap at rows {row} and {next_row} (t_end {t_end} > next t_start {next_t_start})")]
    OverlappingEpochs { subject: String, row: usize, next_row: usize, t_end: f64, next_t_start: f64 },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: missing required column {column:?}")]
    MissingColumn { path: String, column: String },
    #[error("{path} line {line}: cannot parse {column} value {value:?}")]
    Parse { path: String, line: u64, column: String, value: String },
    #[error("dataset is invalid: {0}")]
    Invalid(ValidationReport),
}

/// All violations found in one pass, displayed a few at a time.
#[derive(Debug, Clone)]
pub struct ValidationReport(pub Vec<Violation>);

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.0.len())?;
        for v in self.0.iter().take(5) {
            write!(f, "; {v}")?;
        }
        if self.0.len() > 5 {
            write!(f, "; ...")?;
        }
        Ok(())
    }
}

/// Column names used when reading a CSV file.
///
/// With `covariate_cols: None`, every column other than the four named ones
/// is a covariate, in header order.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub subject_col: String,
    pub t_start_col: String,
    pub t_end_col: String,
    pub delta_col: String,
    pub covariate_cols: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            subject_col: "subject".into(),
            t_start_col: "t_start".into(),
            t_end_col: "t_end".into(),
            delta_col: "delta".into(),
            covariate_cols: None,
        }
    }
}

impl Dataset {
    /// Builds a dataset from raw epochs, normalizing row order and checking
    /// every invariant. `covariate_names` must match the epochs' width.
    pub fn from_rows(rows: Vec<RawEpoch>, covariate_names: Vec<String>) -> Result<Dataset, DataError> {
        let ds = Self::from_rows_unchecked(rows, covariate_names);
        let violations = ds.validate();
        if violations.is_empty() {
            Ok(ds)
        } else {
            Err(DataError::Invalid(ValidationReport(violations)))
        }
    }

    /// Like [`Dataset::from_rows`] but skips validation. Row order is still
    /// normalized. Intended for data already known valid (e.g. simulator
    /// output) and for constructing deliberately broken datasets in tests.
    pub fn from_rows_unchecked(mut rows: Vec<RawEpoch>, covariate_names: Vec<String>) -> Dataset {
        rows.sort_by(|a, b| {
            (a.subject.as_str(), a.t_start, a.t_end)
                .partial_cmp(&(b.subject.as_str(), b.t_start, b.t_end))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let p = covariate_names.len();
        let n = rows.len();
        let mut ds = Dataset {
            subject_ids: Vec::new(),
            subject_offsets: vec![0],
            subject_idx: Vec::with_capacity(n),
            t_start: Vec::with_capacity(n),
            t_end: Vec::with_capacity(n),
            delta: Vec::with_capacity(n),
            covariates: Vec::with_capacity(n * p),
            covariate_names,
            num_covariates: p,
        };
        for row in rows {
            if ds.subject_ids.last().map(String::as_str) != Some(row.subject.as_str()) {
                ds.subject_ids.push(row.subject);
            }
            ds.subject_idx.push((ds.subject_ids.len() - 1) as u32);
            ds.t_start.push(row.t_start);
            ds.t_end.push(row.t_end);
            ds.delta.push(row.delta);
            // Tolerate ragged rows here; validate() reports them.
            let mut covs = row.covariates;
            covs.resize(p, f64::NAN);
            ds.covariates.extend_from_slice(&covs);
        }
        ds.subject_offsets = if ds.subject_ids.is_empty() {
            vec![0]
        } else {
            let mut offs = Vec::with_capacity(ds.subject_ids.len() + 1);
            offs.push(0u32);
            for (i, win) in ds.subject_idx.windows(2).enumerate() {
                if win[0] != win[1] {
                    offs.push((i + 1) as u32);
                }
            }
            offs.push(ds.subject_idx.len() as u32);
            offs
        };
        ds
    }

    /// Checks every invariant and returns all violations found (empty when
    /// the dataset is valid).
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let p = self.num_covariates;
        for i in 0..self.len() {
            let (a, b) = (self.t_start[i], self.t_end[i]);
            if !a.is_finite() || !b.is_finite() {
                out.push(Violation::NonFiniteTime { row: i, t_start: a, t_end: b });
            } else if a >= b {
                out.push(Violation::NonPositiveDuration { row: i, t_start: a, t_end: b });
            }
            if self.delta[i] > 1 {
                out.push(Violation::BadDelta { row: i, delta: self.delta[i] as i64 });
            }
            for k in 0..p {
                let x = self.covariates[i * p + k];
                if x.is_infinite() {
                    out.push(Violation::InfiniteCovariate { row: i, index: k });
                }
            }
        }
        // Epochs of one subject must not overlap; rows are sorted by t_start.
        for s in 0..self.subject_ids.len() {
            let r = self.subject_range(s);
            for i in r.start..r.end.saturating_sub(1) {
                if self.t_end[i] > self.t_start[i + 1] {
                    out.push(Violation::OverlappingEpochs {
                        subject: self.subject_ids[s].clone(),
                        row: i,
                        next_row: i + 1,
                        t_end: self.t_end[i],
                        next_t_start: self.t_start[i + 1],
                    });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.t_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    pub fn num_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    /// Index of the subject owning row `i`.
    pub fn subject_of_row(&self, i: usize) -> usize {
        self.subject_idx[i] as usize
    }

    /// Rows of subject `s` (by subject index), in time order.
    pub fn subject_range(&self, s: usize) -> Range<usize> {
        self.subject_offsets[s] as usize..self.subject_offsets[s + 1] as usize
    }

    pub fn row(&self, i: usize) -> EpochRow<'_> {
        let p = self.num_covariates;
        EpochRow {
            subject: &self.subject_ids[self.subject_idx[i] as usize],
            t_start: self.t_start[i],
            t_end: self.t_end[i],
            covariates: &self.covariates[i * p..(i + 1) * p],
            delta: self.delta[i],
        }
    }

    pub fn t_start(&self, i: usize) -> f64 {
        self.t_start[i]
    }

    pub fn t_end(&self, i: usize) -> f64 {
        self.t_end[i]
    }

    pub fn delta(&self, i: usize) -> u8 {
        self.delta[i]
    }

    /// Covariate `k` of row `i` (`NaN` = missing).
    pub fn covariate(&self, i: usize, k: usize) -> f64 {
        self.covariates[i * self.num_covariates + k]
    }

    pub fn covariates_of(&self, i: usize) -> &[f64] {
        let p = self.num_covariates;
        &self.covariates[i * p..(i + 1) * p]
    }

    /// Total at-risk time, the sum of epoch durations.
    pub fn total_at_risk_time(&self) -> f64 {
        self.t_start
            .iter()
            .zip(&self.t_end)
            .map(|(a, b)| b - a)
            .sum()
    }

    pub fn total_events(&self) -> u64 {
        self.delta.iter().map(|&d| d as u64).sum()
    }
}

/// Reads a dataset from CSV.
///
/// Expected header: subject, t_start, t_end, one column per covariate, delta
/// (names configurable through `schema`). Empty covariate fields are missing
/// values. The parsed rows are validated; any violation fails the load.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_open_error(&path_str, e))?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv { path: path_str.clone(), source: e })?
        .clone();

    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { path: path_str.clone(), column: name.into() })
    };
    let subject_i = find(&schema.subject_col)?;
    let t_start_i = find(&schema.t_start_col)?;
    let t_end_i = find(&schema.t_end_col)?;
    let delta_i = find(&schema.delta_col)?;

    let cov_cols: Vec<(usize, String)> = match &schema.covariate_cols {
        Some(names) => {
            let mut cols = Vec::with_capacity(names.len());
            for name in names {
                cols.push((find(name)?, name.clone()));
            }
            cols
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![subject_i, t_start_i, t_end_i, delta_i].contains(i))
            .map(|(i, h)| (i, h.to_string()))
            .collect(),
    };

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Csv { path: path_str.clone(), source: e })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let parse_f64 = |col: &str, raw: &str| -> Result<f64, DataError> {
            raw.trim().parse::<f64>().map_err(|_| DataError::Parse {
                path: path_str.clone(),
                line,
                column: col.into(),
                value: raw.into(),
            })
        };
        let t_start = parse_f64(&schema.t_start_col, field(t_start_i))?;
        let t_end = parse_f64(&schema.t_end_col, field(t_end_i))?;
        let delta_raw = field(delta_i).trim();
        let delta: u8 = match delta_raw {
            "0" => 0,
            "1" => 1,
            _ => {
                // Preserve the row count so the violation points at the
                // right place, then report through validation.
                let row = rows.len();
                return Err(DataError::Invalid(ValidationReport(vec![Violation::BadDelta {
                    row,
                    delta: delta_raw.parse::<i64>().unwrap_or(i64::MIN),
                }])));
            }
        };
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (i, name) in &cov_cols {
            let raw = field(*i).trim();
            covariates.push(if raw.is_empty() { f64::NAN } else { parse_f64(name, raw)? });
        }
        rows.push(RawEpoch {
            subject: field(subject_i).to_string(),
            t_start,
            t_end,
            covariates,
            delta,
        });
    }

    Dataset::from_rows(rows, cov_cols.into_iter().map(|(_, n)| n).collect())
}

fn csv_open_error(path: &str, e: csv::Error) -> DataError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => DataError::Io { path: path.into(), source: io },
            _ => unreachable!("is_io_error guarantees an Io kind"),
        }
    } else {
        DataError::Csv { path: path.into(), source: e }
    }
}

/// Writes a dataset as CSV with the standard header. Missing covariates
/// become empty fields; floats use the shortest representation that parses
/// back to the same value, so a write/reload round trip is exact.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let path_str = path.display().to_string();
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| csv_open_error(&path_str, e))?;
    let mut header = vec!["subject".to_string(), "t_start".into(), "t_end".into()];
    header.extend(dataset.covariate_names.iter().cloned());
    header.push("delta".into());
    writer
        .write_record(&header)
        .map_err(|e| DataError::Csv { path: path_str.clone(), source: e })?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..dataset.len() {
        let row = dataset.row(i);
        record.clear();
        record.push(row.subject.to_string());
        record.push(format!("{}", row.t_start));
        record.push(format!("{}", row.t_end));
        for &x in row.covariates {
            record.push(if x.is_nan() { String::new() } else { format!("{x}") });
        }
        record.push(format!("{}", row.delta));
        writer
            .write_record(&record)
            .map_err(|e| DataError::Csv { path: path_str.clone(), source: e })?;
    }
    writer
        .flush()
        .map_err(|e| DataError::Io { path: path_str, source: e })?;
    Ok(())
}
