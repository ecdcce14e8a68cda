//! Reduction of epoch data to quadrature-free boosting rows.
//!
//! Training needs integrals of `exp(F)` over each subject's at-risk time.
//! Because the ensemble `F` is piecewise constant on grid cells, those
//! integrals collapse to finite weighted sums once every epoch is confined to
//! a single time cell. That is what preprocessing does:
//!
//! 1. [`split_epochs`] — cut each epoch at the candidate time points in its
//!    interior, so no piece straddles a cell boundary. The event indicator
//!    stays with the piece ending at the original epoch end.
//! 2. [`to_weighted_rows`] — replace `(t_start, t_end]` by `t_start` and the
//!    duration `w = t_end - t_start`.
//! 3. + 4. [`bin_values`] — replace covariate values and epoch starts by
//!    their grid-cell codes.
//!
//! [`preprocess`] composes the three steps in one streaming pass (covariates
//! are binned once per input row instead of once per piece, and no
//! intermediate dataset is materialized). The result is columnar and, after
//! this point, training never touches a raw value again.
//!
//! Weights and event counts are conserved by construction: durations
//! telescope and each delta lands in exactly one output row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::codes::{CodeColumn, MISSING_CODE};
use crate::data::{Dataset, RawEpoch};
use crate::quantiles::{CandidateGrid, GridError, QuantileMode};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("dataset has {dataset} covariates but grid has {grid}")]
    CovariateMismatch { dataset: usize, grid: usize },
    #[error("failed to {action} {path}: {source}")]
    Io { action: &'static str, path: String, source: std::io::Error },
    #[error("{path} is not a preprocessed data file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported format version {got} (supported: {supported})")]
    BadVersion { path: String, got: u32, supported: u32 },
    #[error("{path} is truncated or corrupt: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("{path}: {source}")]
    BadGrid { path: String, source: GridError },
}

/// Epochs after splitting (step 2): start point, duration, raw covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedRows {
    pub subject_ids: Vec<String>,
    pub subject_idx: Vec<u32>,
    pub t_start: Vec<f64>,
    pub weight: Vec<f64>,
    /// Row-major, `num_covariates` per row, `NaN` = missing.
    pub covariates: Vec<f64>,
    pub delta: Vec<u8>,
    pub covariate_names: Vec<String>,
    pub num_covariates: usize,
}

impl WeightedRows {
    pub fn len(&self) -> usize {
        self.t_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_start.is_empty()
    }
}

/// Fully binned training data: one row per epoch piece, all values replaced
/// by grid-cell codes, stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedData {
    pub(crate) subject_ids: Vec<String>,
    pub(crate) subject_idx: Vec<u32>,
    pub(crate) t_codes: CodeColumn,
    pub(crate) weights: Vec<f64>,
    pub(crate) cov_codes: Vec<CodeColumn>,
    pub(crate) deltas: Vec<u8>,
    pub(crate) covariate_names: Vec<String>,
    pub(crate) grid: CandidateGrid,
    pub(crate) total_weight: f64,
    pub(crate) total_events: u64,
    /// Rows whose time or covariate value exceeded the largest candidate on
    /// its axis and was clamped to the top cell. Always 0 when the grid was
    /// built from the same data; worth a warning otherwise.
    pub(crate) clamped_above: u64,
}

impl PreprocessedData {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn num_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn num_covariates(&self) -> usize {
        self.cov_codes.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn grid(&self) -> &CandidateGrid {
        &self.grid
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn total_events(&self) -> u64 {
        self.total_events
    }

    pub fn clamped_above(&self) -> u64 {
        self.clamped_above
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn subject_of_row(&self, i: usize) -> usize {
        self.subject_idx[i] as usize
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn delta(&self, i: usize) -> u8 {
        self.deltas[i]
    }

    pub fn deltas(&self) -> &[u8] {
        &self.deltas
    }

    /// Shifted time-cell code of row `i`.
    pub fn t_code(&self, i: usize) -> u16 {
        self.t_codes.get(i)
    }

    /// Shifted cell code of covariate `k` in row `i` ([`MISSING_CODE`] when
    /// missing).
    pub fn cov_code(&self, i: usize, k: usize) -> u16 {
        self.cov_codes[k].get(i)
    }

    /// Code column for an axis (0 = time, `k >= 1` = covariate `k - 1`).
    pub fn axis_codes(&self, axis: usize) -> &CodeColumn {
        if axis == 0 {
            &self.t_codes
        } else {
            &self.cov_codes[axis - 1]
        }
    }

    pub fn num_axes(&self) -> usize {
        1 + self.cov_codes.len()
    }

    /// Restriction to the subjects with `keep[subject] == true`. Subject
    /// indices are renumbered compactly; totals are recomputed.
    pub fn subset_by_subjects(&self, keep: &[bool]) -> PreprocessedData {
        assert_eq!(keep.len(), self.num_subjects());
        let mut new_id_of = vec![u32::MAX; keep.len()];
        let mut subject_ids = Vec::new();
        for (s, &k) in keep.iter().enumerate() {
            if k {
                new_id_of[s] = subject_ids.len() as u32;
                subject_ids.push(self.subject_ids[s].clone());
            }
        }
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| keep[self.subject_idx[i] as usize])
            .collect();
        let subject_idx: Vec<u32> = rows.iter().map(|&i| new_id_of[self.subject_idx[i] as usize]).collect();
        let weights: Vec<f64> = rows.iter().map(|&i| self.weights[i]).collect();
        let deltas: Vec<u8> = rows.iter().map(|&i| self.deltas[i]).collect();
        let total_weight = weights.iter().sum();
        let total_events = deltas.iter().map(|&d| d as u64).sum();
        PreprocessedData {
            subject_ids,
            subject_idx,
            t_codes: self.t_codes.take(&rows),
            weights,
            cov_codes: self.cov_codes.iter().map(|c| c.take(&rows)).collect(),
            deltas,
            covariate_names: self.covariate_names.clone(),
            grid: self.grid.clone(),
            total_weight,
            total_events,
            clamped_above: self.clamped_above,
        }
    }
}

/// Splits every epoch at the candidate time points strictly inside it, so
/// that each output epoch lies within one time cell. An epoch containing `k`
/// candidates becomes `k + 1` epochs; the event indicator moves to the piece
/// ending at the original epoch end, all earlier pieces get delta 0.
pub fn split_epochs(dataset: &Dataset, grid: &CandidateGrid) -> Dataset {
    let cands = grid.time_splits();
    let mut out = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let row = dataset.row(i);
        let (a, b) = (row.t_start, row.t_end);
        let lo = cands.partition_point(|&c| c <= a);
        let hi = cands.partition_point(|&c| c < b);
        let mut prev = a;
        for &c in &cands[lo..hi] {
            out.push(RawEpoch {
                subject: row.subject.to_string(),
                t_start: prev,
                t_end: c,
                covariates: row.covariates.to_vec(),
                delta: 0,
            });
            prev = c;
        }
        out.push(RawEpoch {
            subject: row.subject.to_string(),
            t_start: prev,
            t_end: b,
            covariates: row.covariates.to_vec(),
            delta: row.delta,
        });
    }
    Dataset::from_rows_unchecked(out, dataset.covariate_names().to_vec())
}

/// Replaces each epoch `(t_start, t_end]` by its start point and duration
/// weight `w = t_end - t_start`. Expects input that already passed through
/// [`split_epochs`]; row order is preserved.
pub fn to_weighted_rows(dataset: &Dataset) -> WeightedRows {
    let n = dataset.len();
    let p = dataset.num_covariates();
    let mut rows = WeightedRows {
        subject_ids: dataset.subject_ids().to_vec(),
        subject_idx: Vec::with_capacity(n),
        t_start: Vec::with_capacity(n),
        weight: Vec::with_capacity(n),
        covariates: Vec::with_capacity(n * p),
        delta: Vec::with_capacity(n),
        covariate_names: dataset.covariate_names().to_vec(),
        num_covariates: p,
    };
    for i in 0..n {
        rows.subject_idx.push(dataset.subject_of_row(i) as u32);
        rows.t_start.push(dataset.t_start(i));
        rows.weight.push(dataset.t_end(i) - dataset.t_start(i));
        rows.covariates.extend_from_slice(dataset.covariates_of(i));
        rows.delta.push(dataset.delta(i));
    }
    rows
}

/// Replaces raw values by grid-cell codes (steps 3 and 4).
///
/// Covariates use the left-open cell rule of
/// [`CandidateGrid::bin_covariate`]; epoch starts use
/// [`CandidateGrid::bin_time_start`], under which a start equal to a
/// candidate keeps that candidate's cell. Missing covariates pass through as
/// [`MISSING_CODE`]. Values above an axis's largest candidate land in the top
/// cell and are counted in `clamped_above`.
pub fn bin_values(rows: &WeightedRows, grid: &CandidateGrid) -> Result<PreprocessedData, PreprocessError> {
    let p = rows.num_covariates;
    if grid.num_covariates() != p {
        return Err(PreprocessError::CovariateMismatch { dataset: p, grid: grid.num_covariates() });
    }
    let n = rows.len();
    let mut t_codes = CodeColumn::new(grid.time_splits().len());
    let mut cov_codes: Vec<CodeColumn> =
        (0..p).map(|k| CodeColumn::new(grid.cov_splits(k).len())).collect();
    let mut clamped_above = 0u64;
    let t_max = grid.time_splits().last().copied();
    for i in 0..n {
        let t = rows.t_start[i];
        t_codes.push(grid.bin_time_start(t));
        if t_max.is_some_and(|m| t > m) {
            clamped_above += 1;
        }
        for k in 0..p {
            let x = rows.covariates[i * p + k];
            cov_codes[k].push(grid.bin_covariate(k, x));
            if !x.is_nan() && grid.cov_splits(k).last().is_some_and(|&m| x > m) {
                clamped_above += 1;
            }
        }
    }
    let total_weight = rows.weight.iter().sum();
    let total_events = rows.delta.iter().map(|&d| d as u64).sum();
    Ok(PreprocessedData {
        subject_ids: rows.subject_ids.clone(),
        subject_idx: rows.subject_idx.clone(),
        t_codes,
        weights: rows.weight.clone(),
        cov_codes,
        deltas: rows.delta.clone(),
        covariate_names: rows.covariate_names.clone(),
        grid: grid.clone(),
        total_weight,
        total_events,
        clamped_above,
    })
}

/// Runs the whole reduction — split, weight, bin — in one streaming pass.
///
/// Produces exactly the same rows as composing [`split_epochs`],
/// [`to_weighted_rows`] and [`bin_values`], but bins covariates once per
/// input epoch (every piece shares them) and never materializes the
/// intermediate datasets, which matters at millions of rows.
pub fn preprocess(dataset: &Dataset, grid: &CandidateGrid) -> Result<PreprocessedData, PreprocessError> {
    let p = dataset.num_covariates();
    if grid.num_covariates() != p {
        return Err(PreprocessError::CovariateMismatch { dataset: p, grid: grid.num_covariates() });
    }
    let n = dataset.len();
    let cands = grid.time_splits();
    let t_max = cands.last().copied();
    // Counting pass: each epoch becomes `hi - lo + 1` pieces. Sizing the
    // columns exactly up front avoids reallocation copies, which dominate
    // at tens of millions of output rows.
    let mut spans = Vec::with_capacity(n);
    let mut out_rows = 0usize;
    for i in 0..n {
        let lo = cands.partition_point(|&c| c <= dataset.t_start(i));
        let hi = cands.partition_point(|&c| c < dataset.t_end(i));
        spans.push((lo as u32, hi as u32));
        out_rows += hi - lo + 1;
    }
    let mut t_codes = CodeColumn::new(cands.len());
    t_codes.reserve(out_rows);
    let mut weights = Vec::with_capacity(out_rows);
    let mut cov_codes: Vec<CodeColumn> = (0..p)
        .map(|k| {
            let mut col = CodeColumn::new(grid.cov_splits(k).len());
            col.reserve(out_rows);
            col
        })
        .collect();
    let mut deltas = Vec::with_capacity(out_rows);
    let mut subject_idx = Vec::with_capacity(out_rows);
    let mut clamped_above = 0u64;
    let mut row_codes = vec![0u16; p];
    for i in 0..n {
        let (a, b) = (dataset.t_start(i), dataset.t_end(i));
        let covs = dataset.covariates_of(i);
        let mut row_clamps = 0u64;
        for k in 0..p {
            let x = covs[k];
            row_codes[k] = grid.bin_covariate(k, x);
            if !x.is_nan() && grid.cov_splits(k).last().is_some_and(|&m| x > m) {
                row_clamps += 1;
            }
        }
        if t_max.is_some_and(|m| a > m) {
            clamped_above += 1;
        }
        let (lo, hi) = (spans[i].0 as usize, spans[i].1 as usize);
        // The counter is per output row: every piece inherits the epoch's
        // covariates, so each repeats its clamps.
        clamped_above += row_clamps * (hi - lo + 1) as u64;
        let subject = dataset.subject_of_row(i) as u32;
        let mut prev = a;
        // Pieces fall in consecutive cells: the first keeps the start's own
        // code `lo`, each later piece starts exactly at a candidate.
        for (j, &c) in cands[lo..hi].iter().enumerate() {
            t_codes.push((lo + j) as u16);
            weights.push(c - prev);
            deltas.push(0);
            subject_idx.push(subject);
            for (k, col) in cov_codes.iter_mut().enumerate() {
                col.push(row_codes[k]);
            }
            prev = c;
        }
        t_codes.push(hi as u16);
        weights.push(b - prev);
        deltas.push(dataset.delta(i));
        subject_idx.push(subject);
        for (k, col) in cov_codes.iter_mut().enumerate() {
            col.push(row_codes[k]);
        }
    }
    let total_weight = weights.iter().sum();
    let total_events = deltas.iter().map(|&d| d as u64).sum();
    Ok(PreprocessedData {
        subject_ids: dataset.subject_ids().to_vec(),
        subject_idx,
        t_codes,
        weights,
        cov_codes,
        deltas,
        covariate_names: dataset.covariate_names().to_vec(),
        grid: grid.clone(),
        total_weight,
        total_events,
        clamped_above,
    })
}

/// A prediction query point after grid remapping.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedQuery {
    pub time_code: u16,
    pub cov_codes: Vec<u16>,
    /// Axes on which the query exceeded the largest candidate and was
    /// clamped into the top cell.
    pub clamped_axes: u32,
}

/// Maps a query point `(t, x)` onto grid-cell codes using the same boundary
/// conventions as training: cells are left-open, so a value exactly at a
/// candidate belongs to the cell ending there, and values at or below an
/// axis minimum get the below-minimum code. Missing covariates (`NaN`) get
/// [`MISSING_CODE`].
pub fn remap_query(grid: &CandidateGrid, t: f64, x: &[f64]) -> BinnedQuery {
    let mut clamped = 0u32;
    if grid.time_splits().last().is_some_and(|&m| t > m) {
        clamped += 1;
    }
    let cov_codes = x
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if !v.is_nan() && grid.cov_splits(k).last().is_some_and(|&m| v > m) {
                clamped += 1;
            }
            grid.bin_covariate(k, v)
        })
        .collect();
    BinnedQuery { time_code: grid.bin_time_query(t), cov_codes, clamped_axes: clamped }
}

const MAGIC: &[u8; 8] = b"HZBPREP\0";
const FORMAT_VERSION: u32 = 1;

/// Writes `data` to a columnar binary file (little-endian throughout):
/// header, grid arrays, subject table, then one block per column with delta
/// flags packed as bits.
pub fn save_preprocessed(data: &PreprocessedData, path: &Path) -> Result<(), PreprocessError> {
    let path_str = path.display().to_string();
    let io_err = |source| PreprocessError::Io { action: "write", path: path_str.clone(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(data.num_covariates() as u32)?;
        w.write_u32::<LittleEndian>(data.grid.max_bins() as u32)?;
        w.write_u8(match data.grid.mode() {
            QuantileMode::Raw => 0,
            QuantileMode::Weighted => 1,
        })?;
        w.write_u64::<LittleEndian>(data.num_subjects() as u64)?;
        w.write_u64::<LittleEndian>(data.len() as u64)?;
        w.write_u64::<LittleEndian>(data.total_events)?;
        w.write_f64::<LittleEndian>(data.total_weight)?;
        w.write_u64::<LittleEndian>(data.clamped_above)?;
        for axis in 0..data.grid.num_axes() {
            let splits = data.grid.axis_splits(axis);
            w.write_u32::<LittleEndian>(splits.len() as u32)?;
            for &v in splits {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        for name in &data.covariate_names {
            let bytes = name.as_bytes();
            w.write_u16::<LittleEndian>(bytes.len() as u16)?;
            w.write_all(bytes)?;
        }
        for id in &data.subject_ids {
            let bytes = id.as_bytes();
            w.write_u16::<LittleEndian>(bytes.len() as u16)?;
            w.write_all(bytes)?;
        }
        for &s in &data.subject_idx {
            w.write_u32::<LittleEndian>(s)?;
        }
        write_code_column(&mut w, &data.t_codes)?;
        for &v in &data.weights {
            w.write_f64::<LittleEndian>(v)?;
        }
        for col in &data.cov_codes {
            write_code_column(&mut w, col)?;
        }
        let mut byte = 0u8;
        for (i, &d) in data.deltas.iter().enumerate() {
            byte |= d << (i % 8);
            if i % 8 == 7 {
                w.write_u8(byte)?;
                byte = 0;
            }
        }
        if data.deltas.len() % 8 != 0 {
            w.write_u8(byte)?;
        }
        w.flush()
    })()
    .map_err(io_err)
}

fn write_code_column<W: Write>(w: &mut W, col: &CodeColumn) -> std::io::Result<()> {
    w.write_u8(col.width())?;
    match col {
        CodeColumn::U8(v) => w.write_all(v),
        CodeColumn::U16(v) => {
            for &c in v {
                w.write_u16::<LittleEndian>(c)?;
            }
            Ok(())
        }
    }
}

/// Reads a file written by [`save_preprocessed`], checking magic, version,
/// code ranges, and stored-vs-recomputed totals. Truncation anywhere
/// surfaces as a corrupt-file error rather than a panic or garbage data.
pub fn load_preprocessed(path: &Path) -> Result<PreprocessedData, PreprocessError> {
    let path_str = path.display().to_string();
    let file = File::open(path)
        .map_err(|source| PreprocessError::Io { action: "open", path: path_str.clone(), source })?;
    let mut r = BufReader::new(file);
    let corrupt = |reason: &str| PreprocessError::Corrupt { path: path_str.clone(), reason: reason.into() };
    let map_io = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            PreprocessError::Corrupt { path: path_str.clone(), reason: "unexpected end of file".into() }
        } else {
            PreprocessError::Io { action: "read", path: path_str.clone(), source: e }
        }
    };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(map_io)?;
    if &magic != MAGIC {
        return Err(PreprocessError::BadMagic { path: path_str.clone() });
    }
    let version = r.read_u32::<LittleEndian>().map_err(map_io)?;
    if version != FORMAT_VERSION {
        return Err(PreprocessError::BadVersion { path: path_str.clone(), got: version, supported: FORMAT_VERSION });
    }
    let p = r.read_u32::<LittleEndian>().map_err(map_io)? as usize;
    let max_bins = r.read_u32::<LittleEndian>().map_err(map_io)? as usize;
    let mode = match r.read_u8().map_err(map_io)? {
        0 => QuantileMode::Raw,
        1 => QuantileMode::Weighted,
        m => return Err(corrupt(&format!("unknown quantile mode {m}"))),
    };
    let num_subjects = r.read_u64::<LittleEndian>().map_err(map_io)? as usize;
    let num_rows = r.read_u64::<LittleEndian>().map_err(map_io)? as usize;
    let total_events = r.read_u64::<LittleEndian>().map_err(map_io)?;
    let total_weight = r.read_f64::<LittleEndian>().map_err(map_io)?;
    let clamped_above = r.read_u64::<LittleEndian>().map_err(map_io)?;

    let mut read_axis = || -> Result<Vec<f64>, PreprocessError> {
        let len = r.read_u32::<LittleEndian>().map_err(map_io)? as usize;
        if len > max_bins {
            return Err(corrupt("axis has more candidates than max_bins"));
        }
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(r.read_f64::<LittleEndian>().map_err(map_io)?);
        }
        Ok(v)
    };
    let time_splits = read_axis()?;
    let mut cov_splits = Vec::with_capacity(p);
    for _ in 0..p {
        cov_splits.push(read_axis()?);
    }
    let grid = CandidateGrid::from_parts(time_splits, cov_splits, mode, max_bins)
        .map_err(|source| PreprocessError::BadGrid { path: path_str.clone(), source })?;

    let mut covariate_names = Vec::with_capacity(p);
    for _ in 0..p {
        let len = r.read_u16::<LittleEndian>().map_err(map_io)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(map_io)?;
        covariate_names
            .push(String::from_utf8(buf).map_err(|_| corrupt("covariate name is not utf-8"))?);
    }
    let mut subject_ids = Vec::with_capacity(num_subjects);
    for _ in 0..num_subjects {
        let len = r.read_u16::<LittleEndian>().map_err(map_io)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(map_io)?;
        subject_ids.push(String::from_utf8(buf).map_err(|_| corrupt("subject id is not utf-8"))?);
    }
    let mut subject_idx = Vec::with_capacity(num_rows);
    for _ in 0..num_rows {
        let s = r.read_u32::<LittleEndian>().map_err(map_io)?;
        if s as usize >= num_subjects {
            return Err(corrupt("subject index out of range"));
        }
        subject_idx.push(s);
    }
    let t_codes = read_code_column(&mut r, num_rows, grid.time_splits().len(), &map_io, &corrupt)?;
    let mut weights = Vec::with_capacity(num_rows);
    for _ in 0..num_rows {
        weights.push(r.read_f64::<LittleEndian>().map_err(map_io)?);
    }
    let mut cov_codes = Vec::with_capacity(p);
    for k in 0..p {
        cov_codes.push(read_code_column(&mut r, num_rows, grid.cov_splits(k).len(), &map_io, &corrupt)?);
    }
    let mut deltas = Vec::with_capacity(num_rows);
    let mut byte = 0u8;
    for i in 0..num_rows {
        if i % 8 == 0 {
            byte = r.read_u8().map_err(map_io)?;
        }
        deltas.push((byte >> (i % 8)) & 1);
    }

    let recomputed_weight: f64 = weights.iter().sum();
    if recomputed_weight.to_bits() != total_weight.to_bits() {
        return Err(corrupt("stored total weight does not match the weight column"));
    }
    let recomputed_events: u64 = deltas.iter().map(|&d| d as u64).sum();
    if recomputed_events != total_events {
        return Err(corrupt("stored event count does not match the delta column"));
    }
    Ok(PreprocessedData {
        subject_ids,
        subject_idx,
        t_codes,
        weights,
        cov_codes,
        deltas,
        covariate_names,
        grid,
        total_weight,
        total_events,
        clamped_above,
    })
}

fn read_code_column(
    r: &mut impl Read,
    num_rows: usize,
    num_candidates: usize,
    map_io: &impl Fn(std::io::Error) -> PreprocessError,
    corrupt: &impl Fn(&str) -> PreprocessError,
) -> Result<CodeColumn, PreprocessError> {
    let width = r.read_u8().map_err(map_io)?;
    let max_code = num_candidates as u16;
    let col = match width {
        1 => {
            let mut v = vec![0u8; num_rows];
            r.read_exact(&mut v).map_err(map_io)?;
            CodeColumn::U8(v)
        }
        2 => {
            let mut v = Vec::with_capacity(num_rows);
            for _ in 0..num_rows {
                v.push(r.read_u16::<LittleEndian>().map_err(map_io)?);
            }
            CodeColumn::U16(v)
        }
        w => return Err(corrupt(&format!("unknown code width {w}"))),
    };
    for i in 0..num_rows {
        let c = col.get(i);
        if c != MISSING_CODE && c > max_code {
            return Err(corrupt("bin code out of range for its axis"));
        }
    }
    Ok(col)
}
