//! Per-axis candidate split grids.
//!
//! Tree splits are only ever placed at a fixed set of at most 256 candidate
//! points per axis (time is axis 0, covariates follow). Candidates are always
//! values observed in the data, chosen either as evenly spaced ranks of the
//! unique values ([`QuantileMode::Raw`]) or as quantiles weighted by epoch
//! duration ([`QuantileMode::Weighted`]) — a subject that spends twice as
//! long at a covariate value counts twice as much toward its quantile.
//!
//! The grid also fixes the bin-code semantics used everywhere downstream:
//! candidates `c_0 < c_1 < ... < c_{B-1}` carve an axis into cells
//! `(-inf, c_0], (c_0, c_1], ..., (c_{B-1}, inf)`, identified by shifted
//! codes `0..=B` (0 is the below-minimum cell). The binning methods document
//! the exact open/closed conventions, which differ between epoch starts and
//! query points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::MISSING_CODE;
use crate::data::Dataset;

/// Maximum candidate split points per axis; keeps bin codes byte-sized on
/// most axes and bounds split-search work per node.
pub const MAX_BINS_LIMIT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMode {
    /// Quantiles of the set of unique observed values.
    Raw,
    /// Quantiles weighted by epoch duration.
    Weighted,
}

/// An axis of the (time, covariates) domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Time,
    Covariate(usize),
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot build a grid from an empty dataset")]
    EmptyDataset,
    #[error("max_bins is {got}, must be in 1..={MAX_BINS_LIMIT}")]
    BadMaxBins { got: usize },
    #[error("axis {axis} candidates must be finite and strictly increasing")]
    BadCandidates { axis: usize },
}

/// Immutable per-axis candidate split points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    time_splits: Vec<f64>,
    cov_splits: Vec<Vec<f64>>,
    mode: QuantileMode,
    max_bins: usize,
}

impl CandidateGrid {
    /// Assembles a grid from explicit candidate lists, checking that each is
    /// finite and strictly increasing. Used when deserializing models.
    pub fn from_parts(
        time_splits: Vec<f64>,
        cov_splits: Vec<Vec<f64>>,
        mode: QuantileMode,
        max_bins: usize,
    ) -> Result<CandidateGrid, GridError> {
        if !(1..=MAX_BINS_LIMIT).contains(&max_bins) {
            return Err(GridError::BadMaxBins { got: max_bins });
        }
        let check = |axis: usize, splits: &[f64]| -> Result<(), GridError> {
            let ok = splits.iter().all(|v| v.is_finite())
                && splits.windows(2).all(|w| w[0] < w[1])
                && splits.len() <= max_bins;
            if ok {
                Ok(())
            } else {
                Err(GridError::BadCandidates { axis })
            }
        };
        check(0, &time_splits)?;
        for (k, splits) in cov_splits.iter().enumerate() {
            check(k + 1, splits)?;
        }
        Ok(CandidateGrid { time_splits, cov_splits, mode, max_bins })
    }

    pub fn time_splits(&self) -> &[f64] {
        &self.time_splits
    }

    /// Candidate split points for covariate `k`. Empty when the covariate
    /// has no observed (non-missing) values.
    pub fn cov_splits(&self, k: usize) -> &[f64] {
        &self.cov_splits[k]
    }

    pub fn num_covariates(&self) -> usize {
        self.cov_splits.len()
    }

    /// Total axes: time plus covariates.
    pub fn num_axes(&self) -> usize {
        1 + self.cov_splits.len()
    }

    /// Candidates on `axis` (0 = time).
    pub fn axis_splits(&self, axis: usize) -> &[f64] {
        if axis == 0 {
            &self.time_splits
        } else {
            &self.cov_splits[axis - 1]
        }
    }

    pub fn mode(&self) -> QuantileMode {
        self.mode
    }

    pub fn max_bins(&self) -> usize {
        self.max_bins
    }

    /// Shifted bin code for the *start* of an epoch `(t, _]`.
    ///
    /// An epoch starting exactly at a candidate lies in the cell to its
    /// right, so this counts candidates `<= t`: starts in `[c_j, c_{j+1})`
    /// map to code `j + 1` and starts below every candidate map to 0.
    #[inline]
    pub fn bin_time_start(&self, t: f64) -> u16 {
        self.time_splits.partition_point(|&c| c <= t) as u16
    }

    /// Shifted bin code for a *point* in time.
    ///
    /// A point `t` belongs to the cell `(c_{j-1}, c_j]` that contains it, so
    /// this counts candidates `< t`. Note the asymmetry with
    /// [`Self::bin_time_start`]: a query at exactly `c_j` falls in the cell
    /// ending at `c_j`, while an epoch starting at `c_j` extends into the
    /// next cell.
    #[inline]
    pub fn bin_time_query(&self, t: f64) -> u16 {
        self.time_splits.partition_point(|&c| c < t) as u16
    }

    /// Shifted bin code for covariate `k` at value `x`; `NaN` maps to
    /// [`MISSING_CODE`]. Counts candidates `< x`: values at or below the
    /// smallest candidate get the below-minimum code 0, `x` in
    /// `(c_{j-1}, c_j]` gets code `j`, and values above the largest candidate
    /// get the top cell. The same rule applies to training rows and queries.
    #[inline]
    pub fn bin_covariate(&self, k: usize, x: f64) -> u16 {
        if x.is_nan() {
            return MISSING_CODE;
        }
        self.cov_splits[k].partition_point(|&c| c < x) as u16
    }
}

/// Builds the candidate grid for every axis of `dataset`.
///
/// Raw mode takes evenly spaced ranks of the unique values per axis (time
/// uses both epoch starts and ends). Weighted mode takes, for each target
/// fraction `j/max_bins`, the smallest observed value whose duration-weighted
/// quantile reaches the target; the time axis weights epoch *end* points by
/// their epoch durations. Missing covariate values carry no weight and can
/// never become candidates. Either way, candidates are actual data values.
pub fn build_grid(
    dataset: &Dataset,
    max_bins: usize,
    mode: QuantileMode,
) -> Result<CandidateGrid, GridError> {
    if dataset.is_empty() {
        return Err(GridError::EmptyDataset);
    }
    if !(1..=MAX_BINS_LIMIT).contains(&max_bins) {
        return Err(GridError::BadMaxBins { got: max_bins });
    }
    let n = dataset.len();
    let time_splits = match mode {
        QuantileMode::Raw => {
            let mut vals = Vec::with_capacity(2 * n);
            for i in 0..n {
                vals.push(dataset.t_start(i));
                vals.push(dataset.t_end(i));
            }
            raw_candidates(vals, max_bins)
        }
        QuantileMode::Weighted => {
            let pairs = (0..n)
                .map(|i| (dataset.t_end(i), dataset.t_end(i) - dataset.t_start(i)))
                .collect();
            weighted_candidates(pairs, max_bins)
        }
    };
    let cov_splits = (0..dataset.num_covariates())
        .map(|k| {
            match mode {
                QuantileMode::Raw => {
                    let vals = (0..n)
                        .map(|i| dataset.covariate(i, k))
                        .filter(|x| !x.is_nan())
                        .collect();
                    raw_candidates(vals, max_bins)
                }
                QuantileMode::Weighted => {
                    let pairs = (0..n)
                        .filter(|&i| !dataset.covariate(i, k).is_nan())
                        .map(|i| (dataset.covariate(i, k), dataset.t_end(i) - dataset.t_start(i)))
                        .collect();
                    weighted_candidates(pairs, max_bins)
                }
            }
        })
        .collect();
    Ok(CandidateGrid { time_splits, cov_splits, mode, max_bins })
}

/// Evenly spaced ranks of the unique values: with `U` uniques, takes the
/// values at indices `ceil(j*U/bins) - 1` for `j = 1..=bins`. Hits every
/// unique when `U <= bins` and always includes the maximum.
fn raw_candidates(mut vals: Vec<f64>, bins: usize) -> Vec<f64> {
    vals.sort_unstable_by(f64::total_cmp);
    vals.dedup();
    let u = vals.len();
    if u <= bins {
        return vals;
    }
    let mut out = Vec::with_capacity(bins);
    let mut prev = usize::MAX;
    for j in 1..=bins {
        let idx = (j * u).div_ceil(bins) - 1;
        if idx != prev {
            out.push(vals[idx]);
            prev = idx;
        }
    }
    out
}

/// Smallest observed value reaching each weighted-quantile target
/// `j/bins`, duplicates collapsed. The cumulative weight of the largest
/// value equals the total by construction, so the maximum is always chosen.
fn weighted_candidates(mut pairs: Vec<(f64, f64)>, bins: usize) -> Vec<f64> {
    if pairs.is_empty() {
        return Vec::new();
    }
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|&(_, w)| w).sum();
    let bins_f = bins as f64;
    let mut out = Vec::new();
    let mut cum = 0.0;
    let mut j = 1usize;
    let mut i = 0usize;
    while i < pairs.len() && j <= bins {
        let v = pairs[i].0;
        // Fold in the whole run of rows sharing this value.
        while i < pairs.len() && pairs[i].0 == v {
            cum += pairs[i].1;
            i += 1;
        }
        // `cum * bins >= j * total` is `cum/total >= j/bins` without the
        // double rounding of two divisions.
        let mut reached = false;
        while j <= bins && cum * bins_f >= j as f64 * total {
            j += 1;
            reached = true;
        }
        if reached {
            out.push(v);
        }
    }
    out
}

/// Duration-weighted quantile of `x` on one axis of `dataset`.
///
/// For covariate `k` this is the fraction of total at-risk time spent in
/// epochs with covariate value `<= x` (epochs where `k` is missing are
/// excluded from both sides of the fraction). For the time axis it is the
/// fraction of at-risk time belonging to epochs that *end* by `t`, a step
/// function jumping only at observed epoch ends.
pub fn weighted_quantile(dataset: &Dataset, axis: Axis, x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..dataset.len() {
        let dur = dataset.t_end(i) - dataset.t_start(i);
        match axis {
            Axis::Time => {
                den += dur;
                if dataset.t_end(i) <= x {
                    num += dur;
                }
            }
            Axis::Covariate(k) => {
                let v = dataset.covariate(i, k);
                if v.is_nan() {
                    continue;
                }
                den += dur;
                if v <= x {
                    num += dur;
                }
            }
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawEpoch;

    fn dataset(rows: &[(&str, f64, f64, f64, u8)]) -> Dataset {
        Dataset::from_rows(
            rows.iter()
                .map(|&(s, a, b, x, d)| RawEpoch {
                    subject: s.into(),
                    t_start: a,
                    t_end: b,
                    covariates: vec![x],
                    delta: d,
                })
                .collect(),
            vec!["x1".into()],
        )
        .unwrap()
    }

    /// The worked example after epoch splitting: two subjects, six epochs,
    /// total duration 0.38.
    fn middle_table() -> Dataset {
        dataset(&[
            ("1", 0.01, 0.10, 0.27, 0),
            ("1", 0.10, 0.13, 0.27, 1),
            ("1", 0.15, 0.25, 0.51, 0),
            ("2", 0.06, 0.10, 0.81, 1),
            ("2", 0.13, 0.15, 0.92, 0),
            ("2", 0.15, 0.25, 0.92, 0),
        ])
    }

    #[test]
    fn duration_weighted_covariate_quantile() {
        // One subject: x=1.3 for (0,2], x=2 for (2,3]. Time spent at 1.3 is
        // twice the time spent at 2.
        let ds = dataset(&[("s", 0.0, 2.0, 1.3, 0), ("s", 2.0, 3.0, 2.0, 1)]);
        assert!((weighted_quantile(&ds, Axis::Covariate(0), 1.3) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(weighted_quantile(&ds, Axis::Covariate(0), 2.0), 1.0);
        assert_eq!(weighted_quantile(&ds, Axis::Covariate(0), 1.0), 0.0);
    }

    #[test]
    fn time_quantile_counts_epochs_ending_by_t() {
        let ds = middle_table();
        let expected = (0.09 + 0.04) / 0.38;
        assert!((weighted_quantile(&ds, Axis::Time, 0.10) - expected).abs() < 1e-12);
        assert_eq!(weighted_quantile(&ds, Axis::Time, 0.25), 1.0);
    }

    #[test]
    fn raw_keeps_all_uniques_when_few() {
        let ds = dataset(&[
            ("a", 0.0, 1.0, 5.0, 0),
            ("b", 0.0, 1.0, 3.0, 0),
            ("c", 0.0, 1.0, 4.0, 1),
            ("d", 0.0, 1.0, 1.0, 0),
            ("e", 0.0, 1.0, 2.0, 0),
        ]);
        let grid = build_grid(&ds, 256, QuantileMode::Raw).unwrap();
        assert_eq!(grid.cov_splits(0), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn raw_rank_selection() {
        // U=5 uniques, 2 bins: indices ceil(5/2)-1 = 2 and ceil(10/2)-1 = 4.
        let ds = dataset(&[
            ("a", 0.0, 1.0, 10.0, 0),
            ("b", 0.0, 1.0, 20.0, 0),
            ("c", 0.0, 1.0, 30.0, 1),
            ("d", 0.0, 1.0, 40.0, 0),
            ("e", 0.0, 1.0, 50.0, 0),
        ]);
        let grid = build_grid(&ds, 2, QuantileMode::Raw).unwrap();
        assert_eq!(grid.cov_splits(0), &[30.0, 50.0]);
    }

    #[test]
    fn raw_time_axis_uses_starts_and_ends() {
        let ds = dataset(&[("a", 0.0, 1.0, 1.0, 0), ("b", 0.5, 2.0, 1.0, 0)]);
        let grid = build_grid(&ds, 256, QuantileMode::Raw).unwrap();
        assert_eq!(grid.time_splits(), &[0.0, 0.5, 1.0, 2.0]);
    }

    #[test]
    fn weighted_equal_durations() {
        // Three equal-duration epochs with x in {1,2,3}, 2 bins: smallest x
        // with q >= 1/2 is 2 (q=2/3), smallest with q >= 1 is 3.
        let ds = dataset(&[
            ("a", 0.0, 1.0, 1.0, 0),
            ("b", 0.0, 1.0, 2.0, 0),
            ("c", 0.0, 1.0, 3.0, 1),
        ]);
        let grid = build_grid(&ds, 2, QuantileMode::Weighted).unwrap();
        assert_eq!(grid.cov_splits(0), &[2.0, 3.0]);
    }

    #[test]
    fn weighted_time_candidates_are_epoch_ends() {
        let grid = build_grid(&middle_table(), 256, QuantileMode::Weighted).unwrap();
        // Every candidate must be an observed epoch end.
        for &c in grid.time_splits() {
            assert!([0.10, 0.13, 0.15, 0.25].contains(&c), "unexpected candidate {c}");
        }
        assert_eq!(*grid.time_splits().last().unwrap(), 0.25);
    }

    #[test]
    fn missing_values_never_become_candidates() {
        let ds = Dataset::from_rows(
            vec![
                RawEpoch { subject: "a".into(), t_start: 0.0, t_end: 1.0, covariates: vec![f64::NAN], delta: 0 },
                RawEpoch { subject: "b".into(), t_start: 0.0, t_end: 1.0, covariates: vec![7.0], delta: 1 },
            ],
            vec!["x1".into()],
        )
        .unwrap();
        let grid = build_grid(&ds, 4, QuantileMode::Weighted).unwrap();
        assert_eq!(grid.cov_splits(0), &[7.0]);
        // Entirely-missing covariate: empty candidate list.
        let all_missing = Dataset::from_rows(
            vec![RawEpoch { subject: "a".into(), t_start: 0.0, t_end: 1.0, covariates: vec![f64::NAN], delta: 0 }],
            vec!["x1".into()],
        )
        .unwrap();
        let grid = build_grid(&all_missing, 4, QuantileMode::Raw).unwrap();
        assert!(grid.cov_splits(0).is_empty());
    }

    #[test]
    fn binning_conventions() {
        let grid = CandidateGrid::from_parts(
            vec![0.01, 0.10, 0.15],
            vec![vec![0.51, 0.81]],
            QuantileMode::Raw,
            256,
        )
        .unwrap();
        // Epoch starts: a start at a candidate belongs to the cell on its right.
        assert_eq!(grid.bin_time_start(0.005), 0);
        assert_eq!(grid.bin_time_start(0.01), 1);
        assert_eq!(grid.bin_time_start(0.06), 1);
        assert_eq!(grid.bin_time_start(0.10), 2);
        assert_eq!(grid.bin_time_start(0.13), 2);
        assert_eq!(grid.bin_time_start(0.15), 3);
        // Query points: a point at a candidate belongs to the cell ending there.
        assert_eq!(grid.bin_time_query(0.01), 0);
        assert_eq!(grid.bin_time_query(0.0101), 1);
        assert_eq!(grid.bin_time_query(0.15), 2);
        assert_eq!(grid.bin_time_query(0.16), 3);
        // Covariates: left-open cells, same rule for training and queries.
        assert_eq!(grid.bin_covariate(0, 0.27), 0);
        assert_eq!(grid.bin_covariate(0, 0.51), 0);
        assert_eq!(grid.bin_covariate(0, 0.81), 1);
        assert_eq!(grid.bin_covariate(0, 0.92), 2);
        assert_eq!(grid.bin_covariate(0, f64::NAN), MISSING_CODE);
    }

    #[test]
    fn from_parts_rejects_unsorted() {
        let err = CandidateGrid::from_parts(vec![1.0, 0.5], vec![], QuantileMode::Raw, 8);
        assert!(err.is_err());
        let err = CandidateGrid::from_parts(vec![0.5], vec![vec![f64::NAN]], QuantileMode::Raw, 8);
        assert!(err.is_err());
    }

}
