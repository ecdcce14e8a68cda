//! Per-leaf, per-axis histograms of the split-search sufficient statistics.
//!
//! For every (leaf, axis, bin-code) cell we accumulate the triple
//!
//! * `U` — sum of `w * exp(F)` over rows in the cell,
//! * `V` — number of events in the cell,
//! * `W` — sum of raw at-risk time (used only for the minimum-weight guard),
//!
//! which is everything a split search needs. One extra bucket per axis
//! collects rows whose value on that axis is missing.
//!
//! Bins are indexed by shifted code, so an axis with `B` candidate
//! thresholds has `B + 1` value cells (code 0 is the below-minimum cell)
//! plus the missing bucket at index `B + 1`.
//!
//! Accumulation is deterministic: each axis owns a disjoint block of the
//! backing storage and scans rows in data order, so results are bit-identical
//! whether axes are processed in parallel or serially.

use rayon::prelude::*;

use crate::codes::CodeColumn;
use crate::preprocess::PreprocessedData;

/// Slot marker for rows whose leaf is no longer being split.
pub(crate) const INACTIVE: u32 = u32::MAX;

const TRIPLE: usize = 3;

/// Histograms for a set of leaves over all axes of a preprocessed dataset.
#[derive(Debug)]
pub struct LeafHistograms {
    /// Concatenated per-axis blocks of `(U, V, W)` triples.
    storage: Vec<f64>,
    /// Start of each axis block, in triples.
    axis_offsets: Vec<usize>,
    /// Cells per leaf on each axis, including the missing bucket.
    cells_per_leaf: Vec<usize>,
    num_leaves: usize,
}

impl LeafHistograms {
    /// Number of axes (time plus covariates).
    pub fn num_axes(&self) -> usize {
        self.cells_per_leaf.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    /// Number of value cells on an axis (excluding the missing bucket):
    /// the axis's candidate count plus one for the below-minimum cell.
    pub fn value_cells(&self, axis: usize) -> usize {
        self.cells_per_leaf[axis] - 1
    }

    /// The `(U, V, W)` triple for one value cell, indexed by shifted code.
    pub fn cell(&self, leaf: usize, axis: usize, code: usize) -> (f64, f64, f64) {
        debug_assert!(code < self.value_cells(axis));
        self.triple(axis, leaf, code)
    }

    /// The `(U, V, W)` triple of the missing bucket on an axis.
    pub fn missing(&self, leaf: usize, axis: usize) -> (f64, f64, f64) {
        self.triple(axis, leaf, self.cells_per_leaf[axis] - 1)
    }

    fn triple(&self, axis: usize, leaf: usize, cell: usize) -> (f64, f64, f64) {
        let i = (self.axis_offsets[axis] + leaf * self.cells_per_leaf[axis] + cell) * TRIPLE;
        (self.storage[i], self.storage[i + 1], self.storage[i + 2])
    }
}

/// Builds histograms for an explicit leaf assignment, evaluating
/// `U = w * exp(F)` from the given per-row ensemble values.
///
/// `leaf_of[i]` is the leaf index of row `i`; leaves must be numbered
/// `0..num_leaves` contiguously. This is the entry point for inspecting
/// statistics directly; the boosting loop uses the same accumulator with
/// `w * exp(F)` maintained incrementally.
pub fn accumulate_histograms(
    data: &PreprocessedData,
    leaf_of: &[u32],
    f_current: &[f64],
) -> LeafHistograms {
    assert_eq!(leaf_of.len(), data.len());
    assert_eq!(f_current.len(), data.len());
    let num_leaves = leaf_of.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let z: Vec<f64> = data
        .weights()
        .iter()
        .zip(f_current)
        .map(|(&w, &f)| w * f.exp())
        .collect();
    accumulate_from_z(data, leaf_of, num_leaves, &z)
}

/// Histogram accumulation with `z = w * exp(F)` supplied per row.
/// Rows whose slot is [`INACTIVE`] are skipped.
pub(crate) fn accumulate_from_z(
    data: &PreprocessedData,
    slot_of: &[u32],
    num_leaves: usize,
    z: &[f64],
) -> LeafHistograms {
    let num_axes = data.num_axes();
    let mut cells_per_leaf = Vec::with_capacity(num_axes);
    let mut axis_offsets = Vec::with_capacity(num_axes);
    let mut total = 0usize;
    for axis in 0..num_axes {
        // Value cells 0..=candidates, then the missing bucket.
        let cells = data.grid().axis_splits(axis).len() + 2;
        axis_offsets.push(total);
        cells_per_leaf.push(cells);
        total += num_leaves * cells;
    }

    let mut storage = vec![0.0f64; total * TRIPLE];

    // Carve the storage into per-axis blocks so axes can run in parallel
    // without sharing any cell.
    let mut blocks: Vec<(usize, &mut [f64])> = Vec::with_capacity(num_axes);
    let mut rest = storage.as_mut_slice();
    for axis in 0..num_axes {
        let len = num_leaves * cells_per_leaf[axis] * TRIPLE;
        let (head, tail) = rest.split_at_mut(len);
        blocks.push((axis, head));
        rest = tail;
    }

    blocks.into_par_iter().for_each(|(axis, block)| {
        let cells = cells_per_leaf[axis];
        match data.axis_codes(axis) {
            CodeColumn::U8(codes) => {
                scan_axis(codes, |&c| c as usize, u8::MAX as usize, slot_of, z, data, block, cells)
            }
            CodeColumn::U16(codes) => {
                scan_axis(codes, |&c| c as usize, u16::MAX as usize, slot_of, z, data, block, cells)
            }
        }
    });

    LeafHistograms { storage, axis_offsets, cells_per_leaf, num_leaves }
}

#[allow(clippy::too_many_arguments)]
fn scan_axis<C>(
    codes: &[C],
    widen: impl Fn(&C) -> usize,
    missing_marker: usize,
    slot_of: &[u32],
    z: &[f64],
    data: &PreprocessedData,
    block: &mut [f64],
    cells: usize,
) {
    let weights = data.weights();
    let deltas = data.deltas();
    for i in 0..codes.len() {
        let slot = slot_of[i];
        if slot == INACTIVE {
            continue;
        }
        let code = widen(&codes[i]);
        let cell = if code == missing_marker { cells - 1 } else { code };
        let at = (slot as usize * cells + cell) * TRIPLE;
        block[at] += z[i];
        block[at + 1] += deltas[i] as f64;
        block[at + 2] += weights[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::preprocess::preprocess;
    use crate::quantiles::{build_grid, QuantileMode};
    use approx::assert_relative_eq;

    /// Four observation rows over two subjects with two covariates, one of
    /// them missing on one row.
    fn toy() -> PreprocessedData {
        let rows = vec![
            ("a", 0.0, 0.10, vec![0.2, 5.0], 0),
            ("a", 0.10, 0.22, vec![0.8, f64::NAN], 1),
            ("b", 0.0, 0.15, vec![0.5, 7.0], 0),
            ("b", 0.15, 0.30, vec![0.3, 6.0], 1),
        ];
        let rows: Vec<crate::data::RawEpoch> = rows
            .into_iter()
            .map(|(s, a, b, x, d)| crate::data::RawEpoch {
                subject: s.to_string(),
                t_start: a,
                t_end: b,
                covariates: x,
                delta: d,
            })
            .collect();
        let data = Dataset::from_rows(rows, vec!["x0".into(), "x1".into()]).unwrap();
        let grid = build_grid(&data, 256, QuantileMode::Raw).unwrap();
        preprocess(&data, &grid).unwrap()
    }

    #[test]
    fn single_leaf_recovers_totals_on_every_axis() {
        let data = toy();
        let f = vec![0.0; data.len()];
        let hist = accumulate_histograms(&data, &vec![0; data.len()], &f);
        assert_eq!(hist.num_leaves(), 1);
        for axis in 0..hist.num_axes() {
            let mut u = 0.0;
            let mut v = 0.0;
            let mut w = 0.0;
            for code in 0..hist.value_cells(axis) {
                let (cu, cv, cw) = hist.cell(0, axis, code);
                u += cu;
                v += cv;
                w += cw;
            }
            let (mu, mv, mw) = hist.missing(0, axis);
            // With F = 0, U is the total at-risk time and V the event count.
            assert_relative_eq!(u + mu, data.total_weight(), max_relative = 1e-12);
            assert_eq!(v + mv, data.total_events() as f64);
            assert_relative_eq!(w + mw, data.total_weight(), max_relative = 1e-12);
        }
    }

    #[test]
    fn missing_bucket_collects_only_missing_rows() {
        let data = toy();
        let f = vec![0.0; data.len()];
        let hist = accumulate_histograms(&data, &vec![0; data.len()], &f);
        // Covariate 1 (axis 2) is missing on exactly one row spanning more
        // than one split piece; everything it contributes lands in the
        // missing bucket.
        let (_, mv, mw) = hist.missing(0, 2);
        assert_eq!(mv, 1.0);
        assert_relative_eq!(mw, 0.12, max_relative = 1e-12);
        // Time never has missing values.
        let (tu, tv, tw) = hist.missing(0, 0);
        assert_eq!((tu, tv, tw), (0.0, 0.0, 0.0));
    }

    #[test]
    fn nonzero_f_scales_u_but_not_v_or_w() {
        let data = toy();
        let leaves = vec![0; data.len()];
        let base = accumulate_histograms(&data, &leaves, &vec![0.0; data.len()]);
        let shifted = accumulate_histograms(&data, &leaves, &vec![0.5; data.len()]);
        let s = 0.5f64.exp();
        for axis in 0..base.num_axes() {
            for code in 0..base.value_cells(axis) {
                let (u0, v0, w0) = base.cell(0, axis, code);
                let (u1, v1, w1) = shifted.cell(0, axis, code);
                assert_relative_eq!(u1, u0 * s, max_relative = 1e-12);
                assert_eq!(v1, v0);
                assert_eq!(w1, w0);
            }
        }
    }

    #[test]
    fn leaf_assignment_partitions_statistics() {
        let data = toy();
        let f = vec![0.0; data.len()];
        // Assign rows alternately to two leaves.
        let leaves: Vec<u32> = (0..data.len()).map(|i| (i % 2) as u32).collect();
        let split = accumulate_histograms(&data, &leaves, &f);
        let merged = accumulate_histograms(&data, &vec![0; data.len()], &f);
        assert_eq!(split.num_leaves(), 2);
        for axis in 0..merged.num_axes() {
            for code in 0..merged.value_cells(axis) {
                let (u0, v0, w0) = split.cell(0, axis, code);
                let (u1, v1, w1) = split.cell(1, axis, code);
                let (u, v, w) = merged.cell(0, axis, code);
                assert_relative_eq!(u0 + u1, u, max_relative = 1e-12);
                assert_eq!(v0 + v1, v);
                assert_relative_eq!(w0 + w1, w, max_relative = 1e-12);
            }
        }
    }
}
