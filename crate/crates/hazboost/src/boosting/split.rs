//! Closed-form leaf values and the exhaustive histogram split search.

use serde::{Deserialize, Serialize};

use super::histogram::LeafHistograms;

/// The likelihood-optimal log-hazard step for a region with statistics
/// `U = sum(w * exp(F))` and `V = sum(delta)`: `gamma = ln(U / V)`.
///
/// `gamma` minimizes `U * exp(-gamma) + gamma * V` exactly, so no line
/// search is needed. Requires `U > 0` and `V > 0`.
pub fn leaf_value(u: f64, v: f64) -> f64 {
    debug_assert!(u > 0.0 && v > 0.0);
    (u / v).ln()
}

/// Change in training risk from splitting a region into left/right parts
/// with statistics `(u_l, v_l)` and `(u_r, v_r)`, with each side stepped to
/// its own optimal value. `n` is the number of subjects. Always `<= 0`; more
/// negative is better.
pub fn split_score(u_l: f64, v_l: f64, u_r: f64, v_r: f64, n: usize) -> f64 {
    let n = n as f64;
    (v_l / n) * (u_l / v_l).ln() + (v_r / n) * (u_r / v_r).ln()
        - ((v_l + v_r) / n) * ((u_l + u_r) / (v_l + v_r)).ln()
}

/// The winning split of one leaf: where to cut and the resulting child
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    /// Leaf being split (caller's numbering).
    pub leaf: u32,
    /// 0 = time, `k >= 1` = covariate `k - 1`.
    pub axis: u32,
    /// Candidate index on the axis; shifted codes `<= threshold_idx`
    /// go left.
    pub threshold_idx: u16,
    /// Side receiving missing values on this axis.
    pub missing_left: bool,
    pub u_left: f64,
    pub v_left: f64,
    pub u_right: f64,
    pub v_right: f64,
    /// Risk change of the split; strictly negative.
    pub score: f64,
}

/// Guard thresholds for admissible splits.
#[derive(Debug, Clone, Copy)]
pub struct SplitGuards {
    /// Minimum events (`V`) required in each child.
    pub min_child_events: u64,
    /// Minimum raw at-risk time (`W`) required in each child.
    pub min_child_weight: f64,
}

/// Finds the best admissible split of `leaf`, scanning axes in order, then
/// thresholds in candidate order, trying missing-left before missing-right.
///
/// A split qualifies when both children satisfy the guards and have `U > 0`.
/// Ties are broken by scan order (strict improvement is required to replace
/// the incumbent), so the lowest axis, then lowest threshold, then
/// missing-left wins. Returns `None` when no candidate qualifies or the best
/// score is not negative.
pub fn best_split(
    hist: &LeafHistograms,
    leaf: usize,
    n: usize,
    guards: &SplitGuards,
) -> Option<SplitCandidate> {
    let mut best: Option<SplitCandidate> = None;
    let min_events = guards.min_child_events as f64;
    for axis in 0..hist.num_axes() {
        let cells = hist.value_cells(axis);
        // `cells` = candidate count + 1; an axis with no candidates cannot
        // be split on.
        if cells < 2 {
            continue;
        }
        let (mut u_tot, mut v_tot, mut w_tot) = (0.0, 0.0, 0.0);
        for code in 0..cells {
            let (u, v, w) = hist.cell(leaf, axis, code);
            u_tot += u;
            v_tot += v;
            w_tot += w;
        }
        let (u_miss, v_miss, w_miss) = hist.missing(leaf, axis);

        let (mut u_l, mut v_l, mut w_l) = (0.0, 0.0, 0.0);
        for threshold_idx in 0..cells - 1 {
            // After absorbing the cell at shifted code `threshold_idx`, the
            // left side holds codes 0..=threshold_idx — exactly the rows
            // with value <= candidate `threshold_idx`.
            let (u, v, w) = hist.cell(leaf, axis, threshold_idx);
            u_l += u;
            v_l += v;
            w_l += w;
            let u_r = u_tot - u_l;
            let v_r = v_tot - v_l;
            let w_r = w_tot - w_l;
            for missing_left in [true, false] {
                let (ul, vl, wl, ur, vr, wr) = if missing_left {
                    (u_l + u_miss, v_l + v_miss, w_l + w_miss, u_r, v_r, w_r)
                } else {
                    (u_l, v_l, w_l, u_r + u_miss, v_r + v_miss, w_r + w_miss)
                };
                if vl < min_events || vr < min_events {
                    continue;
                }
                if wl < guards.min_child_weight || wr < guards.min_child_weight {
                    continue;
                }
                if ul <= 0.0 || ur <= 0.0 {
                    continue;
                }
                let score = split_score(ul, vl, ur, vr, n);
                if score < 0.0 && best.as_ref().map_or(true, |b| score < b.score) {
                    best = Some(SplitCandidate {
                        leaf: leaf as u32,
                        axis: axis as u32,
                        threshold_idx: threshold_idx as u16,
                        missing_left,
                        u_left: ul,
                        v_left: vl,
                        u_right: ur,
                        v_right: vr,
                        score,
                    });
                }
                // On an axis with an empty missing bucket both directions
                // give identical statistics; skip the duplicate so the
                // stored direction is deterministically "left".
                if v_miss == 0.0 && u_miss == 0.0 && w_miss == 0.0 {
                    break;
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Brute-force check that `leaf_value` minimizes the region's
    /// contribution to the risk, `U * exp(-g) + g * V`.
    fn grid_argmin(u: f64, v: f64) -> f64 {
        let objective = |g: f64| u * (-g).exp() + g * v;
        let mut best_g = -5.0;
        let mut best = objective(best_g);
        let steps = 10_000_000u64;
        for i in 1..=steps {
            let g = -5.0 + (i as f64) * 1e-6;
            let val = objective(g);
            if val < best {
                best = val;
                best_g = g;
            }
        }
        best_g
    }

    #[test]
    fn leaf_value_matches_grid_minimizer() {
        assert_relative_eq!(leaf_value(2.0, 1.0), 2.0f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(leaf_value(2.0, 1.0), grid_argmin(2.0, 1.0), epsilon = 2e-6);
        assert_relative_eq!(leaf_value(1.0, 3.0), grid_argmin(1.0, 3.0), epsilon = 2e-6);
        assert_eq!(leaf_value(5.0, 5.0), 0.0);
    }

    #[test]
    fn split_score_balanced_children_is_exactly_zero() {
        // Both children have U = V, so neither side can improve on the
        // parent's zero step.
        assert_eq!(split_score(1.0, 1.0, 2.0, 2.0, 4), 0.0);
    }

    #[test]
    fn split_score_example_value() {
        let d = split_score(2.0, 1.0, 1.0, 1.0, 2);
        let expected = 0.5 * 2.0f64.ln() - 1.5f64.ln();
        assert_relative_eq!(d, expected, epsilon = 1e-15);
        assert!(d < 0.0);
    }

    #[test]
    fn never_positive_on_random_statistics() {
        // d is a log-likelihood improvement from refining a partition; it
        // can never be positive.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let u_l = next() * 10.0 + 1e-3;
            let u_r = next() * 10.0 + 1e-3;
            let v_l = (next() * 20.0).ceil().max(1.0);
            let v_r = (next() * 20.0).ceil().max(1.0);
            let d = split_score(u_l, v_l, u_r, v_r, 7);
            assert!(d <= 1e-12, "positive split score {d}");
        }
    }
}
