//! Compact per-axis bin-code storage.
//!
//! After preprocessing, every time and covariate value is replaced by a small
//! integer code into that axis's candidate grid. Codes are "shifted": code 0
//! is the below-minimum cell `(-inf, c_0]`, and code `i + 1` is the cell
//! anchored at candidate `i`, i.e. `(c_i, c_{i+1}]` (the last cell extends to
//! infinity). A missing covariate value gets the reserved [`MISSING_CODE`].
//!
//! Columns store codes in one byte when the axis is small enough and two
//! bytes otherwise; correctness never depends on the width.

/// Reserved code for a missing covariate value.
pub const MISSING_CODE: u16 = u16::MAX;

const MISSING_U8: u8 = u8::MAX;

/// A column of bin codes, one per row, stored at the narrowest width that
/// fits the axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeColumn {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl CodeColumn {
    /// Creates an empty column for an axis with `num_candidates` split
    /// candidates (so shifted codes run `0..=num_candidates`, plus the
    /// missing marker).
    pub fn new(num_candidates: usize) -> Self {
        // u8 must hold codes 0..=num_candidates and reserve 255 for missing.
        if num_candidates < MISSING_U8 as usize {
            CodeColumn::U8(Vec::new())
        } else {
            CodeColumn::U16(Vec::new())
        }
    }

    pub fn push(&mut self, code: u16) {
        match self {
            CodeColumn::U8(v) => {
                debug_assert!(code == MISSING_CODE || code < MISSING_U8 as u16);
                v.push(if code == MISSING_CODE { MISSING_U8 } else { code as u8 });
            }
            CodeColumn::U16(v) => v.push(code),
        }
    }

    /// Reserves room for `additional` more codes.
    pub fn reserve(&mut self, additional: usize) {
        match self {
            CodeColumn::U8(v) => v.reserve(additional),
            CodeColumn::U16(v) => v.reserve(additional),
        }
    }

    /// Code for row `i`, normalized so missing is always [`MISSING_CODE`].
    #[inline]
    pub fn get(&self, i: usize) -> u16 {
        match self {
            CodeColumn::U8(v) => {
                let c = v[i];
                if c == MISSING_U8 {
                    MISSING_CODE
                } else {
                    c as u16
                }
            }
            CodeColumn::U16(v) => v[i],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CodeColumn::U8(v) => v.len(),
            CodeColumn::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Byte width of one code (1 or 2), as stored on disk.
    pub fn width(&self) -> u8 {
        match self {
            CodeColumn::U8(_) => 1,
            CodeColumn::U16(_) => 2,
        }
    }

    /// New column of the same width containing the rows selected by `keep`
    /// (indices in ascending order).
    pub fn take(&self, keep: &[usize]) -> Self {
        match self {
            CodeColumn::U8(v) => CodeColumn::U8(keep.iter().map(|&i| v[i]).collect()),
            CodeColumn::U16(v) => CodeColumn::U16(keep.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u8_column_reserves_missing_marker() {
        let mut col = CodeColumn::new(200);
        assert_eq!(col.width(), 1);
        col.push(0);
        col.push(200);
        col.push(MISSING_CODE);
        assert_eq!(col.get(0), 0);
        assert_eq!(col.get(1), 200);
        assert_eq!(col.get(2), MISSING_CODE);
    }

    #[test]
    fn wide_axis_uses_u16() {
        // 255 candidates would collide with the u8 missing marker.
        let mut col = CodeColumn::new(255);
        assert_eq!(col.width(), 2);
        col.push(255);
        col.push(MISSING_CODE);
        assert_eq!(col.get(0), 255);
        assert_eq!(col.get(1), MISSING_CODE);
    }

    #[test]
    fn boundary_width_selection() {
        // 254 candidates -> max code 254 -> still fits u8 alongside the marker.
        assert_eq!(CodeColumn::new(254).width(), 1);
        assert_eq!(CodeColumn::new(255).width(), 2);
    }

    #[test]
    fn take_preserves_width_and_values() {
        let mut col = CodeColumn::new(3);
        for c in [0u16, 1, 2, MISSING_CODE, 3] {
            col.push(c);
        }
        let sub = col.take(&[1, 3, 4]);
        assert_eq!(sub.len(), 3);
        assert_eq!(sub.get(0), 1);
        assert_eq!(sub.get(1), MISSING_CODE);
        assert_eq!(sub.get(2), 3);
    }
}
