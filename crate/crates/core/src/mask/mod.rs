//! Column-wise sparse attention masks.
//!
//! Instead of an N x N boolean matrix, a mask stores per key column `j` up
//! to two masked row intervals, both half-open and 0-based:
//!
//! * lower triangle: rows `[lts[j], lte[j])`, constrained to start at or
//!   below the diagonal (`j <= lts[j] <= lte[j] <= N`),
//! * upper triangle (bidirectional masks only): rows `[uts[j], ute[j])`,
//!   constrained to end at or above the diagonal (`uts[j] <= ute[j] <= j`).
//!
//! The diagonal cell belongs to the lower triangle. In `Causal` mode every
//! cell with `i < j` is masked implicitly and only the lower vectors are
//! stored, so storage is 2N integers (4N bidirectional) regardless of the
//! pattern's area. An empty interval is canonically encoded as `(N, N)` in
//! the lower triangle and `(0, 0)` in the upper one.

mod build;

pub use build::{build_mask, MaskKind, PrefixDoc, QuestionAnswerDoc};

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Causal,
    Bidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Triangle {
    Lower,
    Upper,
}

impl fmt::Display for Triangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Triangle::Lower => write!(f, "lower"),
            Triangle::Upper => write!(f, "upper"),
        }
    }
}

/// Column-interval mask over a sequence of `seq_len` keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub seq_len: usize,
    pub mode: MaskMode,
    pub lts: Vec<usize>,
    pub lte: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ute: Option<Vec<usize>>,
}

/// A single violated mask invariant. `validate` reports all of them rather
/// than failing on the first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskViolation {
    ZeroSeqLen,
    VectorLength {
        vector: &'static str,
        expected: usize,
        actual: usize,
    },
    UpperVectorsInCausalMode,
    MissingUpperVectors,
    LowerStartAboveDiagonal {
        column: usize,
        lts: usize,
    },
    LowerInverted {
        column: usize,
        lts: usize,
        lte: usize,
    },
    LowerEndOutOfRange {
        column: usize,
        lte: usize,
    },
    UpperInverted {
        column: usize,
        uts: usize,
        ute: usize,
    },
    UpperEndBelowDiagonal {
        column: usize,
        ute: usize,
    },
}

impl fmt::Display for MaskViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskViolation::ZeroSeqLen => write!(f, "seq_len must be positive"),
            MaskViolation::VectorLength {
                vector,
                expected,
                actual,
            } => write!(f, "{vector} has length {actual}, expected {expected}"),
            MaskViolation::UpperVectorsInCausalMode => {
                write!(f, "uts/ute present but mode is causal")
            }
            MaskViolation::MissingUpperVectors => {
                write!(f, "mode is bidirectional but uts/ute are missing")
            }
            MaskViolation::LowerStartAboveDiagonal { column, lts } => {
                write!(f, "lts[{column}] = {lts} < {column} (above the diagonal)")
            }
            MaskViolation::LowerInverted { column, lts, lte } => {
                write!(f, "lte[{column}] = {lte} < lts[{column}] = {lts}")
            }
            MaskViolation::LowerEndOutOfRange { column, lte } => {
                write!(f, "lte[{column}] = {lte} exceeds seq_len")
            }
            MaskViolation::UpperInverted { column, uts, ute } => {
                write!(f, "ute[{column}] = {ute} < uts[{column}] = {uts}")
            }
            MaskViolation::UpperEndBelowDiagonal { column, ute } => {
                write!(f, "ute[{column}] = {ute} > {column} (reaches the diagonal)")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("invalid mask spec: {}", format_violations(.0))]
    Invalid(Vec<MaskViolation>),
    #[error(
        "masked rows in column {column} ({triangle} triangle) are not one contiguous interval"
    )]
    NotRepresentable { column: usize, triangle: Triangle },
    #[error("dense mask is not causal: column {column} has an unmasked cell above the diagonal")]
    NotCausal { column: usize },
    #[error("invalid mask parameters: {reason}")]
    InvalidParams { reason: String },
}

fn format_violations(vs: &[MaskViolation]) -> String {
    let parts: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
    parts.join("; ")
}

impl MaskSpec {
    /// A mask with no masked cells beyond the mode's implicit region.
    pub fn empty(seq_len: usize, mode: MaskMode) -> Self {
        let (uts, ute) = match mode {
            MaskMode::Causal => (None, None),
            MaskMode::Bidirectional => (Some(vec![0; seq_len]), Some(vec![0; seq_len])),
        };
        MaskSpec {
            seq_len,
            mode,
            lts: vec![seq_len; seq_len],
            lte: vec![seq_len; seq_len],
            uts,
            ute,
        }
    }

    pub fn causal(seq_len: usize, lts: Vec<usize>, lte: Vec<usize>) -> Self {
        MaskSpec {
            seq_len,
            mode: MaskMode::Causal,
            lts,
            lte,
            uts: None,
            ute: None,
        }
    }

    pub fn bidirectional(
        seq_len: usize,
        lts: Vec<usize>,
        lte: Vec<usize>,
        uts: Vec<usize>,
        ute: Vec<usize>,
    ) -> Self {
        MaskSpec {
            seq_len,
            mode: MaskMode::Bidirectional,
            lts,
            lte,
            uts: Some(uts),
            ute: Some(ute),
        }
    }

    /// Checks every structural invariant and returns the full list of
    /// violations, with offending columns, if any fail.
    pub fn validate(&self) -> Result<(), Vec<MaskViolation>> {
        let mut out = Vec::new();
        let n = self.seq_len;
        if n == 0 {
            out.push(MaskViolation::ZeroSeqLen);
        }
        for (name, vec) in [("lts", &self.lts), ("lte", &self.lte)] {
            if vec.len() != n {
                out.push(MaskViolation::VectorLength {
                    vector: name,
                    expected: n,
                    actual: vec.len(),
                });
            }
        }
        match self.mode {
            MaskMode::Causal => {
                if self.uts.is_some() || self.ute.is_some() {
                    out.push(MaskViolation::UpperVectorsInCausalMode);
                }
            }
            MaskMode::Bidirectional => match (&self.uts, &self.ute) {
                (Some(uts), Some(ute)) => {
                    for (name, vec) in [("uts", uts), ("ute", ute)] {
                        if vec.len() != n {
                            out.push(MaskViolation::VectorLength {
                                vector: name,
                                expected: n,
                                actual: vec.len(),
                            });
                        }
                    }
                }
                _ => out.push(MaskViolation::MissingUpperVectors),
            },
        }
        if !out.is_empty() {
            // Column checks below index by j; length errors make that unsafe.
            return Err(out);
        }
        for j in 0..n {
            let (s, e) = (self.lts[j], self.lte[j]);
            if s < j {
                out.push(MaskViolation::LowerStartAboveDiagonal { column: j, lts: s });
            }
            if e < s {
                out.push(MaskViolation::LowerInverted {
                    column: j,
                    lts: s,
                    lte: e,
                });
            }
            if e > n {
                out.push(MaskViolation::LowerEndOutOfRange { column: j, lte: e });
            }
        }
        if let (Some(uts), Some(ute)) = (&self.uts, &self.ute) {
            for j in 0..n {
                let (s, e) = (uts[j], ute[j]);
                if e < s {
                    out.push(MaskViolation::UpperInverted {
                        column: j,
                        uts: s,
                        ute: e,
                    });
                }
                if e > j {
                    out.push(MaskViolation::UpperEndBelowDiagonal { column: j, ute: e });
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Rewrites empty intervals to the canonical encodings `(N, N)` and
    /// `(0, 0)`.
    pub fn canonicalize(&mut self) {
        let n = self.seq_len;
        for j in 0..self.lts.len().min(self.lte.len()) {
            if self.lts[j] == self.lte[j] {
                self.lts[j] = n;
                self.lte[j] = n;
            }
        }
        if let (Some(uts), Some(ute)) = (self.uts.as_mut(), self.ute.as_mut()) {
            for j in 0..uts.len().min(ute.len()) {
                if uts[j] == ute[j] {
                    uts[j] = 0;
                    ute[j] = 0;
                }
            }
        }
    }

    pub fn canonicalized(mut self) -> Self {
        self.canonicalize();
        self
    }

    /// Number of integers stored: 2N for causal masks, 4N for bidirectional.
    pub fn integer_count(&self) -> usize {
        self.lts.len()
            + self.lte.len()
            + self.uts.as_ref().map_or(0, |v| v.len())
            + self.ute.as_ref().map_or(0, |v| v.len())
    }

    /// True if cell `(i, j)` is masked, including the implicit causal
    /// region. Assumes a valid spec.
    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        if self.mode == MaskMode::Causal && i < j {
            return true;
        }
        if self.lts[j] <= i && i < self.lte[j] {
            return true;
        }
        if let (Some(uts), Some(ute)) = (&self.uts, &self.ute) {
            if uts[j] <= i && i < ute[j] {
                return true;
            }
        }
        false
    }

    /// Merged masked row intervals for one column, in ascending order,
    /// including the implicit causal region.
    pub fn column_intervals(&self, j: usize) -> Vec<(usize, usize)> {
        let mut ivs: Vec<(usize, usize)> = Vec::with_capacity(2);
        match self.mode {
            MaskMode::Causal => {
                if j > 0 {
                    ivs.push((0, j));
                }
            }
            MaskMode::Bidirectional => {
                if let (Some(uts), Some(ute)) = (&self.uts, &self.ute) {
                    if uts[j] < ute[j] {
                        ivs.push((uts[j], ute[j]));
                    }
                }
            }
        }
        if self.lts[j] < self.lte[j] {
            ivs.push((self.lts[j], self.lte[j]));
        }
        // The upper/causal interval ends at or before j and the lower one
        // starts at or after it, so at most one merge is possible.
        if ivs.len() == 2 && ivs[0].1 >= ivs[1].0 {
            let merged = (ivs[0].0, ivs[1].1.max(ivs[0].1));
            ivs.clear();
            ivs.push(merged);
        }
        ivs
    }

    /// Materializes the full boolean matrix. Rejects invalid specs.
    pub fn to_dense(&self) -> Result<DenseMask, MaskError> {
        self.validate().map_err(MaskError::Invalid)?;
        let n = self.seq_len;
        let mut dense = DenseMask::new(n);
        for j in 0..n {
            for (s, e) in self.column_intervals(j) {
                for i in s..e {
                    dense.set(i, j, true);
                }
            }
        }
        Ok(dense)
    }
}

/// Dense N x N boolean mask; `true` means the cell is masked out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseMask {
    seq_len: usize,
    masked: Vec<bool>,
}

impl DenseMask {
    pub fn new(seq_len: usize) -> Self {
        DenseMask {
            seq_len,
            masked: vec![false; seq_len * seq_len],
        }
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.masked[i * self.seq_len + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.masked[i * self.seq_len + j] = value;
    }

    /// Row-major storage, one bool per cell.
    pub fn as_slice(&self) -> &[bool] {
        &self.masked
    }

    pub fn from_slice(seq_len: usize, cells: &[bool]) -> Option<Self> {
        if cells.len() != seq_len * seq_len {
            return None;
        }
        Some(DenseMask {
            seq_len,
            masked: cells.to_vec(),
        })
    }
}

/// Recovers the column-interval form from a dense mask.
///
/// Fails with `NotRepresentable` if any column's masked rows within a
/// triangle do not form one contiguous run, and with `NotCausal` if
/// `mode == Causal` but some cell above the diagonal is unmasked.
pub fn from_dense(dense: &DenseMask, mode: MaskMode) -> Result<MaskSpec, MaskError> {
    let n = dense.seq_len();
    if n == 0 {
        return Err(MaskError::Invalid(vec![MaskViolation::ZeroSeqLen]));
    }
    let mut lts = vec![n; n];
    let mut lte = vec![n; n];
    for j in 0..n {
        let (s, e) = contiguous_run(dense, j, j, n)
            .ok_or(MaskError::NotRepresentable {
                column: j,
                triangle: Triangle::Lower,
            })?
            .unwrap_or((n, n));
        lts[j] = s;
        lte[j] = e;
    }
    match mode {
        MaskMode::Causal => {
            for j in 0..n {
                for i in 0..j {
                    if !dense.get(i, j) {
                        return Err(MaskError::NotCausal { column: j });
                    }
                }
            }
            Ok(MaskSpec::causal(n, lts, lte).canonicalized())
        }
        MaskMode::Bidirectional => {
            let mut uts = vec![0; n];
            let mut ute = vec![0; n];
            for j in 0..n {
                let (s, e) = contiguous_run(dense, j, 0, j)
                    .ok_or(MaskError::NotRepresentable {
                        column: j,
                        triangle: Triangle::Upper,
                    })?
                    .unwrap_or((0, 0));
                uts[j] = s;
                ute[j] = e;
            }
            Ok(MaskSpec::bidirectional(n, lts, lte, uts, ute).canonicalized())
        }
    }
}

/// Scans rows `[lo, hi)` of one column. Returns `Ok(None)` when nothing is
/// masked, `Ok(Some((start, end)))` for a single contiguous run, `None`
/// (outer) when the masked rows have gaps.
#[allow(clippy::option_option)]
fn contiguous_run(
    dense: &DenseMask,
    j: usize,
    lo: usize,
    hi: usize,
) -> Option<Option<(usize, usize)>> {
    let mut start = None;
    let mut end = None;
    for i in lo..hi {
        if dense.get(i, j) {
            if start.is_none() {
                start = Some(i);
            } else if end.is_some() {
                return None; // second run begins
            }
        } else if start.is_some() && end.is_none() {
            end = Some(i);
        }
    }
    match start {
        None => Some(None),
        Some(s) => Some(Some((s, end.unwrap_or(hi)))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_column_example() -> MaskSpec {
        // One bidirectional column with both intervals set: column 4 of a
        // 10-token mask masking rows [7, 10) below and [2, 4) above.
        let n = 10;
        let mut spec = MaskSpec::empty(n, MaskMode::Bidirectional);
        spec.lts[4] = 7;
        spec.lte[4] = 10;
        spec.uts.as_mut().unwrap()[4] = 2;
        spec.ute.as_mut().unwrap()[4] = 4;
        spec
    }

    #[test]
    fn empty_masks_validate() {
        assert!(MaskSpec::empty(5, MaskMode::Causal).is_valid());
        assert!(MaskSpec::empty(5, MaskMode::Bidirectional).is_valid());
        assert!(MaskSpec::empty(1, MaskMode::Causal).is_valid());
    }

    #[test]
    fn two_interval_column_validates_and_densifies() {
        let spec = fig_column_example();
        assert!(spec.is_valid());
        let dense = spec.to_dense().unwrap();
        let masked_rows: Vec<usize> = (0..10).filter(|&i| dense.get(i, 4)).collect();
        assert_eq!(masked_rows, vec![2, 3, 7, 8, 9]);
        // every other column is fully visible
        for j in (0..10).filter(|&j| j != 4) {
            assert!((0..10).all(|i| !dense.get(i, j)), "column {j}");
        }
    }

    #[test]
    fn validate_reports_offending_column() {
        let mut spec = MaskSpec::empty(6, MaskMode::Causal);
        spec.lts[3] = 2; // above the diagonal
        spec.lte[3] = 5;
        let errs = spec.validate().unwrap_err();
        assert_eq!(
            errs,
            vec![MaskViolation::LowerStartAboveDiagonal { column: 3, lts: 2 }]
        );
        assert!(errs[0].to_string().contains("lts[3]"));
    }

    #[test]
    fn validate_collects_multiple_violations() {
        let mut spec = MaskSpec::empty(4, MaskMode::Bidirectional);
        spec.lts[1] = 3;
        spec.lte[1] = 9; // end past N
        spec.ute.as_mut().unwrap()[2] = 3; // past the diagonal
        let errs = spec.validate().unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn causal_mode_rejects_upper_vectors() {
        let mut spec = MaskSpec::empty(3, MaskMode::Causal);
        spec.uts = Some(vec![0; 3]);
        spec.ute = Some(vec![0; 3]);
        let errs = spec.validate().unwrap_err();
        assert!(errs.contains(&MaskViolation::UpperVectorsInCausalMode));
    }

    #[test]
    fn causal_to_dense_masks_strict_upper_triangle() {
        let dense = MaskSpec::empty(3, MaskMode::Causal).to_dense().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(dense.get(i, j), i < j, "cell ({i}, {j})");
            }
        }
    }

    #[test]
    fn from_dense_roundtrips_the_column_example() {
        let spec = fig_column_example();
        let dense = spec.to_dense().unwrap();
        let back = from_dense(&dense, MaskMode::Bidirectional).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn from_dense_rejects_gapped_column() {
        let mut dense = DenseMask::new(4);
        dense.set(1, 0, true);
        dense.set(3, 0, true); // rows {1, 3}: gap at 2
        let err = from_dense(&dense, MaskMode::Bidirectional).unwrap_err();
        assert_eq!(
            err,
            MaskError::NotRepresentable {
                column: 0,
                triangle: Triangle::Lower
            }
        );
    }

    #[test]
    fn from_dense_rejects_noncausal_input_in_causal_mode() {
        let dense = DenseMask::new(3); // nothing masked at all
        let err = from_dense(&dense, MaskMode::Causal).unwrap_err();
        assert_eq!(err, MaskError::NotCausal { column: 1 });
    }

    #[test]
    fn canonicalize_rewrites_empty_intervals() {
        let mut spec = MaskSpec::empty(8, MaskMode::Bidirectional);
        spec.lts[2] = 5;
        spec.lte[2] = 5; // empty but non-canonical
        spec.uts.as_mut().unwrap()[3] = 2;
        spec.ute.as_mut().unwrap()[3] = 2;
        spec.canonicalize();
        assert_eq!((spec.lts[2], spec.lte[2]), (8, 8));
        assert_eq!((spec.uts.unwrap()[3], spec.ute.unwrap()[3]), (0, 0));
    }

    #[test]
    fn storage_is_linear_in_seq_len() {
        assert_eq!(
            MaskSpec::empty(1000, MaskMode::Causal).integer_count(),
            2000
        );
        assert_eq!(
            MaskSpec::empty(1000, MaskMode::Bidirectional).integer_count(),
            4000
        );
    }

    #[test]
    fn json_roundtrip_omits_upper_vectors_in_causal_mode() {
        let spec = MaskSpec::causal(3, vec![3, 3, 3], vec![3, 3, 3]);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(!text.contains("uts"));
        assert!(text.contains("\"mode\":\"causal\""));
        let back: MaskSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        // write -> read -> write is byte stable
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let text = r#"{"seq_len":2,"mode":"causal","lts":[2,2],"lte":[2,2],"bogus":1}"#;
        assert!(serde_json::from_str::<MaskSpec>(text).is_err());
    }

    #[test]
    fn column_intervals_merge_when_touching_diagonal() {
        // causal column 3 with lower interval starting right at the diagonal
        let mut spec = MaskSpec::empty(6, MaskMode::Causal);
        spec.lts[3] = 3;
        spec.lte[3] = 5;
        assert_eq!(spec.column_intervals(3), vec![(0, 5)]);
        // and separate when it starts further down
        spec.lts[3] = 4;
        assert_eq!(spec.column_intervals(3), vec![(0, 3), (4, 5)]);
    }
}
