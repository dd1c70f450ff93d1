//! Block-level mask metadata for tiled kernels.
//!
//! For column block `j` of width `Bc` the index stores the min and max of
//! each interval vector over the block's columns. A row block `[row_lo,
//! row_hi)` is then classified per triangle without touching per-column
//! data:
//!
//! * fully masked  iff `row_lo >= start_max[j] && row_hi <= end_min[j]`
//!   (every cell of the block falls inside every column's interval),
//! * else partially masked iff `row_hi > start_min[j] && row_lo <
//!   end_max[j]` (some cell may fall inside some column's interval),
//! * else unmasked.
//!
//! Tail blocks use their actual clamped extents, never padded bounds.

use crate::mask::{MaskError, MaskMode, MaskSpec, Triangle};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockClass {
    FullyMasked,
    PartiallyMasked,
    Unmasked,
}

/// Per-column-block min/max of one triangle's interval vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriangleIndex {
    pub start_min: Vec<usize>,
    pub start_max: Vec<usize>,
    pub end_min: Vec<usize>,
    pub end_max: Vec<usize>,
}

impl TriangleIndex {
    fn build(start: &[usize], end: &[usize], n: usize, bc: usize) -> Self {
        let tc = n.div_ceil(bc);
        let mut idx = TriangleIndex {
            start_min: Vec::with_capacity(tc),
            start_max: Vec::with_capacity(tc),
            end_min: Vec::with_capacity(tc),
            end_max: Vec::with_capacity(tc),
        };
        for b in 0..tc {
            let lo = b * bc;
            let hi = ((b + 1) * bc).min(n);
            let s = &start[lo..hi];
            let e = &end[lo..hi];
            idx.start_min.push(*s.iter().min().unwrap());
            idx.start_max.push(*s.iter().max().unwrap());
            idx.end_min.push(*e.iter().min().unwrap());
            idx.end_max.push(*e.iter().max().unwrap());
        }
        idx
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockIndex {
    pub seq_len: usize,
    pub bc: usize,
    /// Number of column blocks, `ceil(seq_len / bc)`.
    pub tc: usize,
    pub mode: MaskMode,
    pub lower: TriangleIndex,
    pub upper: Option<TriangleIndex>,
}

impl BlockIndex {
    pub fn triangle(&self, t: Triangle) -> Option<&TriangleIndex> {
        match t {
            Triangle::Lower => Some(&self.lower),
            Triangle::Upper => self.upper.as_ref(),
        }
    }

    /// Number of integers stored: 4·tc for causal, 8·tc for bidirectional.
    pub fn integer_count(&self) -> usize {
        let per = |t: &TriangleIndex| {
            t.start_min.len() + t.start_max.len() + t.end_min.len() + t.end_max.len()
        };
        per(&self.lower) + self.upper.as_ref().map_or(0, per)
    }
}

/// Builds the min/max index over column blocks of width `bc`.
pub fn build_block_index(spec: &MaskSpec, bc: usize) -> Result<BlockIndex, MaskError> {
    spec.validate().map_err(MaskError::Invalid)?;
    let n = spec.seq_len;
    if bc == 0 || bc > n {
        return Err(MaskError::InvalidParams {
            reason: format!("column block size {bc} outside [1, {n}]"),
        });
    }
    let lower = TriangleIndex::build(&spec.lts, &spec.lte, n, bc);
    let upper = match (&spec.uts, &spec.ute) {
        (Some(uts), Some(ute)) => Some(TriangleIndex::build(uts, ute, n, bc)),
        _ => None,
    };
    Ok(BlockIndex {
        seq_len: n,
        bc,
        tc: n.div_ceil(bc),
        mode: spec.mode,
        lower,
        upper,
    })
}

/// Classifies row block `row_block` (height `br`) against column block
/// `col_block` in one triangle. A causal mask has no upper index, so
/// `Triangle::Upper` is `Unmasked` there.
pub fn classify_block(
    row_block: usize,
    col_block: usize,
    br: usize,
    index: &BlockIndex,
    triangle: Triangle,
) -> BlockClass {
    let Some(tri) = index.triangle(triangle) else {
        return BlockClass::Unmasked;
    };
    let row_lo = row_block * br;
    let row_hi = ((row_block + 1) * br).min(index.seq_len);
    classify_rows(row_lo, row_hi, tri, col_block)
}

pub(crate) fn classify_rows(
    row_lo: usize,
    row_hi: usize,
    tri: &TriangleIndex,
    col_block: usize,
) -> BlockClass {
    if row_lo >= tri.start_max[col_block] && row_hi <= tri.end_min[col_block] {
        BlockClass::FullyMasked
    } else if row_hi > tri.start_min[col_block] && row_lo < tri.end_max[col_block] {
        BlockClass::PartiallyMasked
    } else {
        BlockClass::Unmasked
    }
}

/// Whole-block masking state under the union of both triangles and, in
/// causal mode, the implicit region above the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockCoverage {
    Full,
    Partial,
    Clear,
}

#[derive(Clone, Debug)]
pub struct CoverageGrid {
    pub tr: usize,
    pub tc: usize,
    cells: Vec<BlockCoverage>,
}

impl CoverageGrid {
    pub fn get(&self, row_block: usize, col_block: usize) -> BlockCoverage {
        self.cells[row_block * self.tc + col_block]
    }

    pub fn cells(&self) -> &[BlockCoverage] {
        &self.cells
    }

    pub fn fully_masked(&self) -> usize {
        self.cells
            .iter()
            .filter(|&&c| c == BlockCoverage::Full)
            .count()
    }

    /// Fraction of blocks that are fully masked.
    pub fn sparsity(&self) -> f64 {
        self.fully_masked() as f64 / (self.tr * self.tc) as f64
    }
}

/// Computes the exact coverage of every `br` x `bc` block without
/// materializing the dense mask; cost is O(N·Tr) per mask.
pub fn coverage_grid(spec: &MaskSpec, br: usize, bc: usize) -> Result<CoverageGrid, MaskError> {
    spec.validate().map_err(MaskError::Invalid)?;
    let n = spec.seq_len;
    for (name, b) in [("row", br), ("column", bc)] {
        if b == 0 || b > n {
            return Err(MaskError::InvalidParams {
                reason: format!("{name} block size {b} outside [1, {n}]"),
            });
        }
    }
    let tr = n.div_ceil(br);
    let tc = n.div_ceil(bc);
    let mut cells = vec![BlockCoverage::Clear; tr * tc];
    let mut all_full = vec![true; tr];
    let mut any_masked = vec![false; tr];
    for cb in 0..tc {
        all_full.fill(true);
        any_masked.fill(false);
        for j in cb * bc..((cb + 1) * bc).min(n) {
            let ivs = spec.column_intervals(j);
            for (b, full) in all_full.iter_mut().enumerate() {
                let lo = b * br;
                let hi = ((b + 1) * br).min(n);
                let covered = ivs.iter().any(|&(s, e)| lo >= s && hi <= e);
                if !covered {
                    *full = false;
                }
                if ivs.iter().any(|&(s, e)| lo < e && hi > s) {
                    any_masked[b] = true;
                }
            }
        }
        for b in 0..tr {
            cells[b * tc + cb] = if all_full[b] {
                BlockCoverage::Full
            } else if any_masked[b] {
                BlockCoverage::Partial
            } else {
                BlockCoverage::Clear
            };
        }
    }
    Ok(CoverageGrid { tr, tc, cells })
}

/// Block sparsity: the fraction of blocks whose every cell is masked by the
/// union of both triangles and the implicit causal region.
pub fn block_sparsity(spec: &MaskSpec, br: usize, bc: usize) -> Result<f64, MaskError> {
    Ok(coverage_grid(spec, br, bc)?.sparsity())
}
