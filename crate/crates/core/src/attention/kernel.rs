//! Tiled kernels, generic over the accumulation float.
//!
//! Forward pass per row block, streaming over column blocks:
//!
//! ```text
//! m  <- max(m, rowmax(S))                 running row maximum
//! P  <- exp(S - m)                        unnormalized weights
//! l  <- exp(m_old - m) * l + rowsum(P)    running normalizer
//! O  <- diag(exp(m_old - m)) * O + P V    running output
//! ```
//!
//! finalized as `O / l` and `lse = m + ln l`. Masked scores are written as
//! true `-inf` so `exp` yields exact zeros, and zero weights never touch an
//! accumulator. Together with the rescale factor being exactly 1 when a
//! tile contributes nothing, this makes a visited fully-masked block leave
//! every accumulator bit-identical to having skipped it, which is what the
//! skip-equivalence guarantee rests on.
//!
//! Rows whose key set is empty keep `l = 0` and finish as `O = 0`,
//! `lse = -inf`; the backward pass emits zero gradients for them.

use crate::block::{classify_rows, BlockClass, BlockIndex};
use crate::mask::{MaskMode, MaskSpec};

/// Float with the handful of operations the kernels need. Implemented for
/// f32 and f64; the accumulator type is chosen per problem.
pub(crate) trait Real:
    Copy
    + PartialOrd
    + Send
    + Sync
    + core::ops::Add<Output = Self>
    + core::ops::Sub<Output = Self>
    + core::ops::Mul<Output = Self>
    + core::ops::Div<Output = Self>
    + 'static
{
    const ZERO: Self;
    const NEG_INF: Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const ZERO: f32 = 0.0;
    const NEG_INF: f32 = f32::NEG_INFINITY;
    fn exp(self) -> f32 {
        f32::exp(self)
    }
    fn ln(self) -> f32 {
        f32::ln(self)
    }
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const ZERO: f64 = 0.0;
    const NEG_INF: f64 = f64::NEG_INFINITY;
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn from_f64(x: f64) -> f64 {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Block visit counters for one forward or backward run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockStats {
    pub total_blocks: u64,
    pub visited: u64,
    pub skipped_lower: u64,
    pub skipped_upper: u64,
    pub skipped_above_diagonal: u64,
    /// Visited column blocks per row block, summed over batch and heads.
    pub visited_per_row_block: Vec<u64>,
}

impl BlockStats {
    pub fn skipped(&self) -> u64 {
        self.skipped_lower + self.skipped_upper + self.skipped_above_diagonal
    }

    pub(crate) fn merge(&mut self, other: &BlockStats) {
        self.total_blocks += other.total_blocks;
        self.visited += other.visited;
        self.skipped_lower += other.skipped_lower;
        self.skipped_upper += other.skipped_upper;
        self.skipped_above_diagonal += other.skipped_above_diagonal;
        if self.visited_per_row_block.len() < other.visited_per_row_block.len() {
            self.visited_per_row_block
                .resize(other.visited_per_row_block.len(), 0);
        }
        for (a, b) in self
            .visited_per_row_block
            .iter_mut()
            .zip(&other.visited_per_row_block)
        {
            *a += b;
        }
    }
}

/// Decides whether a block can be skipped outright. Shared verbatim by the
/// forward and backward passes.
fn skip_block(
    spec: &MaskSpec,
    idx: &BlockIndex,
    row_lo: usize,
    row_hi: usize,
    col_lo: usize,
    jb: usize,
    stats: &mut BlockStats,
) -> bool {
    if spec.mode == MaskMode::Causal && row_hi <= col_lo {
        stats.skipped_above_diagonal += 1;
        return true;
    }
    if classify_rows(row_lo, row_hi, &idx.lower, jb) == BlockClass::FullyMasked {
        stats.skipped_lower += 1;
        return true;
    }
    if let Some(up) = &idx.upper {
        if classify_rows(row_lo, row_hi, up, jb) == BlockClass::FullyMasked {
            stats.skipped_upper += 1;
            return true;
        }
    }
    false
}

/// Fills `s` (rows x cols, row-major) with `scale * q k^T` for the block
/// and overwrites masked cells with `-inf`. Per-element interval masking
/// only runs when the block's min/max bounds show it can intersect an
/// interval.
#[allow(clippy::too_many_arguments)]
fn fill_masked_scores<A: Real>(
    q: &[A],
    k: &[A],
    d: usize,
    scale: A,
    spec: &MaskSpec,
    idx: &BlockIndex,
    row_lo: usize,
    row_hi: usize,
    col_lo: usize,
    col_hi: usize,
    jb: usize,
    s: &mut [A],
) {
    let rows = row_hi - row_lo;
    let cols = col_hi - col_lo;
    for x in 0..rows {
        let qrow = &q[(row_lo + x) * d..(row_lo + x) * d + d];
        let srow = &mut s[x * cols..(x + 1) * cols];
        for (y, sv) in srow.iter_mut().enumerate() {
            let krow = &k[(col_lo + y) * d..(col_lo + y) * d + d];
            let mut acc = A::ZERO;
            for c in 0..d {
                acc = acc + qrow[c] * krow[c];
            }
            *sv = scale * acc;
        }
    }
    if spec.mode == MaskMode::Causal && row_lo < col_hi {
        for x in 0..rows {
            let gi = row_lo + x;
            let y0 = (gi + 1).saturating_sub(col_lo).min(cols);
            for y in y0..cols {
                s[x * cols + y] = A::NEG_INF;
            }
        }
    }
    if row_hi > idx.lower.start_min[jb] && row_lo < idx.lower.end_max[jb] {
        for y in 0..cols {
            let j = col_lo + y;
            let x0 = spec.lts[j].saturating_sub(row_lo).min(rows);
            let x1 = spec.lte[j].saturating_sub(row_lo).min(rows);
            for x in x0..x1 {
                s[x * cols + y] = A::NEG_INF;
            }
        }
    }
    if let (Some(up), Some(uts), Some(ute)) = (&idx.upper, &spec.uts, &spec.ute) {
        if row_hi > up.start_min[jb] && row_lo < up.end_max[jb] {
            for y in 0..cols {
                let j = col_lo + y;
                let x0 = uts[j].saturating_sub(row_lo).min(rows);
                let x1 = ute[j].saturating_sub(row_lo).min(rows);
                for x in x0..x1 {
                    s[x * cols + y] = A::NEG_INF;
                }
            }
        }
    }
}

/// Forward pass over one (batch, head) slice. `o` must come in zeroed;
/// `lse` is fully overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_unit<A: Real>(
    q: &[A],
    k: &[A],
    v: &[A],
    n: usize,
    d: usize,
    scale: A,
    spec: &MaskSpec,
    idx: &BlockIndex,
    br: usize,
    bc: usize,
    skip_blocks: bool,
    o: &mut [A],
    lse: &mut [A],
    stats: &mut BlockStats,
) {
    let tr = n.div_ceil(br);
    let tc = n.div_ceil(bc);
    stats.total_blocks += (tr * tc) as u64;
    if stats.visited_per_row_block.len() < tr {
        stats.visited_per_row_block.resize(tr, 0);
    }
    let mut m = vec![A::NEG_INF; n];
    let mut l = vec![A::ZERO; n];
    let mut s = vec![A::ZERO; br.min(n) * bc.min(n)];
    for ib in 0..tr {
        let row_lo = ib * br;
        let row_hi = ((ib + 1) * br).min(n);
        let rows = row_hi - row_lo;
        for jb in 0..tc {
            let col_lo = jb * bc;
            let col_hi = ((jb + 1) * bc).min(n);
            let cols = col_hi - col_lo;
            if skip_blocks && skip_block(spec, idx, row_lo, row_hi, col_lo, jb, stats) {
                continue;
            }
            stats.visited += 1;
            stats.visited_per_row_block[ib] += 1;
            fill_masked_scores(
                q, k, d, scale, spec, idx, row_lo, row_hi, col_lo, col_hi, jb, &mut s,
            );
            for x in 0..rows {
                let gi = row_lo + x;
                let mut mx = m[gi];
                for &sv in &s[x * cols..(x + 1) * cols] {
                    if sv > mx {
                        mx = sv;
                    }
                }
                if mx == A::NEG_INF {
                    // row saw nothing visible yet; leave the state untouched
                    continue;
                }
                let corr = (m[gi] - mx).exp();
                let mut rowsum = A::ZERO;
                for sv in &mut s[x * cols..(x + 1) * cols] {
                    let e = (*sv - mx).exp();
                    *sv = e;
                    rowsum = rowsum + e;
                }
                l[gi] = corr * l[gi] + rowsum;
                let orow = &mut o[gi * d..(gi + 1) * d];
                for oc in orow.iter_mut() {
                    *oc = corr * *oc;
                }
                for y in 0..cols {
                    let p = s[x * cols + y];
                    if p == A::ZERO {
                        continue;
                    }
                    let vrow = &v[(col_lo + y) * d..(col_lo + y) * d + d];
                    for c in 0..d {
                        orow[c] = orow[c] + p * vrow[c];
                    }
                }
                m[gi] = mx;
            }
        }
        for gi in row_lo..row_hi {
            if l[gi] == A::ZERO {
                lse[gi] = A::NEG_INF;
            } else {
                let li = l[gi];
                for oc in &mut o[gi * d..(gi + 1) * d] {
                    *oc = *oc / li;
                }
                lse[gi] = m[gi] + li.ln();
            }
        }
    }
}

/// Backward pass over one (batch, head) slice, recomputing scores per
/// block. `dq`, `dk`, `dv` must come in zeroed. Column blocks form the
/// outer loop, so every `dq` row accumulates its contributions in
/// ascending column order; the whole pass is deterministic.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_unit<A: Real>(
    q: &[A],
    k: &[A],
    v: &[A],
    o: &[A],
    lse: &[A],
    d_o: &[A],
    n: usize,
    d: usize,
    scale: A,
    spec: &MaskSpec,
    idx: &BlockIndex,
    br: usize,
    bc: usize,
    skip_blocks: bool,
    dq: &mut [A],
    dk: &mut [A],
    dv: &mut [A],
    stats: &mut BlockStats,
) {
    let tr = n.div_ceil(br);
    let tc = n.div_ceil(bc);
    stats.total_blocks += (tr * tc) as u64;
    if stats.visited_per_row_block.len() < tr {
        stats.visited_per_row_block.resize(tr, 0);
    }
    // D[i] = rowsum(dO . O), one value per row
    let mut dvec = vec![A::ZERO; n];
    for i in 0..n {
        let mut acc = A::ZERO;
        for c in 0..d {
            acc = acc + d_o[i * d + c] * o[i * d + c];
        }
        dvec[i] = acc;
    }
    let mut s = vec![A::ZERO; br.min(n) * bc.min(n)];
    for jb in 0..tc {
        let col_lo = jb * bc;
        let col_hi = ((jb + 1) * bc).min(n);
        let cols = col_hi - col_lo;
        for ib in 0..tr {
            let row_lo = ib * br;
            let row_hi = ((ib + 1) * br).min(n);
            let rows = row_hi - row_lo;
            if skip_blocks && skip_block(spec, idx, row_lo, row_hi, col_lo, jb, stats) {
                continue;
            }
            stats.visited += 1;
            stats.visited_per_row_block[ib] += 1;
            fill_masked_scores(
                q, k, d, scale, spec, idx, row_lo, row_hi, col_lo, col_hi, jb, &mut s,
            );
            // S -> P = exp(S - lse) in place; empty rows become all zero
            for x in 0..rows {
                let li = lse[row_lo + x];
                let srow = &mut s[x * cols..(x + 1) * cols];
                if li == A::NEG_INF {
                    for sv in srow.iter_mut() {
                        *sv = A::ZERO;
                    }
                } else {
                    for sv in srow.iter_mut() {
                        *sv = (*sv - li).exp();
                    }
                }
            }
            // dV += P^T dO
            for y in 0..cols {
                let gj = col_lo + y;
                for x in 0..rows {
                    let p = s[x * cols + y];
                    if p == A::ZERO {
                        continue;
                    }
                    let gi = row_lo + x;
                    let dorow = &d_o[gi * d..(gi + 1) * d];
                    let dvrow = &mut dv[gj * d..(gj + 1) * d];
                    for c in 0..d {
                        dvrow[c] = dvrow[c] + p * dorow[c];
                    }
                }
            }
            // dP = dO V^T, dS = P . (dP - D) * scale, dQ += dS K, dK += dS^T Q
            for x in 0..rows {
                let gi = row_lo + x;
                if lse[gi] == A::NEG_INF {
                    continue;
                }
                let dorow = &d_o[gi * d..(gi + 1) * d];
                let di = dvec[gi];
                for y in 0..cols {
                    let p = s[x * cols + y];
                    if p == A::ZERO {
                        continue;
                    }
                    let gj = col_lo + y;
                    let vrow = &v[gj * d..(gj + 1) * d];
                    let krow = &k[gj * d..(gj + 1) * d];
                    let mut dp = A::ZERO;
                    for c in 0..d {
                        dp = dp + dorow[c] * vrow[c];
                    }
                    let ds = p * (dp - di) * scale;
                    let dqrow = &mut dq[gi * d..(gi + 1) * d];
                    for c in 0..d {
                        dqrow[c] = dqrow[c] + ds * krow[c];
                    }
                    let qrow = &q[gi * d..(gi + 1) * d];
                    let dkrow = &mut dk[gj * d..(gj + 1) * d];
                    for c in 0..d {
                        dkrow[c] = dkrow[c] + ds * qrow[c];
                    }
                }
            }
        }
    }
}
