//! Masked multi-head attention: a tiled engine plus a dense reference.
//!
//! The engine walks the score matrix in `br x bc` blocks, keeps the
//! numerically safe streaming softmax state per row, and consults the
//! column-interval block index to skip blocks that are provably fully
//! masked. Skipping changes runtime only: outputs are bit-identical with
//! skipping on or off.
//!
//! Tensors live in row-major `[batch, heads, seq_len, head_dim]` order as
//! `Vec<f64>`. Arithmetic runs in the precision the problem asks for; with
//! [`Precision::F32`] the inputs are rounded through f32 first so the
//! reference oracle can reproduce the exact same computation.

mod fd;
mod kernel;
mod oracle;

pub use fd::{finite_difference_check, sample_fd_coords, FdCoord, FdReport, FdTensor};
pub use kernel::BlockStats;
pub use oracle::{dense_oracle_backward, dense_oracle_forward, oracle_backward, oracle_forward};

use crate::block::{build_block_index, BlockIndex};
use crate::mask::{MaskError, MaskSpec};
use crate::rng::{derive_seed, Rng};
use kernel::Real;

/// Width of the arithmetic used for scores, softmax, and accumulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Accumulator width relative to the working precision. `F64` only changes
/// anything for f32 problems: inputs are still rounded through f32 and
/// outputs rounded back, but every intermediate is kept in f64.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulator {
    Same,
    F64,
}

pub const DEFAULT_TILE: usize = 64;

/// One attention problem: tensors, masks, tiling, and precision.
#[derive(Clone, Debug)]
pub struct AttentionProblem {
    pub batch: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub head_dim: usize,
    /// `[batch, heads, seq_len, head_dim]`, row-major.
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Score scale, typically `1/sqrt(head_dim)`.
    pub scale: f64,
    /// One mask per batch entry, shared across heads.
    pub masks: Vec<MaskSpec>,
    pub br: usize,
    pub bc: usize,
    pub precision: Precision,
    pub accumulator: Accumulator,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionResult {
    /// `[batch, heads, seq_len, head_dim]`.
    pub o: Vec<f64>,
    /// Log-sum-exp of the visible scores per row, `[batch, heads, seq_len]`;
    /// `-inf` where a row has no visible keys.
    pub lse: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionGradients {
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
}

/// Engine knobs that do not affect results.
#[derive(Clone, Copy, Debug)]
pub struct EngineOptions {
    /// Skip provably fully-masked blocks. Defaults to on; turning it off
    /// produces bit-identical outputs, just slower.
    pub skip_blocks: bool,
    /// Worker threads across (batch, head) slices. Results do not depend
    /// on this.
    pub threads: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            skip_blocks: true,
            threads: 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AttentionError {
    #[error("bad problem shape: {0}")]
    Shape(String),
    #[error("mask for batch entry {index}: {source}")]
    Mask {
        index: usize,
        #[source]
        source: MaskError,
    },
    #[error("NaN in {tensor} at flat index {index}")]
    NanInput { tensor: &'static str, index: usize },
    #[error("finite-difference checks require f64 precision")]
    FdNeedsF64,
}

impl AttentionProblem {
    /// Problem with zeroed tensors, unit scale, default tiles, and full
    /// f64 arithmetic. Masks must be supplied afterwards (one per batch
    /// entry); `with_causal_masks` is the common shortcut.
    pub fn zeroed(batch: usize, heads: usize, seq_len: usize, head_dim: usize) -> Self {
        let len = batch * heads * seq_len * head_dim;
        AttentionProblem {
            batch,
            heads,
            seq_len,
            head_dim,
            q: vec![0.0; len],
            k: vec![0.0; len],
            v: vec![0.0; len],
            scale: if head_dim > 0 {
                1.0 / (head_dim as f64).sqrt()
            } else {
                1.0
            },
            masks: Vec::new(),
            br: DEFAULT_TILE,
            bc: DEFAULT_TILE,
            precision: Precision::F64,
            accumulator: Accumulator::Same,
        }
    }

    /// Deterministic pseudorandom tensors in [-1, 1), plus matching masks.
    pub fn synthetic(
        seed: u64,
        batch: usize,
        heads: usize,
        seq_len: usize,
        head_dim: usize,
        masks: Vec<MaskSpec>,
    ) -> Self {
        let mut p = Self::zeroed(batch, heads, seq_len, head_dim);
        let mut rng = Rng::new(derive_seed(seed, 0));
        rng.fill_symmetric(&mut p.q);
        rng.fill_symmetric(&mut p.k);
        rng.fill_symmetric(&mut p.v);
        p.masks = masks;
        p
    }

    /// Upstream gradient tensor matching this problem's output shape,
    /// drawn from a stream independent of `synthetic`'s.
    pub fn synthetic_d_o(&self, seed: u64) -> Vec<f64> {
        let mut d_o = vec![0.0; self.q.len()];
        Rng::new(derive_seed(seed, 1)).fill_symmetric(&mut d_o);
        d_o
    }

    pub fn with_causal_masks(mut self) -> Self {
        self.masks = (0..self.batch)
            .map(|_| MaskSpec::empty(self.seq_len, crate::mask::MaskMode::Causal))
            .collect();
        self
    }

    pub fn with_tiles(mut self, br: usize, bc: usize) -> Self {
        self.br = br;
        self.bc = bc;
        self
    }

    pub fn with_precision(mut self, precision: Precision, accumulator: Accumulator) -> Self {
        self.precision = precision;
        self.accumulator = accumulator;
        self
    }

    fn unit_len(&self) -> usize {
        self.seq_len * self.head_dim
    }

    fn units(&self) -> usize {
        self.batch * self.heads
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.batch == 0 || self.heads == 0 || self.seq_len == 0 || self.head_dim == 0 {
            return Err(AttentionError::Shape(format!(
                "batch, heads, seq_len, head_dim must all be nonzero (got {}x{}x{}x{})",
                self.batch, self.heads, self.seq_len, self.head_dim
            )));
        }
        let want = self.units() * self.unit_len();
        for (name, t) in [("q", &self.q), ("k", &self.k), ("v", &self.v)] {
            if t.len() != want {
                return Err(AttentionError::Shape(format!(
                    "{name} has {} elements, expected {want}",
                    t.len()
                )));
            }
            check_finite(name, t)?;
        }
        if !self.scale.is_finite() {
            return Err(AttentionError::Shape(format!(
                "scale must be finite, got {}",
                self.scale
            )));
        }
        if self.br == 0 || self.bc == 0 {
            return Err(AttentionError::Shape("tile sizes must be nonzero".into()));
        }
        if self.masks.len() != self.batch {
            return Err(AttentionError::Shape(format!(
                "{} masks for batch size {}",
                self.masks.len(),
                self.batch
            )));
        }
        for (index, spec) in self.masks.iter().enumerate() {
            if spec.seq_len != self.seq_len {
                return Err(AttentionError::Shape(format!(
                    "mask {index} is for seq_len {}, problem has {}",
                    spec.seq_len, self.seq_len
                )));
            }
            spec.validate().map_err(|v| AttentionError::Mask {
                index,
                source: MaskError::Invalid(v),
            })?;
        }
        Ok(())
    }

    /// Inputs as the kernel sees them: identical to the stored tensors in
    /// f64 mode, rounded through f32 in f32 mode. The oracle runs on these
    /// so both paths start from the same values.
    pub(crate) fn effective_input(&self, t: &[f64]) -> Vec<f64> {
        match self.precision {
            Precision::F64 => t.to_vec(),
            Precision::F32 => t.iter().map(|&x| x as f32 as f64).collect(),
        }
    }

    pub(crate) fn effective_scale(&self) -> f64 {
        match self.precision {
            Precision::F64 => self.scale,
            Precision::F32 => self.scale as f32 as f64,
        }
    }

    fn block_indices(&self) -> Result<Vec<BlockIndex>, AttentionError> {
        let bc = self.bc.min(self.seq_len);
        self.masks
            .iter()
            .enumerate()
            .map(|(index, spec)| {
                build_block_index(spec, bc).map_err(|source| AttentionError::Mask { index, source })
            })
            .collect()
    }
}

fn check_finite(tensor: &'static str, t: &[f64]) -> Result<(), AttentionError> {
    for (index, &x) in t.iter().enumerate() {
        if x.is_nan() {
            return Err(AttentionError::NanInput { tensor, index });
        }
    }
    Ok(())
}

/// Rounds every value through f32. Applied to outputs of f32-precision
/// runs so callers always observe representable f32 values, regardless of
/// the accumulator width used internally.
fn round_f32(t: &mut [f64]) {
    for x in t.iter_mut() {
        *x = *x as f32 as f64;
    }
}

pub fn forward(problem: &AttentionProblem) -> Result<AttentionResult, AttentionError> {
    forward_with(problem, &EngineOptions::default()).map(|(r, _)| r)
}

pub fn forward_with(
    problem: &AttentionProblem,
    opts: &EngineOptions,
) -> Result<(AttentionResult, BlockStats), AttentionError> {
    problem.validate()?;
    let indices = problem.block_indices()?;
    let (mut result, stats) = match (problem.precision, problem.accumulator) {
        (Precision::F64, _) => run_forward::<f64>(problem, opts, &indices, false),
        (Precision::F32, Accumulator::Same) => run_forward::<f32>(problem, opts, &indices, true),
        (Precision::F32, Accumulator::F64) => run_forward::<f64>(problem, opts, &indices, true),
    };
    if problem.precision == Precision::F32 {
        round_f32(&mut result.o);
        round_f32(&mut result.lse);
    }
    Ok((result, stats))
}

pub fn backward(
    problem: &AttentionProblem,
    result: &AttentionResult,
    d_o: &[f64],
) -> Result<AttentionGradients, AttentionError> {
    backward_with(problem, result, d_o, &EngineOptions::default()).map(|(g, _)| g)
}

pub fn backward_with(
    problem: &AttentionProblem,
    result: &AttentionResult,
    d_o: &[f64],
    opts: &EngineOptions,
) -> Result<(AttentionGradients, BlockStats), AttentionError> {
    problem.validate()?;
    let want = problem.units() * problem.unit_len();
    if d_o.len() != want {
        return Err(AttentionError::Shape(format!(
            "d_o has {} elements, expected {want}",
            d_o.len()
        )));
    }
    check_finite("d_o", d_o)?;
    if result.o.len() != want || result.lse.len() != problem.units() * problem.seq_len {
        return Err(AttentionError::Shape(
            "forward result does not match the problem shape".into(),
        ));
    }
    let indices = problem.block_indices()?;
    let (mut grads, stats) = match (problem.precision, problem.accumulator) {
        (Precision::F64, _) => run_backward::<f64>(problem, result, d_o, opts, &indices, false),
        (Precision::F32, Accumulator::Same) => {
            run_backward::<f32>(problem, result, d_o, opts, &indices, true)
        }
        (Precision::F32, Accumulator::F64) => {
            run_backward::<f64>(problem, result, d_o, opts, &indices, true)
        }
    };
    if problem.precision == Precision::F32 {
        round_f32(&mut grads.dq);
        round_f32(&mut grads.dk);
        round_f32(&mut grads.dv);
    }
    Ok((grads, stats))
}

/// Loads one (batch, head) slice of a stored tensor into the working
/// float. `quantize` rounds through f32 on the way in; with `A = f32` the
/// conversion itself already does that.
fn load_unit<A: Real>(src: &[f64], quantize: bool) -> Vec<A> {
    if quantize {
        src.iter().map(|&x| A::from_f64(x as f32 as f64)).collect()
    } else {
        src.iter().map(|&x| A::from_f64(x)).collect()
    }
}

fn store_unit<A: Real>(dst: &mut [f64], src: &[A]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s.to_f64();
    }
}

/// Splits `units` into at most `threads` contiguous chunks.
fn chunk_ranges(units: usize, threads: usize) -> Vec<std::ops::Range<usize>> {
    let threads = threads.max(1).min(units);
    let per = units / threads;
    let extra = units % threads;
    let mut out = Vec::with_capacity(threads);
    let mut start = 0;
    for t in 0..threads {
        let len = per + usize::from(t < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

fn run_forward<A: Real>(
    problem: &AttentionProblem,
    opts: &EngineOptions,
    indices: &[BlockIndex],
    quantize: bool,
) -> (AttentionResult, BlockStats) {
    let n = problem.seq_len;
    let d = problem.head_dim;
    let ul = problem.unit_len();
    let units = problem.units();
    let br = problem.br.min(n);
    let bc = problem.bc.min(n);
    let scale = if quantize {
        A::from_f64(problem.scale as f32 as f64)
    } else {
        A::from_f64(problem.scale)
    };
    let mut o = vec![0.0; units * ul];
    let mut lse = vec![0.0; units * n];

    let run_one = |unit: usize, o_out: &mut [f64], lse_out: &mut [f64], stats: &mut BlockStats| {
        let b = unit / problem.heads;
        let q = load_unit::<A>(&problem.q[unit * ul..(unit + 1) * ul], quantize);
        let k = load_unit::<A>(&problem.k[unit * ul..(unit + 1) * ul], quantize);
        let v = load_unit::<A>(&problem.v[unit * ul..(unit + 1) * ul], quantize);
        let mut o_unit = vec![A::ZERO; ul];
        let mut lse_unit = vec![A::ZERO; n];
        kernel::forward_unit(
            &q,
            &k,
            &v,
            n,
            d,
            scale,
            &problem.masks[b],
            &indices[b],
            br,
            bc,
            opts.skip_blocks,
            &mut o_unit,
            &mut lse_unit,
            stats,
        );
        store_unit(o_out, &o_unit);
        store_unit(lse_out, &lse_unit);
    };

    let mut total = BlockStats::default();
    let ranges = chunk_ranges(units, opts.threads);
    if ranges.len() <= 1 {
        for unit in 0..units {
            run_one(
                unit,
                &mut o[unit * ul..(unit + 1) * ul],
                &mut lse[unit * n..(unit + 1) * n],
                &mut total,
            );
        }
    } else {
        let mut o_chunks: Vec<&mut [f64]> = o.chunks_mut(ul).collect();
        let mut lse_chunks: Vec<&mut [f64]> = lse.chunks_mut(n).collect();
        let stats: Vec<BlockStats> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for range in ranges.into_iter().rev() {
                let mut os: Vec<_> = o_chunks.split_off(range.start);
                let mut ls: Vec<_> = lse_chunks.split_off(range.start);
                let run_one = &run_one;
                handles.push(scope.spawn(move || {
                    let mut stats = BlockStats::default();
                    for (unit, (o_out, lse_out)) in
                        range.clone().zip(os.iter_mut().zip(ls.iter_mut()))
                    {
                        run_one(unit, o_out, lse_out, &mut stats);
                    }
                    stats
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for s in &stats {
            total.merge(s);
        }
    }
    (AttentionResult { o, lse }, total)
}

fn run_backward<A: Real>(
    problem: &AttentionProblem,
    result: &AttentionResult,
    d_o: &[f64],
    opts: &EngineOptions,
    indices: &[BlockIndex],
    quantize: bool,
) -> (AttentionGradients, BlockStats) {
    let n = problem.seq_len;
    let d = problem.head_dim;
    let ul = problem.unit_len();
    let units = problem.units();
    let br = problem.br.min(n);
    let bc = problem.bc.min(n);
    let scale = if quantize {
        A::from_f64(problem.scale as f32 as f64)
    } else {
        A::from_f64(problem.scale)
    };
    let mut dq = vec![0.0; units * ul];
    let mut dk = vec![0.0; units * ul];
    let mut dv = vec![0.0; units * ul];

    let run_one = |unit: usize,
                   dq_out: &mut [f64],
                   dk_out: &mut [f64],
                   dv_out: &mut [f64],
                   stats: &mut BlockStats| {
        let b = unit / problem.heads;
        let q = load_unit::<A>(&problem.q[unit * ul..(unit + 1) * ul], quantize);
        let k = load_unit::<A>(&problem.k[unit * ul..(unit + 1) * ul], quantize);
        let v = load_unit::<A>(&problem.v[unit * ul..(unit + 1) * ul], quantize);
        // forward outputs of an f32 run are already f32-rounded, so the
        // quantize pass-through is exact for them
        let o = load_unit::<A>(&result.o[unit * ul..(unit + 1) * ul], quantize);
        let lse = load_unit::<A>(&result.lse[unit * n..(unit + 1) * n], quantize);
        let d_o = load_unit::<A>(&d_o[unit * ul..(unit + 1) * ul], quantize);
        let mut dq_unit = vec![A::ZERO; ul];
        let mut dk_unit = vec![A::ZERO; ul];
        let mut dv_unit = vec![A::ZERO; ul];
        kernel::backward_unit(
            &q,
            &k,
            &v,
            &o,
            &lse,
            &d_o,
            n,
            d,
            scale,
            &problem.masks[b],
            &indices[b],
            br,
            bc,
            opts.skip_blocks,
            &mut dq_unit,
            &mut dk_unit,
            &mut dv_unit,
            stats,
        );
        store_unit(dq_out, &dq_unit);
        store_unit(dk_out, &dk_unit);
        store_unit(dv_out, &dv_unit);
    };

    let mut total = BlockStats::default();
    let ranges = chunk_ranges(units, opts.threads);
    if ranges.len() <= 1 {
        for unit in 0..units {
            let span = unit * ul..(unit + 1) * ul;
            run_one(
                unit,
                &mut dq[span.clone()],
                &mut dk[span.clone()],
                &mut dv[span],
                &mut total,
            );
        }
    } else {
        let mut dq_chunks: Vec<&mut [f64]> = dq.chunks_mut(ul).collect();
        let mut dk_chunks: Vec<&mut [f64]> = dk.chunks_mut(ul).collect();
        let mut dv_chunks: Vec<&mut [f64]> = dv.chunks_mut(ul).collect();
        let stats: Vec<BlockStats> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for range in ranges.into_iter().rev() {
                let mut qs: Vec<_> = dq_chunks.split_off(range.start);
                let mut ks: Vec<_> = dk_chunks.split_off(range.start);
                let mut vs: Vec<_> = dv_chunks.split_off(range.start);
                let run_one = &run_one;
                handles.push(scope.spawn(move || {
                    let mut stats = BlockStats::default();
                    for (i, unit) in range.clone().enumerate() {
                        run_one(unit, qs[i], ks[i], vs[i], &mut stats);
                    }
                    stats
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for s in &stats {
            total.merge(s);
        }
    }
    (AttentionGradients { dq, dk, dv }, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{build_mask, MaskKind};

    fn tiny_problem(n: usize, d: usize, kind: &MaskKind, seed: u64) -> AttentionProblem {
        let mask = build_mask(kind, n).unwrap();
        AttentionProblem::synthetic(seed, 1, 1, n, d, vec![mask])
    }

    #[test]
    fn rejects_shape_mismatches() {
        let mut p = AttentionProblem::zeroed(1, 1, 4, 2).with_causal_masks();
        p.q.pop();
        assert!(matches!(forward(&p), Err(AttentionError::Shape(_))));
    }

    #[test]
    fn rejects_nan_inputs() {
        let mut p = AttentionProblem::zeroed(1, 1, 4, 2).with_causal_masks();
        p.k[3] = f64::NAN;
        match forward(&p) {
            Err(AttentionError::NanInput { tensor, index }) => {
                assert_eq!(tensor, "k");
                assert_eq!(index, 3);
            }
            other => panic!("expected NaN rejection, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_mask_count() {
        let p = AttentionProblem::zeroed(2, 1, 4, 2);
        assert!(matches!(forward(&p), Err(AttentionError::Shape(_))));
    }

    #[test]
    fn single_cell_problem() {
        // n = d = 1, q = k = 3, v = 5, scale = 2: one visible score 18,
        // softmax over one element gives O = v and lse = 18.
        let mut p = AttentionProblem::zeroed(1, 1, 1, 1).with_causal_masks();
        p.q[0] = 3.0;
        p.k[0] = 3.0;
        p.v[0] = 5.0;
        p.scale = 2.0;
        let r = forward(&p).unwrap();
        assert_eq!(r.o, vec![5.0]);
        assert_eq!(r.lse, vec![18.0]);
    }

    #[test]
    fn causal_two_rows_identity() {
        // q = k = I, v = I, scale = 1. Row 0 sees only key 0. Row 1 sees
        // scores [0, 1], so its weights are [1, e] / (1 + e).
        let mut p = AttentionProblem::zeroed(1, 1, 2, 2).with_causal_masks();
        p.scale = 1.0;
        for t in [&mut p.q, &mut p.k, &mut p.v] {
            t[0] = 1.0;
            t[3] = 1.0;
        }
        let r = forward(&p).unwrap();
        let e = std::f64::consts::E;
        assert_eq!(r.o[0..2], [1.0, 0.0]);
        let w = [1.0 / (1.0 + e), e / (1.0 + e)];
        assert!((r.o[2] - w[0]).abs() < 1e-15);
        assert!((r.o[3] - w[1]).abs() < 1e-15);
        assert!((r.lse[1] - (1.0 + e).ln()).abs() < 1e-15);
    }

    #[test]
    fn fully_masked_rows_produce_zero_output() {
        // every column masks [j, n), which together with the implicit
        // causal region leaves every row without a single visible key
        let mask = MaskSpec::causal(4, vec![0, 1, 2, 3], vec![4; 4]);
        let mut p = AttentionProblem::synthetic(7, 1, 1, 4, 3, vec![mask]);
        p.scale = 0.5;
        let r = forward(&p).unwrap();
        assert!(r.o.iter().all(|&x| x == 0.0));
        assert!(r.lse.iter().all(|&x| x == f64::NEG_INFINITY));
        let g = backward(&p, &r, &p.synthetic_d_o(7)).unwrap();
        assert!(g.dq.iter().all(|&x| x == 0.0));
        assert!(g.dk.iter().all(|&x| x == 0.0));
        assert!(g.dv.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn skip_toggle_is_bitwise_identical() {
        for (kind, n) in [
            (
                MaskKind::CausalDocument {
                    doc_lens: vec![5, 7, 4],
                },
                16,
            ),
            (MaskKind::SlidingWindow { window: 3 }, 16),
            (
                MaskKind::Document {
                    doc_lens: vec![6, 10],
                },
                16,
            ),
        ] {
            let p = tiny_problem(n, 4, &kind, 11).with_tiles(4, 4);
            let on = EngineOptions {
                skip_blocks: true,
                threads: 1,
            };
            let off = EngineOptions {
                skip_blocks: false,
                threads: 1,
            };
            let (r_on, s_on) = forward_with(&p, &on).unwrap();
            let (r_off, s_off) = forward_with(&p, &off).unwrap();
            assert_eq!(r_on, r_off, "{kind:?}");
            assert!(s_on.visited < s_off.visited, "{kind:?} skipped nothing");
            assert_eq!(s_off.visited, s_off.total_blocks);
            let d_o = p.synthetic_d_o(11);
            let (g_on, _) = backward_with(&p, &r_on, &d_o, &on).unwrap();
            let (g_off, _) = backward_with(&p, &r_on, &d_o, &off).unwrap();
            assert_eq!(g_on, g_off, "{kind:?}");
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let masks: Vec<MaskSpec> = [8usize, 12, 10]
            .iter()
            .map(|&n0| {
                build_mask(
                    &MaskKind::CausalDocument {
                        doc_lens: vec![n0, 16 - n0],
                    },
                    16,
                )
                .unwrap()
            })
            .collect();
        let p = AttentionProblem::synthetic(3, 3, 2, 16, 4, masks).with_tiles(4, 8);
        let d_o = p.synthetic_d_o(3);
        let base = forward(&p).unwrap();
        let base_g = backward(&p, &base, &d_o).unwrap();
        for threads in [2, 3, 8] {
            let opts = EngineOptions {
                skip_blocks: true,
                threads,
            };
            let (r, _) = forward_with(&p, &opts).unwrap();
            assert_eq!(r, base);
            let (g, _) = backward_with(&p, &r, &d_o, &opts).unwrap();
            assert_eq!(g, base_g);
        }
    }

    #[test]
    fn f32_results_are_f32_representable() {
        let p = tiny_problem(16, 4, &MaskKind::Causal, 5)
            .with_precision(Precision::F32, Accumulator::F64);
        let r = forward(&p).unwrap();
        for &x in r.o.iter().chain(r.lse.iter()) {
            assert_eq!(x, x as f32 as f64);
        }
    }

    #[test]
    fn f64_accumulator_tracks_f64_reference_closely() {
        // same f32-rounded inputs, three ways: pure f32, f32 with f64
        // accumulation, and the f64 run on pre-rounded inputs. The wide
        // accumulator must land closer to (or as close to) the reference.
        let n = 64;
        let p32 = tiny_problem(n, 8, &MaskKind::Causal, 9)
            .with_precision(Precision::F32, Accumulator::Same);
        let pacc = p32.clone().with_precision(Precision::F32, Accumulator::F64);
        let mut pref = p32
            .clone()
            .with_precision(Precision::F64, Accumulator::Same);
        pref.q = p32.effective_input(&p32.q);
        pref.k = p32.effective_input(&p32.k);
        pref.v = p32.effective_input(&p32.v);
        pref.scale = p32.effective_scale();
        let r32 = forward(&p32).unwrap();
        let racc = forward(&pacc).unwrap();
        let rref = forward(&pref).unwrap();
        let err = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        };
        assert!(err(&racc.o, &rref.o) <= err(&r32.o, &rref.o));
        assert!(err(&racc.o, &rref.o) < 1e-6);
    }

    #[test]
    fn oversized_tiles_are_clamped() {
        let p = tiny_problem(5, 3, &MaskKind::SlidingWindow { window: 2 }, 2).with_tiles(64, 64);
        let (r, stats) = forward_with(&p, &EngineOptions::default()).unwrap();
        assert_eq!(stats.total_blocks, 1);
        let q = tiny_problem(5, 3, &MaskKind::SlidingWindow { window: 2 }, 2).with_tiles(5, 5);
        let (r2, _) = forward_with(&q, &EngineOptions::default()).unwrap();
        assert_eq!(r, r2);
    }
}
