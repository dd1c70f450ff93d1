//! CPU reference implementation of column-wise sparse attention masking.
//!
//! The crate covers the full pipeline:
//!
//! * [`mask`]: column-interval mask representation, builders for twelve
//!   mask families, dense conversion in both directions,
//! * [`block`]: per-block min/max index, block classification and block
//!   sparsity,
//! * [`attention`]: tiled online-softmax forward/backward that skips fully
//!   masked blocks, plus a dense oracle and a finite-difference checker,
//! * [`analytics`]: FLOP model, sparsity sweeps, wall-clock benchmarks and
//!   the latency-vs-density linear fit,
//! * [`workload`]: synthetic training-task workloads (document mixes,
//!   question/answer splits) bucketed by sparsity,
//! * [`tensor`] / [`rng`]: binary tensor container and the deterministic
//!   generator behind every random input.

pub mod analytics;
pub mod attention;
pub mod block;
pub mod mask;
pub mod rng;
pub mod tensor;
pub mod workload;

pub use attention::{
    backward, forward, AttentionError, AttentionGradients, AttentionProblem, AttentionResult,
    EngineOptions,
};
pub use block::{block_sparsity, build_block_index, BlockClass, BlockIndex};
pub use mask::{build_mask, from_dense, DenseMask, MaskError, MaskKind, MaskMode, MaskSpec};
