//! `attn forward | backward | check`.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use flashmask_core::attention::{
    backward_with, forward_with, oracle_backward, oracle_forward, Accumulator, AttentionProblem,
    EngineOptions, Precision, DEFAULT_TILE,
};
use flashmask_core::mask::build_mask;
use flashmask_core::tensor::{DType, Tensor};

use crate::config::{
    accumulator_name, parse_accumulator, parse_precision, pick, pick_threads, precision_name,
    RunConfig,
};
use crate::io;
use crate::kinds::KindParams;
use crate::mask_cmd::load_spec;
use crate::{CliError, CliResult};

#[derive(Subcommand, Debug)]
pub enum AttnCmd {
    /// Run the forward pass on tensor files; writes O and lse
    Forward(TensorRunArgs),
    /// Run forward then backward; writes dQ, dK, dV
    Backward(TensorRunArgs),
    /// Compare the tiled engine against the dense reference on a
    /// seeded random problem
    Check(CheckArgs),
}

#[derive(Args, Clone, Debug)]
pub struct EngineArgs {
    /// Query-row tile height
    #[arg(long)]
    br: Option<usize>,
    /// Key-column tile width
    #[arg(long)]
    bc: Option<usize>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    /// Accumulation width: "same" as the working precision, or "f64"
    #[arg(long, value_parser = parse_accumulator)]
    accumulator: Option<Accumulator>,
    #[arg(long)]
    threads: Option<usize>,
    /// Visit fully masked blocks instead of skipping them
    #[arg(long)]
    no_skip_blocks: bool,
    /// Accepted for compatibility; the engine is deterministic either way
    #[arg(long)]
    #[allow(unused)]
    deterministic: bool,
}

impl EngineArgs {
    fn tiles(&self, cfg: &RunConfig) -> (usize, usize) {
        (
            pick(self.br, cfg.br, DEFAULT_TILE),
            pick(self.bc, cfg.bc, DEFAULT_TILE),
        )
    }

    fn options(&self, cfg: &RunConfig) -> CliResult<EngineOptions> {
        let skip = if self.no_skip_blocks {
            false
        } else {
            cfg.skip_blocks.unwrap_or(true)
        };
        Ok(EngineOptions {
            skip_blocks: skip,
            threads: pick_threads(self.threads, cfg)?,
        })
    }
}

#[derive(Args, Debug)]
pub struct TensorRunArgs {
    #[arg(long)]
    q: PathBuf,
    #[arg(long)]
    k: PathBuf,
    #[arg(long)]
    v: PathBuf,
    /// Upstream gradient dO (backward only)
    #[arg(long)]
    d_o: Option<PathBuf>,
    /// Mask JSON file; applied to every batch entry
    #[arg(long)]
    mask: PathBuf,
    /// Output path prefix; files get .o/.lse/.dq/.dk/.dv + .fmtn
    #[arg(short, long)]
    out: PathBuf,
    /// Score scale; default 1/sqrt(d)
    #[arg(long)]
    scale: Option<f64>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Mask family for the problem
    #[arg(long, alias = "mask-kind")]
    kind: String,
    #[command(flatten)]
    params: KindParams,
    /// Working precision of the run under test
    #[arg(long, value_parser = parse_precision)]
    dtype: Option<Precision>,
    #[arg(long)]
    seed: Option<u64>,
    /// Max |difference| allowed on forward outputs; defaults to 1e-12
    /// (f64) or 1e-5 (f32)
    #[arg(long)]
    tolerance: Option<f64>,
    /// Max |difference| allowed on gradients; defaults to 1e-11 (f64)
    /// or 1e-3 (f32)
    #[arg(long)]
    grad_tolerance: Option<f64>,
    /// Also rerun with skipping disabled and demand bitwise equality
    #[arg(long)]
    skip_equivalence: bool,
    #[command(flatten)]
    engine: EngineArgs,
}

pub fn run(cmd: &AttnCmd, cfg: &RunConfig) -> CliResult {
    match cmd {
        AttnCmd::Forward(a) => run_tensors(a, cfg, false),
        AttnCmd::Backward(a) => run_tensors(a, cfg, true),
        AttnCmd::Check(a) => check(a, cfg),
    }
}

/// Accepts [n, d] (single batch and head) or [b, h, n, d].
fn problem_shape(dims: &[usize]) -> CliResult<(usize, usize, usize, usize)> {
    match dims {
        [n, d] => Ok((1, 1, *n, *d)),
        [b, h, n, d] => Ok((*b, *h, *n, *d)),
        other => Err(CliError::invalid(format!(
            "tensors must be [n, d] or [b, h, n, d], got {other:?}"
        ))),
    }
}

fn run_tensors(a: &TensorRunArgs, cfg: &RunConfig, with_backward: bool) -> CliResult {
    let q = io::load(&a.q)?;
    let k = io::load(&a.k)?;
    let v = io::load(&a.v)?;
    for (name, t) in [("k", &k), ("v", &v)] {
        if t.dims != q.dims {
            return Err(CliError::invalid(format!(
                "{name} dims {:?} do not match q dims {:?}",
                t.dims, q.dims
            )));
        }
    }
    let (batch, heads, n, d) = problem_shape(&q.dims)?;
    let spec = load_spec(&a.mask)?;

    let file_precision = if [&q, &k, &v].iter().all(|t| t.dtype() == DType::F32) {
        Precision::F32
    } else {
        Precision::F64
    };
    let precision = pick(a.engine.precision, cfg.precision, file_precision);
    let accumulator = pick(a.engine.accumulator, cfg.accumulator, Accumulator::Same);
    let (br, bc) = a.engine.tiles(cfg);

    let mut problem = AttentionProblem::zeroed(batch, heads, n, d)
        .with_tiles(br, bc)
        .with_precision(precision, accumulator);
    problem.q = io::floats(&q, "q")?;
    problem.k = io::floats(&k, "k")?;
    problem.v = io::floats(&v, "v")?;
    problem.masks = vec![spec; batch];
    if let Some(scale) = a.scale.or(cfg.scale) {
        problem.scale = scale;
    }
    let opts = a.engine.options(cfg)?;

    let out_dtype = match precision {
        Precision::F32 => DType::F32,
        Precision::F64 => DType::F64,
    };
    let write = |suffix: &str, dims: Vec<usize>, data: &[f64]| -> CliResult {
        let path = PathBuf::from(format!("{}.{suffix}.fmtn", a.out.display()));
        let t = Tensor::from_f64(dims, data, out_dtype)
            .map_err(|e| CliError::invalid(e.to_string()))?;
        io::save(&path, &t)?;
        eprintln!("wrote {}", path.display());
        Ok(())
    };
    let out_dims = q.dims.clone();
    let lse_dims: Vec<usize> = match q.dims.as_slice() {
        [n, _] => vec![*n],
        [b, h, n, _] => vec![*b, *h, *n],
        _ => unreachable!(),
    };

    let (result, _) = forward_with(&problem, &opts)?;
    if with_backward {
        let d_o_path = a
            .d_o
            .as_ref()
            .ok_or_else(|| CliError::invalid("backward needs --d-o"))?;
        let d_o = io::load(d_o_path)?;
        if d_o.dims != q.dims {
            return Err(CliError::invalid(format!(
                "d_o dims {:?} do not match q dims {:?}",
                d_o.dims, q.dims
            )));
        }
        let (grads, _) = backward_with(&problem, &result, &io::floats(&d_o, "d_o")?, &opts)?;
        write("dq", out_dims.clone(), &grads.dq)?;
        write("dk", out_dims.clone(), &grads.dk)?;
        write("dv", out_dims, &grads.dv)?;
    } else {
        write("o", out_dims, &result.o)?;
        write("lse", lse_dims, &result.lse)?;
    }
    Ok(())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

fn check(a: &CheckArgs, cfg: &RunConfig) -> CliResult {
    let kind = a.params.to_kind(&a.kind)?;
    let mask = build_mask(&kind, a.n)?;
    let precision = pick(
        a.dtype.or(a.engine.precision),
        cfg.precision,
        Precision::F64,
    );
    let accumulator = pick(a.engine.accumulator, cfg.accumulator, Accumulator::Same);
    let (br, bc) = a.engine.tiles(cfg);
    let seed = pick(a.seed, cfg.seed, 0);
    let opts = a.engine.options(cfg)?;

    let problem =
        AttentionProblem::synthetic(seed, a.batch, a.heads, a.n, a.d, vec![mask; a.batch])
            .with_tiles(br, bc)
            .with_precision(precision, accumulator);
    let d_o = problem.synthetic_d_o(seed);

    println!(
        "settings: kind={} n={} d={} batch={} heads={} br={br} bc={bc} precision={} \
         accumulator={} threads={} skip={} deterministic=true seed={seed}",
        kind.name(),
        a.n,
        a.d,
        a.batch,
        a.heads,
        precision_name(precision),
        accumulator_name(accumulator),
        opts.threads,
        opts.skip_blocks,
    );

    let (result, stats) = forward_with(&problem, &opts)?;
    let reference = oracle_forward(&problem)?;
    let fw_diff = max_abs_diff(&result.o, &reference.o);
    let lse_diff = max_abs_diff(&result.lse, &reference.lse);

    let (grads, _) = backward_with(&problem, &result, &d_o, &opts)?;
    let ref_grads = oracle_backward(&problem, &result, &d_o)?;
    let bw_diff = max_abs_diff(&grads.dq, &ref_grads.dq)
        .max(max_abs_diff(&grads.dk, &ref_grads.dk))
        .max(max_abs_diff(&grads.dv, &ref_grads.dv));

    println!(
        "blocks: visited {} of {} ({} skipped)",
        stats.visited,
        stats.total_blocks,
        stats.skipped()
    );
    println!("forward:  max|o diff| = {fw_diff:.3e}, max|lse diff| = {lse_diff:.3e}");
    println!("backward: max|grad diff| = {bw_diff:.3e}");

    let (fw_tol, bw_tol) = match precision {
        Precision::F64 => (1e-12, 1e-11),
        Precision::F32 => (1e-5, 1e-3),
    };
    let fw_tol = a.tolerance.unwrap_or(fw_tol);
    let bw_tol = a.grad_tolerance.unwrap_or(bw_tol);

    if a.skip_equivalence {
        let other = EngineOptions {
            skip_blocks: !opts.skip_blocks,
            ..opts
        };
        let (r2, _) = forward_with(&problem, &other)?;
        let (g2, _) = backward_with(&problem, &result, &d_o, &other)?;
        let bitwise = r2.o == result.o
            && r2.lse == result.lse
            && g2.dq == grads.dq
            && g2.dk == grads.dk
            && g2.dv == grads.dv;
        println!("bitwise: {bitwise}");
        if !bitwise {
            return Err(CliError::at(
                3,
                "skip-enabled and skip-disabled runs are not bitwise identical",
            ));
        }
    }

    if fw_diff > fw_tol || lse_diff > fw_tol {
        return Err(CliError::at(
            3,
            format!("forward diff exceeds tolerance {fw_tol:.1e}"),
        ));
    }
    if bw_diff > bw_tol {
        return Err(CliError::at(
            3,
            format!("gradient diff exceeds tolerance {bw_tol:.1e}"),
        ));
    }
    println!("ok");
    Ok(())
}
