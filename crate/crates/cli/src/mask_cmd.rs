//! `mask build | convert | validate | inspect`.

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use flashmask_core::block::{block_sparsity, coverage_grid, BlockCoverage};
use flashmask_core::mask::{build_mask, from_dense, DenseMask, MaskMode, MaskSpec};
use flashmask_core::tensor::{Tensor, TensorData, MAGIC};

use crate::io;
use crate::kinds::KindParams;
use crate::{CliError, CliResult};

#[derive(Subcommand, Debug)]
pub enum MaskCmd {
    /// Build a mask of a named family and write it as JSON
    Build(BuildArgs),
    /// Convert mask JSON to a dense 0/1 tensor, or back
    Convert(ConvertArgs),
    /// Check a mask file's invariants
    Validate(ValidateArgs),
    /// Print the block coverage grid and block sparsity for given tiles
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Mask family (see --help for the parameter each family needs)
    #[arg(long, alias = "mask-kind")]
    kind: String,
    #[command(flatten)]
    params: KindParams,
    /// Sequence length
    #[arg(long)]
    n: usize,
    /// Output file; stdout when omitted
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Mask JSON or dense tensor file; the format is sniffed
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Storage mode when converting dense to sparse
    #[arg(long, default_value = "bidirectional", value_parser = parse_mode)]
    mode: MaskMode,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    file: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    file: PathBuf,
    #[arg(long, default_value_t = flashmask_core::attention::DEFAULT_TILE)]
    br: usize,
    #[arg(long, default_value_t = flashmask_core::attention::DEFAULT_TILE)]
    bc: usize,
}

fn parse_mode(s: &str) -> Result<MaskMode, String> {
    match s {
        "causal" => Ok(MaskMode::Causal),
        "bidirectional" => Ok(MaskMode::Bidirectional),
        _ => Err(format!("unknown mode {s:?}; use causal or bidirectional")),
    }
}

pub fn load_spec(path: &Path) -> CliResult<MaskSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let spec: MaskSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    Ok(spec)
}

fn emit(out: &Option<PathBuf>, text: String) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn run(cmd: &MaskCmd) -> CliResult {
    match cmd {
        MaskCmd::Build(a) => {
            let kind = a.params.to_kind(&a.kind)?;
            let spec = build_mask(&kind, a.n)?;
            let mut text = serde_json::to_string_pretty(&spec).unwrap();
            text.push('\n');
            emit(&a.out, text)
        }
        MaskCmd::Convert(a) => convert(a),
        MaskCmd::Validate(a) => {
            let spec = load_spec(&a.file)?;
            match spec.validate() {
                Ok(()) => {
                    println!("ok");
                    Ok(())
                }
                Err(violations) => {
                    for v in &violations {
                        println!("{v}");
                    }
                    Err(CliError::invalid(format!(
                        "{} violation(s) in {}",
                        violations.len(),
                        a.file.display()
                    )))
                }
            }
        }
        MaskCmd::Inspect(a) => inspect(a),
    }
}

fn convert(a: &ConvertArgs) -> CliResult {
    let head = {
        let mut f = std::fs::read(&a.input)
            .map_err(|e| CliError::invalid(format!("{}: {e}", a.input.display())))?;
        f.truncate(4);
        f
    };
    if head == MAGIC {
        // dense tensor in, sparse JSON out
        let t = io::load(&a.input)?;
        let cells = match &t.data {
            TensorData::U8(v) => v,
            _ => {
                return Err(CliError::invalid(format!(
                    "{}: dense masks use the u8 dtype",
                    a.input.display()
                )))
            }
        };
        let n = match t.dims.as_slice() {
            [r, c] if r == c => *r,
            other => {
                return Err(CliError::invalid(format!(
                    "{}: dense mask must be square, got dims {other:?}",
                    a.input.display()
                )))
            }
        };
        let mut dense = DenseMask::new(n);
        for i in 0..n {
            for j in 0..n {
                match cells[i * n + j] {
                    0 => {}
                    1 => dense.set(i, j, true),
                    other => {
                        return Err(CliError::invalid(format!(
                            "{}: cell ({i}, {j}) is {other}, expected 0 or 1",
                            a.input.display()
                        )))
                    }
                }
            }
        }
        let spec = from_dense(&dense, a.mode)?;
        let mut text = serde_json::to_string_pretty(&spec).unwrap();
        text.push('\n');
        emit(&Some(a.out.clone()), text)
    } else {
        // sparse JSON in, dense tensor out
        let spec = load_spec(&a.input)?;
        let dense = spec.to_dense()?;
        let n = spec.seq_len;
        let cells: Vec<u8> = dense.as_slice().iter().map(|&m| m as u8).collect();
        let t = Tensor::new(vec![n, n], TensorData::U8(cells))
            .map_err(|e| CliError::invalid(e.to_string()))?;
        io::save(&a.out, &t)
    }
}

fn inspect(a: &InspectArgs) -> CliResult {
    let spec = load_spec(&a.file)?;
    let grid = coverage_grid(&spec, a.br, a.bc)?;
    let rho = block_sparsity(&spec, a.br, a.bc)?;
    let (mut full, mut partial, mut clear) = (0usize, 0usize, 0usize);
    for rb in 0..grid.tr {
        let mut line = String::with_capacity(grid.tc);
        for cb in 0..grid.tc {
            line.push(match grid.get(rb, cb) {
                BlockCoverage::Full => {
                    full += 1;
                    '#'
                }
                BlockCoverage::Partial => {
                    partial += 1;
                    '+'
                }
                BlockCoverage::Clear => {
                    clear += 1;
                    '.'
                }
            });
        }
        println!("{line}");
    }
    println!(
        "n={} br={} bc={} blocks={} full={full} partial={partial} clear={clear} rho={rho:.6}",
        spec.seq_len,
        a.br,
        a.bc,
        full + partial + clear
    );
    Ok(())
}
