//! `flashmask`: one binary with `mask`, `attn`, `bench`, and `gen`
//! subcommands. Exit codes: 0 success, 1 invalid input, 2 mask not
//! representable in column-interval form, 3 tolerance exceeded,
//! 4 fit below threshold, 5 bucket budget exhausted.

mod attn_cmd;
mod bench_cmd;
mod config;
mod gen_cmd;
mod io;
mod kinds;
mod mask_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn at(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<flashmask_core::mask::MaskError> for CliError {
    fn from(e: flashmask_core::mask::MaskError) -> Self {
        use flashmask_core::mask::MaskError::*;
        let code = match e {
            NotRepresentable { .. } | NotCausal { .. } => 2,
            _ => 1,
        };
        CliError::at(code, e.to_string())
    }
}

impl From<flashmask_core::attention::AttentionError> for CliError {
    fn from(e: flashmask_core::attention::AttentionError) -> Self {
        CliError::invalid(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::invalid(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "flashmask",
    version,
    about = "Column-interval sparse attention toolkit"
)]
struct Cli {
    /// JSON file with default run parameters; explicit flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Report failures as one-line JSON on stderr
    #[arg(long, global = true)]
    json_errors: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build, convert, validate, and inspect mask files
    #[command(subcommand)]
    Mask(mask_cmd::MaskCmd),
    /// Run the tiled attention engine on tensor files, or self-check it
    #[command(subcommand)]
    Attn(attn_cmd::AttnCmd),
    /// Time the engine and fit latency against block density
    #[command(subcommand)]
    Bench(bench_cmd::BenchCmd),
    /// Generate synthetic training workloads
    #[command(subcommand)]
    Gen(gen_cmd::GenCmd),
}

fn run(cli: &Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(path) => config::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.cmd {
        Cmd::Mask(c) => mask_cmd::run(c),
        Cmd::Attn(c) => attn_cmd::run(c, &cfg),
        Cmd::Bench(c) => bench_cmd::run(c, &cfg),
        Cmd::Gen(c) => gen_cmd::run(c, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json_errors {
                let msg = serde_json::json!({ "error": e.message, "exit": e.code });
                eprintln!("{msg}");
            } else {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}
