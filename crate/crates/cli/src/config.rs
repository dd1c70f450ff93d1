//! Defaults file and flag resolution. Precedence for every parameter:
//! explicit flag, then config file, then (for threads only) the
//! `FLASHMASK_THREADS` environment variable, then the built-in default.

use std::path::Path;

use flashmask_core::attention::{Accumulator, Precision};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub threads: Option<usize>,
    pub br: Option<usize>,
    pub bc: Option<usize>,
    pub precision: Option<Precision>,
    pub accumulator: Option<Accumulator>,
    pub scale: Option<f64>,
    pub seed: Option<u64>,
    /// Accepted for compatibility; the engine is deterministic either way.
    pub deterministic: Option<bool>,
    pub skip_blocks: Option<bool>,
}

pub fn load(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn pick<T>(flag: Option<T>, cfg: Option<T>, default: T) -> T {
    flag.or(cfg).unwrap_or(default)
}

pub fn pick_threads(flag: Option<usize>, cfg: &RunConfig) -> CliResult<usize> {
    let threads = match flag.or(cfg.threads) {
        Some(t) => t,
        None => match std::env::var("FLASHMASK_THREADS") {
            Ok(s) => s.parse().map_err(|_| {
                CliError::invalid(format!("FLASHMASK_THREADS is not a thread count: {s:?}"))
            })?,
            Err(_) => 1,
        },
    };
    if threads == 0 {
        return Err(CliError::invalid("thread count must be positive"));
    }
    Ok(threads)
}

pub fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("unknown precision {s:?}; use f32 or f64")),
    }
}

pub fn parse_accumulator(s: &str) -> Result<Accumulator, String> {
    match s {
        "same" => Ok(Accumulator::Same),
        "f64" => Ok(Accumulator::F64),
        _ => Err(format!("unknown accumulator {s:?}; use same or f64")),
    }
}

pub fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    }
}

pub fn accumulator_name(a: Accumulator) -> &'static str {
    match a {
        Accumulator::Same => "same",
        Accumulator::F64 => "f64",
    }
}
