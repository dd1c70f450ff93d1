//! `gen workload`: bucket-balanced synthetic training corpora.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use flashmask_core::analytics::BucketSpec;
use flashmask_core::attention::DEFAULT_TILE;
use flashmask_core::workload::{corpus_to_jsonl, generate_corpus, Task};

use crate::config::{pick, RunConfig};
use crate::{CliError, CliResult};

#[derive(Subcommand, Debug)]
pub enum GenCmd {
    /// Sample task-shaped documents until every sparsity bucket is filled
    Workload(WorkloadArgs),
}

#[derive(Args, Debug)]
pub struct WorkloadArgs {
    /// Training task: sft, lora, dpo, rm, or pretrain
    #[arg(long)]
    task: String,
    /// Sequence length of every sample
    #[arg(long)]
    n: usize,
    /// Total samples; split evenly across the sparsity buckets
    #[arg(long, default_value_t = 240)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,

    /// Use the task's stock generation parameters, rejecting overrides
    #[arg(long)]
    preset: bool,
    /// Document count range "lo,hi"
    #[arg(long, value_delimiter = ',')]
    doc_count: Vec<usize>,
    #[arg(long)]
    min_doc_len: Option<usize>,
    /// Cap on trailing padding tokens
    #[arg(long)]
    max_padding: Option<usize>,

    /// Tile sizes used to measure each sample's block sparsity
    #[arg(long)]
    br: Option<usize>,
    #[arg(long)]
    bc: Option<usize>,
    /// Rejection sampling budget
    #[arg(long, default_value_t = 200_000)]
    max_attempts: u64,

    /// Output JSONL file; stdout when omitted
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: &GenCmd, cfg: &RunConfig) -> CliResult {
    let GenCmd::Workload(a) = cmd;
    let task = Task::from_name(&a.task).ok_or_else(|| {
        CliError::invalid(format!(
            "unknown task {:?}; one of sft, lora, dpo, rm, pretrain",
            a.task
        ))
    })?;
    let overrides = !a.doc_count.is_empty() || a.min_doc_len.is_some() || a.max_padding.is_some();
    if a.preset && overrides {
        return Err(CliError::invalid(
            "--preset fixes the generation parameters; drop the overrides",
        ));
    }
    let mut params = task.default_params(a.n);
    match a.doc_count.as_slice() {
        [] => {}
        [lo, hi] => params.doc_count = (*lo, *hi),
        other => {
            return Err(CliError::invalid(format!(
                "--doc-count takes \"lo,hi\", got {other:?}"
            )))
        }
    }
    if let Some(m) = a.min_doc_len {
        params.min_doc_len = m;
    }
    if let Some(p) = a.max_padding {
        params.max_padding = p;
    }

    let buckets = BucketSpec::causal();
    if a.count == 0 || a.count % buckets.count != 0 {
        return Err(CliError::invalid(format!(
            "--count {} must be a positive multiple of the {} sparsity buckets",
            a.count, buckets.count
        )));
    }
    let per_bucket = a.count / buckets.count;
    let br = pick(a.br, cfg.br, DEFAULT_TILE);
    let bc = pick(a.bc, cfg.bc, DEFAULT_TILE);
    let seed = pick(a.seed, cfg.seed, 0);

    let outcome = generate_corpus(
        task,
        a.n,
        &params,
        per_bucket,
        &buckets,
        br,
        bc,
        seed,
        a.max_attempts,
    )
    .map_err(|e| CliError::invalid(e.to_string()))?;

    let text = corpus_to_jsonl(&outcome.samples);
    match &a.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    eprintln!(
        "generated {} of {} samples in {} attempts",
        outcome.samples.len(),
        a.count,
        outcome.attempts
    );
    if !outcome.complete() {
        return Err(CliError::at(
            5,
            format!(
                "sparsity buckets {:?} stayed unfilled after {} attempts; partial corpus written",
                outcome.unfilled, outcome.attempts
            ),
        ));
    }
    Ok(())
}
