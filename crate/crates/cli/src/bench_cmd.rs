//! `bench run | fit`.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use flashmask_core::analytics::{
    fit_latency_vs_density, rows_from_csv, rows_to_csv, run_benchmark, sparsity_sweep, BenchCase,
    BenchSettings, SweepFamily,
};
use flashmask_core::attention::{Accumulator, Precision, DEFAULT_TILE};

use crate::config::{parse_accumulator, parse_precision, pick, pick_threads, RunConfig};
use crate::kinds::KindParams;
use crate::{CliError, CliResult};

#[derive(Subcommand, Debug)]
pub enum BenchCmd {
    /// Time forward and backward passes; emit a CSV report
    Run(RunArgs),
    /// Fit total time against (1 - sparsity) from a CSV report
    Fit(FitArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// JSON file with an array of benchmark cases
    #[arg(long, conflicts_with_all = ["preset", "kind"])]
    cases: Option<PathBuf>,

    /// Named case generator; currently "sparsity-sweep"
    #[arg(long)]
    preset: Option<String>,

    /// Mask family: one inline case, or the family swept by a preset
    #[arg(long, alias = "mask-kind")]
    kind: Option<String>,
    #[command(flatten)]
    params: KindParams,

    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Label for the CSV method column
    #[arg(long, default_value = "flashmask-cpu")]
    method: String,

    #[arg(long)]
    br: Option<usize>,
    #[arg(long)]
    bc: Option<usize>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long, value_parser = parse_accumulator)]
    accumulator: Option<Accumulator>,
    #[arg(long)]
    seed: Option<u64>,

    /// Sweep preset: cases per sparsity bucket
    #[arg(long, default_value_t = 1)]
    per_bucket: usize,
    /// Sweep preset: rejection sampling budget
    #[arg(long, default_value_t = 50_000)]
    max_attempts: u64,

    #[arg(long)]
    warmup: Option<u32>,
    #[arg(long)]
    iters: Option<u32>,
    #[arg(long)]
    threads: Option<usize>,
    /// Timing with threads > 1 mixes scheduler noise into the numbers;
    /// this flag states that is intended
    #[arg(long)]
    allow_parallel_timing: bool,

    /// Output CSV file; stdout when omitted
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    csv: PathBuf,
    /// Minimum R^2 to exit 0
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
}

pub fn run(cmd: &BenchCmd, cfg: &RunConfig) -> CliResult {
    match cmd {
        BenchCmd::Run(a) => run_bench(a, cfg),
        BenchCmd::Fit(a) => fit(a),
    }
}

fn sweep_cases(a: &RunArgs, cfg: &RunConfig) -> CliResult<(Vec<BenchCase>, Vec<usize>)> {
    let name = a
        .kind
        .as_deref()
        .ok_or_else(|| CliError::invalid("--preset sparsity-sweep needs --kind"))?;
    let family = SweepFamily::from_name(name).ok_or_else(|| {
        CliError::invalid(format!(
            "no sparsity sweep for kind {name:?}; use causal-document, document, or share-question"
        ))
    })?;
    let n =
        a.n.ok_or_else(|| CliError::invalid("--preset sparsity-sweep needs --n"))?;
    let br = pick(a.br, cfg.br, DEFAULT_TILE);
    let bc = pick(a.bc, cfg.bc, DEFAULT_TILE);
    let seed = pick(a.seed, cfg.seed, 0);
    let buckets = family.default_buckets();
    let sweep = sparsity_sweep(
        family,
        n,
        br,
        bc,
        &buckets,
        a.per_bucket,
        seed,
        a.max_attempts,
    )
    .map_err(|e| CliError::invalid(e.to_string()))?;
    eprintln!(
        "sweep: {} of {} cases in {} attempts",
        sweep.cases.len(),
        a.per_bucket * buckets.count,
        sweep.attempts
    );
    let cases = sweep
        .cases
        .into_iter()
        .map(|c| {
            let mut case = BenchCase::new(c.kind, n, a.d.unwrap_or(32));
            case.method = a.method.clone();
            case.heads = a.heads;
            case.batch = a.batch;
            case.br = br;
            case.bc = bc;
            case.precision = pick(a.precision, cfg.precision, Precision::F32);
            case.accumulator = pick(a.accumulator, cfg.accumulator, Accumulator::Same);
            case.seed = c.seed;
            Ok(case)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((cases, sweep.unfilled))
}

fn inline_case(a: &RunArgs, cfg: &RunConfig) -> CliResult<BenchCase> {
    let name = a
        .kind
        .as_deref()
        .ok_or_else(|| CliError::invalid("give --cases FILE, or --kind plus --n and --d"))?;
    let kind = a.params.to_kind(name)?;
    let n =
        a.n.ok_or_else(|| CliError::invalid("inline case needs --n"))?;
    let d =
        a.d.ok_or_else(|| CliError::invalid("inline case needs --d"))?;
    let mut case = BenchCase::new(kind, n, d);
    case.method = a.method.clone();
    case.heads = a.heads;
    case.batch = a.batch;
    case.br = pick(a.br, cfg.br, DEFAULT_TILE);
    case.bc = pick(a.bc, cfg.bc, DEFAULT_TILE);
    case.precision = pick(a.precision, cfg.precision, Precision::F32);
    case.accumulator = pick(a.accumulator, cfg.accumulator, Accumulator::Same);
    case.seed = pick(a.seed, cfg.seed, 0);
    Ok(case)
}

fn run_bench(a: &RunArgs, cfg: &RunConfig) -> CliResult {
    let threads = pick_threads(a.threads, cfg)?;
    if threads > 1 && !a.allow_parallel_timing {
        return Err(CliError::invalid(
            "timing with --threads > 1 needs --allow-parallel-timing",
        ));
    }

    let mut unfilled = Vec::new();
    let cases: Vec<BenchCase> = if let Some(path) = &a.cases {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?
    } else {
        match a.preset.as_deref() {
            Some("sparsity-sweep") => {
                let (cases, missing) = sweep_cases(a, cfg)?;
                unfilled = missing;
                cases
            }
            Some(other) => {
                return Err(CliError::invalid(format!(
                    "unknown preset {other:?}; only sparsity-sweep exists"
                )))
            }
            None => vec![inline_case(a, cfg)?],
        }
    };
    if cases.is_empty() {
        return Err(CliError::invalid("no benchmark cases to run"));
    }

    let defaults = BenchSettings::default();
    let settings = BenchSettings {
        warmup: a.warmup.unwrap_or(defaults.warmup),
        iters: a.iters.unwrap_or(defaults.iters),
        threads,
        skip_blocks: cfg.skip_blocks.unwrap_or(true),
    };
    eprintln!(
        "settings: cases={} warmup={} iters={} threads={} skip={}",
        cases.len(),
        settings.warmup,
        settings.iters,
        settings.threads,
        settings.skip_blocks
    );

    let report = run_benchmark(&cases, &settings);
    let csv = rows_to_csv(&report.rows);
    match &a.out {
        Some(path) => std::fs::write(path, csv)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    for f in &report.failures {
        eprintln!("case {} failed: {}", f.case, f.error);
    }
    if !unfilled.is_empty() {
        return Err(CliError::at(
            5,
            format!("sparsity buckets {unfilled:?} stayed unfilled; partial CSV written"),
        ));
    }
    if !report.failures.is_empty() {
        return Err(CliError::invalid(format!(
            "{} of {} cases failed",
            report.failures.len(),
            cases.len()
        )));
    }
    Ok(())
}

fn fit(a: &FitArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.csv)
        .map_err(|e| CliError::invalid(format!("{}: {e}", a.csv.display())))?;
    let rows = rows_from_csv(&text).map_err(|e| CliError::invalid(e.to_string()))?;
    let fit = fit_latency_vs_density(&rows).map_err(|e| CliError::invalid(e.to_string()))?;
    println!(
        "points={} slope={:.6} intercept={:.6} r_squared={:.6}",
        rows.len(),
        fit.slope,
        fit.intercept,
        fit.r_squared
    );
    if fit.r_squared < a.threshold {
        return Err(CliError::at(
            4,
            format!("R^2 {:.6} below threshold {}", fit.r_squared, a.threshold),
        ));
    }
    Ok(())
}
