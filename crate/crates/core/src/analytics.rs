//! Work modeling, sparsity sweeps, benchmarking, and latency fits.
//!
//! The FLOPs model counts the two score/output matmuls at 2 FLOPs per
//! multiply-accumulate and discounts work by block sparsity: a forward
//! pass is `4 N^2 d h b (1 - rho)` FLOPs, a backward pass 2.5x that (it
//! recomputes scores and forms five gradient matmuls), and a training
//! step forward + backward = 3.5x. Softmax and rescaling flops are
//! excluded by convention.

use crate::attention::{
    backward_with, forward_with, Accumulator, AttentionProblem, EngineOptions, Precision,
};
use crate::block::block_sparsity;
use crate::mask::{build_mask, MaskKind, QuestionAnswerDoc};
use crate::rng::{derive_seed, Rng};
use crate::workload::partition_lengths;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Forward,
    Backward,
    Total,
}

/// Inputs to the FLOPs model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsConfig {
    pub seq_len: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub batch: usize,
    /// Block sparsity in [0, 1]; the fraction of score blocks skipped.
    pub sparsity: f64,
    pub pass: Pass,
}

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("need at least 10 points for a fit, got {0}")]
    TooFewPoints(usize),
    #[error("insufficient spread: sparsity span {span:.4} is below 0.3")]
    InsufficientSpread { span: f64 },
    #[error("csv parse error on line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("benchmark case {name}: {reason}")]
    Case { name: String, reason: String },
}

/// FLOPs for one pass over one problem.
pub fn model_flops(cfg: &FlopsConfig) -> Result<f64, AnalyticsError> {
    if cfg.seq_len == 0 || cfg.head_dim == 0 || cfg.heads == 0 || cfg.batch == 0 {
        return Err(AnalyticsError::Invalid(
            "seq_len, head_dim, heads, batch must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.sparsity) {
        return Err(AnalyticsError::Invalid(format!(
            "sparsity {} outside [0, 1]",
            cfg.sparsity
        )));
    }
    let n = cfg.seq_len as f64;
    let forward = 4.0
        * n
        * n
        * cfg.head_dim as f64
        * cfg.heads as f64
        * cfg.batch as f64
        * (1.0 - cfg.sparsity);
    Ok(match cfg.pass {
        Pass::Forward => forward,
        Pass::Backward => 2.5 * forward,
        Pass::Total => 3.5 * forward,
    })
}

/// Half-open sparsity bins `[lo + i*width, lo + (i+1)*width)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub lo: f64,
    pub width: f64,
    pub count: usize,
}

impl BucketSpec {
    /// Ten bins over [0.5, 1.0) for masks that keep the causal half.
    pub fn causal() -> Self {
        BucketSpec {
            lo: 0.5,
            width: 0.05,
            count: 10,
        }
    }

    /// Twenty bins over [0.0, 1.0) for bidirectional masks.
    pub fn bidirectional() -> Self {
        BucketSpec {
            lo: 0.0,
            width: 0.05,
            count: 20,
        }
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.width * self.count as f64
    }

    pub fn index_of(&self, rho: f64) -> Option<usize> {
        if rho < self.lo || rho >= self.hi() {
            return None;
        }
        let idx = ((rho - self.lo) / self.width) as usize;
        Some(idx.min(self.count - 1))
    }

    pub fn range_of(&self, index: usize) -> (f64, f64) {
        let lo = self.lo + self.width * index as f64;
        (lo, lo + self.width)
    }
}

/// Mask families used for sparsity sweeps, named by the mask they build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFamily {
    CausalDocument,
    Document,
    ShareQuestion,
}

impl SweepFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SweepFamily::CausalDocument => "causal-document",
            SweepFamily::Document => "document",
            SweepFamily::ShareQuestion => "share-question",
        }
    }

    pub fn from_name(name: &str) -> Option<SweepFamily> {
        match name {
            "causal-document" => Some(SweepFamily::CausalDocument),
            "document" => Some(SweepFamily::Document),
            "share-question" => Some(SweepFamily::ShareQuestion),
            _ => None,
        }
    }

    /// Buckets the family can populate: causal families never drop below
    /// the causal half, bidirectional ones span the full range.
    pub fn default_buckets(&self) -> BucketSpec {
        match self {
            SweepFamily::Document => BucketSpec::bidirectional(),
            _ => BucketSpec::causal(),
        }
    }

    /// One random mask instance. Document counts are drawn up to roughly
    /// one per column block so sparsity spans the family's whole
    /// reachable range.
    fn draw(&self, n: usize, rng: &mut Rng) -> Option<MaskKind> {
        let max_docs = (n / 64).clamp(1, 64);
        match self {
            SweepFamily::CausalDocument => {
                let count = rng.usize_in(1, max_docs);
                Some(MaskKind::CausalDocument {
                    doc_lens: partition_lengths(rng, n, count, 1),
                })
            }
            SweepFamily::Document => {
                let count = rng.usize_in(1, max_docs);
                Some(MaskKind::Document {
                    doc_lens: partition_lengths(rng, n, count, 1),
                })
            }
            SweepFamily::ShareQuestion => {
                let min_doc = 64;
                let count = rng.usize_in(1, max_docs.min(n / min_doc).max(1));
                let lens = partition_lengths(rng, n, count, min_doc.min(n));
                let docs: Vec<QuestionAnswerDoc> = lens
                    .iter()
                    .map(|&len| {
                        let k = rng.usize_in(1, 6);
                        let lo = len.div_ceil(10 + k);
                        let hi = len / (5 + k);
                        if lo == 0 || hi < lo {
                            return None;
                        }
                        let answer_lens: Vec<usize> =
                            (0..k).map(|_| rng.usize_in(lo, hi)).collect();
                        let total: usize = answer_lens.iter().sum();
                        if total >= len {
                            return None;
                        }
                        Some(QuestionAnswerDoc {
                            question_len: len - total,
                            answer_lens,
                        })
                    })
                    .collect::<Option<_>>()?;
                Some(MaskKind::ShareQuestion { docs })
            }
        }
    }
}

/// One accepted sweep sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCase {
    pub kind: MaskKind,
    pub sparsity: f64,
    pub bucket: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cases: Vec<SweepCase>,
    /// Bucket indices that stayed short of `per_bucket`.
    pub unfilled: Vec<usize>,
    pub attempts: u64,
}

/// Rejection-samples mask instances until each sparsity bucket holds
/// `per_bucket` cases or the attempt budget runs out. Sparsity is block
/// sparsity at (`br`, `bc`). Unreachable buckets are reported in
/// `unfilled`, never fatal.
#[allow(clippy::too_many_arguments)]
pub fn sparsity_sweep(
    family: SweepFamily,
    n: usize,
    br: usize,
    bc: usize,
    buckets: &BucketSpec,
    per_bucket: usize,
    seed: u64,
    max_attempts: u64,
) -> Result<SweepOutcome, AnalyticsError> {
    if n == 0 || per_bucket == 0 || buckets.count == 0 || buckets.width <= 0.0 {
        return Err(AnalyticsError::Invalid(
            "sweep needs positive seq_len, bucket count, width, and per-bucket target".into(),
        ));
    }
    let mut fill = vec![Vec::<SweepCase>::new(); buckets.count];
    let mut filled = 0usize;
    let want = per_bucket * buckets.count;
    let mut attempts = 0u64;
    while filled < want && attempts < max_attempts {
        let attempt_seed = derive_seed(seed, attempts);
        attempts += 1;
        let mut rng = Rng::new(attempt_seed);
        let Some(kind) = family.draw(n, &mut rng) else {
            continue;
        };
        let Ok(spec) = build_mask(&kind, n) else {
            continue;
        };
        let rho =
            block_sparsity(&spec, br, bc).map_err(|e| AnalyticsError::Invalid(e.to_string()))?;
        let Some(bucket) = buckets.index_of(rho) else {
            continue;
        };
        if fill[bucket].len() >= per_bucket {
            continue;
        }
        fill[bucket].push(SweepCase {
            kind,
            sparsity: rho,
            bucket,
            seed: attempt_seed,
        });
        filled += 1;
    }
    let unfilled: Vec<usize> = (0..buckets.count)
        .filter(|&b| fill[b].len() < per_bucket)
        .collect();
    Ok(SweepOutcome {
        cases: fill.into_iter().flatten().collect(),
        unfilled,
        attempts,
    })
}

/// One benchmark case: a mask, a problem shape, and engine settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCase {
    /// Engine label for the `method` CSV column.
    #[serde(default = "default_method")]
    pub method: String,
    pub kind: MaskKind,
    pub seq_len: usize,
    pub head_dim: usize,
    #[serde(default = "one")]
    pub heads: usize,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default = "default_tile")]
    pub br: usize,
    #[serde(default = "default_tile")]
    pub bc: usize,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default = "default_accumulator")]
    pub accumulator: Accumulator,
    #[serde(default)]
    pub seed: u64,
}

fn default_method() -> String {
    "flashmask-cpu".into()
}
fn one() -> usize {
    1
}
fn default_tile() -> usize {
    crate::attention::DEFAULT_TILE
}
fn default_precision() -> Precision {
    Precision::F32
}
fn default_accumulator() -> Accumulator {
    Accumulator::Same
}

impl BenchCase {
    pub fn new(kind: MaskKind, seq_len: usize, head_dim: usize) -> Self {
        BenchCase {
            method: default_method(),
            kind,
            seq_len,
            head_dim,
            heads: 1,
            batch: 1,
            br: default_tile(),
            bc: default_tile(),
            precision: default_precision(),
            accumulator: default_accumulator(),
            seed: 0,
        }
    }
}

/// Measurement protocol; the defaults discard 10 warmup runs and average
/// 100 timed ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub warmup: u32,
    pub iters: u32,
    /// Engine threads during timing; kept at 1 unless the caller opts
    /// into parallel timing.
    pub threads: usize,
    pub skip_blocks: bool,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            warmup: 10,
            iters: 100,
            threads: 1,
            skip_blocks: true,
        }
    }
}

/// One CSV row of measurements and modeled work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub operation: String,
    pub seq_len: usize,
    pub sparsity: f64,
    pub fw_time_ms: f64,
    pub bw_time_ms: f64,
    pub total_time_ms: f64,
    pub fw_tflops: f64,
    pub bw_tflops: f64,
    pub total_tflops: f64,
    pub fw_tflops_s: f64,
    pub bw_tflops_s: f64,
    pub total_tflops_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchFailure {
    pub case: String,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub settings: BenchSettings,
    pub rows: Vec<BenchRow>,
    pub failures: Vec<BenchFailure>,
}

/// Runs every case sequentially, recording failures per row and carrying
/// on. Forward and backward are timed separately around the tiled engine.
pub fn run_benchmark(cases: &[BenchCase], settings: &BenchSettings) -> BenchReport {
    let mut report = BenchReport {
        settings: *settings,
        rows: Vec::with_capacity(cases.len()),
        failures: Vec::new(),
    };
    for case in cases {
        match run_case(case, settings) {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push(BenchFailure {
                case: format!("{} {} n={}", case.method, case.kind.name(), case.seq_len),
                error: e.to_string(),
            }),
        }
    }
    report
}

fn run_case(case: &BenchCase, settings: &BenchSettings) -> Result<BenchRow, AnalyticsError> {
    let err = |reason: String| AnalyticsError::Case {
        name: format!("{} n={}", case.kind.name(), case.seq_len),
        reason,
    };
    if settings.iters == 0 {
        return Err(err("iters must be at least 1".into()));
    }
    let spec = build_mask(&case.kind, case.seq_len).map_err(|e| err(e.to_string()))?;
    let rho = block_sparsity(&spec, case.br.min(case.seq_len), case.bc.min(case.seq_len))
        .map_err(|e| err(e.to_string()))?;
    let masks = vec![spec; case.batch];
    let problem = AttentionProblem::synthetic(
        case.seed,
        case.batch,
        case.heads,
        case.seq_len,
        case.head_dim,
        masks,
    )
    .with_tiles(case.br, case.bc)
    .with_precision(case.precision, case.accumulator);
    let d_o = problem.synthetic_d_o(case.seed);
    let opts = EngineOptions {
        skip_blocks: settings.skip_blocks,
        threads: settings.threads,
    };

    let (result, _) = forward_with(&problem, &opts).map_err(|e| err(e.to_string()))?;
    for _ in 1..settings.warmup {
        forward_with(&problem, &opts).map_err(|e| err(e.to_string()))?;
    }
    let t0 = Instant::now();
    for _ in 0..settings.iters {
        std::hint::black_box(forward_with(&problem, &opts).map_err(|e| err(e.to_string()))?);
    }
    let fw_time_ms = t0.elapsed().as_secs_f64() * 1e3 / settings.iters as f64;

    for _ in 0..settings.warmup {
        backward_with(&problem, &result, &d_o, &opts).map_err(|e| err(e.to_string()))?;
    }
    let t1 = Instant::now();
    for _ in 0..settings.iters {
        std::hint::black_box(
            backward_with(&problem, &result, &d_o, &opts).map_err(|e| err(e.to_string()))?,
        );
    }
    let bw_time_ms = t1.elapsed().as_secs_f64() * 1e3 / settings.iters as f64;

    let flops = |pass| {
        model_flops(&FlopsConfig {
            seq_len: case.seq_len,
            head_dim: case.head_dim,
            heads: case.heads,
            batch: case.batch,
            sparsity: rho,
            pass,
        })
        .expect("validated above")
    };
    let (fw, bw, total) = (
        flops(Pass::Forward),
        flops(Pass::Backward),
        flops(Pass::Total),
    );
    Ok(BenchRow {
        method: case.method.clone(),
        operation: case.kind.name().to_string(),
        seq_len: case.seq_len,
        sparsity: rho,
        fw_time_ms,
        bw_time_ms,
        total_time_ms: fw_time_ms + bw_time_ms,
        fw_tflops: fw / 1e12,
        bw_tflops: bw / 1e12,
        total_tflops: total / 1e12,
        fw_tflops_s: fw / (fw_time_ms / 1e3) / 1e12,
        bw_tflops_s: bw / (bw_time_ms / 1e3) / 1e12,
        total_tflops_s: total / ((fw_time_ms + bw_time_ms) / 1e3) / 1e12,
    })
}

pub const CSV_HEADER: &str = "method,operation,seq_len,sparsity,fw_time_ms,bw_time_ms,\
                              total_time_ms,fw_tflops,bw_tflops,total_tflops,fw_tflops_s,\
                              bw_tflops_s,total_tflops_s";

/// Six significant digits, plain decimal. Reparsing and reformatting a
/// value printed this way reproduces the same bytes.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if mag >= 6 {
        let scale = 10f64.powi(mag - 5);
        format!("{:.0}", (x / scale).round() * scale)
    } else {
        format!("{:.*}", (5 - mag).max(0) as usize, x)
    }
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.operation,
            r.seq_len,
            fmt_sig6(r.sparsity),
            fmt_sig6(r.fw_time_ms),
            fmt_sig6(r.bw_time_ms),
            fmt_sig6(r.total_time_ms),
            fmt_sig6(r.fw_tflops),
            fmt_sig6(r.bw_tflops),
            fmt_sig6(r.total_tflops),
            fmt_sig6(r.fw_tflops_s),
            fmt_sig6(r.bw_tflops_s),
            fmt_sig6(r.total_tflops_s),
        ));
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<BenchRow>, AnalyticsError> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(AnalyticsError::Csv {
            line: 1,
            reason: "empty input".into(),
        });
    };
    let want: String = CSV_HEADER.split_whitespace().collect();
    if header.trim() != want {
        return Err(AnalyticsError::Csv {
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(AnalyticsError::Csv {
                line: i + 1,
                reason: format!("expected 13 fields, got {}", fields.len()),
            });
        }
        let num = |idx: usize| -> Result<f64, AnalyticsError> {
            fields[idx].trim().parse().map_err(|_| AnalyticsError::Csv {
                line: i + 1,
                reason: format!("bad number {:?}", fields[idx]),
            })
        };
        rows.push(BenchRow {
            method: fields[0].trim().to_string(),
            operation: fields[1].trim().to_string(),
            seq_len: fields[2].trim().parse().map_err(|_| AnalyticsError::Csv {
                line: i + 1,
                reason: format!("bad seq_len {:?}", fields[2]),
            })?,
            sparsity: num(3)?,
            fw_time_ms: num(4)?,
            bw_time_ms: num(5)?,
            total_time_ms: num(6)?,
            fw_tflops: num(7)?,
            bw_tflops: num(8)?,
            total_tflops: num(9)?,
            fw_tflops_s: num(10)?,
            bw_tflops_s: num(11)?,
            total_tflops_s: num(12)?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)` points. Needs at least 10 points
/// whose x span is at least 0.3.
pub fn linearity_fit(points: &[(f64, f64)]) -> Result<LinearFit, AnalyticsError> {
    if points.len() < 10 {
        return Err(AnalyticsError::TooFewPoints(points.len()));
    }
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, _) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
    }
    let span = xmax - xmin;
    if span < 0.3 {
        return Err(AnalyticsError::InsufficientSpread { span });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for &(x, y) in points {
        let pred = slope * x + intercept;
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot == 0.0 {
        // constant y fitted exactly by a flat line
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Fit of total latency against the unskipped work fraction `1 - rho`.
pub fn fit_latency_vs_density(rows: &[BenchRow]) -> Result<LinearFit, AnalyticsError> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (1.0 - r.sparsity, r.total_time_ms))
        .collect();
    linearity_fit(&points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tflops(cfg: &FlopsConfig) -> f64 {
        model_flops(cfg).unwrap() / 1e12
    }

    #[test]
    fn flops_model_matches_published_kernel_table() {
        // 8K tokens, head dim 128, 32 heads, batch 16
        let mut cfg = FlopsConfig {
            seq_len: 8192,
            head_dim: 128,
            heads: 32,
            batch: 16,
            sparsity: 0.0,
            pass: Pass::Forward,
        };
        assert!((tflops(&cfg) - 17.59).abs() / 17.59 < 1e-3);
        cfg.pass = Pass::Backward;
        assert!((tflops(&cfg) - 43.98).abs() / 43.98 < 1e-3);
        cfg.pass = Pass::Total;
        assert!((tflops(&cfg) - 61.57).abs() / 61.57 < 1e-3);
        // causal at the same shape: half the work, minus the diagonal
        let causal = FlopsConfig {
            sparsity: 2016.0 / 4096.0,
            pass: Pass::Forward,
            ..cfg
        };
        assert!((tflops(&causal) - 8.93).abs() / 8.93 < 0.015);
        // 32K tokens, batch 4
        let big = FlopsConfig {
            seq_len: 32768,
            batch: 4,
            sparsity: 0.0,
            pass: Pass::Forward,
            ..cfg
        };
        assert!((tflops(&big) - 70.37).abs() / 70.37 < 1e-3);
        let big_bw = FlopsConfig {
            pass: Pass::Backward,
            ..big
        };
        assert!((tflops(&big_bw) - 175.92).abs() / 175.92 < 1e-3);
    }

    #[test]
    fn flops_change_linearly_with_sparsity() {
        let base = FlopsConfig {
            seq_len: 1024,
            head_dim: 64,
            heads: 2,
            batch: 3,
            sparsity: 0.0,
            pass: Pass::Forward,
        };
        let dense = model_flops(&base).unwrap();
        let half = model_flops(&FlopsConfig {
            sparsity: 0.5,
            ..base
        })
        .unwrap();
        assert_eq!(half, dense * 0.5);
        assert_eq!(dense, 4.0 * 1024.0 * 1024.0 * 64.0 * 2.0 * 3.0);
    }

    #[test]
    fn bucket_indexing_is_half_open() {
        let b = BucketSpec::causal();
        assert_eq!(b.index_of(0.5), Some(0));
        assert_eq!(b.index_of(0.5499), Some(0));
        assert_eq!(b.index_of(0.55), Some(1));
        assert_eq!(b.index_of(0.999), Some(9));
        assert_eq!(b.index_of(0.49), None);
        assert_eq!(b.index_of(1.0), None);
        assert_eq!(BucketSpec::bidirectional().index_of(0.0), Some(0));
        assert_eq!(BucketSpec::bidirectional().count, 20);
    }

    #[test]
    fn sig6_formatting_is_idempotent_and_six_digits() {
        for (x, s) in [
            (17.592186044416, "17.5922"),
            (0.4921875, "0.492188"),
            (1234567.89, "1234570"),
            (0.000123456789, "0.000123457"),
            (0.0, "0"),
            (100.0, "100.000"),
        ] {
            assert_eq!(fmt_sig6(x), s, "{x}");
            let back: f64 = s.parse().unwrap();
            assert_eq!(fmt_sig6(back), s, "reformat of {s}");
        }
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![BenchRow {
            method: "flashmask-cpu".into(),
            operation: "causal-document".into(),
            seq_len: 4096,
            sparsity: 0.6171875,
            fw_time_ms: 1.234567,
            bw_time_ms: 3.0,
            total_time_ms: 4.234567,
            fw_tflops: 0.01,
            bw_tflops: 0.025,
            total_tflops: 0.035,
            fw_tflops_s: 8.1,
            bw_tflops_s: 8.3,
            total_tflops_s: 8.2,
        }];
        let csv = rows_to_csv(&rows);
        let parsed = rows_from_csv(&csv).unwrap();
        assert_eq!(rows_to_csv(&parsed), csv);
        assert_eq!(parsed[0].seq_len, 4096);
        assert!(rows_from_csv("nonsense\n1,2").is_err());
    }

    #[test]
    fn perfect_line_fits_with_unit_r_squared() {
        let points: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let x = i as f64 / 11.0;
                (x, 3.5 * x + 0.25)
            })
            .collect();
        let fit = linearity_fit(&points).unwrap();
        assert!((fit.slope - 3.5).abs() < 1e-12);
        assert!((fit.intercept - 0.25).abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn fit_rejects_few_points_and_narrow_spread() {
        let few: Vec<(f64, f64)> = (0..9).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(
            linearity_fit(&few),
            Err(AnalyticsError::TooFewPoints(9))
        ));
        let narrow: Vec<(f64, f64)> = (0..12).map(|i| (0.5 + i as f64 * 0.01, 1.0)).collect();
        assert!(matches!(
            linearity_fit(&narrow),
            Err(AnalyticsError::InsufficientSpread { .. })
        ));
    }

    #[test]
    fn sweep_fills_buckets_for_causal_documents() {
        let buckets = BucketSpec::causal();
        let out = sparsity_sweep(
            SweepFamily::CausalDocument,
            1024,
            64,
            64,
            &buckets,
            1,
            5,
            5000,
        )
        .unwrap();
        // the top bucket needs more column blocks than 1024 tokens give;
        // everything else should fill
        assert!(out.unfilled.len() <= 2, "unfilled {:?}", out.unfilled);
        for case in &out.cases {
            let (lo, hi) = buckets.range_of(case.bucket);
            assert!(case.sparsity >= lo && case.sparsity < hi);
            assert!(build_mask(&case.kind, 1024).is_ok());
        }
    }

    #[test]
    fn document_family_reaches_low_sparsity() {
        let buckets = BucketSpec::bidirectional();
        let out =
            sparsity_sweep(SweepFamily::Document, 512, 64, 64, &buckets, 1, 11, 4000).unwrap();
        assert!(out.cases.iter().any(|c| c.sparsity < 0.5));
    }

    #[test]
    fn benchmark_produces_rows_and_tolerates_bad_cases() {
        let cases = vec![
            BenchCase::new(MaskKind::Causal, 128, 8),
            BenchCase::new(MaskKind::SlidingWindow { window: 0 }, 128, 8),
        ];
        let settings = BenchSettings {
            warmup: 1,
            iters: 2,
            ..Default::default()
        };
        let report = run_benchmark(&cases, &settings);
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.failures.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.operation, "causal");
        assert!(row.fw_time_ms > 0.0);
        assert!(row.bw_time_ms > 0.0);
        // tflops_s must equal work over time to machine precision
        let expect = row.fw_tflops / (row.fw_time_ms / 1e3);
        assert!((row.fw_tflops_s - expect).abs() <= f64::EPSILON * expect.abs());
        assert_eq!(row.total_time_ms, row.fw_time_ms + row.bw_time_ms);
    }
}
