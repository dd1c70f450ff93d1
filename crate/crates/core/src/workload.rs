//! Synthetic training workloads: document partitions, question/answer
//! splits, and sparsity-bucketed corpora.
//!
//! A workload sample describes one packed training sequence: a few
//! documents, an optional padding tail, and the mask the task implies.
//! Everything is a pure function of (task, seq_len, params, seed).

use crate::analytics::BucketSpec;
use crate::block::block_sparsity;
use crate::mask::{build_mask, MaskError, MaskKind, MaskSpec, QuestionAnswerDoc};
use crate::rng::{derive_seed, Rng};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sft,
    Lora,
    Dpo,
    Rm,
    Pretrain,
}

impl Task {
    /// Answers drawn per document.
    pub fn answers_per_doc(&self) -> usize {
        match self {
            Task::Sft | Task::Lora => 1,
            Task::Dpo => 2,
            Task::Rm => 6,
            Task::Pretrain => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Sft => "sft",
            Task::Lora => "lora",
            Task::Dpo => "dpo",
            Task::Rm => "rm",
            Task::Pretrain => "pretrain",
        }
    }

    pub fn from_name(name: &str) -> Option<Task> {
        match name {
            "sft" => Some(Task::Sft),
            "lora" => Some(Task::Lora),
            "dpo" => Some(Task::Dpo),
            "rm" => Some(Task::Rm),
            "pretrain" => Some(Task::Pretrain),
            _ => None,
        }
    }

    /// Stock sampling parameters per task. Reward models pack fewer, longer
    /// documents: at most 3 up to 4096 tokens, 4 beyond that.
    pub fn default_params(&self, seq_len: usize) -> GenParams {
        match self {
            Task::Rm => GenParams {
                doc_count: (1, if seq_len <= 4096 { 3 } else { 4 }),
                min_doc_len: 512,
                max_padding: 512,
            },
            _ => GenParams {
                doc_count: (1, 10),
                min_doc_len: 128,
                max_padding: 128,
            },
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Knobs for document-length sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenParams {
    /// Inclusive range for the number of documents.
    pub doc_count: (usize, usize),
    pub min_doc_len: usize,
    pub max_padding: usize,
}

/// One document inside a packed sequence; `length = query_len + answers`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadDoc {
    pub length: usize,
    pub query_len: usize,
    pub answer_lens: Vec<usize>,
}

/// One synthetic packed sequence plus its derived mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSample {
    pub seq_len: usize,
    pub task: Task,
    pub documents: Vec<WorkloadDoc>,
    pub padding_len: usize,
    pub kind: MaskKind,
    pub seed: u64,
    /// Block sparsity of the sample's mask at the tiles it was bucketed
    /// with.
    pub sparsity: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("infeasible workload parameters: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("corpus line {line}: {source}")]
    Corpus {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Splits `total` into `parts` pieces, each at least `min_len`, by sorting
/// uniform cut points over the slack. Every composition with the minimum
/// respected is reachable.
pub(crate) fn partition_lengths(
    rng: &mut Rng,
    total: usize,
    parts: usize,
    min_len: usize,
) -> Vec<usize> {
    debug_assert!(parts >= 1 && parts * min_len <= total);
    let slack = total - parts * min_len;
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.usize_in(0, slack)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for &c in &cuts {
        out.push(min_len + (c - prev));
        prev = c;
    }
    out.push(min_len + (slack - prev));
    out
}

/// Draws a document count, a padding length, and a partition of the rest.
/// Deterministic per seed; document lengths honor `min_doc_len` and sum
/// with padding to `seq_len`.
pub fn sample_document_lengths(
    seq_len: usize,
    params: &GenParams,
    seed: u64,
) -> Result<(Vec<usize>, usize), WorkloadError> {
    let (lo, hi) = params.doc_count;
    if lo == 0 || lo > hi {
        return Err(WorkloadError::Infeasible(format!(
            "document count range [{lo}, {hi}] is empty or starts at zero"
        )));
    }
    if params.min_doc_len == 0 {
        return Err(WorkloadError::Infeasible(
            "min_doc_len must be positive".into(),
        ));
    }
    if lo * params.min_doc_len > seq_len {
        return Err(WorkloadError::Infeasible(format!(
            "{lo} documents of at least {} tokens exceed seq_len {seq_len}",
            params.min_doc_len
        )));
    }
    let mut rng = Rng::new(seed);
    // clamp the upper count to what min_doc_len leaves feasible
    let hi = hi.min(seq_len / params.min_doc_len);
    let count = rng.usize_in(lo, hi);
    let max_pad = params.max_padding.min(seq_len - count * params.min_doc_len);
    let padding = rng.usize_in(0, max_pad);
    let lengths = partition_lengths(&mut rng, seq_len - padding, count, params.min_doc_len);
    Ok((lengths, padding))
}

/// Closed-form answer-length bounds for a document of length `L` with `k`
/// answers: each answer is 10% to 20% of the query, which works out to
/// the integer range `[ceil(L / (10 + k)), floor(L / (5 + k))]`.
pub fn answer_len_bounds(doc_len: usize, k: usize) -> (usize, usize) {
    (doc_len.div_ceil(10 + k), doc_len / (5 + k))
}

/// Splits one document into a query and `k` answers with answer lengths
/// drawn uniformly from `answer_len_bounds`.
pub fn partition_query_answers(
    doc_len: usize,
    k: usize,
    seed: u64,
) -> Result<(usize, Vec<usize>), WorkloadError> {
    if doc_len == 0 {
        return Err(WorkloadError::Infeasible(
            "document length must be positive".into(),
        ));
    }
    if k == 0 {
        return Ok((doc_len, Vec::new()));
    }
    let (lo, hi) = answer_len_bounds(doc_len, k);
    if lo == 0 || hi < lo {
        return Err(WorkloadError::Infeasible(format!(
            "document of length {doc_len} cannot fit {k} answers (bounds [{lo}, {hi}])"
        )));
    }
    let mut rng = Rng::new(seed);
    let answers: Vec<usize> = (0..k).map(|_| rng.usize_in(lo, hi)).collect();
    let total: usize = answers.iter().sum();
    if total >= doc_len {
        return Err(WorkloadError::Infeasible(format!(
            "answers take {total} of {doc_len} tokens, leaving no query"
        )));
    }
    Ok((doc_len - total, answers))
}

/// Builds one sample: documents from `(seed, 0)`, the i-th document's
/// query/answer split from `(seed, 1 + i)`.
pub fn build_workload_sample(
    task: Task,
    seq_len: usize,
    params: &GenParams,
    seed: u64,
) -> Result<WorkloadSample, WorkloadError> {
    let (lengths, padding_len) = sample_document_lengths(seq_len, params, derive_seed(seed, 0))?;
    let k = task.answers_per_doc();
    let mut documents = Vec::with_capacity(lengths.len());
    for (i, &length) in lengths.iter().enumerate() {
        let (query_len, answer_lens) =
            partition_query_answers(length, k, derive_seed(seed, 1 + i as u64))?;
        documents.push(WorkloadDoc {
            length,
            query_len,
            answer_lens,
        });
    }
    let kind = derive_kind(task, &documents, padding_len);
    Ok(WorkloadSample {
        seq_len,
        task,
        documents,
        padding_len,
        kind,
        seed,
        sparsity: 0.0,
    })
}

fn derive_kind(task: Task, documents: &[WorkloadDoc], padding_len: usize) -> MaskKind {
    match task {
        Task::Sft | Task::Lora | Task::Pretrain => {
            let mut doc_lens: Vec<usize> = documents.iter().map(|d| d.length).collect();
            if padding_len > 0 {
                doc_lens.push(padding_len);
            }
            MaskKind::CausalDocument { doc_lens }
        }
        Task::Dpo | Task::Rm => {
            let mut docs: Vec<QuestionAnswerDoc> = documents
                .iter()
                .map(|d| QuestionAnswerDoc {
                    question_len: d.query_len,
                    answer_lens: d.answer_lens.clone(),
                })
                .collect();
            if padding_len > 0 {
                docs.push(QuestionAnswerDoc {
                    question_len: padding_len,
                    answer_lens: Vec::new(),
                });
            }
            MaskKind::ShareQuestion { docs }
        }
    }
}

/// The sample's mask: the derived kind's mask with the padding columns
/// additionally self-masked. Padding keys are invisible to every row,
/// padding rows see nothing at all.
pub fn build_task_mask(sample: &WorkloadSample) -> Result<MaskSpec, MaskError> {
    let mut spec = build_mask(&sample.kind, sample.seq_len)?;
    let n = sample.seq_len;
    for j in n - sample.padding_len..n {
        spec.lts[j] = j;
        spec.lte[j] = n;
    }
    Ok(spec)
}

/// A corpus: bucket-balanced samples plus the bucket indices that could
/// not be filled within the attempt budget.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusOutcome {
    pub samples: Vec<WorkloadSample>,
    pub unfilled: Vec<usize>,
    pub attempts: u64,
}

impl CorpusOutcome {
    pub fn complete(&self) -> bool {
        self.unfilled.is_empty()
    }
}

/// Fills each sparsity bucket with `per_bucket` samples by rejection:
/// attempt `i` uses seed `(seed, i)`, measures block sparsity at
/// (`br`, `bc`), and keeps the sample if its bucket still has room.
/// Stops when full or after `max_attempts`; unreachable buckets are
/// reported, not fatal.
#[allow(clippy::too_many_arguments)]
pub fn generate_corpus(
    task: Task,
    seq_len: usize,
    params: &GenParams,
    per_bucket: usize,
    buckets: &BucketSpec,
    br: usize,
    bc: usize,
    seed: u64,
    max_attempts: u64,
) -> Result<CorpusOutcome, WorkloadError> {
    // fail fast on parameters that can never produce a sample
    build_workload_sample(task, seq_len, params, derive_seed(seed, 0))?;
    let mut fill = vec![Vec::<WorkloadSample>::new(); buckets.count];
    let mut filled = 0usize;
    let want = per_bucket * buckets.count;
    let mut attempts = 0u64;
    while filled < want && attempts < max_attempts {
        let attempt_seed = derive_seed(seed, attempts);
        attempts += 1;
        let Ok(mut sample) = build_workload_sample(task, seq_len, params, attempt_seed) else {
            // some partitions are infeasible for the answer split; resample
            continue;
        };
        let spec = build_task_mask(&sample)?;
        let rho = block_sparsity(&spec, br, bc)?;
        let Some(bucket) = buckets.index_of(rho) else {
            continue;
        };
        if fill[bucket].len() >= per_bucket {
            continue;
        }
        sample.sparsity = rho;
        fill[bucket].push(sample);
        filled += 1;
    }
    let unfilled: Vec<usize> = (0..buckets.count)
        .filter(|&b| fill[b].len() < per_bucket)
        .collect();
    Ok(CorpusOutcome {
        samples: fill.into_iter().flatten().collect(),
        unfilled,
        attempts,
    })
}

/// One sample per line, as JSON.
pub fn corpus_to_jsonl(samples: &[WorkloadSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("workload samples serialize"));
        out.push('\n');
    }
    out
}

pub fn corpus_from_jsonl(text: &str) -> Result<Vec<WorkloadSample>, WorkloadError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| WorkloadError::Corpus {
                line: i + 1,
                source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_respects_minimum_and_total() {
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let lens = partition_lengths(&mut rng, 1000, 7, 30);
            assert_eq!(lens.len(), 7);
            assert_eq!(lens.iter().sum::<usize>(), 1000);
            assert!(lens.iter().all(|&l| l >= 30));
        }
    }

    #[test]
    fn document_sampling_is_deterministic_and_feasible() {
        let params = GenParams {
            doc_count: (1, 10),
            min_doc_len: 128,
            max_padding: 128,
        };
        let (a, pa) = sample_document_lengths(4096, &params, 42).unwrap();
        let (b, pb) = sample_document_lengths(4096, &params, 42).unwrap();
        assert_eq!((&a, pa), (&b, pb));
        assert!(pa <= 128);
        assert!(a.iter().all(|&l| l >= 128));
        assert_eq!(a.iter().sum::<usize>() + pa, 4096);
    }

    #[test]
    fn forced_single_document_case() {
        let params = GenParams {
            doc_count: (1, 1),
            min_doc_len: 128,
            max_padding: 128,
        };
        for seed in 0..20 {
            let (lens, pad) = sample_document_lengths(1024, &params, seed).unwrap();
            assert_eq!(lens.len(), 1);
            assert!((896..=1024).contains(&lens[0]));
            assert_eq!(lens[0] + pad, 1024);
        }
    }

    #[test]
    fn infeasible_document_parameters_error() {
        let params = GenParams {
            doc_count: (4, 8),
            min_doc_len: 512,
            max_padding: 0,
        };
        assert!(matches!(
            sample_document_lengths(1024, &params, 0),
            Err(WorkloadError::Infeasible(_))
        ));
    }

    #[test]
    fn answer_bounds_match_hand_computed_values() {
        assert_eq!(answer_len_bounds(1000, 1), (91, 166));
        assert_eq!(answer_len_bounds(1200, 6), (75, 109));
    }

    #[test]
    fn query_answer_partition_staying_in_bounds() {
        for seed in 0..300 {
            let (q, answers) = partition_query_answers(1000, 2, seed).unwrap();
            assert_eq!(q + answers.iter().sum::<usize>(), 1000);
            let (lo, hi) = answer_len_bounds(1000, 2);
            assert!(answers.iter().all(|&a| (lo..=hi).contains(&a)));
            assert!(q >= 1);
        }
    }

    #[test]
    fn zero_answers_keep_whole_document_as_query() {
        assert_eq!(partition_query_answers(500, 0, 9).unwrap(), (500, vec![]));
    }

    #[test]
    fn tiny_documents_cannot_fit_answers() {
        assert!(matches!(
            partition_query_answers(8, 6, 0),
            Err(WorkloadError::Infeasible(_))
        ));
    }

    #[test]
    fn sft_mask_isolates_padding() {
        let sample = WorkloadSample {
            seq_len: 8,
            task: Task::Sft,
            documents: vec![
                WorkloadDoc {
                    length: 4,
                    query_len: 3,
                    answer_lens: vec![1],
                },
                WorkloadDoc {
                    length: 2,
                    query_len: 1,
                    answer_lens: vec![1],
                },
            ],
            padding_len: 2,
            kind: MaskKind::CausalDocument {
                doc_lens: vec![4, 2, 2],
            },
            seed: 0,
            sparsity: 0.0,
        };
        let spec = build_task_mask(&sample).unwrap();
        assert!(spec.is_valid());
        // padding columns mask everything from the diagonal down
        assert_eq!(spec.lts[6], 6);
        assert_eq!(spec.lts[7], 7);
        // padding rows have no visible keys at all
        for i in 6..8 {
            for j in 0..8 {
                let visible = !spec.is_masked(i, j);
                assert!(!visible, "padding row {i} sees key {j}");
            }
        }
        // real rows never see padding keys, and never cross documents
        assert!(spec.is_masked(5, 3));
        assert!(!spec.is_masked(5, 4));
    }

    #[test]
    fn share_question_mask_blinds_later_answers() {
        // one doc: question 600, answers 200 + 200 in a 1000-token sequence
        let sample = WorkloadSample {
            seq_len: 1000,
            task: Task::Dpo,
            documents: vec![WorkloadDoc {
                length: 1000,
                query_len: 600,
                answer_lens: vec![200, 200],
            }],
            padding_len: 0,
            kind: MaskKind::ShareQuestion {
                docs: vec![QuestionAnswerDoc {
                    question_len: 600,
                    answer_lens: vec![200, 200],
                }],
            },
            seed: 0,
            sparsity: 0.0,
        };
        let spec = build_task_mask(&sample).unwrap();
        // answer-1 columns are masked from row 800 on: answer 2 cannot
        // see answer 1
        for j in 600..800 {
            assert_eq!(spec.lts[j], 800, "column {j}");
        }
        assert!(spec.is_masked(900, 700));
        assert!(!spec.is_masked(900, 100));
    }

    #[test]
    fn sample_building_is_deterministic() {
        let params = Task::Dpo.default_params(2048);
        let a = build_workload_sample(Task::Dpo, 2048, &params, 7).unwrap();
        let b = build_workload_sample(Task::Dpo, 2048, &params, 7).unwrap();
        assert_eq!(a, b);
        let c = build_workload_sample(Task::Dpo, 2048, &params, 8).unwrap();
        assert_ne!(a, c);
        assert_eq!(
            a.documents.iter().map(|d| d.length).sum::<usize>() + a.padding_len,
            2048
        );
        for d in &a.documents {
            assert_eq!(d.query_len + d.answer_lens.iter().sum::<usize>(), d.length);
            assert_eq!(d.answer_lens.len(), 2);
        }
    }

    #[test]
    fn corpus_generation_buckets_and_serializes() {
        let buckets = BucketSpec::causal();
        let params = Task::Sft.default_params(1024);
        let out = generate_corpus(Task::Sft, 1024, &params, 1, &buckets, 64, 64, 99, 4000).unwrap();
        assert!(!out.samples.is_empty());
        for s in &out.samples {
            let idx = buckets.index_of(s.sparsity).unwrap();
            assert!(s.sparsity >= buckets.lo);
            assert!(idx < buckets.count);
            let spec = build_task_mask(s).unwrap();
            assert!(spec.is_valid());
        }
        let jsonl = corpus_to_jsonl(&out.samples);
        let back = corpus_from_jsonl(&jsonl).unwrap();
        assert_eq!(back, out.samples);
        assert_eq!(corpus_to_jsonl(&back), jsonl);
    }

    #[test]
    fn rm_doc_count_range_tracks_seq_len() {
        assert_eq!(Task::Rm.default_params(4096).doc_count, (1, 3));
        assert_eq!(Task::Rm.default_params(8192).doc_count, (1, 4));
        assert_eq!(Task::Rm.default_params(4096).min_doc_len, 512);
        assert_eq!(Task::Sft.default_params(4096).doc_count, (1, 10));
    }
}
