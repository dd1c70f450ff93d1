//! Shared generators for the integration suites.
//!
//! `independent_dense` re-derives every mask family cell by cell from its
//! plain-language definition (documents, windows, buckets), deliberately
//! avoiding the column-interval arithmetic the builders use, so the two
//! implementations check each other.

#![allow(dead_code)]

use flashmask_core::mask::{MaskKind, MaskMode, MaskSpec, PrefixDoc, QuestionAnswerDoc};
use flashmask_core::rng::Rng;

/// Row-major `n*n` mask, `true` = masked, from first principles.
pub fn independent_dense(kind: &MaskKind, n: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    let mut set = |i: usize, j: usize, v: bool| m[i * n + j] = v;
    match kind {
        MaskKind::Causal => {
            for i in 0..n {
                for j in 0..n {
                    set(i, j, i < j);
                }
            }
        }
        MaskKind::SlidingWindow { window } => {
            for i in 0..n {
                for j in 0..n {
                    set(i, j, i < j || i >= j + window);
                }
            }
        }
        MaskKind::CausalDocument { doc_lens } => {
            let doc = doc_ids(doc_lens, n);
            for i in 0..n {
                for j in 0..n {
                    set(i, j, i < j || doc[i] != doc[j]);
                }
            }
        }
        MaskKind::Document { doc_lens } => {
            let doc = doc_ids(doc_lens, n);
            for i in 0..n {
                for j in 0..n {
                    set(i, j, doc[i] != doc[j]);
                }
            }
        }
        MaskKind::ShareQuestion { docs } => {
            // the row range that may see column j ends where j's segment
            // (question -> its document, answer -> that answer) ends
            let mut seg_end = vec![0usize; n];
            let mut doc_id = vec![usize::MAX; n];
            let mut pos = 0;
            for (di, d) in docs.iter().enumerate() {
                let doc_len = d.question_len + d.answer_lens.iter().sum::<usize>();
                let doc_end = pos + doc_len;
                for j in pos..pos + d.question_len {
                    seg_end[j] = doc_end;
                    doc_id[j] = di;
                }
                let mut a_start = pos + d.question_len;
                for &a in &d.answer_lens {
                    for j in a_start..a_start + a {
                        seg_end[j] = a_start + a;
                        doc_id[j] = di;
                    }
                    a_start += a;
                }
                pos = doc_end;
            }
            for i in 0..n {
                for j in 0..n {
                    set(i, j, i < j || i >= seg_end[j]);
                }
            }
        }
        MaskKind::GlobalSlidingWindow { global, window } => {
            for i in 0..n {
                for j in 0..n {
                    set(i, j, i < j || (j >= *global && i >= j + window));
                }
            }
        }
        MaskKind::CausalBlockwise { block_lens } => {
            // a row sees its own block and, from the final block, all
            // earlier ones
            let blk = doc_ids(block_lens, n);
            let last = block_lens.len() - 1;
            for i in 0..n {
                for j in 0..n {
                    set(i, j, i < j || (blk[i] != blk[j] && blk[i] != last));
                }
            }
        }
        MaskKind::PrefixLmCausal { prefix_len } => {
            for i in 0..n {
                for j in 0..n {
                    set(i, j, j >= *prefix_len && i < j);
                }
            }
        }
        MaskKind::PrefixLmDocument { docs } => {
            let lens: Vec<usize> = docs.iter().map(|d| d.len).collect();
            let doc = doc_ids(&lens, n);
            let mut in_prefix = vec![false; n];
            let mut pos = 0;
            for d in docs {
                for f in &mut in_prefix[pos..pos + d.prefix_len] {
                    *f = true;
                }
                pos += d.len;
            }
            for i in 0..n {
                for j in 0..n {
                    let masked = doc[i] != doc[j] || (!in_prefix[j] && i < j);
                    set(i, j, masked);
                }
            }
        }
        MaskKind::QkSparse { kept_q, kept_k } => {
            let mut qk = vec![false; n];
            let mut kk = vec![false; n];
            for &i in kept_q {
                qk[i] = true;
            }
            for &j in kept_k {
                kk[j] = true;
            }
            for i in 0..n {
                for j in 0..n {
                    set(i, j, i < j || !qk[i] || !kk[j]);
                }
            }
        }
        MaskKind::HashSparse { buckets } => {
            for i in 0..n {
                for j in 0..n {
                    set(i, j, i < j || buckets[i] != buckets[j]);
                }
            }
        }
        MaskKind::RandomEviction { seed, prob, span } => {
            // replay the builder's column draws, then paint cells
            let mut rng = Rng::new(*seed);
            for i in 0..n {
                for j in 0..i + 1 {
                    set(i, j, false);
                }
                for j in i + 1..n {
                    set(i, j, true);
                }
            }
            for j in 0..n {
                if rng.chance(*prob) && j + 1 < n {
                    let start = rng.usize_in(j + 1, n - 1);
                    let end = (start + span).min(n);
                    for i in start..end {
                        set(i, j, true);
                    }
                }
            }
        }
    }
    m
}

fn doc_ids(lens: &[usize], n: usize) -> Vec<usize> {
    let mut ids = vec![0usize; n];
    let mut pos = 0;
    for (d, &len) in lens.iter().enumerate() {
        ids[pos..pos + len].fill(d);
        pos += len;
    }
    assert_eq!(pos, n, "lengths must cover the sequence");
    ids
}

/// Splits `n` into `parts` positive pieces.
pub fn partition(rng: &mut Rng, n: usize, parts: usize, min_len: usize) -> Vec<usize> {
    assert!(parts * min_len <= n);
    let slack = n - parts * min_len;
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.usize_in(0, slack)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for &c in &cuts {
        out.push(min_len + c - prev);
        prev = c;
    }
    out.push(min_len + slack - prev);
    out
}

/// A random instance of the mask family with index `which` (0..12),
/// always valid and representable at `n`.
pub fn random_kind(rng: &mut Rng, n: usize, which: usize) -> MaskKind {
    match which % 12 {
        0 => MaskKind::Causal,
        1 => MaskKind::SlidingWindow {
            window: rng.usize_in(1, n),
        },
        2 => {
            let count = rng.usize_in(1, n.min(6));
            MaskKind::CausalDocument {
                doc_lens: partition(rng, n, count, 1),
            }
        }
        3 => {
            let count = rng.usize_in(1, n.min(6));
            MaskKind::Document {
                doc_lens: partition(rng, n, count, 1),
            }
        }
        4 => MaskKind::ShareQuestion {
            docs: random_qa_docs(rng, n),
        },
        5 => MaskKind::GlobalSlidingWindow {
            global: rng.usize_in(0, n),
            window: rng.usize_in(1, n),
        },
        6 => {
            let count = rng.usize_in(1, n.min(5));
            MaskKind::CausalBlockwise {
                block_lens: partition(rng, n, count, 1),
            }
        }
        7 => MaskKind::PrefixLmCausal {
            prefix_len: rng.usize_in(0, n),
        },
        8 => {
            let count = rng.usize_in(1, n.min(4));
            let lens = partition(rng, n, count, 1);
            let docs = lens
                .iter()
                .map(|&len| PrefixDoc {
                    len,
                    prefix_len: rng.usize_in(0, len),
                })
                .collect();
            MaskKind::PrefixLmDocument { docs }
        }
        9 => {
            // contiguous dropped spans keep the mask representable
            let (a, b) = random_span(rng, n);
            let (c, d) = random_span(rng, n);
            MaskKind::QkSparse {
                kept_q: (0..n).filter(|&i| i < a || i >= b).collect(),
                kept_k: (0..n).filter(|&j| j < c || j >= d).collect(),
            }
        }
        10 => {
            // non-decreasing bucket ids: same-bucket rows form runs
            let count = rng.usize_in(1, n.min(5));
            let lens = partition(rng, n, count, 1);
            let mut buckets = Vec::with_capacity(n);
            for (b, &len) in lens.iter().enumerate() {
                buckets.extend(std::iter::repeat(b).take(len));
            }
            MaskKind::HashSparse { buckets }
        }
        _ => MaskKind::RandomEviction {
            seed: rng.next_u64(),
            prob: 0.5,
            span: rng.usize_in(1, n),
        },
    }
}

fn random_span(rng: &mut Rng, n: usize) -> (usize, usize) {
    let a = rng.usize_in(0, n);
    let b = rng.usize_in(a, n);
    (a, b)
}

fn random_qa_docs(rng: &mut Rng, n: usize) -> Vec<QuestionAnswerDoc> {
    let count = rng.usize_in(1, n.min(3));
    let lens = partition(rng, n, count, 1);
    lens.iter()
        .map(|&len| {
            // answers of ~1/4 the document each, when they fit
            let k = if len >= 8 { rng.usize_in(0, 3) } else { 0 };
            let answer_lens: Vec<usize> = (0..k).map(|_| len / 8 + 1).collect();
            let total: usize = answer_lens.iter().sum();
            if total < len {
                QuestionAnswerDoc {
                    question_len: len - total,
                    answer_lens,
                }
            } else {
                QuestionAnswerDoc {
                    question_len: len,
                    answer_lens: vec![],
                }
            }
        })
        .collect()
}

/// A random valid interval spec built directly from the invariants,
/// independent of any builder.
pub fn random_spec(rng: &mut Rng, n: usize, mode: MaskMode) -> MaskSpec {
    let mut lts = vec![n; n];
    let mut lte = vec![n; n];
    for j in 0..n {
        if rng.chance(0.6) {
            let s = rng.usize_in(j, n);
            let e = rng.usize_in(s, n);
            if s < e {
                lts[j] = s;
                lte[j] = e;
            }
        }
    }
    match mode {
        MaskMode::Causal => MaskSpec::causal(n, lts, lte),
        MaskMode::Bidirectional => {
            let mut uts = vec![0; n];
            let mut ute = vec![0; n];
            for j in 0..n {
                if rng.chance(0.6) {
                    let s = rng.usize_in(0, j);
                    let e = rng.usize_in(s, j);
                    if s < e {
                        uts[j] = s;
                        ute[j] = e;
                    }
                }
            }
            MaskSpec::bidirectional(n, lts, lte, uts, ute)
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x == y {
                // covers equal infinities in lse comparisons
                0.0
            } else {
                (x - y).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub const ALL_KIND_COUNT: usize = 12;
