//! Builders for the supported mask families.
//!
//! Ten of the twelve families have closed-form column intervals and are
//! constructed directly. `QkSparse` and `HashSparse` can produce
//! non-contiguous columns for adversarial parameters, so they are built by
//! materializing the dense pattern and converting back; the conversion
//! reports exactly which column breaks representability.

use super::{from_dense, DenseMask, MaskError, MaskMode, MaskSpec};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// One document of a shared-question mask: a question followed by answers
/// that may see the question and themselves, but not each other.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionAnswerDoc {
    pub question_len: usize,
    pub answer_lens: Vec<usize>,
}

/// One document of a prefix-LM mask: bidirectional within the first
/// `prefix_len` tokens, causal for the rest of the document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixDoc {
    pub len: usize,
    pub prefix_len: usize,
}

/// Mask family plus its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskKind {
    Causal,
    SlidingWindow {
        window: usize,
    },
    CausalDocument {
        doc_lens: Vec<usize>,
    },
    Document {
        doc_lens: Vec<usize>,
    },
    ShareQuestion {
        docs: Vec<QuestionAnswerDoc>,
    },
    GlobalSlidingWindow {
        global: usize,
        window: usize,
    },
    CausalBlockwise {
        block_lens: Vec<usize>,
    },
    PrefixLmCausal {
        prefix_len: usize,
    },
    PrefixLmDocument {
        docs: Vec<PrefixDoc>,
    },
    QkSparse {
        kept_q: Vec<usize>,
        kept_k: Vec<usize>,
    },
    HashSparse {
        buckets: Vec<usize>,
    },
    RandomEviction {
        seed: u64,
        prob: f64,
        span: usize,
    },
}

impl MaskKind {
    /// Storage mode of the resulting mask.
    pub fn mode(&self) -> MaskMode {
        match self {
            MaskKind::Document { .. }
            | MaskKind::PrefixLmCausal { .. }
            | MaskKind::PrefixLmDocument { .. } => MaskMode::Bidirectional,
            _ => MaskMode::Causal,
        }
    }

    /// Stable kebab-case name, used in reports and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            MaskKind::Causal => "causal",
            MaskKind::SlidingWindow { .. } => "sliding-window",
            MaskKind::CausalDocument { .. } => "causal-document",
            MaskKind::Document { .. } => "document",
            MaskKind::ShareQuestion { .. } => "share-question",
            MaskKind::GlobalSlidingWindow { .. } => "global-sliding-window",
            MaskKind::CausalBlockwise { .. } => "causal-blockwise",
            MaskKind::PrefixLmCausal { .. } => "prefix-lm-causal",
            MaskKind::PrefixLmDocument { .. } => "prefix-lm-document",
            MaskKind::QkSparse { .. } => "qk-sparse",
            MaskKind::HashSparse { .. } => "hash-sparse",
            MaskKind::RandomEviction { .. } => "random-eviction",
        }
    }
}

fn params_err(reason: impl Into<String>) -> MaskError {
    MaskError::InvalidParams {
        reason: reason.into(),
    }
}

fn check_lens(what: &str, lens: &[usize], n: usize) -> Result<(), MaskError> {
    if lens.is_empty() {
        return Err(params_err(format!("{what} must not be empty")));
    }
    if lens.iter().any(|&l| l == 0) {
        return Err(params_err(format!("{what} must all be positive")));
    }
    let total: usize = lens.iter().sum();
    if total != n {
        return Err(params_err(format!("{what} sum to {total}, expected {n}")));
    }
    Ok(())
}

/// Builds the column-interval mask for `kind` over `n` tokens.
pub fn build_mask(kind: &MaskKind, n: usize) -> Result<MaskSpec, MaskError> {
    if n == 0 {
        return Err(params_err("seq_len must be positive"));
    }
    let spec = match kind {
        MaskKind::Causal => MaskSpec::empty(n, MaskMode::Causal),

        MaskKind::SlidingWindow { window } => {
            let w = *window;
            if w == 0 || w > n {
                return Err(params_err(format!("window {w} outside [1, {n}]")));
            }
            let lts: Vec<usize> = (0..n).map(|j| (j + w).min(n)).collect();
            MaskSpec::causal(n, lts, vec![n; n])
        }

        MaskKind::CausalDocument { doc_lens } => {
            check_lens("doc_lens", doc_lens, n)?;
            let mut lts = vec![n; n];
            let mut start = 0;
            for &len in doc_lens {
                let end = start + len;
                lts[start..end].fill(end);
                start = end;
            }
            MaskSpec::causal(n, lts, vec![n; n])
        }

        MaskKind::Document { doc_lens } => {
            check_lens("doc_lens", doc_lens, n)?;
            let mut lts = vec![n; n];
            let mut ute = vec![0; n];
            let mut start = 0;
            for &len in doc_lens {
                let end = start + len;
                lts[start..end].fill(end);
                ute[start..end].fill(start);
                start = end;
            }
            MaskSpec::bidirectional(n, lts, vec![n; n], vec![0; n], ute)
        }

        MaskKind::ShareQuestion { docs } => {
            if docs.is_empty() {
                return Err(params_err("docs must not be empty"));
            }
            let mut lts = vec![n; n];
            let mut pos = 0;
            for (di, doc) in docs.iter().enumerate() {
                if doc.question_len == 0 {
                    return Err(params_err(format!(
                        "doc {di}: question_len must be positive"
                    )));
                }
                if doc.answer_lens.iter().any(|&a| a == 0) {
                    return Err(params_err(format!(
                        "doc {di}: answer lengths must be positive"
                    )));
                }
                let doc_len = doc.question_len + doc.answer_lens.iter().sum::<usize>();
                let doc_end = pos + doc_len;
                if doc_end > n {
                    return Err(params_err(format!("documents overrun seq_len {n}")));
                }
                // question columns: visible to the whole document
                lts[pos..pos + doc.question_len].fill(doc_end);
                let mut a_start = pos + doc.question_len;
                for &a in &doc.answer_lens {
                    let a_end = a_start + a;
                    // answer columns: visible only inside their own answer
                    lts[a_start..a_end].fill(a_end);
                    a_start = a_end;
                }
                pos = doc_end;
            }
            if pos != n {
                return Err(params_err(format!("documents cover {pos} of {n} tokens")));
            }
            MaskSpec::causal(n, lts, vec![n; n])
        }

        MaskKind::GlobalSlidingWindow { global, window } => {
            let (g, w) = (*global, *window);
            if g > n {
                return Err(params_err(format!("global {g} exceeds seq_len {n}")));
            }
            if w == 0 || w > n {
                return Err(params_err(format!("window {w} outside [1, {n}]")));
            }
            let lts: Vec<usize> = (0..n)
                .map(|j| if j < g { n } else { (j + w).min(n) })
                .collect();
            MaskSpec::causal(n, lts, vec![n; n])
        }

        MaskKind::CausalBlockwise { block_lens } => {
            check_lens("block_lens", block_lens, n)?;
            let final_start = n - block_lens[block_lens.len() - 1];
            let mut lts = vec![n; n];
            let mut lte = vec![n; n];
            let mut start = 0;
            for &len in &block_lens[..block_lens.len() - 1] {
                let end = start + len;
                // later non-final blocks are hidden; the final block sees all
                lts[start..end].fill(end);
                lte[start..end].fill(final_start);
                start = end;
            }
            MaskSpec::causal(n, lts, lte)
        }

        MaskKind::PrefixLmCausal { prefix_len } => {
            let p = *prefix_len;
            if p > n {
                return Err(params_err(format!("prefix_len {p} exceeds seq_len {n}")));
            }
            let ute: Vec<usize> = (0..n).map(|j| if j < p { 0 } else { j }).collect();
            MaskSpec::bidirectional(n, vec![n; n], vec![n; n], vec![0; n], ute)
        }

        MaskKind::PrefixLmDocument { docs } => {
            if docs.is_empty() {
                return Err(params_err("docs must not be empty"));
            }
            let lens: Vec<usize> = docs.iter().map(|d| d.len).collect();
            check_lens("doc lengths", &lens, n)?;
            for (di, d) in docs.iter().enumerate() {
                if d.prefix_len > d.len {
                    return Err(params_err(format!(
                        "doc {di}: prefix_len {} exceeds doc length {}",
                        d.prefix_len, d.len
                    )));
                }
            }
            let mut lts = vec![n; n];
            let mut ute = vec![0; n];
            let mut start = 0;
            for d in docs {
                let end = start + d.len;
                let prefix_end = start + d.prefix_len;
                lts[start..end].fill(end);
                for j in start..end {
                    // inside the prefix only cross-document rows above are
                    // masked; past it the whole upper triangle is
                    ute[j] = if j < prefix_end { start } else { j };
                }
                start = end;
            }
            MaskSpec::bidirectional(n, lts, vec![n; n], vec![0; n], ute)
        }

        MaskKind::QkSparse { kept_q, kept_k } => {
            let q_keep = keep_flags("kept_q", kept_q, n)?;
            let k_keep = keep_flags("kept_k", kept_k, n)?;
            let mut dense = DenseMask::new(n);
            for i in 0..n {
                for j in 0..n {
                    dense.set(i, j, i < j || !q_keep[i] || !k_keep[j]);
                }
            }
            return from_dense(&dense, MaskMode::Causal);
        }

        MaskKind::HashSparse { buckets } => {
            if buckets.len() != n {
                return Err(params_err(format!(
                    "buckets has length {}, expected {n}",
                    buckets.len()
                )));
            }
            let mut dense = DenseMask::new(n);
            for i in 0..n {
                for j in 0..n {
                    dense.set(i, j, i < j || buckets[i] != buckets[j]);
                }
            }
            return from_dense(&dense, MaskMode::Causal);
        }

        MaskKind::RandomEviction { seed, prob, span } => {
            if !(0.0..=1.0).contains(prob) {
                return Err(params_err(format!("prob {prob} outside [0, 1]")));
            }
            if *span == 0 {
                return Err(params_err("span must be positive"));
            }
            let mut rng = Rng::new(*seed);
            let mut lts = vec![n; n];
            let mut lte = vec![n; n];
            for (j, (s, e)) in lts.iter_mut().zip(lte.iter_mut()).enumerate() {
                // one coin per column; evictions start strictly below the
                // diagonal so the token always sees itself
                if rng.chance(*prob) && j + 1 < n {
                    let start = rng.usize_in(j + 1, n - 1);
                    *s = start;
                    *e = (start + span).min(n);
                }
            }
            MaskSpec::causal(n, lts, lte)
        }
    };
    let spec = spec.canonicalized();
    debug_assert!(spec.is_valid());
    Ok(spec)
}

fn keep_flags(what: &str, kept: &[usize], n: usize) -> Result<Vec<bool>, MaskError> {
    let mut flags = vec![false; n];
    for &idx in kept {
        if idx >= n {
            return Err(params_err(format!(
                "{what} index {idx} out of range 0..{n}"
            )));
        }
        flags[idx] = true;
    }
    Ok(flags)
}
