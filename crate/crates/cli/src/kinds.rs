//! Mask-family selection flags shared by `mask build`, `attn check`, and
//! inline `bench run` cases.

use clap::Args;
use flashmask_core::mask::{MaskKind, PrefixDoc, QuestionAnswerDoc};

use crate::{CliError, CliResult};

#[derive(Args, Clone, Debug)]
pub struct KindParams {
    /// Masked-out window size: row i sees columns within `window` of it
    #[arg(long)]
    pub window: Option<usize>,

    /// Leading always-visible columns (global-sliding-window)
    #[arg(long)]
    pub global: Option<usize>,

    /// Comma-separated document lengths, e.g. 3,4,3
    #[arg(long, value_delimiter = ',')]
    pub doc_lens: Vec<usize>,

    /// Comma-separated block lengths (causal-blockwise)
    #[arg(long, value_delimiter = ',')]
    pub block_lens: Vec<usize>,

    /// Bidirectional prefix length (prefix-lm-causal)
    #[arg(long)]
    pub prefix_len: Option<usize>,

    /// Repeatable document spec. share-question: "question:ans1,ans2"
    /// (answers optional); prefix-lm-document: "len:prefix"
    #[arg(long = "doc")]
    pub docs: Vec<String>,

    /// Kept query rows, e.g. 0,2,5-9 (qk-sparse)
    #[arg(long, value_delimiter = ',')]
    pub kept_q: Vec<String>,

    /// Kept key columns (qk-sparse)
    #[arg(long, value_delimiter = ',')]
    pub kept_k: Vec<String>,

    /// Per-token hash bucket ids (hash-sparse)
    #[arg(long, value_delimiter = ',')]
    pub buckets: Vec<usize>,

    /// Per-column eviction probability (random-eviction)
    #[arg(long)]
    pub prob: Option<f64>,

    /// Evicted interval length (random-eviction)
    #[arg(long)]
    pub span: Option<usize>,

    /// Seed for the mask's own random draws (random-eviction)
    #[arg(long)]
    pub mask_seed: Option<u64>,
}

pub const KIND_NAMES: [&str; 12] = [
    "causal",
    "sliding-window",
    "causal-document",
    "document",
    "share-question",
    "global-sliding-window",
    "causal-blockwise",
    "prefix-lm-causal",
    "prefix-lm-document",
    "qk-sparse",
    "hash-sparse",
    "random-eviction",
];

fn need<T: Copy>(v: Option<T>, kind: &str, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::invalid(format!("{kind} needs --{flag}")))
}

fn need_list<T: Clone>(v: &[T], kind: &str, flag: &str) -> CliResult<Vec<T>> {
    if v.is_empty() {
        return Err(CliError::invalid(format!("{kind} needs --{flag}")));
    }
    Ok(v.to_vec())
}

/// Expands entries like "7" and "2-5" (inclusive) into indices.
fn parse_indices(entries: &[String], flag: &str) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for e in entries {
        let bad = || CliError::invalid(format!("--{flag}: bad index or range {e:?}"));
        match e.split_once('-') {
            Some((a, b)) => {
                let lo: usize = a.trim().parse().map_err(|_| bad())?;
                let hi: usize = b.trim().parse().map_err(|_| bad())?;
                if hi < lo {
                    return Err(bad());
                }
                out.extend(lo..=hi);
            }
            None => out.push(e.trim().parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

fn parse_qa_doc(s: &str) -> CliResult<QuestionAnswerDoc> {
    let bad = |why: &str| CliError::invalid(format!("--doc {s:?}: {why}"));
    let (q, answers) = match s.split_once(':') {
        Some((q, rest)) => (q, rest),
        None => (s, ""),
    };
    let question_len = q
        .trim()
        .parse()
        .map_err(|_| bad("question length must be an integer"))?;
    let answer_lens = answers
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad("answer lengths must be integers"))?;
    Ok(QuestionAnswerDoc {
        question_len,
        answer_lens,
    })
}

fn parse_prefix_doc(s: &str) -> CliResult<PrefixDoc> {
    let bad = || CliError::invalid(format!("--doc {s:?}: expected \"len:prefix\""));
    let (len, prefix) = s.split_once(':').ok_or_else(bad)?;
    Ok(PrefixDoc {
        len: len.trim().parse().map_err(|_| bad())?,
        prefix_len: prefix.trim().parse().map_err(|_| bad())?,
    })
}

impl KindParams {
    pub fn to_kind(&self, kind: &str) -> CliResult<MaskKind> {
        Ok(match kind {
            "causal" => MaskKind::Causal,
            "sliding-window" => MaskKind::SlidingWindow {
                window: need(self.window, kind, "window")?,
            },
            "causal-document" => MaskKind::CausalDocument {
                doc_lens: need_list(&self.doc_lens, kind, "doc-lens")?,
            },
            "document" => MaskKind::Document {
                doc_lens: need_list(&self.doc_lens, kind, "doc-lens")?,
            },
            "share-question" => {
                let specs = need_list(&self.docs, kind, "doc")?;
                MaskKind::ShareQuestion {
                    docs: specs
                        .iter()
                        .map(|s| parse_qa_doc(s))
                        .collect::<CliResult<_>>()?,
                }
            }
            "global-sliding-window" => MaskKind::GlobalSlidingWindow {
                global: need(self.global, kind, "global")?,
                window: need(self.window, kind, "window")?,
            },
            "causal-blockwise" => MaskKind::CausalBlockwise {
                block_lens: need_list(&self.block_lens, kind, "block-lens")?,
            },
            "prefix-lm-causal" => MaskKind::PrefixLmCausal {
                prefix_len: need(self.prefix_len, kind, "prefix-len")?,
            },
            "prefix-lm-document" => {
                let specs = need_list(&self.docs, kind, "doc")?;
                MaskKind::PrefixLmDocument {
                    docs: specs
                        .iter()
                        .map(|s| parse_prefix_doc(s))
                        .collect::<CliResult<_>>()?,
                }
            }
            "qk-sparse" => MaskKind::QkSparse {
                kept_q: parse_indices(&need_list(&self.kept_q, kind, "kept-q")?, "kept-q")?,
                kept_k: parse_indices(&need_list(&self.kept_k, kind, "kept-k")?, "kept-k")?,
            },
            "hash-sparse" => MaskKind::HashSparse {
                buckets: need_list(&self.buckets, kind, "buckets")?,
            },
            "random-eviction" => MaskKind::RandomEviction {
                seed: self.mask_seed.unwrap_or(0),
                prob: need(self.prob, kind, "prob")?,
                span: need(self.span, kind, "span")?,
            },
            other => {
                return Err(CliError::invalid(format!(
                    "unknown mask kind {other:?}; one of: {}",
                    KIND_NAMES.join(", ")
                )))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty() -> KindParams {
        KindParams {
            window: None,
            global: None,
            doc_lens: vec![],
            block_lens: vec![],
            prefix_len: None,
            docs: vec![],
            kept_q: vec![],
            kept_k: vec![],
            buckets: vec![],
            prob: None,
            span: None,
            mask_seed: None,
        }
    }

    #[test]
    fn builds_each_family_from_flags() {
        let mut p = empty();
        p.window = Some(4);
        assert_eq!(
            p.to_kind("sliding-window").unwrap(),
            MaskKind::SlidingWindow { window: 4 }
        );

        let mut p = empty();
        p.docs = vec!["6:2,2".into(), "4".into()];
        assert_eq!(
            p.to_kind("share-question").unwrap(),
            MaskKind::ShareQuestion {
                docs: vec![
                    QuestionAnswerDoc {
                        question_len: 6,
                        answer_lens: vec![2, 2]
                    },
                    QuestionAnswerDoc {
                        question_len: 4,
                        answer_lens: vec![]
                    },
                ]
            }
        );

        let mut p = empty();
        p.kept_q = vec!["0".into(), "2-4".into()];
        p.kept_k = vec!["1".into()];
        assert_eq!(
            p.to_kind("qk-sparse").unwrap(),
            MaskKind::QkSparse {
                kept_q: vec![0, 2, 3, 4],
                kept_k: vec![1]
            }
        );
    }

    #[test]
    fn missing_parameters_are_reported_with_the_flag_name() {
        let e = empty().to_kind("sliding-window").unwrap_err();
        assert_eq!(e.code, 1);
        assert!(e.message.contains("--window"));

        let e = empty().to_kind("no-such-kind").unwrap_err();
        assert!(e.message.contains("causal-blockwise"));
    }
}
