//! Task metrics: exact match, numeric answer accuracy and corpus BLEU.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{hyps} hypotheses but {refs} reference lists")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("hypothesis {0} has no references")]
    NoReferences(usize),
    #[error("unknown metric {0:?} (expected em, numeric or bleu)")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Em,
    Numeric,
    Bleu,
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "em" => Ok(Metric::Em),
            "numeric" => Ok(Metric::Numeric),
            "bleu" => Ok(Metric::Bleu),
            other => Err(MetricError::Unknown(other.to_string())),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Em => "em",
            Metric::Numeric => "numeric",
            Metric::Bleu => "bleu",
        })
    }
}

/// Lowercase, drop ASCII punctuation, collapse whitespace runs, trim.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_match(prediction: &str, references: &[String]) -> bool {
    let pred = normalize_answer(prediction);
    references.iter().any(|r| normalize_answer(r) == pred)
}

/// The last number in `text`: optional sign, digits with optional thousands
/// commas, optional decimal part. Commas are dropped before parsing.
pub fn extract_numeric_answer(text: &str) -> Option<f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut last: Option<String> = None;
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let mut s = String::new();
        if i > 0 && (chars[i - 1] == '-' || chars[i - 1] == '+') {
            let signed = i < 2 || !chars[i - 2].is_alphanumeric();
            if signed && chars[i - 1] == '-' {
                s.push('-');
            }
        }
        let mut seen_dot = false;
        while i < chars.len() {
            let c = chars[i];
            let next_is_digit = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
            if c.is_ascii_digit() {
                s.push(c);
            } else if c == ',' && next_is_digit && !seen_dot {
                // thousands separator
            } else if c == '.' && next_is_digit && !seen_dot {
                seen_dot = true;
                s.push(c);
            } else {
                break;
            }
            i += 1;
        }
        last = Some(s);
    }
    last.and_then(|s| s.parse().ok())
}

/// Reference strings parse as plain numbers (commas allowed).
pub fn parse_reference_number(reference: &str) -> Option<f64> {
    reference.trim().replace(',', "").parse().ok()
}

pub fn numeric_match(prediction: &str, references: &[String]) -> bool {
    let Some(pred) = extract_numeric_answer(prediction) else {
        return false;
    };
    references
        .iter()
        .filter_map(|r| parse_reference_number(r))
        .any(|r| (pred - r).abs() <= 1e-6 * r.abs().max(1.0))
}

fn bleu_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU in `[0, 100]` with uniform weights over n = 1..=`max_n`.
///
/// Clipped n-gram matches and totals are pooled over the corpus. The
/// brevity penalty compares total hypothesis length with the summed closest
/// reference lengths (shorter reference wins a tie). Any order with zero
/// matches gives a score of zero; there is no smoothing.
pub fn corpus_bleu(
    hypotheses: &[String],
    references: &[Vec<String>],
    max_n: usize,
) -> Result<f64, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (k, (hyp, refs)) in hypotheses.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(MetricError::NoReferences(k));
        }
        let h = bleu_tokens(hyp);
        let rs: Vec<Vec<String>> = refs.iter().map(|r| bleu_tokens(r)).collect();
        hyp_len += h.len();
        ref_len += rs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&len| (len.abs_diff(h.len()), len))
            .unwrap_or(0);
        for n in 1..=max_n {
            let hc = ngram_counts(&h, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &rs {
                for (gram, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(gram).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (gram, c) in &hc {
                matches[n - 1] += (*c).min(max_ref.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches.contains(&0) {
        return Ok(0.0);
    }
    let log_precision: f64 = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / max_n as f64;
    let brevity = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * log_precision.exp())
}

/// Sentence-level BLEU: corpus BLEU of a one-sentence corpus.
pub fn sentence_bleu(hypothesis: &str, references: &[String]) -> f64 {
    corpus_bleu(&[hypothesis.to_string()], &[references.to_vec()], 4).unwrap_or(0.0)
}
