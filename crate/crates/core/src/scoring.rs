//! Perplexity, outlier filtering and span selection.
//!
//! Every model scores every candidate span, producing an N×N matrix whose
//! entry `(i, j)` is scorer `i`'s perplexity of span `j`. Each column is
//! filtered independently: when its largest score exceeds its smallest by
//! more than a factor of λ, both extremes are dropped. The span with the
//! lowest mean over its kept scores wins.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::SpanCandidate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("non-finite token log-probability {value} at position {position}")]
    NonFinite { position: usize, value: f64 },
    #[error("span {0} has no valid scores")]
    Unscorable(usize),
    #[error("no candidate span is eligible for selection")]
    NoEligibleSpan,
    #[error("filter threshold must be finite and non-negative, got {0}")]
    BadThreshold(f64),
}

/// `exp(-(1/n) Σ log p)` over the span's tokens.
///
/// An empty list yields `None`: the span has no tokens under this scorer and
/// the matrix entry is INVALID.
pub fn compute_perplexity(token_logprobs: &[f64]) -> Result<Option<f64>, ScoringError> {
    if token_logprobs.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for (position, &lp) in token_logprobs.iter().enumerate() {
        if !lp.is_finite() {
            return Err(ScoringError::NonFinite {
                position,
                value: lp,
            });
        }
        sum += lp;
    }
    Ok(Some((-sum / token_logprobs.len() as f64).exp()))
}

/// Square perplexity grid. `None` marks an INVALID entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    n_models: usize,
    cells: Vec<Option<f64>>,
}

impl ScoreMatrix {
    pub fn new(n_models: usize) -> Self {
        ScoreMatrix {
            n_models,
            cells: vec![None; n_models * n_models],
        }
    }

    /// Builds a matrix from row-major entries (row = scorer, column = span).
    ///
    /// Panics if the length is not a perfect square or a valid entry is not
    /// a positive finite number.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Self {
        let n = rows.len();
        let mut m = ScoreMatrix::new(n);
        for (i, row) in rows.into_iter().enumerate() {
            assert_eq!(row.len(), n, "score matrix must be square");
            for (j, v) in row.into_iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn get(&self, scorer: usize, span: usize) -> Option<f64> {
        self.cells[scorer * self.n_models + span]
    }

    pub fn set(&mut self, scorer: usize, span: usize, ppl: Option<f64>) {
        if let Some(v) = ppl {
            assert!(
                v.is_finite() && v > 0.0,
                "perplexity must be positive and finite, got {v}"
            );
        }
        self.cells[scorer * self.n_models + span] = ppl;
    }

    /// Valid `(scorer, ppl)` pairs for one span, in scorer order.
    pub fn column(&self, span: usize) -> Vec<(usize, f64)> {
        (0..self.n_models)
            .filter_map(|i| self.get(i, span).map(|v| (i, v)))
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        self.cells
            .chunks(self.n_models.max(1))
            .map(|r| r.to_vec())
            .collect()
    }

    /// Row-major entries, as written to transcripts.
    pub fn row_major(&self) -> &[Option<f64>] {
        &self.cells
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ScoreMatrix {
            n_models: self.n_models,
            cells: self.cells.iter().map(|c| c.map(|v| v * factor)).collect(),
        }
    }
}

/// Per-span outcome of outlier filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterResult {
    pub span_index: usize,
    pub removed: BTreeSet<usize>,
    pub kept: BTreeSet<usize>,
    pub triggered: bool,
}

impl FilterResult {
    /// Keeps every valid scorer of the column.
    pub fn keep_all(span_index: usize, column: &[(usize, f64)]) -> Self {
        FilterResult {
            span_index,
            removed: BTreeSet::new(),
            kept: column.iter().map(|&(i, _)| i).collect(),
            triggered: false,
        }
    }
}

/// Drops the highest and lowest score of a column when `max / min > lambda`.
///
/// Ties for either extreme go to the lowest scorer index. Columns with two
/// or fewer valid scores are never filtered, since removing both extremes
/// would leave nothing to average; neither are columns whose scores are all
/// equal.
pub fn filter_scores(
    span_index: usize,
    column: &[(usize, f64)],
    lambda: f64,
) -> Result<FilterResult, ScoringError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(ScoringError::BadThreshold(lambda));
    }
    let Some(&first) = column.first() else {
        return Err(ScoringError::Unscorable(span_index));
    };
    let (mut max, mut min) = (first, first);
    for &(i, v) in &column[1..] {
        if v > max.1 || (v == max.1 && i < max.0) {
            max = (i, v);
        }
        if v < min.1 || (v == min.1 && i < min.0) {
            min = (i, v);
        }
    }
    let exceeds = max.1 / min.1 > lambda;
    if !exceeds || column.len() <= 2 || max.1 == min.1 {
        return Ok(FilterResult::keep_all(span_index, column));
    }
    let removed: BTreeSet<usize> = [max.0, min.0].into_iter().collect();
    let kept = column
        .iter()
        .map(|&(i, _)| i)
        .filter(|i| !removed.contains(i))
        .collect();
    Ok(FilterResult {
        span_index,
        removed,
        kept,
        triggered: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub winner_index: usize,
    pub winner_mean_ppl: f64,
}

/// Mean perplexity of span `j` over its kept scorers, summed in scorer order.
pub fn kept_mean(matrix: &ScoreMatrix, filter: &FilterResult) -> Option<f64> {
    let values: Vec<f64> = filter
        .kept
        .iter()
        .filter_map(|&i| matrix.get(i, filter.span_index))
        .collect();
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Picks the eligible span with the lowest kept-mean perplexity; ties go to
/// the lowest producer index. A span is eligible when its candidate exists,
/// is non-empty, and has at least one kept score.
pub fn select_span(
    matrix: &ScoreMatrix,
    filters: &[FilterResult],
    candidates: &[Option<SpanCandidate>],
) -> Result<Selection, ScoringError> {
    let mut best: Option<Selection> = None;
    for filter in filters {
        let j = filter.span_index;
        let present = candidates
            .get(j)
            .and_then(|c| c.as_ref())
            .is_some_and(|c| c.word_count > 0);
        if !present {
            continue;
        }
        let Some(mean) = kept_mean(matrix, filter) else {
            continue;
        };
        let better = match best {
            None => true,
            Some(b) => {
                mean < b.winner_mean_ppl || (mean == b.winner_mean_ppl && j < b.winner_index)
            }
        };
        if better {
            best = Some(Selection {
                winner_index: j,
                winner_mean_ppl: mean,
            });
        }
    }
    best.ok_or(ScoringError::NoEligibleSpan)
}
