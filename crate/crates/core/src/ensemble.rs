//! The generation loop.
//!
//! Each round every model proposes a span of `span_length_words` words from
//! the shared prefix, every model scores every span, each column is filtered
//! for outliers and the lowest kept-mean span is appended to the prefix.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{EnsemblePool, ModelError};
use crate::parallel::Executor;
use crate::scoring::{
    compute_perplexity, filter_scores, select_span, FilterResult, ScoreMatrix, ScoringError,
    Selection,
};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("round {round}: every model failed to generate ({})", summarize(.failures))]
    AllGenerationsFailed {
        round: usize,
        failures: Vec<ModelError>,
    },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

fn summarize(failures: &[ModelError]) -> String {
    failures
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub span_length_words: usize,
    pub lambda: f64,
    pub filter_enabled: bool,
    pub max_total_words: usize,
    /// Extra attempts for a round whose generations all failed.
    pub max_retries: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            span_length_words: 4,
            lambda: 10.0,
            filter_enabled: true,
            max_total_words: 256,
            max_retries: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.span_length_words == 0 {
            return Err(EnsembleError::Config(
                "span length must be at least 1 word".into(),
            ));
        }
        // zero is allowed: it trims every column with unequal scores
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(EnsembleError::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.max_total_words < self.span_length_words {
            return Err(EnsembleError::Config(format!(
                "word budget {} is smaller than the span length {}",
                self.max_total_words, self.span_length_words
            )));
        }
        Ok(())
    }
}

/// One model's proposal for a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCandidate {
    #[serde(rename = "producer")]
    pub producer_index: usize,
    pub text: String,
    pub word_count: usize,
    pub finished: bool,
}

impl SpanCandidate {
    /// A model that stopped before producing any word.
    pub fn empty(producer_index: usize) -> Self {
        SpanCandidate {
            producer_index,
            text: String::new(),
            word_count: 0,
            finished: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoundTimings {
    pub generate: Duration,
    pub score: Duration,
    pub select: Duration,
}

impl RoundTimings {
    /// Time spent beyond plain generation: mutual scoring and selection.
    pub fn overhead(&self) -> Duration {
        self.score + self.select
    }

    pub fn total(&self) -> Duration {
        self.generate + self.score + self.select
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundFailure {
    pub phase: String,
    pub model: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    /// `None` where generation failed.
    pub candidates: Vec<Option<SpanCandidate>>,
    pub matrix: ScoreMatrix,
    pub filters: Vec<FilterResult>,
    /// `None` when no span was eligible.
    pub selection: Option<Selection>,
    pub failures: Vec<RoundFailure>,
    pub timings: RoundTimings,
}

impl RoundResult {
    pub fn winner(&self) -> Option<&SpanCandidate> {
        self.selection
            .and_then(|s| self.candidates.get(s.winner_index))
            .and_then(|c| c.as_ref())
    }

    pub fn winner_index(&self) -> Option<usize> {
        self.selection.map(|s| s.winner_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    WordBudget,
    AllEmpty,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Eos => "eos",
            StopReason::WordBudget => "word_budget",
            StopReason::AllEmpty => "all_empty",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub prompt: String,
    pub rounds: Vec<RoundResult>,
    pub final_text: String,
    pub stop_reason: StopReason,
}

impl Transcript {
    pub fn generated_words(&self) -> usize {
        self.rounds
            .iter()
            .filter_map(|r| r.winner())
            .map(|c| c.word_count)
            .sum()
    }

    pub fn overhead(&self) -> Duration {
        self.rounds.iter().map(|r| r.timings.overhead()).sum()
    }

    pub fn total_time(&self) -> Duration {
        self.rounds.iter().map(|r| r.timings.total()).sum()
    }

    /// Copy with every timing zeroed, for comparing runs.
    pub fn without_timings(&self) -> Transcript {
        let mut t = self.clone();
        for r in &mut t.rounds {
            r.timings = RoundTimings::default();
        }
        t
    }

    /// One JSON object per round, then a summary line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, r) in self.rounds.iter().enumerate() {
            let line = serde_json::to_string(&RoundLine::new(i, r))?;
            writeln!(out, "{line}")?;
        }
        let summary = SummaryLine {
            final_text: &self.final_text,
            stop_reason: self.stop_reason,
            total_rounds: self.rounds.len(),
        };
        writeln!(out, "{}", serde_json::to_string(&summary)?)
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("transcript is valid UTF-8")
    }
}

#[derive(Serialize)]
struct FilterLine<'a> {
    span: usize,
    removed: &'a std::collections::BTreeSet<usize>,
    kept: &'a std::collections::BTreeSet<usize>,
    triggered: bool,
}

#[derive(Serialize)]
struct TimingLine {
    generate: f64,
    score: f64,
    select: f64,
}

#[derive(Serialize)]
struct RoundLine<'a> {
    round: usize,
    candidates: &'a [Option<SpanCandidate>],
    matrix: &'a [Option<f64>],
    filters: Vec<FilterLine<'a>>,
    winner: Option<usize>,
    winner_mean_ppl: Option<f64>,
    timings_ms: TimingLine,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    failures: &'a [RoundFailure],
}

impl<'a> RoundLine<'a> {
    fn new(round: usize, r: &'a RoundResult) -> Self {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        RoundLine {
            round,
            candidates: &r.candidates,
            matrix: r.matrix.row_major(),
            filters: r
                .filters
                .iter()
                .map(|f| FilterLine {
                    span: f.span_index,
                    removed: &f.removed,
                    kept: &f.kept,
                    triggered: f.triggered,
                })
                .collect(),
            winner: r.selection.map(|s| s.winner_index),
            winner_mean_ppl: r.selection.map(|s| s.winner_mean_ppl),
            timings_ms: TimingLine {
                generate: ms(r.timings.generate),
                score: ms(r.timings.score),
                select: ms(r.timings.select),
            },
            failures: &r.failures,
        }
    }
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    final_text: &'a str,
    stop_reason: StopReason,
    total_rounds: usize,
}

/// Filters every column of `matrix`. With filtering off, or a single model,
/// every valid scorer is kept.
pub fn filter_matrix(
    matrix: &ScoreMatrix,
    config: &EnsembleConfig,
) -> Result<Vec<FilterResult>, ScoringError> {
    let n = matrix.n_models();
    (0..n)
        .map(|j| {
            let column = matrix.column(j);
            if column.is_empty() || !config.filter_enabled || n < 2 {
                Ok(FilterResult::keep_all(j, &column))
            } else {
                filter_scores(j, &column, config.lambda)
            }
        })
        .collect()
}

/// One generate / score / select round from `prefix`.
pub fn ensemble_round(
    pool: &EnsemblePool,
    prefix: &str,
    config: &EnsembleConfig,
    exec: &Executor,
) -> Result<RoundResult, EnsembleError> {
    let n = pool.len();
    let mut failures = Vec::new();

    let started = Instant::now();
    let generated = exec.map_range(n, |i| {
        pool.generate_span(i, prefix, config.span_length_words)
    });
    let generate_time = started.elapsed();

    let mut candidates = Vec::with_capacity(n);
    let mut gen_errors = Vec::new();
    for (i, g) in generated.into_iter().enumerate() {
        match g {
            Ok(c) => candidates.push(Some(c)),
            Err(e) => {
                failures.push(RoundFailure {
                    phase: "generate".into(),
                    model: i,
                    span: None,
                    message: e.source.to_string(),
                });
                gen_errors.push(e);
                candidates.push(None);
            }
        }
    }
    if gen_errors.len() == n {
        return Err(EnsembleError::AllGenerationsFailed {
            round: 0,
            failures: gen_errors,
        });
    }

    let started = Instant::now();
    let cells = exec.map_range(n * n, |k| {
        let (scorer, span) = (k / n, k % n);
        let Some(cand) = candidates[span].as_ref().filter(|c| !c.text.is_empty()) else {
            return Ok(None);
        };
        let scores = pool
            .score(scorer, prefix, &cand.text)
            .map_err(|e| e.source.to_string())?;
        let logprobs: Vec<f64> = scores.iter().map(|s| s.logprob).collect();
        compute_perplexity(&logprobs).map_err(|e| e.to_string())
    });
    let score_time = started.elapsed();

    let started = Instant::now();
    let mut matrix = ScoreMatrix::new(n);
    for (k, cell) in cells.into_iter().enumerate() {
        let (scorer, span) = (k / n, k % n);
        match cell {
            Ok(Some(v)) if v.is_finite() && v > 0.0 => matrix.set(scorer, span, Some(v)),
            Ok(Some(v)) => failures.push(RoundFailure {
                phase: "score".into(),
                model: scorer,
                span: Some(span),
                message: format!("perplexity {v} out of range"),
            }),
            Ok(None) => {}
            Err(message) => failures.push(RoundFailure {
                phase: "score".into(),
                model: scorer,
                span: Some(span),
                message,
            }),
        }
    }
    let filters = filter_matrix(&matrix, config)?;
    let selection = match select_span(&matrix, &filters, &candidates) {
        Ok(s) => Some(s),
        Err(ScoringError::NoEligibleSpan) => None,
        Err(e) => return Err(e.into()),
    };
    let select_time = started.elapsed();

    Ok(RoundResult {
        candidates,
        matrix,
        filters,
        selection,
        failures,
        timings: RoundTimings {
            generate: generate_time,
            score: score_time,
            select: select_time,
        },
    })
}

/// Runs rounds until a winning span ends the sequence, the word budget is
/// spent, or no span is eligible.
///
/// The budget is checked before each round and a winning span is always
/// appended whole, so the output may exceed `max_total_words` by up to
/// `span_length_words - 1` words.
pub fn generate(
    pool: &EnsemblePool,
    prompt: &str,
    config: &EnsembleConfig,
    exec: &Executor,
) -> Result<Transcript, EnsembleError> {
    config.validate()?;
    if prompt.is_empty() {
        return Err(EnsembleError::EmptyPrompt);
    }
    let mut prefix = prompt.to_string();
    let mut final_text = String::new();
    let mut words = 0;
    let mut rounds = Vec::new();

    let stop_reason = loop {
        if words >= config.max_total_words {
            break StopReason::WordBudget;
        }
        let round = run_with_retries(pool, &prefix, config, exec, rounds.len())?;
        let Some(winner) = round.winner().cloned() else {
            rounds.push(round);
            break StopReason::AllEmpty;
        };
        prefix.push_str(&winner.text);
        final_text.push_str(&winner.text);
        words += winner.word_count;
        rounds.push(round);
        if winner.finished {
            break StopReason::Eos;
        }
    };

    Ok(Transcript {
        prompt: prompt.to_string(),
        rounds,
        final_text,
        stop_reason,
    })
}

fn run_with_retries(
    pool: &EnsemblePool,
    prefix: &str,
    config: &EnsembleConfig,
    exec: &Executor,
    round: usize,
) -> Result<RoundResult, EnsembleError> {
    let mut attempt = 0;
    loop {
        match ensemble_round(pool, prefix, config, exec) {
            Err(EnsembleError::AllGenerationsFailed { failures, .. }) => {
                if attempt >= config.max_retries {
                    return Err(EnsembleError::AllGenerationsFailed { round, failures });
                }
                attempt += 1;
                log::warn!(
                    "round {round}: all generations failed, retry {attempt}/{}",
                    config.max_retries
                );
            }
            other => return other,
        }
    }
}
