use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{
    corpus_bleu, exact_match, numeric_match, parse_reference_number, sentence_bleu, Metric,
};
use crate::backend::EnsemblePool;
use crate::ensemble::{generate, EnsembleConfig, EnsembleError, StopReason};
use crate::parallel::Executor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reading dataset {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error(transparent)]
    Config(#[from] EnsembleError),
    #[error(transparent)]
    Metric(#[from] super::metrics::MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ExactMatch,
    Numeric,
    Translation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: String,
    pub prompt: String,
    pub references: Vec<String>,
    pub task_kind: TaskKind,
}

impl EvalExample {
    fn check(&self) -> Result<(), String> {
        if self.references.is_empty() {
            return Err(format!("example {:?} has no references", self.id));
        }
        if self.task_kind == TaskKind::Numeric {
            if let Some(bad) = self
                .references
                .iter()
                .find(|r| parse_reference_number(r).is_none())
            {
                return Err(format!(
                    "example {:?}: reference {bad:?} is not a number",
                    self.id
                ));
            }
        }
        Ok(())
    }
}

/// Parses JSONL examples; blank lines are skipped, any other bad line aborts.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<EvalExample>, EvalError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| EvalError::Dataset {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: EvalExample = serde_json::from_str(&line).map_err(|e| EvalError::Dataset {
            line: line_no,
            message: e.to_string(),
        })?;
        ex.check().map_err(|message| EvalError::Dataset {
            line: line_no,
            message,
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalExample>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(std::io::BufReader::new(file))
}

pub fn write_dataset(path: &Path, examples: &[EvalExample]) -> std::io::Result<()> {
    let mut text = String::new();
    for ex in examples {
        text.push_str(&serde_json::to_string(ex)?);
        text.push('\n');
    }
    std::fs::write(path, text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub prediction: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    pub rounds: usize,
    pub words: usize,
    pub overhead_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub span_length: usize,
    pub lambda: f64,
    pub filter: bool,
    pub max_words: usize,
    pub metric: Metric,
    pub pool: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub examples: usize,
    pub failed: usize,
    pub mean_rounds: f64,
    pub generated_words: usize,
    /// Scoring and selection time per generated word, in milliseconds.
    pub mean_ms_per_word: f64,
    /// Full round time per generated word, in milliseconds.
    pub mean_total_ms_per_word: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    /// Sorted by example id.
    pub records: Vec<ExampleRecord>,
    pub aggregate: f64,
    pub stats: EvalStats,
}

impl EvalReport {
    /// Copy with every wall-clock field zeroed.
    pub fn without_timings(&self) -> EvalReport {
        let mut r = self.clone();
        for rec in &mut r.records {
            rec.overhead_ms = 0.0;
            rec.total_ms = 0.0;
        }
        r.stats.mean_ms_per_word = 0.0;
        r.stats.mean_total_ms_per_word = 0.0;
        r
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Examples evaluated concurrently.
    pub example_workers: usize,
    /// Fan-out width inside each round; `None` uses the pool size.
    pub round_workers: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            example_workers: 4,
            round_workers: None,
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Decodes every example with the ensemble and scores the predictions.
///
/// A backend failure on one example records it as failed with score 0 and
/// an empty prediction; the run continues.
pub fn run_eval(
    examples: &[EvalExample],
    pool: &EnsemblePool,
    config: &EnsembleConfig,
    metric: Metric,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let example_exec = Executor::new(options.example_workers);
    let round_exec = Executor::new(options.round_workers.unwrap_or(pool.len()));

    let mut records = example_exec.map(examples, |ex| {
        match generate(pool, &ex.prompt, config, &round_exec) {
            Ok(t) => {
                let prediction = t.final_text.trim().to_string();
                let score = match metric {
                    Metric::Em => {
                        100.0 * f64::from(u8::from(exact_match(&prediction, &ex.references)))
                    }
                    Metric::Numeric => {
                        100.0 * f64::from(u8::from(numeric_match(&prediction, &ex.references)))
                    }
                    Metric::Bleu => sentence_bleu(&prediction, &ex.references),
                };
                ExampleRecord {
                    id: ex.id.clone(),
                    prediction,
                    score,
                    error: None,
                    stop_reason: Some(t.stop_reason),
                    rounds: t.rounds.len(),
                    words: t.generated_words(),
                    overhead_ms: ms(t.overhead()),
                    total_ms: ms(t.total_time()),
                }
            }
            Err(e) => {
                log::warn!("example {}: {e}", ex.id);
                ExampleRecord {
                    id: ex.id.clone(),
                    prediction: String::new(),
                    score: 0.0,
                    error: Some(e.to_string()),
                    stop_reason: None,
                    rounds: 0,
                    words: 0,
                    overhead_ms: 0.0,
                    total_ms: 0.0,
                }
            }
        }
    });

    let aggregate = if records.is_empty() {
        0.0
    } else {
        match metric {
            Metric::Bleu => {
                let hyps: Vec<String> = records.iter().map(|r| r.prediction.clone()).collect();
                let refs: Vec<Vec<String>> =
                    examples.iter().map(|e| e.references.clone()).collect();
                corpus_bleu(&hyps, &refs, 4)?
            }
            Metric::Em | Metric::Numeric => {
                records.iter().map(|r| r.score).sum::<f64>() / records.len() as f64
            }
        }
    };

    records.sort_by(|a, b| a.id.cmp(&b.id));
    let words: usize = records.iter().map(|r| r.words).sum();
    let per_word = |total: f64| {
        if words == 0 {
            0.0
        } else {
            total / words as f64
        }
    };
    let stats = EvalStats {
        examples: records.len(),
        failed: records.iter().filter(|r| r.error.is_some()).count(),
        mean_rounds: if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.rounds as f64).sum::<f64>() / records.len() as f64
        },
        generated_words: words,
        mean_ms_per_word: per_word(records.iter().map(|r| r.overhead_ms).sum()),
        mean_total_ms_per_word: per_word(records.iter().map(|r| r.total_ms).sum()),
    };

    Ok(EvalReport {
        config: ReportConfig {
            span_length: config.span_length_words,
            lambda: config.lambda,
            filter: config.filter_enabled,
            max_words: config.max_total_words,
            metric,
            pool: pool.names(),
        },
        records,
        aggregate,
        stats,
    })
}
