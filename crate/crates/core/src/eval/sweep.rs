//! Grid runs over span length, λ, filter switch and pool composition.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::harness::{run_eval, EvalExample, EvalOptions, EvalReport};
use super::metrics::Metric;
use crate::backend::EnsemblePool;
use crate::ensemble::EnsembleConfig;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("reading sweep spec {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing sweep spec: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("sweep spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolScenario {
    pub name: String,
    /// Pool config path, relative to the spec file.
    pub pool: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_span_lengths")]
    pub span_lengths: Vec<usize>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_filter")]
    pub filter: Vec<bool>,
    /// Empty means "the pool given on the command line".
    #[serde(default)]
    pub pool_scenarios: Vec<PoolScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_max_words")]
    pub max_words: usize,
}

fn default_span_lengths() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}

fn default_lambdas() -> Vec<f64> {
    vec![10.0]
}

fn default_filter() -> Vec<bool> {
    vec![true]
}

fn default_metric() -> Metric {
    Metric::Em
}

fn default_max_words() -> usize {
    256
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            span_lengths: default_span_lengths(),
            lambdas: default_lambdas(),
            filter: default_filter(),
            pool_scenarios: Vec::new(),
            dataset: None,
            metric: default_metric(),
            max_words: default_max_words(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.span_lengths.is_empty() || self.lambdas.is_empty() || self.filter.is_empty() {
            return Err(SweepError::Invalid(
                "span_lengths, lambdas and filter must be non-empty".into(),
            ));
        }
        if self.span_lengths.contains(&0) {
            return Err(SweepError::Invalid("span lengths must be positive".into()));
        }
        Ok(())
    }

    /// Reads and validates a spec file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let raw = std::fs::read_to_string(path).map_err(|source| SweepError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec: SweepSpec = serde_json::from_str(&raw)?;
        spec.validate()?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for s in &mut spec.pool_scenarios {
            s.pool = base.join(&s.pool);
        }
        if let Some(d) = &spec.dataset {
            spec.dataset = Some(base.join(d));
        }
        Ok(spec)
    }
}

#[derive(Debug)]
pub struct SweepCell {
    pub pool: String,
    pub filter: bool,
    pub lambda: f64,
    pub span_length: usize,
    pub result: Result<EvalReport, String>,
}

/// One evaluation per point of pools × filter × λ × span length, in that
/// nesting order. A failing cell is recorded and the rest still run.
pub fn run_sweep(
    spec: &SweepSpec,
    examples: &[EvalExample],
    pools: &[(String, EnsemblePool)],
    options: &EvalOptions,
) -> Result<Vec<SweepCell>, SweepError> {
    spec.validate()?;
    if pools.is_empty() {
        return Err(SweepError::Invalid("no pools to sweep".into()));
    }
    let mut cells = Vec::new();
    for (name, pool) in pools {
        for &filter in &spec.filter {
            for &lambda in &spec.lambdas {
                for &span_length in &spec.span_lengths {
                    let config = EnsembleConfig {
                        span_length_words: span_length,
                        lambda,
                        filter_enabled: filter,
                        max_total_words: spec.max_words.max(span_length),
                        max_retries: 0,
                    };
                    let result = run_eval(examples, pool, &config, spec.metric, options)
                        .map_err(|e| e.to_string());
                    if let Err(e) = &result {
                        log::error!(
                            "cell pool={name} filter={filter} lambda={lambda} L={span_length}: {e}"
                        );
                    }
                    cells.push(SweepCell {
                        pool: name.clone(),
                        filter,
                        lambda,
                        span_length,
                        result,
                    });
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    span_length: usize,
    lambda: f64,
    filter: bool,
    pool: &'a str,
    metric: Metric,
    value: f64,
    mean_ms_per_word: f64,
}

/// Writes one CSV row per successful cell.
pub fn write_summary_csv<W: Write>(cells: &[SweepCell], out: W) -> Result<usize, csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut rows = 0;
    for cell in cells {
        if let Ok(report) = &cell.result {
            w.serialize(CsvRow {
                span_length: cell.span_length,
                lambda: cell.lambda,
                filter: cell.filter,
                pool: &cell.pool,
                metric: report.config.metric,
                value: report.aggregate,
                mean_ms_per_word: report.stats.mean_ms_per_word,
            })?;
            rows += 1;
        }
    }
    if rows == 0 {
        w.write_record([
            "span_length",
            "lambda",
            "filter",
            "pool",
            "metric",
            "value",
            "mean_ms_per_word",
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let spec: SweepSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(spec.span_lengths, vec![1, 2, 4, 8, 16, 32]);
        assert_eq!(spec.lambdas, vec![10.0]);
        assert_eq!(spec.filter, vec![true]);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn empty_lists_are_rejected() {
        let spec: SweepSpec = serde_json::from_str(r#"{"span_lengths": []}"#).unwrap();
        assert!(spec.validate().is_err());
        let spec: SweepSpec = serde_json::from_str(r#"{"lambdas": []}"#).unwrap();
        assert!(spec.validate().is_err());
        assert!(serde_json::from_str::<SweepSpec>(r#"{"span_length": [1]}"#).is_err());
    }
}
