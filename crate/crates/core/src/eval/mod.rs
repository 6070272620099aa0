//! Evaluation harness: task metrics, dataset runs and parameter sweeps.

mod harness;
pub mod metrics;
mod sweep;

pub use harness::{
    load_dataset, parse_dataset, run_eval, write_dataset, EvalError, EvalExample, EvalOptions,
    EvalReport, EvalStats, ExampleRecord, ReportConfig, TaskKind,
};
pub use metrics::{
    corpus_bleu, exact_match, extract_numeric_answer, numeric_match, sentence_bleu, Metric,
    MetricError,
};
pub use sweep::{run_sweep, write_summary_csv, PoolScenario, SweepCell, SweepError, SweepSpec};
