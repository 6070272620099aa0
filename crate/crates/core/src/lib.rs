//! Span-level ensemble decoding.
//!
//! Several language models take turns proposing fixed-length, word-aligned
//! spans from a shared prefix. Every model scores every proposal by
//! perplexity, outlier scores are trimmed per span, and the span with the
//! lowest mean perplexity is appended to the prefix for the next round.

pub mod backend;
pub mod ensemble;
pub mod eval;
pub mod parallel;
pub mod scoring;
pub mod segmentation;
pub mod synthetic;

pub use backend::{
    load_pool, Backend, BackendError, EnsemblePool, TableLm, TableLmBuilder, TokenScore,
};
pub use ensemble::{
    ensemble_round, generate, EnsembleConfig, EnsembleError, RoundResult, SpanCandidate,
    StopReason, Transcript,
};
pub use parallel::Executor;
pub use scoring::{
    compute_perplexity, filter_scores, select_span, FilterResult, ScoreMatrix, Selection,
};
pub use segmentation::{count_words, truncate_to_words, Segmenter, WordSpan};
