//! Model backends.
//!
//! A backend generates greedy continuations and exposes per-token natural-log
//! probabilities of arbitrary continuations under its own tokenizer.

mod http;
mod pool;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::{FeedStatus, Segmenter};

pub use http::{HttpBackend, HttpBackendConfig};
pub use pool::{
    build_pool, load_pool, load_pool_with, EnsemblePool, ModelError, PoolEntry, PoolError,
    PoolOverrides,
};
pub use table::{TableFile, TableLm, TableLmBuilder, TableLmError, CONTEXT_SEPARATOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_text: String,
    pub logprob: f64,
}

/// A word-aligned continuation produced by one backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedSpan {
    pub text: String,
    pub word_count: usize,
    /// End-of-sequence was produced within the span.
    pub finished: bool,
}

impl GeneratedSpan {
    pub(crate) fn from_segmenter(seg: Segmenter) -> Self {
        let finished = seg.is_finished();
        let span = seg.into_span();
        GeneratedSpan {
            text: span.text,
            word_count: span.word_count,
            finished,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("backend does not expose token log-probabilities")]
    UnsupportedScoring,
    #[error("scored tokens do not align with the continuation: {0}")]
    Misaligned(String),
    #[error("generation failed: {0}")]
    Generation(String),
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn supports_scoring(&self) -> bool;

    /// Greedy continuation of `prefix`, cut at `span_words` complete words or
    /// end-of-sequence, whichever comes first.
    fn generate_span(&self, prefix: &str, span_words: usize)
        -> Result<GeneratedSpan, BackendError>;

    /// Per-token log-probabilities of `continuation` given `prefix`. The
    /// concatenated token texts equal `continuation` exactly.
    fn score(&self, prefix: &str, continuation: &str) -> Result<Vec<TokenScore>, BackendError>;
}

/// Feeds decoded pieces into a segmenter until it reports the span complete.
/// `next` returns `None` at end-of-sequence.
pub(crate) fn stream_span<F>(
    span_words: usize,
    max_steps: usize,
    mut next: F,
) -> Result<GeneratedSpan, BackendError>
where
    F: FnMut() -> Result<Option<String>, BackendError>,
{
    let mut seg = Segmenter::new(span_words);
    for _ in 0..max_steps {
        let status = match next()? {
            Some(piece) => seg.feed(&piece),
            None => seg.finish(),
        };
        if status == FeedStatus::Reached {
            return Ok(GeneratedSpan::from_segmenter(seg));
        }
    }
    Err(BackendError::Generation(format!(
        "no word boundary after {max_steps} decoding steps"
    )))
}
