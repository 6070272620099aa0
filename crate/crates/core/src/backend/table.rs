//! Deterministic table-driven n-gram model.
//!
//! Text is tokenized by longest match against the vocabulary; characters no
//! vocabulary entry covers become single-character out-of-vocabulary tokens.
//! The next-token distribution is looked up by the last `order` token texts
//! joined with [`CONTEXT_SEPARATOR`]. Unknown contexts use a uniform
//! distribution over the vocabulary. Tokens a known context does not list,
//! and out-of-vocabulary tokens, score with the `floor` probability.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{stream_span, Backend, BackendError, GeneratedSpan, TokenScore};

pub const CONTEXT_SEPARATOR: char = '\u{1f}';

const DEFAULT_FLOOR: f64 = 1e-6;
const DEFAULT_MAX_TOKENS: usize = 4096;
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TableLmError {
    #[error("reading table file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing table file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid table: {0}")]
    Invalid(String),
}

/// On-disk table format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub order: usize,
    pub vocab: Vec<String>,
    pub eos: String,
    pub transitions: BTreeMap<String, BTreeMap<String, f64>>,
    pub fallback: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TableLm {
    name: String,
    order: usize,
    vocab: Vec<String>,
    eos_id: usize,
    /// Vocabulary lookup for tokenization; excludes the end-of-sequence entry.
    token_ids: HashMap<String, usize>,
    max_token_len: usize,
    /// Context key -> (vocab id, probability), sorted by id.
    transitions: HashMap<String, Vec<(usize, f64)>>,
    floor: f64,
    max_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Token<'a> {
    text: &'a str,
    id: Option<usize>,
}

impl TableLm {
    pub fn from_file(file: TableFile, default_name: &str) -> Result<Self, TableLmError> {
        if file.order == 0 {
            return Err(TableLmError::Invalid("order must be at least 1".into()));
        }
        if file.fallback != "uniform" {
            return Err(TableLmError::Invalid(format!(
                "unsupported fallback {:?}, expected \"uniform\"",
                file.fallback
            )));
        }
        let floor = file.floor.unwrap_or(DEFAULT_FLOOR);
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(TableLmError::Invalid(format!(
                "floor must be in (0, 1], got {floor}"
            )));
        }
        let mut ids = HashMap::new();
        for (i, tok) in file.vocab.iter().enumerate() {
            if tok.is_empty() {
                return Err(TableLmError::Invalid("empty vocabulary entry".into()));
            }
            if ids.insert(tok.clone(), i).is_some() {
                return Err(TableLmError::Invalid(format!(
                    "duplicate vocabulary entry {tok:?}"
                )));
            }
        }
        let eos_id = *ids.get(&file.eos).ok_or_else(|| {
            TableLmError::Invalid(format!("eos {:?} is not in the vocabulary", file.eos))
        })?;
        let mut transitions = HashMap::with_capacity(file.transitions.len());
        for (ctx, dist) in &file.transitions {
            if dist.is_empty() {
                return Err(TableLmError::Invalid(format!(
                    "context {ctx:?} has an empty distribution"
                )));
            }
            let mut entries = Vec::with_capacity(dist.len());
            let mut total = 0.0;
            for (tok, &p) in dist {
                let id = *ids.get(tok).ok_or_else(|| {
                    TableLmError::Invalid(format!("context {ctx:?} lists unknown token {tok:?}"))
                })?;
                if !(p > 0.0 && p <= 1.0) {
                    return Err(TableLmError::Invalid(format!(
                        "probability of {tok:?} in context {ctx:?} must be in (0, 1], got {p}"
                    )));
                }
                total += p;
                entries.push((id, p));
            }
            if (total - 1.0).abs() > SUM_TOLERANCE {
                return Err(TableLmError::Invalid(format!(
                    "distribution for context {ctx:?} sums to {total}"
                )));
            }
            entries.sort_by_key(|&(id, _)| id);
            transitions.insert(ctx.clone(), entries);
        }
        ids.remove(&file.eos);
        let max_token_len = ids.keys().map(|t| t.len()).max().unwrap_or(1);
        Ok(TableLm {
            name: file.name.unwrap_or_else(|| default_name.to_string()),
            order: file.order,
            vocab: file.vocab,
            eos_id,
            token_ids: ids,
            max_token_len,
            transitions,
            floor,
            max_tokens: DEFAULT_MAX_TOKENS,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TableLmError> {
        let raw = std::fs::read_to_string(path)?;
        let file: TableFile = serde_json::from_str(&raw)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
        TableLm::from_file(file, stem)
    }

    pub fn to_file(&self) -> TableFile {
        let transitions = self
            .transitions
            .iter()
            .map(|(ctx, dist)| {
                let d = dist
                    .iter()
                    .map(|&(id, p)| (self.vocab[id].clone(), p))
                    .collect();
                (ctx.clone(), d)
            })
            .collect();
        TableFile {
            name: Some(self.name.clone()),
            order: self.order,
            vocab: self.vocab.clone(),
            eos: self.vocab[self.eos_id].clone(),
            transitions,
            fallback: "uniform".into(),
            floor: Some(self.floor),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens.max(1);
        self
    }

    fn tokenize<'a>(&self, text: &'a str) -> Vec<Token<'a>> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let mut best: Option<(usize, usize)> = None;
            for (off, ch) in rest.char_indices() {
                let end = off + ch.len_utf8();
                if end > self.max_token_len {
                    break;
                }
                if let Some(&id) = self.token_ids.get(&rest[..end]) {
                    best = Some((end, id));
                }
            }
            let (len, id) = match best {
                Some((len, id)) => (len, Some(id)),
                None => (rest.chars().next().map_or(1, char::len_utf8), None),
            };
            out.push(Token {
                text: &rest[..len],
                id,
            });
            pos += len;
        }
        out
    }

    /// Splits `text` into the token texts this model scores.
    pub fn token_texts(&self, text: &str) -> Vec<String> {
        self.tokenize(text)
            .into_iter()
            .map(|t| t.text.to_string())
            .collect()
    }

    fn context_key(&self, history: &[&str]) -> String {
        let start = history.len().saturating_sub(self.order);
        let mut key = String::new();
        for (i, t) in history[start..].iter().enumerate() {
            if i > 0 {
                key.push(CONTEXT_SEPARATOR);
            }
            key.push_str(t);
        }
        key
    }

    /// Probability of `token` after `history`.
    fn probability(&self, history: &[&str], token: Token<'_>) -> f64 {
        let Some(id) = token.id else {
            return self.floor;
        };
        match self.transitions.get(&self.context_key(history)) {
            Some(dist) => match dist.binary_search_by_key(&id, |&(i, _)| i) {
                Ok(k) => dist[k].1,
                Err(_) => self.floor,
            },
            None => 1.0 / self.vocab.len() as f64,
        }
    }

    /// Greedy next token: highest probability, lowest vocabulary index on ties.
    fn next_token(&self, history: &[&str]) -> usize {
        match self.transitions.get(&self.context_key(history)) {
            Some(dist) => {
                let mut best = dist[0];
                for &(id, p) in &dist[1..] {
                    if p > best.1 {
                        best = (id, p);
                    }
                }
                best.0
            }
            None => 0,
        }
    }

    /// Greedy continuation as raw token texts, stopping at end-of-sequence or
    /// after `max_tokens` tokens. Used to derive expected outputs in tests.
    pub fn greedy_tokens(&self, prefix: &str, max_tokens: usize) -> (Vec<String>, bool) {
        let mut history: Vec<&str> = self.tokenize(prefix).into_iter().map(|t| t.text).collect();
        let mut out = Vec::new();
        for _ in 0..max_tokens {
            let id = self.next_token(&history);
            if id == self.eos_id {
                return (out, true);
            }
            out.push(self.vocab[id].clone());
            history.push(self.vocab[id].as_str());
        }
        (out, false)
    }
}

impl Backend for TableLm {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_scoring(&self) -> bool {
        true
    }

    fn generate_span(
        &self,
        prefix: &str,
        span_words: usize,
    ) -> Result<GeneratedSpan, BackendError> {
        let mut history: Vec<&str> = self.tokenize(prefix).into_iter().map(|t| t.text).collect();
        stream_span(span_words, self.max_tokens, || {
            let id = self.next_token(&history);
            if id == self.eos_id {
                return Ok(None);
            }
            let text = self.vocab[id].as_str();
            history.push(text);
            Ok(Some(text.to_string()))
        })
    }

    fn score(&self, prefix: &str, continuation: &str) -> Result<Vec<TokenScore>, BackendError> {
        let mut history: Vec<&str> = self.tokenize(prefix).into_iter().map(|t| t.text).collect();
        let tokens = self.tokenize(continuation);
        let mut out = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let p = self.probability(&history, tok);
            out.push(TokenScore {
                token_text: tok.text.to_string(),
                logprob: p.ln(),
            });
            history.push(tok.text);
        }
        Ok(out)
    }
}

/// Programmatic construction of table models.
#[derive(Debug, Clone)]
pub struct TableLmBuilder {
    file: TableFile,
}

impl TableLmBuilder {
    /// Starts a table with `eos` as vocabulary entry 0 unless `vocab` is
    /// called with an explicit list later.
    pub fn new(name: &str, order: usize, eos: &str) -> Self {
        TableLmBuilder {
            file: TableFile {
                name: Some(name.to_string()),
                order,
                vocab: Vec::new(),
                eos: eos.to_string(),
                transitions: BTreeMap::new(),
                fallback: "uniform".into(),
                floor: None,
            },
        }
    }

    /// Appends tokens to the vocabulary, skipping ones already present.
    pub fn vocab<I, S>(mut self, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for t in tokens {
            let t = t.into();
            if !self.file.vocab.contains(&t) {
                self.file.vocab.push(t);
            }
        }
        self
    }

    pub fn floor(mut self, floor: f64) -> Self {
        self.file.floor = Some(floor);
        self
    }

    /// Sets the distribution after the context formed by `context` tokens.
    pub fn transition(mut self, context: &[&str], dist: &[(&str, f64)]) -> Self {
        let key = context.join(&CONTEXT_SEPARATOR.to_string());
        let entry = self.file.transitions.entry(key).or_default();
        entry.clear();
        for &(tok, p) in dist {
            *entry.entry(tok.to_string()).or_insert(0.0) += p;
        }
        self
    }

    /// Deterministic chain: each token follows the previous `order` tokens
    /// with probability `p`, the remaining mass going to `alt`. The chain
    /// ends with end-of-sequence when `terminate` is set.
    pub fn chain(
        mut self,
        context: &[&str],
        tokens: &[&str],
        p: f64,
        alt: &str,
        terminate: bool,
    ) -> Self {
        let order = self.file.order;
        let mut history: Vec<String> = context.iter().map(|s| s.to_string()).collect();
        let eos = self.file.eos.clone();
        let mut seq: Vec<&str> = tokens.to_vec();
        if terminate {
            seq.push(&eos);
        }
        for tok in seq {
            let start = history.len().saturating_sub(order);
            let ctx: Vec<&str> = history[start..].iter().map(String::as_str).collect();
            let dist: Vec<(&str, f64)> = if p >= 1.0 || tok == alt {
                vec![(tok, 1.0)]
            } else {
                vec![(tok, p), (alt, 1.0 - p)]
            };
            self = self.transition(&ctx, &dist);
            history.push(tok.to_string());
        }
        self
    }

    pub fn into_file(self) -> TableFile {
        self.file
    }

    pub fn build(self) -> Result<TableLm, TableLmError> {
        let name = self.file.name.clone().unwrap_or_default();
        TableLm::from_file(self.file, &name)
    }
}
