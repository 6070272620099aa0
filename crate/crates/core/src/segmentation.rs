//! Word-boundary segmentation.
//!
//! A word is a maximal run of non-whitespace characters (Unicode whitespace,
//! so newlines and tabs separate words). Punctuation sticks to its word:
//! `range(n):` is a single word. Spans keep their leading whitespace and
//! leave trailing whitespace to whatever follows, so `prefix + span.text` is
//! always a character-exact prefix of `prefix + continuation`.

use serde::{Deserialize, Serialize};

/// A run of complete words cut from a longer text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub text: String,
    pub word_count: usize,
    /// The last word is known to be whole: it was followed by whitespace or
    /// by the end of the input.
    pub complete: bool,
}

impl WordSpan {
    pub fn empty() -> Self {
        WordSpan {
            text: String::new(),
            word_count: 0,
            complete: true,
        }
    }
}

pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Cuts `text` after its first `max_words` words.
///
/// The result ends on the last character of the last included word; leading
/// whitespace is kept verbatim and trailing whitespace is dropped. When the
/// text has no words at all the result is empty.
pub fn truncate_to_words(text: &str, max_words: usize) -> WordSpan {
    assert!(max_words >= 1, "span length must be at least one word");
    let mut words = 0;
    let mut in_word = false;
    let mut cut = 0;
    for (pos, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_word {
                in_word = false;
                words += 1;
                cut = pos;
                if words == max_words {
                    return WordSpan {
                        text: text[..cut].to_string(),
                        word_count: words,
                        complete: true,
                    };
                }
            }
        } else {
            in_word = true;
        }
    }
    if in_word {
        words += 1;
        cut = text.len();
    }
    WordSpan {
        text: text[..cut].to_string(),
        word_count: words,
        complete: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedStatus {
    NeedMore,
    Reached,
}

/// Incremental counterpart of [`truncate_to_words`] for streaming decoders.
///
/// The final word of a span is only confirmed once a whitespace character or
/// the end of the stream follows it, so a streaming backend must decode at
/// least one character past the span before it can be emitted.
#[derive(Debug, Clone)]
pub struct Segmenter {
    max_words: usize,
    buffer: String,
    confirmed_words: usize,
    /// Byte offset just past the last confirmed word.
    confirmed_end: usize,
    in_word: bool,
    reached: bool,
    finished: bool,
}

impl Segmenter {
    pub fn new(max_words: usize) -> Self {
        assert!(max_words >= 1, "span length must be at least one word");
        Segmenter {
            max_words,
            buffer: String::new(),
            confirmed_words: 0,
            confirmed_end: 0,
            in_word: false,
            reached: false,
            finished: false,
        }
    }

    pub fn confirmed_words(&self) -> usize {
        self.confirmed_words
    }

    pub fn is_reached(&self) -> bool {
        self.reached
    }

    /// True when the stream was closed by [`Segmenter::finish`].
    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn feed(&mut self, chunk: &str) -> FeedStatus {
        if self.reached {
            return FeedStatus::Reached;
        }
        let base = self.buffer.len();
        self.buffer.push_str(chunk);
        for (offset, ch) in chunk.char_indices() {
            if ch.is_whitespace() {
                if self.in_word {
                    self.in_word = false;
                    self.confirmed_words += 1;
                    self.confirmed_end = base + offset;
                    if self.confirmed_words == self.max_words {
                        self.reached = true;
                        self.buffer.truncate(self.confirmed_end);
                        return FeedStatus::Reached;
                    }
                }
            } else {
                self.in_word = true;
            }
        }
        FeedStatus::NeedMore
    }

    /// Signals end-of-sequence. Any word still open is confirmed by it.
    pub fn finish(&mut self) -> FeedStatus {
        if !self.reached {
            if self.in_word {
                self.in_word = false;
                self.confirmed_words += 1;
                self.confirmed_end = self.buffer.len();
            }
            self.buffer.truncate(self.confirmed_end);
            self.finished = true;
            self.reached = true;
        }
        FeedStatus::Reached
    }

    /// The span confirmed so far. Once reached, this equals
    /// `truncate_to_words` applied to everything fed.
    pub fn span(&self) -> WordSpan {
        WordSpan {
            text: self.buffer[..self.confirmed_end].to_string(),
            word_count: self.confirmed_words,
            complete: self.reached,
        }
    }

    pub fn into_span(mut self) -> WordSpan {
        self.buffer.truncate(self.confirmed_end);
        WordSpan {
            text: self.buffer,
            word_count: self.confirmed_words,
            complete: self.reached,
        }
    }
}
