#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use span_ensemble::{RoundResult, TableLm, TableLmBuilder};

/// Brute-force span selection over a raw matrix, written without the
/// library's filter or selection code. Returns `(winner, kept mean)`.
pub fn oracle_select(
    rows: &[Vec<Option<f64>>],
    lambda: f64,
    filter: bool,
    eligible: &[bool],
) -> Option<(usize, f64)> {
    let n = rows.len();
    let mut best: Option<(usize, f64)> = None;
    for j in 0..n {
        if !eligible[j] {
            continue;
        }
        let mut col: Vec<(usize, f64)> =
            (0..n).filter_map(|i| rows[i][j].map(|v| (i, v))).collect();
        if col.is_empty() {
            continue;
        }
        if filter && n > 1 && col.len() >= 3 {
            let mut by_low = col.clone();
            by_low.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            let mut by_high = col.clone();
            by_high.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let (lo, hi) = (by_low[0], by_high[0]);
            if hi.1 / lo.1 > lambda && hi.1 != lo.1 {
                col.retain(|&(i, _)| i != lo.0 && i != hi.0);
            }
        }
        let mean = col.iter().map(|c| c.1).sum::<f64>() / col.len() as f64;
        // strict improvement only: earlier (lower) index keeps ties
        if best.is_none_or(|(_, b)| mean < b) {
            best = Some((j, mean));
        }
    }
    best
}

pub fn oracle_round(r: &RoundResult, lambda: f64, filter: bool) -> Option<(usize, f64)> {
    let eligible: Vec<bool> = r
        .candidates
        .iter()
        .map(|c| c.as_ref().is_some_and(|c| c.word_count > 0))
        .collect();
    oracle_select(&r.matrix.rows(), lambda, filter, &eligible)
}

/// Probabilities behind the four-model "who wrote it" instance: three
/// accurate models and one confidently wrong one (index 1).
pub struct Songwriter {
    /// P(" Bobby" | " by") per accurate model (indices 0, 2, 3).
    pub p_bobby: [f64; 3],
    /// P(" Williams" | " Robert") per accurate model.
    pub p_williams: [f64; 3],
    pub adversary_p_bobby: f64,
    pub adversary_p_scott: f64,
}

pub const SONG_PROMPT: &str = "Q: Who wrote A Song for You? A:";
pub const GOLD: &str = " by Bobby Scott";
pub const WRONG: &str = " by Robert Williams";

impl Songwriter {
    /// Target perplexities: accurate models rate the gold span 1.1, 1.2 and
    /// 1.15 and the wrong span 12, 6 and 6; the adversary rates the gold
    /// span 23.5 and its own span just above 1.
    pub fn new() -> Self {
        let gold_ppl = [1.1f64, 1.2, 1.15];
        let wrong_ppl = [12.0f64, 6.0, 6.0];
        let p_bobby = gold_ppl.map(|g| g.powi(-3));
        let mut p_williams = [0.0; 3];
        for k in 0..3 {
            p_williams[k] = wrong_ppl[k].powi(-3) / (1.0 - p_bobby[k]);
        }
        let adversary_p_bobby = 1e-4;
        Songwriter {
            p_bobby,
            p_williams,
            adversary_p_bobby,
            adversary_p_scott: 23.5f64.powi(-3) / adversary_p_bobby,
        }
    }

    fn vocab() -> Vec<&'static str> {
        vec![
            "</s>",
            " A:",
            " by",
            " Bobby",
            " Scott",
            " Robert",
            " Williams",
            " Smith",
            " in",
        ]
    }

    pub fn models(&self) -> Vec<TableLm> {
        let good = |k: usize| {
            let pb = self.p_bobby[k];
            let pw = self.p_williams[k];
            TableLmBuilder::new(&format!("good-{k}"), 1, "</s>")
                .vocab(Self::vocab())
                .transition(&[" A:"], &[(" by", 1.0)])
                .transition(&[" by"], &[(" Bobby", pb), (" Robert", 1.0 - pb)])
                .transition(&[" Bobby"], &[(" Scott", 1.0)])
                .transition(&[" Robert"], &[(" Williams", pw), (" Smith", 1.0 - pw)])
                .transition(&[" Scott"], &[(" in", 1.0)])
                .transition(&[" Williams"], &[(" in", 1.0)])
                .build()
                .unwrap()
        };
        let adversary = TableLmBuilder::new("adversary", 1, "</s>")
            .vocab(Self::vocab())
            .transition(&[" A:"], &[(" by", 1.0)])
            .transition(
                &[" by"],
                &[
                    (" Robert", 1.0 - self.adversary_p_bobby),
                    (" Bobby", self.adversary_p_bobby),
                ],
            )
            .transition(
                &[" Bobby"],
                &[
                    (" Scott", self.adversary_p_scott),
                    (" Smith", 1.0 - self.adversary_p_scott),
                ],
            )
            .transition(&[" Robert"], &[(" Williams", 1.0)])
            .transition(&[" Scott"], &[(" in", 1.0)])
            .transition(&[" Williams"], &[(" in", 1.0)])
            .build()
            .unwrap();
        vec![good(0), adversary, good(1), good(2)]
    }

    /// Hand-derived matrix: entry (scorer, span) = (product of token
    /// probabilities)^(-1/3) for the three-word spans. Spans 0, 2, 3 are the
    /// gold span; span 1 is the wrong one.
    pub fn expected_matrix(&self) -> Vec<Vec<Option<f64>>> {
        let ppl = |p: f64| p.powf(-1.0 / 3.0);
        let gold_by = |scorer: usize| match scorer {
            1 => ppl(self.adversary_p_bobby * self.adversary_p_scott),
            0 => ppl(self.p_bobby[0]),
            2 => ppl(self.p_bobby[1]),
            _ => ppl(self.p_bobby[2]),
        };
        let wrong_by = |scorer: usize| match scorer {
            1 => ppl(1.0 - self.adversary_p_bobby),
            0 => ppl((1.0 - self.p_bobby[0]) * self.p_williams[0]),
            2 => ppl((1.0 - self.p_bobby[1]) * self.p_williams[1]),
            _ => ppl((1.0 - self.p_bobby[2]) * self.p_williams[2]),
        };
        (0..4)
            .map(|i| {
                (0..4)
                    .map(|j| Some(if j == 1 { wrong_by(i) } else { gold_by(i) }))
                    .collect()
            })
            .collect()
    }
}

/// A canned reply from the mock completions server.
pub type Handler = Arc<dyn Fn(&serde_json::Value) -> (u16, String) + Send + Sync>;

/// Authorization header (if any) and JSON body of each request received.
pub type RequestLog = Arc<Mutex<Vec<(Option<String>, serde_json::Value)>>>;

pub struct MockServer {
    pub url: String,
    pub requests: RequestLog,
}

/// Minimal HTTP/1.1 server answering every POST with `handler`. One
/// connection per request.
pub fn mock_server(handler: Handler) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests: RequestLog = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = handler.clone();
            let log = log.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut auth = None;
                let mut line = String::new();
                loop {
                    line.clear();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    let lower = l.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = Some(l["authorization:".len()..].trim().to_string());
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                log.lock().unwrap().push((auth, json.clone()));
                let (status, text) = handler(&json);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    MockServer { url, requests }
}

/// Whitespace-preserving tokenizer for the mock server: each word with its
/// leading whitespace is a token.
pub fn mock_tokens(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_whitespace() && in_word {
            out.push(std::mem::take(&mut cur));
            in_word = false;
        }
        if !ch.is_whitespace() {
            in_word = true;
        }
        cur.push(ch);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Twenty hypothesis/reference pairs with reference corpus-BLEU values
/// computed by nltk (`corpus_bleu`, default weights, no smoothing) and, for
/// the single-reference variant, sacrebleu with `tokenize="none"`.
pub const BLEU_MULTI_REF: f64 = 49.43653707719996;
pub const BLEU_SINGLE_REF: f64 = 48.14439414181115;

pub fn bleu_corpus() -> (Vec<String>, Vec<Vec<String>>) {
    let hyps = [
        "the cat sat on the mat",
        "there is a cat on the mat",
        "a quick brown fox jumps over the lazy dog",
        "she eats three eggs for breakfast every morning",
        "the song was written by bobby scott",
        "he went to the market to buy some bread",
        "it is raining heavily in the city today",
        "the meeting was moved to next tuesday afternoon",
        "we need more data to train the model",
        "the children played in the park until sunset",
        "this translation is not very good at all",
        "the train arrives at the station at noon",
        "my brother likes to read books about history",
        "the weather will be sunny for the whole week",
        "please close the door when you leave the room",
        "the answer to the question is nine",
        "they built a small house near the river",
        "the museum opens at nine in the morning",
        "she plays the piano better than her sister",
        "the results were published in a scientific journal",
    ];
    let refs: [&[&str]; 20] = [
        &["the cat is on the mat", "there is a cat on the mat"],
        &["there is a cat on the mat"],
        &["the quick brown fox jumps over the lazy dog"],
        &["she eats three for breakfast every morning"],
        &["the song was written by bobby scott in 1969"],
        &["he went to the store to buy bread"],
        &["it rains heavily in the city today"],
        &["the meeting has been moved to tuesday afternoon"],
        &[
            "we need more data to train our model",
            "more data is needed to train the model",
        ],
        &["the kids played in the park until the sun set"],
        &["this translation is quite poor"],
        &["the train reaches the station at midday"],
        &["my brother enjoys reading history books"],
        &["the weather is going to be sunny all week"],
        &["please shut the door when you leave the room"],
        &["the answer is nine"],
        &["they built a little house close to the river"],
        &["the museum opens at nine a.m."],
        &["she plays piano better than her sister does"],
        &["the results appeared in a scientific journal"],
    ];
    (
        hyps.iter().map(|s| s.to_string()).collect(),
        refs.iter()
            .map(|r| r.iter().map(|s| s.to_string()).collect())
            .collect(),
    )
}
