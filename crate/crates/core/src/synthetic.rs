//! Synthetic table-model pools and datasets.
//!
//! These stand in for real model servers when checking the ensemble's
//! behaviour end to end: every probability is explicit, so expected winners
//! can be derived by hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{TableLm, TableLmBuilder};
use crate::eval::{EvalExample, TaskKind};

pub const EOS: &str = "</s>";
const FILLERS: usize = 10;

fn prompt_for(i: usize) -> String {
    format!("Q: q{i} A:")
}

fn question_token(i: usize) -> String {
    format!(" q{i}")
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

/// Spreads `rest` over filler tokens so that no filler reaches `cap`.
fn with_fillers(mut dist: Vec<(String, f64)>, cap: f64) -> Vec<(String, f64)> {
    let listed: f64 = dist.iter().map(|(_, p)| p).sum();
    let rest = 1.0 - listed;
    if rest > 1e-12 {
        let n = ((rest / (0.9 * cap)).ceil() as usize).clamp(1, FILLERS);
        let share = rest / n as f64;
        for k in 0..n {
            dist.push((format!(" f{k}"), share));
        }
    }
    dist
}

fn dist_refs(dist: &[(String, f64)]) -> Vec<(&str, f64)> {
    dist.iter().map(|(t, p)| (t.as_str(), *p)).collect()
}

/// Pools of accurate and adversarial models over single-word answers.
///
/// Question `i` has gold answer `g{i}`. The two adversaries answer `x{i}`
/// and `y{i}` with high confidence, score the gold answer badly and rate
/// each other's answer mediocre. Accurate models favour the gold answer and
/// reject both wrong answers.
#[derive(Debug, Clone)]
pub struct RobustnessSuite {
    pub examples: Vec<EvalExample>,
    pub good: Vec<TableLm>,
    pub bad: Vec<TableLm>,
}

pub const SCENARIOS: [&str; 3] = ["4-good", "3-good-1-bad", "2-good-2-bad"];

impl RobustnessSuite {
    pub fn new(n_questions: usize, seed: u64) -> Self {
        let mut vocab: Vec<String> = vec![EOS.into(), "Q:".into(), " A:".into()];
        vocab.extend((0..FILLERS).map(|k| format!(" f{k}")));
        for i in 0..n_questions {
            vocab.extend([
                question_token(i),
                format!(" g{i}"),
                format!(" x{i}"),
                format!(" y{i}"),
            ]);
        }

        let answer_tokens = |i: usize| [format!(" g{i}"), format!(" x{i}"), format!(" y{i}")];
        let base = |name: &str| {
            let mut b = TableLmBuilder::new(name, 2, EOS).vocab(vocab.iter().cloned());
            for k in 0..FILLERS {
                b = b.transition(&[" A:", &format!(" f{k}")], &[(EOS, 1.0)]);
            }
            b
        };

        let good = (0..4)
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(m));
                let mut b = base(&format!("good-{m}"));
                for i in 0..n_questions {
                    let [g, x, y] = answer_tokens(i);
                    let p_gold = 1.0 / rng.gen_range(1.2..2.5);
                    let p_x = 1.0 / log_uniform(&mut rng, 60.0, 300.0);
                    let p_y = 1.0 / log_uniform(&mut rng, 60.0, 300.0);
                    let dist = with_fillers(
                        vec![(g.clone(), p_gold), (x.clone(), p_x), (y.clone(), p_y)],
                        p_gold,
                    );
                    b = b.transition(&[&question_token(i), " A:"], &dist_refs(&dist));
                    for t in [&g, &x, &y] {
                        b = b.transition(&[" A:", t], &[(EOS, 1.0)]);
                    }
                }
                b.build().expect("synthetic table is valid")
            })
            .collect();

        let bad = (0..2)
            .map(|m| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(100 + m));
                let mut b = base(&format!("bad-{}", if m == 0 { 'x' } else { 'y' }));
                for i in 0..n_questions {
                    let [g, x, y] = answer_tokens(i);
                    let (own, other) = if m == 0 { (x, y) } else { (y, x) };
                    let p_own = 1.0 / rng.gen_range(1.2..1.5);
                    let p_gold = 1.0 / log_uniform(&mut rng, 30.0, 300.0);
                    let p_other = 1.0 / log_uniform(&mut rng, 10.0, 100.0);
                    let dist = with_fillers(
                        vec![
                            (own.clone(), p_own),
                            (g.clone(), p_gold),
                            (other.clone(), p_other),
                        ],
                        p_own,
                    );
                    b = b.transition(&[&question_token(i), " A:"], &dist_refs(&dist));
                    for t in [&g, &own, &other] {
                        b = b.transition(&[" A:", t], &[(EOS, 1.0)]);
                    }
                }
                b.build().expect("synthetic table is valid")
            })
            .collect();

        let examples = (0..n_questions)
            .map(|i| EvalExample {
                id: format!("q{i:04}"),
                prompt: prompt_for(i),
                references: vec![format!("g{i}")],
                task_kind: TaskKind::ExactMatch,
            })
            .collect();

        RobustnessSuite {
            examples,
            good,
            bad,
        }
    }

    /// Members of a named scenario, in pool order.
    pub fn scenario(&self, name: &str) -> Option<Vec<TableLm>> {
        let g = &self.good;
        let b = &self.bad;
        Some(match name {
            "4-good" => vec![g[0].clone(), g[1].clone(), g[2].clone(), g[3].clone()],
            "3-good-1-bad" => vec![g[0].clone(), g[1].clone(), g[2].clone(), b[0].clone()],
            "2-good-2-bad" => vec![g[0].clone(), g[1].clone(), b[0].clone(), b[1].clone()],
            _ => return None,
        })
    }
}

/// Four models with complementary knowledge over two-word answers.
///
/// Questions fall into five blocks by `i % 5`. Model `m` knows blocks `m`
/// and `(m + 3) % 4`, so each of blocks 0..4 is known by exactly two models
/// and block 4 by none. Unknown questions fall through to the uniform
/// distribution, whose greedy choice is the filler word `um`.
pub fn knowledge_suite(n_questions: usize) -> (Vec<EvalExample>, Vec<TableLm>) {
    let mut vocab: Vec<String> = vec![" um".into(), EOS.into(), "Q:".into(), " A:".into()];
    for i in 0..n_questions {
        vocab.extend([question_token(i), format!(" g{i}a"), format!(" g{i}b")]);
    }
    let models = (0..4)
        .map(|m| {
            let mut b =
                TableLmBuilder::new(&format!("knower-{m}"), 2, EOS).vocab(vocab.iter().cloned());
            for i in 0..n_questions {
                let block = i % 5;
                if block == m || block == (m + 3) % 4 {
                    let q = question_token(i);
                    let (a, c) = (format!(" g{i}a"), format!(" g{i}b"));
                    b = b.chain(&[&q, " A:"], &[&a, &c], 0.95, " um", true);
                }
            }
            b.build().expect("synthetic table is valid")
        })
        .collect();
    let examples = (0..n_questions)
        .map(|i| EvalExample {
            id: format!("k{i:04}"),
            prompt: prompt_for(i),
            references: vec![format!("g{i}a g{i}b")],
            task_kind: TaskKind::ExactMatch,
        })
        .collect();
    (examples, models)
}

/// Prompt and model whose greedy output is exactly `words` words followed by
/// end-of-sequence.
pub fn terminating_chain(words: usize) -> (String, TableLm) {
    let tokens: Vec<String> = (0..words).map(|k| format!(" w{k}")).collect();
    let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let lm = TableLmBuilder::new(&format!("chain-{words}"), 1, EOS)
        .vocab([EOS, "Q:"])
        .vocab(tokens.iter().cloned())
        .chain(&["Q:"], &refs, 0.9, EOS, true)
        .build()
        .expect("synthetic table is valid");
    ("Q:".to_string(), lm)
}

/// Four agreeing chain models answering long prompts, for timing runs.
///
/// Every prompt is `prompt_words` words long and every answer `answer_words`
/// words, so per-round work is dominated by re-reading the shared prefix.
pub fn timing_suite(
    n_prompts: usize,
    prompt_words: usize,
    answer_words: usize,
) -> (Vec<EvalExample>, Vec<TableLm>) {
    let answer: Vec<String> = (0..answer_words).map(|k| format!(" c{k}")).collect();
    let answer_refs: Vec<&str> = answer.iter().map(String::as_str).collect();
    let models = [0.9, 0.8, 0.7, 0.95]
        .iter()
        .enumerate()
        .map(|(m, &p)| {
            TableLmBuilder::new(&format!("chain-{m}"), 1, EOS)
                .vocab([EOS, "Q:", " A:"])
                .vocab((0..prompt_words).map(|k| format!(" p{k}")))
                .vocab(answer.iter().cloned())
                .chain(&[" A:"], &answer_refs, p, EOS, true)
                .build()
                .expect("synthetic table is valid")
        })
        .collect();
    let examples = (0..n_prompts)
        .map(|e| {
            let mut prompt = String::from("Q:");
            for k in 0..prompt_words {
                prompt.push_str(&format!(" p{}", (k + e) % prompt_words));
            }
            prompt.push_str(" A:");
            EvalExample {
                id: format!("t{e:03}"),
                prompt,
                references: vec![answer.concat().trim().to_string()],
                task_kind: TaskKind::ExactMatch,
            }
        })
        .collect();
    (examples, models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Backend;

    #[test]
    fn robustness_models_answer_as_designed() {
        let suite = RobustnessSuite::new(5, 7);
        for i in 0..5 {
            let p = &suite.examples[i].prompt;
            let g = suite.good[0].generate_span(p, 4).unwrap();
            assert_eq!(g.text, format!(" g{i}"));
            assert!(g.finished);
            assert_eq!(
                suite.bad[0].generate_span(p, 4).unwrap().text,
                format!(" x{i}")
            );
            assert_eq!(
                suite.bad[1].generate_span(p, 4).unwrap().text,
                format!(" y{i}")
            );
        }
        assert_eq!(suite.scenario("2-good-2-bad").unwrap().len(), 4);
        assert!(suite.scenario("nope").is_none());
    }

    #[test]
    fn knowledge_blocks_cover_forty_percent() {
        let (examples, models) = knowledge_suite(10);
        for (m, lm) in models.iter().enumerate() {
            let known = examples
                .iter()
                .filter(|ex| {
                    let s = lm.generate_span(&ex.prompt, 2).unwrap();
                    ex.references[0] == s.text.trim()
                })
                .count();
            assert_eq!(known, 4, "model {m}");
        }
    }

    #[test]
    fn chain_terminates_after_exact_word_count() {
        let (prompt, lm) = terminating_chain(5);
        let s = lm.generate_span(&prompt, 8).unwrap();
        assert_eq!(s.word_count, 5);
        assert!(s.finished);
    }
}
